#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thread_recon::bspline::{Frame, SplineCurve};
use thread_recon::keypoints::KeypointChain;
use thread_recon::raster::{Gray8, Pixel, PixelMask};
use thread_recon::mvs::{build_corridor, init_spline, DensePoints, FitParams, MvsProblem};
use thread_recon::synth::SyntheticScene;

/// Ordered points along a random planar path with a wavy, noisy depth
/// profile, turned into a corridor-constrained problem. Some draws are
/// infeasible; callers filter on the projection step.
pub fn random_mvs_problem(seed: u64) -> (MvsProblem, FitParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..60);
    let (mut x, mut y) = (rng.random_range(100.0..500.0), rng.random_range(100.0..400.0));
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let base = rng.random_range(80.0..160.0);
    let amp = rng.random_range(0.5..8.0);
    let freq = rng.random_range(0.05..0.3);
    let noise = rng.random_range(0.0..1.5);
    let step = rng.random_range(2.0..6.0);
    let mut points = Vec::with_capacity(n);
    for j in 0..n {
        let z = base + amp * (freq * j as f64).sin() + rng.random_range(-noise..=noise);
        points.push([x, y, z]);
        heading += rng.random_range(-0.3..0.3);
        x += step * heading.cos();
        y += step * heading.sin();
    }
    let every = rng.random_range(1..4);
    let keypoint_slots: Vec<usize> = (0..n).filter(|j| j % every == 0 || *j == n - 1).collect();
    let dense = DensePoints { points, keypoint_slots };
    let params = FitParams::default();
    let corridor = build_corridor(&dense, &params).expect("at least two keypoints");
    let fit = init_spline(&dense, &corridor, &params).expect("enough points");
    (MvsProblem::new(&fit, &corridor, &params).expect("consistent problem"), params)
}

/// Wiggly depth profile inside a corridor around a straight line whose end
/// targets are collinear with it, so the straight line is feasible.
pub fn straight_line_problem() -> MvsProblem {
    let ell = 40.0;
    let m = 15;
    let cps: Vec<[f64; 3]> = (0..m)
        .map(|i| {
            let t = i as f64 / (m - 1) as f64;
            let line = 100.0 + 0.25 * ell * t;
            [ell * t, 0.0, line + 0.6 * (7.0 * t).sin() * (t * (1.0 - t)) * 4.0]
        })
        .collect();
    let spline = SplineCurve::clamped_uniform(4, ell, cps, Frame::PixelDepth).unwrap();
    let sample_params: Vec<f64> = (0..100).map(|s| ell * s as f64 / 99.0).collect();
    let line = |u: f64| 100.0 + 0.25 * u;
    MvsProblem {
        spline,
        lower: sample_params.iter().map(|&u| line(u) - 1.0).collect(),
        upper: sample_params.iter().map(|&u| line(u) + 1.0).collect(),
        sample_params,
        start_value: line(0.0),
        start_slope: 0.25,
        end_value: line(ell),
        end_slope: 0.25,
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman correlation between the keypoint ordering and the arc-length
/// position of each keypoint's nearest ground-truth vertex in the left image.
pub fn ordering_correlation(scene: &SyntheticScene, chain: &KeypointChain) -> f64 {
    let projected: Vec<[f64; 2]> = scene.truth.iter().map(|p| scene.rig.project_left(*p).unwrap()).collect();
    let mut arc = vec![0.0; scene.truth.len()];
    for i in 1..arc.len() {
        let (p, q) = (scene.truth[i - 1], scene.truth[i]);
        arc[i] = arc[i - 1] + ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    }
    let positions: Vec<f64> = chain
        .ordered_positions()
        .iter()
        .map(|k| {
            let nearest = projected
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1[0] - k[0]).powi(2) + (a.1[1] - k[1]).powi(2);
                    let db = (b.1[0] - k[0]).powi(2) + (b.1[1] - k[1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap()
                .0;
            arc[nearest]
        })
        .collect();
    let order: Vec<f64> = (0..positions.len()).map(|i| i as f64).collect();
    spearman(&order, &positions)
}

/// Direct windowed SSD, independent of the library's lifting helper.
pub fn window_ssd(left: &Gray8, lmask: &PixelMask, right: &Gray8, rmask: &PixelMask, p: Pixel, d: i32, r: i32) -> f64 {
    let lifted = |img: &Gray8, mask: &PixelMask, q: Pixel| -> f64 {
        if q.x < 0 || q.y < 0 || q.x as usize >= img.width() || q.y as usize >= img.height() || !mask.contains(q) {
            255.0
        } else {
            img.get(q) as f64
        }
    };
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let q = Pixel::new(p.x + dx, p.y + dy);
            if !lmask.contains(q) {
                continue;
            }
            let diff = lifted(left, lmask, q) - lifted(right, rmask, Pixel::new(q.x - d, q.y));
            sum += diff * diff;
        }
    }
    sum
}
