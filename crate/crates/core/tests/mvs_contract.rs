mod common;

use proptest::prelude::*;
use thread_recon::bspline::{Frame, SplineCurve};
use thread_recon::keypoints::{Adjacency, Cluster, Keypoint, KeypointChain};
use thread_recon::mvs::{
    build_corridor, densify, from_camera_frame, solve_mvs, to_camera_frame, DensePoints, FitParams, MvsError,
    MvsObjective,
};
use thread_recon::raster::{Pixel, PixelMask};
use thread_recon::stereo::{DepthField, PixelMatch, StereoRig};

fn strip_chain(gap: i32) -> (KeypointChain, PixelMask, DepthField) {
    let width = (10 + gap) as usize;
    let row: Vec<Pixel> = (0..width as i32).map(|x| Pixel::new(x, 0)).collect();
    let mask = PixelMask::from_pixels(width, 1, row.iter().copied());
    let samples = row
        .iter()
        .map(|&p| PixelMatch {
            pixel: p,
            d_min: 40,
            e_min: 1.0,
            d_next: 50,
            e_next: 10.0,
            reliability: 0.5 + p.x as f64 / 1000.0,
            depth: 100.0 + p.x as f64,
            valid: true,
        })
        .collect();
    let field = DepthField::from_samples(width, 1, samples);
    let make = |id: usize, xs: std::ops::Range<i32>| {
        let pixels: Vec<Pixel> = xs.map(|x| Pixel::new(x, 0)).collect();
        let points3d: Vec<[f64; 3]> = pixels.iter().map(|p| [p.x as f64, 0.0, 100.0 + p.x as f64]).collect();
        let n = points3d.len() as f64;
        let centroid = [points3d.iter().map(|p| p[0]).sum::<f64>() / n, 0.0, points3d.iter().map(|p| p[2]).sum::<f64>() / n];
        Cluster { id, pixels, points3d, centroid }
    };
    let clusters = vec![make(0, 0..5), make(1, 5 + gap..10 + gap)];
    let keypoints = clusters.iter().map(|c| Keypoint { position: c.centroid, cluster: Some(c.id) }).collect();
    let mut adjacency = Adjacency::new(2);
    adjacency.add_edge(0, 1);
    (KeypointChain { keypoints, clusters, adjacency, order: vec![0, 1] }, mask, field)
}

#[test]
fn densify_inserts_floor_of_gap_over_threshold() {
    let params = FitParams::default();
    for (gap, extra) in [(45, 2), (12, 0), (0, 0), (20, 0), (21, 1), (60, 3)] {
        let (chain, mask, field) = strip_chain(gap);
        let dense = densify(&chain, &mask, &field, &params);
        assert_eq!(dense.points.len(), 2 + extra, "gap {gap}");
        assert_eq!(dense.keypoint_slots, vec![0, 1 + extra]);
        // extra points are ordered along the path and carry raw stereo depth
        for w in dense.points.windows(2) {
            assert!(w[0][0] < w[1][0]);
        }
        for p in &dense.points[1..1 + extra] {
            assert_eq!(p[2], 100.0 + p[0]);
        }
    }
}

#[test]
fn densified_points_are_roughly_uniform() {
    let (chain, mask, field) = strip_chain(45);
    let dense = densify(&chain, &mask, &field, &FitParams::default());
    // path pixels 5..=49, targets at 1/3 and 2/3 of the stretch
    assert!((dense.points[1][0] - 20.0).abs() <= 3.0, "{:?}", dense.points);
    assert!((dense.points[2][0] - 35.0).abs() <= 3.0, "{:?}", dense.points);
}

#[test]
fn corridor_matches_reference_cases() {
    // keypoint at order 1 sits 2 below the line through its neighbours
    let dense = DensePoints::from_keypoints(vec![[0.0, 0.0, 12.0], [1.0, 0.0, 10.0], [2.0, 0.0, 12.0]]);
    let params = FitParams { min_halfwidth: Some(0.01), ..Default::default() };
    let c = build_corridor(&dense, &params).unwrap();
    let l = c.lines[1].at(1.0);
    let half = 1.5 * (l - 10.0f64).abs();
    assert!((c.lower[1] - (10.0 - half)).abs() < 1e-12 && (c.upper[1] - (10.0 + half)).abs() < 1e-12);

    // interpolation between keypoints at order 0 and 2 over an extra point
    let dense = DensePoints { points: vec![[0.0, 0.0, 10.0], [1.0, 0.0, 11.0], [2.0, 0.0, 12.0]], keypoint_slots: vec![0, 2] };
    let c = build_corridor(&dense, &FitParams { min_halfwidth: Some(3.0), ..Default::default() }).unwrap();
    assert_eq!((c.lower[0], c.upper[0]), (7.0, 13.0));
    assert_eq!((c.lower[2], c.upper[2]), (9.0, 15.0));
    assert_eq!((c.lower[1], c.upper[1]), (8.0, 14.0));
}

#[test]
fn objective_gradient_matches_central_differences() {
    let mut checked = 0;
    for seed in 0..5 {
        let (problem, _) = common::random_mvs_problem(seed);
        let obj = MvsObjective::new(&problem.spline).unwrap();
        let b = problem.initial_depths();
        let g = obj.gradient(&b);
        let h = 1e-6;
        let fd: Vec<f64> = (0..b.len())
            .map(|j| {
                let (mut p, mut q) = (b.clone(), b.clone());
                p[j] += h;
                q[j] -= h;
                (obj.value(&p) - obj.value(&q)) / (2.0 * h)
            })
            .collect();
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * norm, "seed {seed}: |g - fd| = {err}, |g| = {norm}");
        checked += 1;
    }
    assert_eq!(checked, 5);
}

#[test]
fn gauss_newton_is_positive_semidefinite() {
    let (problem, _) = common::random_mvs_problem(3);
    let obj = MvsObjective::new(&problem.spline).unwrap();
    let h = obj.gauss_newton(&problem.initial_depths());
    let eig = h.symmetric_eigenvalues();
    assert!(eig.iter().all(|&e| e >= -1e-9 * eig.amax()));
}

#[test]
fn straight_line_corridor_reaches_zero_objective() {
    let problem = common::straight_line_problem();
    let sol = solve_mvs(&problem, &FitParams::default()).unwrap();
    assert!(sol.final_objective <= 1e-10, "{}", sol.final_objective);
    let (a, b) = sol.spline.domain();
    for i in 0..=20 {
        let u = a + (b - a) * i as f64 / 20.0;
        assert!((sol.spline.eval(u, 0).unwrap()[2] - (100.0 + 0.25 * u)).abs() < 1e-4);
    }
}

#[test]
fn contradictory_endpoint_is_infeasible() {
    let mut problem = common::straight_line_problem();
    problem.start_value = problem.upper[0] + 5.0;
    assert!(matches!(solve_mvs(&problem, &FitParams::default()), Err(MvsError::Infeasible(_))));
}

#[test]
fn solution_keeps_x_and_y_frozen() {
    let (problem, params) = common::random_mvs_problem(1);
    if let Ok(sol) = solve_mvs(&problem, &params) {
        for (a, b) in sol.spline.control_points().iter().zip(problem.spline.control_points()) {
            assert_eq!((a[0], a[1]), (b[0], b[1]));
        }
        assert!(sol.trace.windows(2).all(|w| w[1].objective < w[0].objective));
    }
}

fn rig_strategy() -> impl Strategy<Value = StereoRig> {
    (300.0f64..1500.0, 100.0f64..600.0, 100.0f64..400.0, 1.0f64..20.0)
        .prop_map(|(f, cx, cy, b)| StereoRig::canonical(f, cx, cy, b, "mm"))
}

proptest! {
    #[test]
    fn camera_frame_round_trip(
        rig in rig_strategy(),
        cps in prop::collection::vec((0.0f64..640.0, 0.0f64..480.0, 50.0f64..200.0), 5..16),
    ) {
        let cps: Vec<[f64; 3]> = cps.into_iter().map(|(x, y, z)| [x, y, z]).collect();
        let s = SplineCurve::clamped_uniform(4, 10.0, cps, Frame::PixelDepth).unwrap();
        let back = from_camera_frame(&to_camera_frame(&s, &rig).unwrap(), &rig);
        prop_assert_eq!(back.frame(), Frame::PixelDepth);
        for (a, b) in back.control_points().iter().zip(s.control_points()) {
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn corridor_is_symmetric_and_nonempty(
        depths in prop::collection::vec(50.0f64..150.0, 2..40),
        fraction in 0.0f64..0.5,
    ) {
        let pts: Vec<[f64; 3]> = depths.iter().enumerate().map(|(i, &z)| [i as f64, 0.0, z]).collect();
        let dense = DensePoints::from_keypoints(pts);
        let params = FitParams { r_k_fraction: fraction, ..Default::default() };
        let c = build_corridor(&dense, &params).unwrap();
        for (j, &z) in depths.iter().enumerate() {
            prop_assert!(c.lower[j] < c.upper[j]);
            let half = 1.5 * (c.lines[j].at(j as f64) - z).abs();
            if half >= c.min_halfwidth {
                prop_assert!((c.upper[j] - z - half).abs() < 1e-9);
                prop_assert!((z - c.lower[j] - half).abs() < 1e-9);
            } else {
                prop_assert!((c.upper[j] - c.lower[j] - 2.0 * c.min_halfwidth).abs() < 1e-9);
            }
        }
    }
}
