//! Procedural stereo scenes of thin curves with exact ground truth.
//!
//! A random walk of control points with bounded turning and elevation
//! defines a cubic B-spline centerline. It is scaled to a random length,
//! placed inside the stereo frustum, checked for curvature and for
//! self-overlap in the left image, and rendered into both views as a
//! z-buffered stroke of constant pixel width. A pixel belongs to the stroke
//! when its center lies within half the width of a projected polyline
//! segment, so masks are exact footprints with no anti-aliasing.

use std::f64::consts::PI;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{Frame, SplineCurve};
use crate::io::{self as fio, format_f64};
use crate::raster::{Gray8, Pixel, PixelMask};
use crate::stereo::StereoRig;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("no admissible curve inside the frustum after {0} attempts")]
    Frustum(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    pub units: String,
    pub depth_range: [f64; 2],
    pub length_range: [f64; 2],
    /// Stroke width in pixels, sampled once per scene.
    pub stroke_width_range: [f64; 2],
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sigma: f64,
    pub control_points: usize,
    /// Largest change of walking direction between control points.
    pub max_turn_deg: f64,
    /// Largest angle between the walking direction and the image plane.
    pub max_elevation_deg: f64,
    /// Largest 3D curvature (1 / spatial unit).
    pub max_curvature: f64,
    pub truth_vertices: usize,
    /// Distance projections keep from the image border, in pixels.
    pub margin_px: f64,
    pub reject_self_overlap: bool,
    /// Smallest left-image distance between parts of the curve that are far
    /// apart along it.
    pub min_separation_px: f64,
    pub near_intensity: f64,
    pub far_intensity: f64,
    /// Amplitude and period (spatial units) of the intensity modulation
    /// along the arc length.
    pub stripe_amplitude: f64,
    pub stripe_period: f64,
    pub background: u8,
    pub max_retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            focal: 800.0,
            width: 640,
            height: 480,
            baseline: 5.0,
            units: "mm".into(),
            depth_range: [80.0, 160.0],
            length_range: [60.0, 140.0],
            stroke_width_range: [2.0, 3.0],
            noise_sigma: 0.0,
            control_points: 7,
            max_turn_deg: 45.0,
            max_elevation_deg: 25.0,
            max_curvature: 0.25,
            truth_vertices: 20_000,
            margin_px: 12.0,
            reject_self_overlap: true,
            min_separation_px: 10.0,
            near_intensity: 40.0,
            far_intensity: 170.0,
            stripe_amplitude: 30.0,
            stripe_period: 10.0,
            background: 200,
            max_retries: 500,
        }
    }
}

impl GenerationConfig {
    pub fn rig(&self) -> StereoRig {
        StereoRig::canonical(self.focal, self.width as f64 / 2.0, self.height as f64 / 2.0, self.baseline, &self.units)
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let bad = |msg: &str| Err(GenerationError::Config(msg.into()));
        if !(self.focal > 0.0 && self.baseline > 0.0) {
            return bad("focal and baseline must be positive");
        }
        if self.width < 8 || self.height < 8 {
            return bad("image too small");
        }
        if !ordered(self.depth_range) || self.depth_range[0] <= 0.0 {
            return bad("depth range must be positive and ordered");
        }
        if !ordered(self.length_range) || self.length_range[0] <= 0.0 {
            return bad("length range must be positive and ordered");
        }
        if !ordered(self.stroke_width_range) || self.stroke_width_range[0] <= 0.0 {
            return bad("stroke width range must be positive and ordered");
        }
        if self.control_points < 4 {
            return bad("need at least four control points");
        }
        if self.truth_vertices < 2 {
            return bad("need at least two truth vertices");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }
}

/// A rendered scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub rig: StereoRig,
    /// Centerline in the left camera frame.
    pub curve: SplineCurve,
    /// Dense polyline sampled uniformly in the curve parameter.
    pub truth: Vec<[f64; 3]>,
    pub curve_length: f64,
    pub stroke_width: f64,
    pub left: Gray8,
    pub right: Gray8,
    pub mask_left: PixelMask,
    pub mask_right: PixelMask,
    /// Rendered ground-truth disparity of every left mask pixel, NaN elsewhere.
    pub disparity_left: Vec<f64>,
}

impl SyntheticScene {
    pub fn bundle(&self) -> SceneBundle {
        SceneBundle {
            left: self.left.clone(),
            right: self.right.clone(),
            mask_left: self.mask_left.clone(),
            mask_right: self.mask_right.clone(),
            rig: self.rig.clone(),
            truth: self.truth.clone(),
        }
    }

    pub fn disparity_at(&self, p: Pixel) -> Option<f64> {
        if !self.mask_left.contains(p) {
            return None;
        }
        Some(self.disparity_left[self.mask_left.index(p)])
    }
}

pub fn polyline_length(points: &[[f64; 3]]) -> f64 {
    points.windows(2).map(|w| crate::bspline::dist3(&w[0], &w[1])).sum()
}

/// Random-walk control polygon with unit steps.
fn random_walk(rng: &mut ChaCha8Rng, cfg: &GenerationConfig) -> Vec<[f64; 3]> {
    let turn = cfg.max_turn_deg.to_radians();
    let max_elev = cfg.max_elevation_deg.to_radians();
    let mut azimuth = rng.random_range(0.0..2.0 * PI);
    let mut elevation = if max_elev > 0.0 { rng.random_range(-max_elev..=max_elev) } else { 0.0 };
    let mut p = [0.0; 3];
    let mut out = vec![p];
    for _ in 1..cfg.control_points {
        let dir = [elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()];
        p = [p[0] + dir[0], p[1] + dir[1], p[2] + dir[2]];
        out.push(p);
        if turn > 0.0 {
            azimuth += rng.random_range(-turn..=turn);
            elevation = (elevation + rng.random_range(-turn..=turn) * 0.5).clamp(-max_elev, max_elev);
        }
    }
    out
}

fn sample_curve(curve: &SplineCurve, n: usize) -> Vec<[f64; 3]> {
    curve.sample(n)
}

/// Range of translations `t` along one axis keeping every coordinate inside
/// `[lo, hi]` after projection, given `pixel = focal * (c + t - shift) / z + center`.
fn translation_range(
    coords: &[(f64, f64)],
    focal: f64,
    center: f64,
    lo: f64,
    hi: f64,
    shift: f64,
) -> (f64, f64) {
    let mut low = f64::NEG_INFINITY;
    let mut high = f64::INFINITY;
    for &(c, z) in coords {
        low = low.max((lo - center) * z / focal - c + shift);
        high = high.min((hi - center) * z / focal - c + shift);
    }
    (low, high)
}

fn max_curvature(curve: &SplineCurve, n: usize) -> f64 {
    let (a, b) = curve.domain();
    (0..n)
        .map(|i| {
            let u = a + (b - a) * i as f64 / (n - 1) as f64;
            let d = curve.derivatives(u, 2).expect("parameter inside domain");
            let (p1, p2) = (d[1], d[2]);
            let cross = [
                p1[1] * p2[2] - p1[2] * p2[1],
                p1[2] * p2[0] - p1[0] * p2[2],
                p1[0] * p2[1] - p1[1] * p2[0],
            ];
            let speed = (p1[0] * p1[0] + p1[1] * p1[1] + p1[2] * p1[2]).sqrt();
            (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt() / speed.powi(3)
        })
        .fold(0.0, f64::max)
}

/// True when two parts of the projected curve that are separated by more
/// than three separations of path length come closer than one separation.
fn self_overlaps(projected: &[[f64; 2]], separation: f64) -> bool {
    let step = (projected.len() / 2000).max(1);
    let pts: Vec<[f64; 2]> = projected.iter().step_by(step).copied().collect();
    let mut path = vec![0.0; pts.len()];
    for i in 1..pts.len() {
        path[i] = path[i - 1] + (pts[i][0] - pts[i - 1][0]).hypot(pts[i][1] - pts[i - 1][1]);
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if path[j] - path[i] <= 3.0 * separation {
                continue;
            }
            if (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]) < separation {
                return true;
            }
        }
    }
    false
}

/// Samples a centerline satisfying every geometric requirement.
fn sample_centerline(rng: &mut ChaCha8Rng, cfg: &GenerationConfig) -> Result<SplineCurve, GenerationError> {
    let rig = cfg.rig();
    let (cx, cy) = (cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    for _ in 0..cfg.max_retries {
        let walk = random_walk(rng, cfg);
        let unit = SplineCurve::clamped_uniform(3, 1.0, walk, Frame::Camera).expect("valid cubic control polygon");
        let raw_len = unit.arc_length();
        let target = rng.random_range(cfg.length_range[0]..=cfg.length_range[1]);
        let scale = target / raw_len;
        let scaled: Vec<[f64; 3]> =
            unit.control_points().iter().map(|c| [c[0] * scale, c[1] * scale, c[2] * scale]).collect();
        let shape = unit.with_control_points(scaled, Frame::Camera);
        let pts = sample_curve(&shape, 400);

        let zmin = pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        let zmax = pts.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
        let (tz_lo, tz_hi) = (cfg.depth_range[0] - zmin, cfg.depth_range[1] - zmax);
        if tz_lo > tz_hi {
            continue;
        }
        let tz = rng.random_range(tz_lo..=tz_hi);
        let xs: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[2] + tz)).collect();
        let ys: Vec<(f64, f64)> = pts.iter().map(|p| (p[1], p[2] + tz)).collect();
        let m = cfg.margin_px;
        let (l0, l1) = translation_range(&xs, cfg.focal, cx, m, w - 1.0 - m, 0.0);
        let (r0, r1) = translation_range(&xs, cfg.focal, cx, m, w - 1.0 - m, cfg.baseline);
        let (tx_lo, tx_hi) = (l0.max(r0), l1.min(r1));
        let (ty_lo, ty_hi) = translation_range(&ys, cfg.focal, cy, m, h - 1.0 - m, 0.0);
        if tx_lo > tx_hi || ty_lo > ty_hi {
            continue;
        }
        let t = [rng.random_range(tx_lo..=tx_hi), rng.random_range(ty_lo..=ty_hi), tz];
        let placed: Vec<[f64; 3]> =
            shape.control_points().iter().map(|c| [c[0] + t[0], c[1] + t[1], c[2] + t[2]]).collect();
        let curve = shape.with_control_points(placed, Frame::Camera);

        if max_curvature(&curve, 2000) > cfg.max_curvature {
            continue;
        }
        if cfg.reject_self_overlap {
            let projected: Vec<[f64; 2]> = sample_curve(&curve, 4000)
                .iter()
                .map(|p| rig.project_left(*p).expect("curve in front of the camera"))
                .collect();
            if self_overlaps(&projected, cfg.min_separation_px) {
                continue;
            }
        }
        return Ok(curve);
    }
    Err(GenerationError::Frustum(cfg.max_retries))
}

struct Render {
    image: Gray8,
    mask: PixelMask,
    depth: Vec<f64>,
}

/// Z-buffered stroke rasterization of a projected polyline.
fn render_view(
    projected: &[[f64; 2]],
    depths: &[f64],
    intensities: &[f64],
    cfg: &GenerationConfig,
    width_px: f64,
) -> Render {
    let (w, h) = (cfg.width, cfg.height);
    let half = width_px / 2.0;
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut value = vec![0.0; w * h];
    for i in 0..projected.len() - 1 {
        let (a, b) = (projected[i], projected[i + 1]);
        let x0 = ((a[0].min(b[0]) - half).floor() as i64).max(0);
        let x1 = ((a[0].max(b[0]) + half).ceil() as i64).min(w as i64 - 1);
        let y0 = ((a[1].min(b[1]) - half).floor() as i64).max(0);
        let y1 = ((a[1].max(b[1]) + half).ceil() as i64).min(h as i64 - 1);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64, y as f64);
                let t = if len2 > 0.0 { (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
                if (px - qx).hypot(py - qy) > half {
                    continue;
                }
                let z = depths[i] + t * (depths[i + 1] - depths[i]);
                let idx = y as usize * w + x as usize;
                if z < zbuf[idx] {
                    zbuf[idx] = z;
                    value[idx] = intensities[i] + t * (intensities[i + 1] - intensities[i]);
                }
            }
        }
    }
    let mask = PixelMask::from_bits(w, h, zbuf.iter().map(|z| z.is_finite()).collect());
    let data = zbuf
        .iter()
        .zip(&value)
        .map(|(z, v)| if z.is_finite() { v.round().clamp(0.0, 254.0) as u8 } else { cfg.background })
        .collect();
    let depth = zbuf.iter().map(|&z| if z.is_finite() { z } else { f64::NAN }).collect();
    Render { image: Gray8::new(w, h, data), mask, depth }
}

fn add_noise(img: &mut Gray8, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for y in 0..img.height() as i32 {
        for x in 0..img.width() as i32 {
            let p = Pixel::new(x, y);
            let v = img.get(p) as f64 + normal.sample(rng);
            img.set(p, v.round().clamp(0.0, 255.0) as u8);
        }
    }
}

/// Generates the scene for `seed`. The same seed and config always give
/// bit-identical output.
pub fn generate_scene(seed: u64, cfg: &GenerationConfig) -> Result<SyntheticScene, GenerationError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curve = sample_centerline(&mut rng, cfg)?;
    let stroke_width = rng.random_range(cfg.stroke_width_range[0]..=cfg.stroke_width_range[1]);
    let rig = cfg.rig();
    let truth = sample_curve(&curve, cfg.truth_vertices);
    let mut arc = vec![0.0; truth.len()];
    for i in 1..truth.len() {
        arc[i] = arc[i - 1] + crate::bspline::dist3(&truth[i - 1], &truth[i]);
    }
    let curve_length = arc[arc.len() - 1];
    let [z0, z1] = cfg.depth_range;
    let intensities: Vec<f64> = truth
        .iter()
        .zip(&arc)
        .map(|(p, s)| {
            let grade = if z1 > z0 { (p[2] - z0) / (z1 - z0) } else { 0.0 };
            cfg.near_intensity
                + (cfg.far_intensity - cfg.near_intensity) * grade
                + cfg.stripe_amplitude * (2.0 * PI * s / cfg.stripe_period).sin()
        })
        .collect();
    let depths: Vec<f64> = truth.iter().map(|p| p[2]).collect();
    let left_px: Vec<[f64; 2]> = truth.iter().map(|p| rig.project_left(*p).expect("in front")).collect();
    let right_px: Vec<[f64; 2]> = truth.iter().map(|p| rig.project_right(*p).expect("in front")).collect();
    let left = render_view(&left_px, &depths, &intensities, cfg, stroke_width);
    let right = render_view(&right_px, &depths, &intensities, cfg, stroke_width);
    let fb = cfg.focal * cfg.baseline;
    let disparity_left = left.depth.iter().map(|z| fb / z).collect();
    let (mut left_img, mut right_img) = (left.image, right.image);
    add_noise(&mut left_img, cfg.noise_sigma, &mut rng);
    add_noise(&mut right_img, cfg.noise_sigma, &mut rng);
    Ok(SyntheticScene {
        seed,
        rig,
        curve,
        truth,
        curve_length,
        stroke_width,
        left: left_img,
        right: right_img,
        mask_left: left.mask,
        mask_right: right.mask,
        disparity_left,
    })
}

/// On-disk scene: images, masks, rig and ground-truth polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub left: Gray8,
    pub right: Gray8,
    pub mask_left: PixelMask,
    pub mask_right: PixelMask,
    pub rig: StereoRig,
    pub truth: Vec<[f64; 3]>,
}

pub const LEFT_IMAGE: &str = "left.png";
pub const RIGHT_IMAGE: &str = "right.png";
pub const LEFT_MASK: &str = "mask_left.png";
pub const RIGHT_MASK: &str = "mask_right.png";
pub const RIG_FILE: &str = "rig.json";
pub const TRUTH_FILE: &str = "truth.csv";

impl SceneBundle {
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fio::save_gray(&dir.join(LEFT_IMAGE), &self.left)?;
        fio::save_gray(&dir.join(RIGHT_IMAGE), &self.right)?;
        fio::save_mask(&dir.join(LEFT_MASK), &self.mask_left)?;
        fio::save_mask(&dir.join(RIGHT_MASK), &self.mask_right)?;
        fio::write_json(&dir.join(RIG_FILE), &self.rig)?;
        let mut out = io::BufWriter::new(fs::File::create(dir.join(TRUTH_FILE))?);
        let u = &self.rig.units;
        writeln!(out, "x_{u},y_{u},z_{u}")?;
        for p in &self.truth {
            writeln!(out, "{},{},{}", format_f64(p[0]), format_f64(p[1]), format_f64(p[2]))?;
        }
        out.flush()
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let rig: StereoRig = fio::read_json(&dir.join(RIG_FILE))?;
        Ok(Self {
            left: fio::load_gray(&dir.join(LEFT_IMAGE))?,
            right: fio::load_gray(&dir.join(RIGHT_IMAGE))?,
            mask_left: fio::load_mask(&dir.join(LEFT_MASK))?,
            mask_right: fio::load_mask(&dir.join(RIGHT_MASK))?,
            truth: load_truth(&dir.join(TRUTH_FILE))?,
            rig,
        })
    }
}

pub fn load_truth(path: &Path) -> io::Result<Vec<[f64; 3]>> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{line}: malformed row", path.display()));
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate().skip(1) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad(i + 1))?;
        if v.len() != 3 {
            return Err(bad(i + 1));
        }
        out.push([v[0], v[1], v[2]]);
    }
    Ok(out)
}
