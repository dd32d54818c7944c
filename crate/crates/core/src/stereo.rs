//! Lifted-image block matching on rectified stereo pairs.
//!
//! Non-segmented pixels are replaced by a white background before matching
//! so that thread pixels can never match empty background at zero cost.
//! Every segmented left pixel gets an integer disparity by exhaustive
//! minimization of a windowed sum of squared differences, a runner-up
//! disparity outside a +-2 exclusion band, a sigmoid reliability score and
//! a depth obtained by pushing `(x, y, d, 1)` through the rig's `Q` matrix.

use nalgebra::{Matrix3, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Gray8, Pixel, PixelMask};

/// Intensity assigned to every non-segmented pixel of a lifted image.
pub const BACKGROUND: u8 = 255;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StereoError {
    #[error("empty segmentation")]
    EmptySegmentation,
    #[error("image is {image_w}x{image_h} but mask is {mask_w}x{mask_h}")]
    DimensionMismatch { image_w: usize, image_h: usize, mask_w: usize, mask_h: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Rectified grayscale image together with its segmentation and the
/// lifted intensities used for matching.
#[derive(Debug, Clone)]
pub struct SegmentedImage {
    intensities: Gray8,
    mask: PixelMask,
    lifted: Gray8,
}

impl SegmentedImage {
    pub fn intensities(&self) -> &Gray8 {
        &self.intensities
    }

    pub fn mask(&self) -> &PixelMask {
        &self.mask
    }

    pub fn lifted(&self) -> &Gray8 {
        &self.lifted
    }

    pub fn width(&self) -> usize {
        self.lifted.width()
    }

    pub fn height(&self) -> usize {
        self.lifted.height()
    }

    /// Lifted intensity with out-of-bounds reads returning background.
    #[inline]
    pub fn lifted_or_background(&self, x: i32, y: i32) -> u8 {
        let p = Pixel::new(x, y);
        if self.lifted.in_bounds(p) {
            self.lifted.get(p)
        } else {
            BACKGROUND
        }
    }
}

/// Keeps segmented intensities and sets everything else to [`BACKGROUND`].
pub fn lift(image: &Gray8, mask: &PixelMask) -> Result<SegmentedImage, StereoError> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(StereoError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            mask_w: mask.width(),
            mask_h: mask.height(),
        });
    }
    if mask.is_empty() {
        return Err(StereoError::EmptySegmentation);
    }
    let mut lifted = Gray8::filled(image.width(), image.height(), BACKGROUND);
    for p in mask.pixels() {
        lifted.set(p, image.get(p));
    }
    Ok(SegmentedImage { intensities: image.clone(), mask: mask.clone(), lifted })
}

/// Stereo rig: disparity-to-depth matrix `Q` and left camera matrix `G`.
///
/// JSON form: `{"Q": [[..4..] x4], "G": [[..3..] x3], "units": "mm"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    #[serde(rename = "Q")]
    pub q: [[f64; 4]; 4],
    #[serde(rename = "G")]
    pub g: [[f64; 3]; 3],
    pub units: String,
}

impl StereoRig {
    /// Rig of two identical rectified pinhole cameras, the right one
    /// displaced by `baseline` along +x. Depth is `focal * baseline / d`.
    pub fn canonical(focal: f64, cx: f64, cy: f64, baseline: f64, units: &str) -> Self {
        Self {
            q: [
                [1.0, 0.0, 0.0, -cx],
                [0.0, 1.0, 0.0, -cy],
                [0.0, 0.0, 0.0, focal],
                [0.0, 0.0, 1.0 / baseline, 0.0],
            ],
            g: [[focal, 0.0, cx], [0.0, focal, cy], [0.0, 0.0, 1.0]],
            units: units.to_string(),
        }
    }

    pub fn q_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.q[r][c])
    }

    pub fn g_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.g[r][c])
    }

    /// Checks that `Q` and `G` are invertible and finite.
    pub fn validate(&self) -> Result<(), StereoError> {
        let finite = self.q.iter().flatten().chain(self.g.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(StereoError::Config("rig contains non-finite entries".into()));
        }
        if self.q_matrix().try_inverse().is_none() {
            return Err(StereoError::Config("singular Q matrix".into()));
        }
        if self.g_matrix().try_inverse().is_none() {
            return Err(StereoError::Config("singular camera matrix G".into()));
        }
        Ok(())
    }

    /// Stereo baseline recovered from `Q[3][2] = 1 / baseline`.
    pub fn baseline(&self) -> f64 {
        (1.0 / self.q[3][2]).abs()
    }

    /// Homogeneous reprojection of `(x, y, d, 1)`; returns `Z / W`, or `None`
    /// when the ratio is not finite.
    pub fn depth(&self, x: f64, y: f64, disparity: f64) -> Option<f64> {
        let v = self.q_matrix() * Vector4::new(x, y, disparity, 1.0);
        let z = v[2] / v[3];
        z.is_finite().then_some(z)
    }

    /// Projects a left-camera-frame point into the left image.
    pub fn project_left(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let g = &self.g;
        if p[2] <= 0.0 {
            return None;
        }
        let x = g[0][0] * p[0] / p[2] + g[0][1] * p[1] / p[2] + g[0][2];
        let y = g[1][1] * p[1] / p[2] + g[1][2];
        Some([x, y])
    }

    /// Projects a left-camera-frame point into the right (rectified) image.
    ///
    /// The right principal point is recovered from `Q[3][3] = (cx - cx') / Tx`
    /// with `Tx = -1 / Q[3][2]`.
    pub fn project_right(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let tx = -1.0 / self.q[3][2];
        let cx_right = self.g[0][2] - self.q[3][3] * tx;
        let shifted = [p[0] + tx, p[1], p[2]];
        let [x, y] = self.project_left(shifted)?;
        Some([x - self.g[0][2] + cx_right, y])
    }
}

/// Matching and reliability constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Largest disparity searched.
    pub alpha: u32,
    /// Half-size of the square matching window.
    pub window_radius: u32,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// Pixels with reliability strictly above this are kept.
    pub reliability_threshold: f64,
    /// Lower bound applied to the best energy in the reliability ratio.
    pub emin_floor: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            alpha: 80,
            window_radius: 2,
            eps1: 8.0,
            eps2: 5.0,
            eps3: 0.8,
            reliability_threshold: 0.9,
            emin_floor: 1.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<(), StereoError> {
        if self.alpha < 5 {
            return Err(StereoError::Config(format!(
                "alpha = {} leaves no admissible runner-up disparity (need alpha >= 5)",
                self.alpha
            )));
        }
        if self.window_radius < 1 {
            return Err(StereoError::Config("window_radius must be at least 1".into()));
        }
        if !(self.reliability_threshold > 0.0 && self.reliability_threshold < 1.0) {
            return Err(StereoError::Config("reliability_threshold must lie in (0, 1)".into()));
        }
        if !(self.emin_floor > 0.0) || !(self.eps2 > 0.0) {
            return Err(StereoError::Config("emin_floor and eps2 must be positive".into()));
        }
        Ok(())
    }
}

/// Windowed SSD between the lifted left image around `p` and the lifted
/// right image shifted left by `d`. The window is the square of radius
/// `window_radius` around `p`, restricted to left-segmented pixels.
pub fn match_energy(left: &SegmentedImage, right: &SegmentedImage, p: Pixel, d: u32, params: &MatchParams) -> f64 {
    let r = params.window_radius as i32;
    let d = d as i32;
    let mut sum: u64 = 0;
    for y in p.y - r..=p.y + r {
        for x in p.x - r..=p.x + r {
            let q = Pixel::new(x, y);
            if !left.mask().contains(q) {
                continue;
            }
            let a = left.lifted().get(q) as i64;
            let b = right.lifted_or_background(x - d, y) as i64;
            sum += ((a - b) * (a - b)) as u64;
        }
    }
    sum as f64
}

/// Best and runner-up disparities with their energies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityChoice {
    pub d_min: u32,
    pub e_min: f64,
    pub d_next: u32,
    pub e_next: f64,
}

/// Picks the lowest-energy disparity in `[0, alpha]` (ties toward smaller
/// `d`) and the lowest-energy disparity more than 2 levels away from it.
pub fn best_disparities(
    left: &SegmentedImage,
    right: &SegmentedImage,
    p: Pixel,
    params: &MatchParams,
) -> Result<DisparityChoice, StereoError> {
    // alpha = 4 with d_min = 2 leaves no admissible runner-up.
    if params.alpha < 5 {
        return Err(StereoError::Config(format!(
            "alpha = {} leaves no admissible runner-up disparity (need alpha >= 5)",
            params.alpha
        )));
    }
    let energies: Vec<f64> = (0..=params.alpha).map(|d| match_energy(left, right, p, d, params)).collect();
    Ok(choose_disparities(&energies))
}

fn choose_disparities(energies: &[f64]) -> DisparityChoice {
    let argmin = |filter: &dyn Fn(usize) -> bool| {
        let mut best: Option<(usize, f64)> = None;
        for (d, &e) in energies.iter().enumerate() {
            if !filter(d) {
                continue;
            }
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((d, e));
            }
        }
        best.expect("nonempty admissible set")
    };
    let (d_min, e_min) = argmin(&|_| true);
    let (d_next, e_next) = argmin(&|d| d.abs_diff(d_min) > 2);
    DisparityChoice { d_min: d_min as u32, e_min, d_next: d_next as u32, e_next }
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reliability of a match from its best and runner-up energies:
/// `sigmoid(eps1 * ((E_next - E_min) / (eps2 * max(E_min, floor)) - eps3))`.
pub fn reliability(e_min: f64, e_next: f64, params: &MatchParams) -> f64 {
    let denom = params.eps2 * e_min.max(params.emin_floor);
    sigmoid(params.eps1 * ((e_next - e_min) / denom - params.eps3))
}

/// Matching result for one segmented left pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    pub pixel: Pixel,
    pub d_min: u32,
    pub e_min: f64,
    pub d_next: u32,
    pub e_next: f64,
    pub reliability: f64,
    /// Depth in rig units; NaN when invalid.
    pub depth: f64,
    /// False for zero disparity or a non-finite reprojection.
    pub valid: bool,
}

/// Per-pixel matching results over the left segmentation.
#[derive(Debug, Clone)]
pub struct DepthField {
    width: usize,
    height: usize,
    samples: Vec<PixelMatch>,
    index: Vec<u32>,
}

impl DepthField {
    pub fn from_samples(width: usize, height: usize, samples: Vec<PixelMatch>) -> Self {
        let mut index = vec![u32::MAX; width * height];
        for (i, s) in samples.iter().enumerate() {
            index[s.pixel.y as usize * width + s.pixel.x as usize] = i as u32;
        }
        Self { width, height, samples, index }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Samples in row-major pixel order.
    pub fn samples(&self) -> &[PixelMatch] {
        &self.samples
    }

    pub fn get(&self, p: Pixel) -> Option<&PixelMatch> {
        if p.x < 0 || p.y < 0 || p.x as usize >= self.width || p.y as usize >= self.height {
            return None;
        }
        match self.index[p.y as usize * self.width + p.x as usize] {
            u32::MAX => None,
            i => Some(&self.samples[i as usize]),
        }
    }

    /// Depth of a valid pixel.
    pub fn depth(&self, p: Pixel) -> Option<f64> {
        self.get(p).filter(|s| s.valid).map(|s| s.depth)
    }
}

/// Runs matching, reliability scoring and reprojection for every pixel of
/// the left segmentation. Pixels are processed in parallel; the output is
/// in row-major order regardless.
pub fn depth_map(
    left: &SegmentedImage,
    right: &SegmentedImage,
    rig: &StereoRig,
    params: &MatchParams,
) -> Result<DepthField, StereoError> {
    params.validate()?;
    rig.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(StereoError::Config("left and right images differ in size".into()));
    }
    let pixels: Vec<Pixel> = left.mask().pixels().collect();
    let samples: Vec<PixelMatch> = pixels
        .par_iter()
        .map(|&p| {
            let energies: Vec<f64> =
                (0..=params.alpha).map(|d| match_energy(left, right, p, d, params)).collect();
            let c = choose_disparities(&energies);
            let rel = reliability(c.e_min, c.e_next, params);
            let depth = if c.d_min == 0 { None } else { rig.depth(p.x as f64, p.y as f64, c.d_min as f64) };
            PixelMatch {
                pixel: p,
                d_min: c.d_min,
                e_min: c.e_min,
                d_next: c.d_next,
                e_next: c.e_next,
                reliability: rel,
                depth: depth.unwrap_or(f64::NAN),
                valid: depth.is_some(),
            }
        })
        .collect();
    Ok(DepthField::from_samples(left.width(), left.height(), samples))
}
