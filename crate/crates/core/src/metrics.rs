//! Evaluation against ground truth.

use serde::Serialize;

use crate::bspline::SplineCurve;
use crate::edt::DistanceField;
use crate::io::format_f64;
use crate::raster::PixelMask;
use crate::stereo::StereoRig;

pub const CURVE_SAMPLES: usize = 1000;

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Distance from `p` to the nearest point of a polyline.
pub fn point_polyline_distance(p: [f64; 3], polyline: &[[f64; 3]]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [q] => crate::bspline::dist3(&p, q),
        _ => polyline.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Mean and max distance from uniform samples of the reconstruction to the
/// truth polyline.
pub fn curve_errors(reconstruction: &SplineCurve, truth: &[[f64; 3]]) -> (f64, f64) {
    let d: Vec<f64> =
        reconstruction.sample(CURVE_SAMPLES).into_iter().map(|p| point_polyline_distance(p, truth)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    (mean, d.iter().copied().fold(0.0, f64::max))
}

pub fn length_error(reconstruction: &SplineCurve, truth: &[[f64; 3]]) -> f64 {
    (reconstruction.arc_length() - crate::synth::polyline_length(truth)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReprojectionErrors {
    pub mean_left: f64,
    pub max_left: f64,
    pub mean_right: f64,
    pub max_right: f64,
    /// Samples that were behind a camera and counted as the image diagonal.
    pub behind_camera: usize,
}

/// Projects uniform samples of a camera-frame spline into both views and
/// measures the distance of each projection's nearest pixel to the nearest
/// mask pixel.
pub fn reprojection_error(
    reconstruction: &SplineCurve,
    mask_left: &PixelMask,
    mask_right: &PixelMask,
    rig: &StereoRig,
) -> ReprojectionErrors {
    let samples = reconstruction.sample(CURVE_SAMPLES);
    let mut behind = 0;
    let mut view = |mask: &PixelMask, project: &dyn Fn([f64; 3]) -> Option<[f64; 2]>| {
        let field = DistanceField::new(mask);
        let diagonal = (mask.width() as f64).hypot(mask.height() as f64);
        let d: Vec<f64> = samples
            .iter()
            .map(|&p| match project(p) {
                Some([x, y]) => Some(field.distance_at(x, y)).filter(|d| d.is_finite()).unwrap_or(diagonal),
                None => {
                    behind += 1;
                    diagonal
                }
            })
            .collect();
        (d.iter().sum::<f64>() / d.len() as f64, d.iter().copied().fold(0.0, f64::max))
    };
    let (mean_left, max_left) = view(mask_left, &|p| rig.project_left(p));
    let (mean_right, max_right) = view(mask_right, &|p| rig.project_right(p));
    ReprojectionErrors { mean_left, max_left, mean_right, max_right, behind_camera: behind }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scene: String,
    pub e_s: f64,
    pub e_s_max: f64,
    pub e_len: f64,
    pub e2d_mean_left: f64,
    pub e2d_max_left: f64,
    pub e2d_mean_right: f64,
    pub e2d_max_right: f64,
    pub success: bool,
    /// `success`, or `failure:<stage>` when reconstruction failed.
    pub status: String,
}

pub const METRICS_HEADER: &str = "scene,e_S,e_S_max,e_len,e2d_mean_L,e2d_max_L,e2d_mean_R,e2d_max_R,status";

impl MetricsReport {
    pub fn evaluate(
        scene: &str,
        reconstruction: &SplineCurve,
        truth: &[[f64; 3]],
        mask_left: &PixelMask,
        mask_right: &PixelMask,
        rig: &StereoRig,
    ) -> Self {
        let (e_s, e_s_max) = curve_errors(reconstruction, truth);
        let r = reprojection_error(reconstruction, mask_left, mask_right, rig);
        Self {
            scene: scene.to_string(),
            e_s,
            e_s_max,
            e_len: length_error(reconstruction, truth),
            e2d_mean_left: r.mean_left,
            e2d_max_left: r.max_left,
            e2d_mean_right: r.mean_right,
            e2d_max_right: r.max_right,
            success: true,
            status: "success".into(),
        }
    }

    pub fn failure(scene: &str, stage: &str) -> Self {
        Self {
            scene: scene.to_string(),
            e_s: f64::NAN,
            e_s_max: f64::NAN,
            e_len: f64::NAN,
            e2d_mean_left: f64::NAN,
            e2d_max_left: f64::NAN,
            e2d_mean_right: f64::NAN,
            e2d_max_right: f64::NAN,
            success: false,
            status: format!("failure:{stage}"),
        }
    }

    pub fn csv_row(&self) -> String {
        let f = |v: f64| if self.success { format_f64(v) } else { String::new() };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scene,
            f(self.e_s),
            f(self.e_s_max),
            f(self.e_len),
            f(self.e2d_mean_left),
            f(self.e2d_max_left),
            f(self.e2d_mean_right),
            f(self.e2d_max_right),
            self.status
        )
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Aggregates over successful scenes, laid out like the curve-error table
/// plus reprojection means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenes: usize,
    pub successes: usize,
    pub e_s: Option<Stat>,
    pub e_s_max: Option<Stat>,
    pub e_len: Option<Stat>,
    pub e2d_mean_left: Option<Stat>,
    pub e2d_max_left: Option<Stat>,
    pub e2d_mean_right: Option<Stat>,
    pub e2d_max_right: Option<Stat>,
}

impl Summary {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let ok: Vec<&MetricsReport> = reports.iter().filter(|r| r.success).collect();
        let stat = |f: fn(&MetricsReport) -> f64| {
            let v: Vec<f64> = ok.iter().map(|r| f(r)).collect();
            mean_std(&v).map(|(mean, std)| Stat { mean, std })
        };
        Self {
            scenes: reports.len(),
            successes: ok.len(),
            e_s: stat(|r| r.e_s),
            e_s_max: stat(|r| r.e_s_max),
            e_len: stat(|r| r.e_len),
            e2d_mean_left: stat(|r| r.e2d_mean_left),
            e2d_max_left: stat(|r| r.e2d_max_left),
            e2d_mean_right: stat(|r| r.e2d_mean_right),
            e2d_max_right: stat(|r| r.e2d_max_right),
        }
    }
}
