//! End-to-end orchestration and the file-based interface behind the CLI.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bspline::SplineCurve;
use crate::io::{format_f64, read_json, to_stable_json, write_json};
use crate::keypoints::{select_keypoints, ClusterParams, KeypointChain};
use crate::metrics::{MetricsReport, Summary, METRICS_HEADER};
use crate::mvs::{fit_centerline, to_camera_frame, CenterlineFit, FitParams};
use crate::raster::{Gray8, PixelMask};
use crate::stereo::{depth_map, lift, DepthField, MatchParams, StereoRig};
use crate::synth::{generate_scene, GenerationConfig, GenerationError, SceneBundle};

/// Where a run stopped. Each variant has its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Io,
    StereoMatch,
    KeypointGraph,
    MvsFit,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Io => 3,
            Stage::StereoMatch => 10,
            Stage::KeypointGraph => 11,
            Stage::MvsFit => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Io => "io",
            Stage::StereoMatch => "stereo_match",
            Stage::KeypointGraph => "keypoint_graph",
            Stage::MvsFit => "mvs_fit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage}: {reason}")]
pub struct StageFailure {
    pub stage: Stage,
    pub reason: String,
}

impl StageFailure {
    pub fn new(stage: Stage, reason: impl ToString) -> Self {
        Self { stage, reason: reason.to_string() }
    }
}

/// Input file locations for a single reconstruction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub left: Option<PathBuf>,
    pub right: Option<PathBuf>,
    pub mask_left: Option<PathBuf>,
    pub mask_right: Option<PathBuf>,
    pub rig: Option<PathBuf>,
}

/// Every tunable constant plus file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub matching: MatchParams,
    pub clustering: ClusterParams,
    pub fitting: FitParams,
    pub generation: GenerationConfig,
    pub inputs: InputPaths,
    pub output: Option<PathBuf>,
    /// Log filter used when no environment override is set.
    pub verbosity: Option<String>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("override `{0}` is not of the form key=value")]
    MalformedOverride(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

/// Recursively copies `src` into `dst`, rejecting keys that `dst` lacks.
fn merge(dst: &mut Value, src: &Value, prefix: &str) -> Result<(), ConfigError> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match d.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(ConfigError::UnknownKey(path)),
                }
            }
            Ok(())
        }
        (d, s) => {
            *d = s.clone();
            Ok(())
        }
    }
}

impl PipelineConfig {
    /// Defaults, overlaid with an optional JSON file, then with
    /// `dotted.key=value` overrides. Values parse as JSON when possible and
    /// as plain strings otherwise.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        if let Some(path) = file {
            let text =
                fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
            let user: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            merge(&mut value, &user, "")?;
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut nested = parsed;
            for part in key.split('.').rev() {
                let mut m = serde_json::Map::new();
                m.insert(part.to_string(), nested);
                nested = Value::Object(m);
            }
            merge(&mut value, &nested, "")?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        self.matching.validate().map_err(|e| inv(&e))?;
        self.clustering.validate().map_err(|e| inv(&e))?;
        self.fitting.validate().map_err(|e| inv(&e))?;
        self.generation.validate().map_err(|e| inv(&e))?;
        Ok(())
    }
}

/// Images, masks and calibration of one stereo pair.
#[derive(Debug, Clone)]
pub struct StereoInputs {
    pub left: Gray8,
    pub right: Gray8,
    pub mask_left: PixelMask,
    pub mask_right: PixelMask,
    pub rig: StereoRig,
}

impl From<SceneBundle> for StereoInputs {
    fn from(b: SceneBundle) -> Self {
        Self { left: b.left, right: b.right, mask_left: b.mask_left, mask_right: b.mask_right, rig: b.rig }
    }
}

impl StereoInputs {
    pub fn load(paths: &InputPaths) -> Result<Self, StageFailure> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone().ok_or_else(|| StageFailure::new(Stage::Config, format!("missing input path for {what}")))
        };
        let (l, r, ml, mr, rig) = (
            need(&paths.left, "left image")?,
            need(&paths.right, "right image")?,
            need(&paths.mask_left, "left mask")?,
            need(&paths.mask_right, "right mask")?,
            need(&paths.rig, "rig")?,
        );
        let io_err = |e: io::Error| StageFailure::new(Stage::Io, e);
        Ok(Self {
            left: crate::io::load_gray(&l).map_err(io_err)?,
            right: crate::io::load_gray(&r).map_err(io_err)?,
            mask_left: crate::io::load_mask(&ml).map_err(io_err)?,
            mask_right: crate::io::load_mask(&mr).map_err(io_err)?,
            rig: read_json(&rig).map_err(io_err)?,
        })
    }
}

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub stereo_match: f64,
    pub keypoint_graph: f64,
    pub mvs_fit: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: DepthField,
    pub chain: KeypointChain,
    pub fit: CenterlineFit,
    pub camera_spline: SplineCurve,
    pub timings: StageTimings,
}

impl Reconstruction {
    pub fn pixel_spline(&self) -> &SplineCurve {
        &self.fit.solution.spline
    }
}

/// Runs stereo matching, keypoint selection and the constrained fit.
pub fn reconstruct(inputs: &StereoInputs, cfg: &PipelineConfig) -> Result<Reconstruction, StageFailure> {
    cfg.matching.validate().map_err(|e| StageFailure::new(Stage::Config, e))?;
    cfg.clustering.validate().map_err(|e| StageFailure::new(Stage::Config, e))?;
    cfg.fitting.validate().map_err(|e| StageFailure::new(Stage::Config, e))?;
    inputs.rig.validate().map_err(|e| StageFailure::new(Stage::Config, e))?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let stereo = |e| StageFailure::new(Stage::StereoMatch, e);
    let left = lift(&inputs.left, &inputs.mask_left).map_err(stereo)?;
    let right = lift(&inputs.right, &inputs.mask_right).map_err(stereo)?;
    let field = depth_map(&left, &right, &inputs.rig, &cfg.matching).map_err(stereo)?;
    timings.stereo_match = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let chain = select_keypoints(&field, &inputs.mask_left, &cfg.matching, &cfg.clustering)
        .map_err(|e| StageFailure::new(Stage::KeypointGraph, e))?;
    timings.keypoint_graph = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mvs = |e| StageFailure::new(Stage::MvsFit, e);
    let fit = fit_centerline(&chain, &inputs.mask_left, &field, &cfg.fitting).map_err(mvs)?;
    let camera_spline = to_camera_frame(&fit.solution.spline, &inputs.rig).map_err(mvs)?;
    if !(camera_spline.arc_length() > 0.0) {
        return Err(StageFailure::new(Stage::MvsFit, "degenerate zero-length spline"));
    }
    timings.mvs_fit = t.elapsed().as_secs_f64();
    Ok(Reconstruction { field, chain, fit, camera_spline, timings })
}

pub const CAMERA_SPLINE_FILE: &str = "spline_camera.json";
pub const PIXEL_SPLINE_FILE: &str = "spline_pixel.json";
pub const KEYPOINTS_FILE: &str = "keypoints.json";
pub const TRACE_FILE: &str = "solver_trace.csv";
pub const OUTCOME_FILE: &str = "outcome.json";
pub const FAILURE_FILE: &str = "failure.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failure,
}

/// Result of a single reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub status: Status,
    pub stage: Option<Stage>,
    pub reason: Option<String>,
    pub exit_code: i32,
    pub spline: Option<PathBuf>,
    pub diagnostics: Vec<PathBuf>,
    pub timings: StageTimings,
}

impl RunOutcome {
    fn failure(f: &StageFailure, timings: StageTimings) -> Self {
        Self {
            status: Status::Failure,
            stage: Some(f.stage),
            reason: Some(f.reason.clone()),
            exit_code: f.stage.exit_code(),
            spline: None,
            diagnostics: Vec::new(),
            timings,
        }
    }
}

pub fn write_trace(path: &Path, fit: &CenterlineFit) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "iteration,objective,max_violation")?;
    for row in &fit.solution.trace {
        writeln!(out, "{},{},{}", row.iteration, format_f64(row.objective), format_f64(row.max_violation))?;
    }
    out.flush()
}

fn write_products(dir: &Path, rec: &Reconstruction) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let camera = dir.join(CAMERA_SPLINE_FILE);
    write_json(&camera, &rec.camera_spline)?;
    let pixel = dir.join(PIXEL_SPLINE_FILE);
    write_json(&pixel, rec.pixel_spline())?;
    let keypoints = dir.join(KEYPOINTS_FILE);
    write_json(&keypoints, &rec.chain.debug_json())?;
    let trace = dir.join(TRACE_FILE);
    write_trace(&trace, &rec.fit)?;
    Ok(vec![camera, pixel, keypoints, trace])
}

/// Loads the configured inputs, reconstructs, and writes every product
/// into the output directory. Failures are written as a report rather than
/// raised; the outcome's exit code tells them apart.
pub fn run_reconstruct(cfg: &PipelineConfig) -> RunOutcome {
    let Some(out) = cfg.output.clone() else {
        return RunOutcome::failure(&StageFailure::new(Stage::Config, "missing output directory"), Default::default());
    };
    let result = StereoInputs::load(&cfg.inputs).and_then(|inputs| reconstruct(&inputs, cfg));
    let outcome = match &result {
        Ok(rec) => match write_products(&out, rec) {
            Ok(mut files) => {
                let spline = files.remove(0);
                RunOutcome {
                    status: Status::Success,
                    stage: None,
                    reason: None,
                    exit_code: 0,
                    spline: Some(spline),
                    diagnostics: files,
                    timings: rec.timings,
                }
            }
            Err(e) => RunOutcome::failure(&StageFailure::new(Stage::Io, e), rec.timings),
        },
        Err(f) => RunOutcome::failure(f, StageTimings::default()),
    };
    let written = fs::create_dir_all(&out).and_then(|_| {
        if outcome.status == Status::Failure {
            write_json(&out.join(FAILURE_FILE), &outcome)?;
        }
        write_json(&out.join(OUTCOME_FILE), &outcome)
    });
    match written {
        Ok(()) => outcome,
        Err(e) if outcome.status == Status::Success => {
            RunOutcome::failure(&StageFailure::new(Stage::Io, e), outcome.timings)
        }
        Err(_) => outcome,
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Generation(_) | PipelineError::Config(_) => Stage::Config.exit_code(),
            PipelineError::Io(_) => Stage::Io.exit_code(),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub curve_length: f64,
    pub stroke_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generation: GenerationConfig,
    pub scenes: Vec<ManifestEntry>,
}

pub fn scene_name(seed: u64) -> String {
    format!("scene_{seed:04}")
}

/// Generates one bundle per seed plus a manifest. Everything is written to
/// a sibling temporary directory first and moved into place only when all
/// scenes succeeded, so a failed run leaves no partial dataset.
pub fn run_generate(seeds: std::ops::Range<u64>, cfg: &GenerationConfig, out: &Path) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let scenes: Vec<_> = seeds.clone().into_par_iter().map(|s| generate_scene(s, cfg)).collect::<Result<_, _>>()?;
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new().prefix(".generate-").tempdir_in(&parent)?;
    let mut entries = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let name = scene_name(scene.seed);
        scene.bundle().save(&staging.path().join(&name))?;
        entries.push(ManifestEntry {
            name,
            seed: scene.seed,
            curve_length: scene.curve_length,
            stroke_width: scene.stroke_width,
        });
    }
    let manifest = Manifest { generation: cfg.clone(), scenes: entries };
    write_json(&staging.path().join(MANIFEST_FILE), &manifest)?;
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out)?;
    Ok(manifest)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";
pub const SPLINE_DIR: &str = "splines";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneFailure {
    pub scene: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub summary: Summary,
    pub failures: Vec<SceneFailure>,
    /// Manifest scenes whose bundle could not be loaded.
    pub missing: Vec<String>,
}

enum SceneResult {
    Missing(String),
    Done(MetricsReport, Option<SplineCurve>, Option<SceneFailure>),
}

fn evaluate_scene(dataset: &Path, entry: &ManifestEntry, cfg: &PipelineConfig) -> SceneResult {
    let bundle = match SceneBundle::load(&dataset.join(&entry.name)) {
        Ok(b) => b,
        Err(e) => {
            log::warn!("skipping {}: {e}", entry.name);
            return SceneResult::Missing(entry.name.clone());
        }
    };
    let truth = bundle.truth.clone();
    let inputs = StereoInputs::from(bundle);
    match reconstruct(&inputs, cfg) {
        Ok(rec) => {
            let report = MetricsReport::evaluate(
                &entry.name,
                &rec.camera_spline,
                &truth,
                &inputs.mask_left,
                &inputs.mask_right,
                &inputs.rig,
            );
            SceneResult::Done(report, Some(rec.camera_spline), None)
        }
        Err(f) => {
            log::info!("{} failed at {}: {}", entry.name, f.stage, f.reason);
            let failure = SceneFailure { scene: entry.name.clone(), stage: f.stage, reason: f.reason };
            SceneResult::Done(MetricsReport::failure(&entry.name, f.stage.name()), None, Some(failure))
        }
    }
}

fn stat_cells(s: &Option<crate::metrics::Stat>) -> [String; 2] {
    match s {
        Some(s) => [format_f64(s.mean), format_f64(s.std)],
        None => [String::new(), String::new()],
    }
}

/// Reconstructs and scores every scene of a generated dataset.
///
/// Writes `metrics.csv` (one row per scene, manifest order),
/// `summary.json`, a one-row `summary.csv`, and the camera-frame spline of
/// every success under `splines/`.
pub fn run_evaluate(dataset: &Path, cfg: &PipelineConfig, out: &Path) -> Result<Evaluation, PipelineError> {
    cfg.validate()?;
    let manifest: Manifest = read_json(&dataset.join(MANIFEST_FILE))?;
    let results: Vec<SceneResult> = manifest.scenes.par_iter().map(|e| evaluate_scene(dataset, e, cfg)).collect();

    fs::create_dir_all(out.join(SPLINE_DIR))?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut missing = Vec::new();
    for r in results {
        match r {
            SceneResult::Missing(name) => missing.push(name),
            SceneResult::Done(report, spline, failure) => {
                if let Some(s) = spline {
                    write_json(&out.join(SPLINE_DIR).join(format!("{}.json", report.scene)), &s)?;
                }
                failures.extend(failure);
                reports.push(report);
            }
        }
    }
    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(out.join(METRICS_FILE), csv)?;

    let summary = Summary::from_reports(&reports);
    let mut row = vec![summary.successes.to_string(), summary.scenes.to_string()];
    for s in [&summary.e_s, &summary.e_s_max, &summary.e_len, &summary.e2d_mean_left, &summary.e2d_mean_right] {
        row.extend(stat_cells(s));
    }
    fs::write(
        out.join(SUMMARY_CSV_FILE),
        format!(
            "successes,scenes,mu_e_S,sigma_e_S,mu_e_S_max,sigma_e_S_max,mu_e_len,sigma_e_len,\
             mu_e2d_mean_L,sigma_e2d_mean_L,mu_e2d_mean_R,sigma_e2d_mean_R\n{}\n",
            row.join(",")
        ),
    )?;
    let evaluation = Evaluation { reports, summary, failures, missing };
    fs::write(out.join(SUMMARY_FILE), to_stable_json(&evaluation).map_err(io::Error::from)?)?;
    Ok(evaluation)
}
