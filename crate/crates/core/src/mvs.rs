//! Minimum-variation fitting of the depth profile.
//!
//! The ordered keypoints are first densified where they are sparse, then
//! each keypoint gets a local least-squares line of depth against order
//! index. The distance from a keypoint to its own line sets a symmetric
//! depth corridor, which is interpolated between keypoints. A degree-4
//! spline fitted to the corridor centerline is the starting point; its depth
//! control values are then optimized to minimize
//!
//! ```text
//!   integral over [0, ell] of (d kappa / du)^2 / sqrt(1 + S_z'(u)^2) du
//! ```
//!
//! where `kappa` is the curvature of the graph `(u, S_z(u))`, subject to
//! staying inside the corridor and matching the end lines in value and slope.
//! All constraints are linear in the depth control values; the objective is
//! not. The solver is a feasible-iterate SQP with Gauss–Newton Hessians and
//! the dense QP from [`crate::qp`] as its subproblem solver.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{self, FitResult, Frame, SplineCurve, SplineError};
use crate::keypoints::KeypointChain;
use crate::qp::{QpError, QuadraticProgram};
use crate::quadrature;
use crate::raster::{Pixel, PixelMask, NEIGHBORS_8};
use crate::stereo::{DepthField, StereoRig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvsError {
    #[error("need at least two ordered keypoints (have {0})")]
    InsufficientKeypoints(usize),
    #[error("insufficient points for spline: {have} < {need}")]
    InsufficientPoints { have: usize, need: usize },
    #[error("MVS infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    /// Number of control points.
    pub m: usize,
    pub degree: usize,
    /// Gap size (segmented pixels) per inserted extra point.
    pub gap_threshold: usize,
    /// Local line half-window as a fraction of the keypoint count.
    pub r_k_fraction: f64,
    /// Corridor half-width as a multiple of the keypoint-to-line distance.
    pub boundary_factor: f64,
    /// Absolute minimum corridor half-width; `None` uses
    /// `min_halfwidth_fraction` of the median keypoint depth.
    pub min_halfwidth: Option<f64>,
    pub min_halfwidth_fraction: f64,
    /// Parameters at which the corridor inequality is enforced.
    pub constraint_samples: usize,
    pub max_iterations: usize,
    /// Feasibility tolerance on constraints.
    pub tolerance: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            m: 15,
            degree: 4,
            gap_threshold: 20,
            r_k_fraction: 0.1,
            boundary_factor: 1.5,
            min_halfwidth: None,
            min_halfwidth_fraction: 0.01,
            constraint_samples: 100,
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<(), MvsError> {
        if self.degree < 1 || self.m <= self.degree {
            return Err(MvsError::Config("need m > degree >= 1".into()));
        }
        if !(self.boundary_factor > 0.0) {
            return Err(MvsError::Config("boundary_factor must be positive".into()));
        }
        if self.gap_threshold == 0 {
            return Err(MvsError::Config("gap_threshold must be positive".into()));
        }
        if self.constraint_samples < 2 {
            return Err(MvsError::Config("need at least two constraint samples".into()));
        }
        Ok(())
    }
}

/// Ordered point set `H`: keypoints plus extra points in sparse stretches.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePoints {
    /// `(x, y, depth)` in ordering sequence; the index is the order index.
    pub points: Vec<[f64; 3]>,
    /// Order index of each keypoint, in keypoint ordering sequence.
    pub keypoint_slots: Vec<usize>,
}

impl DensePoints {
    /// Keypoints only, no extra points.
    pub fn from_keypoints(points: Vec<[f64; 3]>) -> Self {
        let keypoint_slots = (0..points.len()).collect();
        Self { points, keypoint_slots }
    }
}

const FREE: usize = usize::MAX;

struct Labels {
    width: usize,
    cells: Vec<usize>,
}

impl Labels {
    fn new(chain: &KeypointChain, mask: &PixelMask) -> Self {
        let mut cells = vec![FREE; mask.width() * mask.height()];
        for (i, c) in chain.clusters.iter().enumerate() {
            for p in &c.pixels {
                cells[p.y as usize * mask.width() + p.x as usize] = i;
            }
        }
        Self { width: mask.width(), cells }
    }

    fn at(&self, p: Pixel) -> usize {
        self.cells[p.y as usize * self.width + p.x as usize]
    }
}

/// Unclustered segmented pixels reachable (8-connected) from `seeds`
/// without entering any cluster other than `own`.
fn reach(seeds: &[Pixel], own: Option<usize>, labels: &Labels, mask: &PixelMask) -> BTreeSet<Pixel> {
    let mut seen: BTreeSet<Pixel> = seeds.iter().copied().collect();
    let mut queue: VecDeque<Pixel> = seeds.iter().copied().collect();
    let mut free = BTreeSet::new();
    for &s in seeds {
        if labels.at(s) == FREE {
            free.insert(s);
        }
    }
    while let Some(p) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS_8 {
            let q = Pixel::new(p.x + dx, p.y + dy);
            if !mask.contains(q) || seen.contains(&q) {
                continue;
            }
            let l = labels.at(q);
            if l != FREE && Some(l) != own {
                continue;
            }
            seen.insert(q);
            if l == FREE {
                free.insert(q);
            }
            queue.push_back(q);
        }
    }
    free
}

/// Geodesic BFS distance inside `region` from `seeds` (which may lie
/// outside the region).
fn region_distances(seeds: &[Pixel], region: &BTreeSet<Pixel>) -> std::collections::BTreeMap<Pixel, u32> {
    let mut dist = std::collections::BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if region.contains(&s) {
            dist.insert(s, 0);
            queue.push_back(s);
        }
    }
    for &s in seeds {
        if region.contains(&s) {
            continue;
        }
        for (dx, dy) in NEIGHBORS_8 {
            let q = Pixel::new(s.x + dx, s.y + dy);
            if region.contains(&q) && !dist.contains_key(&q) {
                dist.insert(q, 1);
                queue.push_back(q);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        let d = dist[&p];
        for (dx, dy) in NEIGHBORS_8 {
            let q = Pixel::new(p.x + dx, p.y + dy);
            if region.contains(&q) && !dist.contains_key(&q) {
                dist.insert(q, d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// Inserts `floor(gap / gap_threshold)` extra points between consecutive
/// keypoints whose connecting stretch of unclustered segmented pixels is
/// longer than `gap_threshold`. Extra points sit at evenly spaced geodesic
/// positions along the stretch and carry the raw stereo depth of the valid
/// pixel closest to each target position, reliable or not.
pub fn densify(chain: &KeypointChain, mask: &PixelMask, field: &DepthField, params: &FitParams) -> DensePoints {
    let labels = Labels::new(chain, mask);
    let side = |k: usize| -> (Vec<Pixel>, Option<usize>) {
        let kp = &chain.keypoints[k];
        match kp.cluster {
            Some(ci) => (chain.clusters[ci].pixels.clone(), Some(ci)),
            None => (vec![Pixel::new(kp.position[0] as i32, kp.position[1] as i32)], None),
        }
    };
    let mut points = Vec::new();
    let mut slots = Vec::new();
    for (i, &k) in chain.order.iter().enumerate() {
        if i > 0 {
            let prev = chain.order[i - 1];
            let (seeds_a, own_a) = side(prev);
            let (seeds_b, own_b) = side(k);
            let ra = reach(&seeds_a, own_a, &labels, mask);
            let rb = reach(&seeds_b, own_b, &labels, mask);
            let gap: BTreeSet<Pixel> = ra.intersection(&rb).copied().collect();
            let extra = gap.len() / params.gap_threshold;
            if gap.len() > params.gap_threshold && extra > 0 {
                let da = region_distances(&seeds_a, &gap);
                let db = region_distances(&seeds_b, &gap);
                let position = |p: &Pixel| -> Option<f64> {
                    let (a, b) = (*da.get(p)? as f64, *db.get(p)? as f64);
                    Some(if a + b > 0.0 { a / (a + b) } else { 0.5 })
                };
                for j in 1..=extra {
                    let target = j as f64 / (extra + 1) as f64;
                    let best = gap
                        .iter()
                        .filter_map(|p| {
                            let t = position(p)?;
                            let s = field.get(*p).filter(|s| s.valid)?;
                            Some(((t - target).abs(), *p, s.depth))
                        })
                        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    if let Some((_, p, depth)) = best {
                        let pt = [p.x as f64, p.y as f64, depth];
                        if points.last() != Some(&pt) {
                            points.push(pt);
                        }
                    }
                }
            }
        }
        slots.push(points.len());
        points.push(chain.keypoints[k].position);
    }
    DensePoints { points, keypoint_slots: slots }
}

/// Least-squares line `depth = intercept + slope * order_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLine {
    pub slope: f64,
    pub intercept: f64,
}

impl LocalLine {
    pub fn at(&self, order_index: f64) -> f64 {
        self.intercept + self.slope * order_index
    }

    /// Fit over `(index, depth)` pairs; a window without index spread
    /// degenerates to a horizontal line through the mean depth.
    pub fn fit(samples: &[(f64, f64)]) -> Self {
        let n = samples.len() as f64;
        let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
        let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
        let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
        if !(sxx > 0.0) {
            return Self { slope: 0.0, intercept: my };
        }
        let slope = sxy / sxx;
        Self { slope, intercept: my - slope * mx }
    }
}

/// Lower and upper depth bounds over the ordered points.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthCorridor {
    /// Bounds per order index of the dense point set.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Local line of each keypoint, in keypoint ordering sequence.
    pub lines: Vec<LocalLine>,
    pub keypoint_slots: Vec<usize>,
    /// Half-window (in keypoints) the local lines were fitted over.
    pub r_k: usize,
    pub min_halfwidth: f64,
}

impl DepthCorridor {
    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.lower[j] + self.upper[j])
    }

    /// Bounds at parameter `u` given the parameter of every order index,
    /// linearly interpolated.
    pub fn bounds_at_parameter(&self, u: f64, parameters: &[f64]) -> (f64, f64) {
        let n = parameters.len();
        if u <= parameters[0] {
            return (self.lower[0], self.upper[0]);
        }
        if u >= parameters[n - 1] {
            return (self.lower[n - 1], self.upper[n - 1]);
        }
        let j = parameters.partition_point(|&p| p <= u).saturating_sub(1).min(n - 2);
        let t = (u - parameters[j]) / (parameters[j + 1] - parameters[j]);
        (
            self.lower[j] + t * (self.lower[j + 1] - self.lower[j]),
            self.upper[j] + t * (self.upper[j + 1] - self.upper[j]),
        )
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds the depth corridor from local lines around every keypoint.
pub fn build_corridor(dense: &DensePoints, params: &FitParams) -> Result<DepthCorridor, MvsError> {
    let slots = &dense.keypoint_slots;
    let nk = slots.len();
    if nk < 2 {
        return Err(MvsError::InsufficientKeypoints(nk));
    }
    let r_k = ((nk as f64 * params.r_k_fraction).round() as usize).max(1);
    let min_halfwidth = match params.min_halfwidth {
        Some(h) => h,
        None => {
            let mut depths: Vec<f64> = slots.iter().map(|&s| dense.points[s][2]).collect();
            params.min_halfwidth_fraction * median(&mut depths).abs()
        }
    };
    let mut lines = Vec::with_capacity(nk);
    let mut key_lower = Vec::with_capacity(nk);
    let mut key_upper = Vec::with_capacity(nk);
    for i in 0..nk {
        let lo = slots[i.saturating_sub(r_k)];
        let hi = slots[(i + r_k).min(nk - 1)];
        let samples: Vec<(f64, f64)> = (lo..=hi).map(|j| (j as f64, dense.points[j][2])).collect();
        let line = LocalLine::fit(&samples);
        let kz = dense.points[slots[i]][2];
        let half = params.boundary_factor * (line.at(slots[i] as f64) - kz).abs();
        lines.push(line);
        key_lower.push(kz - half);
        key_upper.push(kz + half);
    }
    let n = dense.points.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..nk - 1 {
        let (a, b) = (slots[i], slots[i + 1]);
        for j in a..=b {
            let t = if b > a { (j - a) as f64 / (b - a) as f64 } else { 0.0 };
            lower[j] = key_lower[i] + t * (key_lower[i + 1] - key_lower[i]);
            upper[j] = key_upper[i] + t * (key_upper[i + 1] - key_upper[i]);
        }
    }
    for j in 0..n {
        if upper[j] - lower[j] < 2.0 * min_halfwidth {
            let c = 0.5 * (lower[j] + upper[j]);
            lower[j] = c - min_halfwidth;
            upper[j] = c + min_halfwidth;
        }
    }
    Ok(DepthCorridor { lower, upper, lines, keypoint_slots: slots.clone(), r_k, min_halfwidth })
}

/// Fits the initial spline to the dense points with their depths moved to
/// the corridor centerline.
pub fn init_spline(dense: &DensePoints, corridor: &DepthCorridor, params: &FitParams) -> Result<FitResult, MvsError> {
    params.validate()?;
    if dense.points.len() < params.m {
        return Err(MvsError::InsufficientPoints { have: dense.points.len(), need: params.m });
    }
    let centered: Vec<[f64; 3]> = dense
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| [p[0], p[1], corridor.center(j)])
        .collect();
    Ok(bspline::fit_least_squares(&centered, params.m, params.degree)?)
}

/// The finite-dimensional fairing problem over the depth control values.
#[derive(Debug, Clone)]
pub struct MvsProblem {
    /// Initial spline; its `x`/`y` control values stay frozen.
    pub spline: SplineCurve,
    /// Parameters where the corridor is enforced, covering both ends.
    pub sample_params: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start_value: f64,
    pub start_slope: f64,
    pub end_value: f64,
    pub end_slope: f64,
}

impl MvsProblem {
    /// Maps the corridor and the end lines onto the spline parameter.
    ///
    /// End-line slopes are per order index; they are converted to slopes
    /// per spline parameter with the secant of the parameter assignment over
    /// the same window the end line was fitted on.
    pub fn new(fit: &FitResult, corridor: &DepthCorridor, params: &FitParams) -> Result<Self, MvsError> {
        let u = &fit.parameter_assignment;
        let n = u.len();
        let slots = &corridor.keypoint_slots;
        let nk = slots.len();
        if nk < 2 {
            return Err(MvsError::InsufficientKeypoints(nk));
        }
        if corridor.lower.len() != n {
            return Err(MvsError::Config("corridor does not match the fitted point set".into()));
        }
        let (_, ell) = fit.spline.domain();
        let ns = params.constraint_samples;
        let sample_params: Vec<f64> = (0..ns).map(|s| ell * s as f64 / (ns - 1) as f64).collect();
        let (lower, upper): (Vec<f64>, Vec<f64>) =
            sample_params.iter().map(|&s| corridor.bounds_at_parameter(s, u)).unzip();

        let first = slots[0];
        let last = slots[nk - 1];
        let first_hi = slots[corridor.r_k.min(nk - 1)].max(first + 1);
        let last_lo = slots[(nk - 1).saturating_sub(corridor.r_k)].min(last - 1);
        let start_rate = (u[first_hi] - u[first]) / (first_hi - first) as f64;
        let end_rate = (u[last] - u[last_lo]) / (last - last_lo) as f64;
        let l0 = corridor.lines[0];
        let l1 = corridor.lines[nk - 1];
        Ok(Self {
            spline: fit.spline.clone(),
            sample_params,
            lower,
            upper,
            start_value: l0.at(first as f64),
            start_slope: l0.slope / start_rate,
            end_value: l1.at(last as f64),
            end_slope: l1.slope / end_rate,
        })
    }

    pub fn initial_depths(&self) -> Vec<f64> {
        self.spline.control_points().iter().map(|c| c[2]).collect()
    }

    /// Equality rows (value/slope at both ends) and their targets.
    fn equality_system(&self) -> Result<(DMatrix<f64>, DVector<f64>), MvsError> {
        let (lo, hi) = self.spline.domain();
        let m = self.spline.num_control_points();
        let rows = [
            self.spline.basis_row(lo, 0)?,
            self.spline.basis_row(lo, 1)?,
            self.spline.basis_row(hi, 0)?,
            self.spline.basis_row(hi, 1)?,
        ];
        let a = DMatrix::from_row_iterator(4, m, rows.iter().flatten().copied());
        let b = DVector::from_row_slice(&[self.start_value, self.start_slope, self.end_value, self.end_slope]);
        Ok((a, b))
    }

    /// Inequality rows `C b >= d` encoding both corridor sides.
    fn inequality_system(&self) -> Result<(DMatrix<f64>, DVector<f64>), MvsError> {
        let m = self.spline.num_control_points();
        let ns = self.sample_params.len();
        let mut c = DMatrix::zeros(2 * ns, m);
        let mut d = DVector::zeros(2 * ns);
        for (s, &u) in self.sample_params.iter().enumerate() {
            let row = self.spline.basis_row(u, 0)?;
            for j in 0..m {
                c[(2 * s, j)] = row[j];
                c[(2 * s + 1, j)] = -row[j];
            }
            d[2 * s] = self.lower[s];
            d[2 * s + 1] = -self.upper[s];
        }
        Ok((c, d))
    }

    /// Largest violation of any constraint by the depth values `b`.
    pub fn max_violation(&self, b: &[f64]) -> Result<f64, MvsError> {
        let bz = DVector::from_row_slice(b);
        let (a, beq) = self.equality_system()?;
        let (c, d) = self.inequality_system()?;
        let eq = (&a * &bz - beq).amax();
        let ineq = (&d - &c * &bz).iter().fold(0.0f64, |acc, v| acc.max(*v));
        Ok(eq.max(ineq))
    }
}

/// The fairing functional and its derivatives with respect to the depth
/// control values, on composite 16-point Gauss–Legendre nodes.
#[derive(Debug, Clone)]
pub struct MvsObjective {
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    d3: DMatrix<f64>,
    weights: Vec<f64>,
}

struct NodeTerms {
    kappa_u: f64,
    /// Partials of `kappa_u` with respect to `S_z'`, `S_z''`, `S_z'''`.
    dk: [f64; 3],
    a: f64,
    s1: f64,
}

impl MvsObjective {
    pub fn new(spline: &SplineCurve) -> Result<Self, MvsError> {
        let nodes = quadrature::composite_nodes(spline.knots());
        let m = spline.num_control_points();
        let q = nodes.len();
        let mut d1 = DMatrix::zeros(q, m);
        let mut d2 = DMatrix::zeros(q, m);
        let mut d3 = DMatrix::zeros(q, m);
        for (i, &(u, _)) in nodes.iter().enumerate() {
            for (mat, order) in [(&mut d1, 1), (&mut d2, 2), (&mut d3, 3)] {
                let row = spline.basis_row(u, order)?;
                for (j, v) in row.into_iter().enumerate() {
                    mat[(i, j)] = v;
                }
            }
        }
        Ok(Self { d1, d2, d3, weights: nodes.iter().map(|n| n.1).collect() })
    }

    fn terms(&self, b: &DVector<f64>) -> Vec<NodeTerms> {
        let s1 = &self.d1 * b;
        let s2 = &self.d2 * b;
        let s3 = &self.d3 * b;
        (0..self.weights.len())
            .map(|i| {
                let (v1, v2, v3) = (s1[i], s2[i], s3[i]);
                let a = 1.0 + v1 * v1;
                let a32 = a.powf(-1.5);
                let a52 = a32 / a;
                let a72 = a52 / a;
                let kappa_u = v3 * a32 - 3.0 * v1 * v2 * v2 * a52;
                let dk = [
                    -3.0 * v1 * v3 * a52 - 3.0 * v2 * v2 * a52 + 15.0 * v1 * v1 * v2 * v2 * a72,
                    -6.0 * v1 * v2 * a52,
                    a32,
                ];
                NodeTerms { kappa_u, dk, a, s1: v1 }
            })
            .collect()
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        let b = DVector::from_row_slice(b);
        self.terms(&b)
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * t.kappa_u * t.kappa_u / t.a.sqrt())
            .sum()
    }

    pub fn gradient(&self, b: &[f64]) -> Vec<f64> {
        let bv = DVector::from_row_slice(b);
        let terms = self.terms(&bv);
        let m = b.len();
        let mut g = DVector::zeros(m);
        for (i, (t, w)) in terms.iter().zip(&self.weights).enumerate() {
            let ra = t.a.powf(-0.5);
            let f1 = 2.0 * t.kappa_u * t.dk[0] * ra - t.kappa_u * t.kappa_u * t.s1 * ra / t.a;
            let f2 = 2.0 * t.kappa_u * t.dk[1] * ra;
            let f3 = 2.0 * t.kappa_u * t.dk[2] * ra;
            g += (self.d1.row(i) * (w * f1) + self.d2.row(i) * (w * f2) + self.d3.row(i) * (w * f3)).transpose();
        }
        g.iter().copied().collect()
    }

    /// Gauss–Newton approximation `2 J'J` of the Hessian, with residuals
    /// `sqrt(w) kappa_u a^(-1/4)`.
    pub fn gauss_newton(&self, b: &[f64]) -> DMatrix<f64> {
        let bv = DVector::from_row_slice(b);
        let terms = self.terms(&bv);
        let m = b.len();
        let mut jac = DMatrix::zeros(terms.len(), m);
        for (i, (t, w)) in terms.iter().zip(&self.weights).enumerate() {
            let sw = w.sqrt();
            let a14 = t.a.powf(-0.25);
            let r1 = sw * (t.dk[0] * a14 - 0.5 * t.kappa_u * t.s1 * a14 / t.a);
            let r2 = sw * t.dk[1] * a14;
            let r3 = sw * t.dk[2] * a14;
            let row = self.d1.row(i) * r1 + self.d2.row(i) * r2 + self.d3.row(i) * r3;
            jac.set_row(i, &row);
        }
        jac.transpose() * &jac * 2.0
    }
}

/// One line of the solver trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct MvsSolution {
    /// Optimized spline in the pixel-depth frame.
    pub spline: SplineCurve,
    /// Objective of the unprojected initial spline.
    pub initial_objective: f64,
    /// Objective after projecting the initialization onto the constraints.
    pub projected_objective: f64,
    pub final_objective: f64,
    pub max_violation: f64,
    /// Largest corridor violation over 1000 dense parameters (between the
    /// enforced samples the corridor is not guaranteed).
    pub dense_violation: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

fn qp_infeasible(e: QpError) -> MvsError {
    MvsError::Infeasible(e.to_string())
}

/// Minimizes the fairing functional over the depth control values.
///
/// The initialization is first projected (least-squares) onto the
/// constraint polytope; an empty polytope is reported as infeasible. From
/// there every iterate stays feasible: each step solves a QP with a damped
/// Gauss–Newton Hessian over the original linear constraints and is
/// accepted only if the backtracking line search strictly lowers the
/// objective, so the result never exceeds the projected objective.
pub fn solve_mvs(problem: &MvsProblem, params: &FitParams) -> Result<MvsSolution, MvsError> {
    let m = problem.spline.num_control_points();
    let objective = MvsObjective::new(&problem.spline)?;
    let (a, beq) = problem.equality_system()?;
    let (c, d) = problem.inequality_system()?;
    let b0 = problem.initial_depths();
    let initial_objective = objective.value(&b0);

    let projection = QuadraticProgram {
        hessian: DMatrix::identity(m, m),
        linear: -DVector::from_row_slice(&b0),
        eq_matrix: a.clone(),
        eq_rhs: beq.clone(),
        ineq_matrix: c.clone(),
        ineq_rhs: d.clone(),
    }
    .solve()
    .map_err(qp_infeasible)?;
    let mut b: Vec<f64> = projection.x.iter().copied().collect();
    let feasibility_slack = 1e-3 * params.tolerance;
    let projected_violation = problem.max_violation(&b)?;
    if projected_violation > params.tolerance {
        return Err(MvsError::Infeasible(format!("projected initialization violates constraints by {projected_violation:e}")));
    }
    let mut f = objective.value(&b);
    let projected_objective = f;
    let mut trace = vec![TraceRow { iteration: 0, objective: f, max_violation: projected_violation }];

    let mut damping = 1e-6;
    let mut iterations = 0;
    let mut stalls = 0;
    for it in 1..=params.max_iterations {
        iterations = it;
        if f <= 1e-300 {
            break;
        }
        let g = DVector::from_row_slice(&objective.gradient(&b));
        let mut h = objective.gauss_newton(&b);
        let scale = (h.trace() / m as f64).max(g.amax()).max(1e-300);
        for i in 0..m {
            h[(i, i)] += damping * scale;
        }
        let bv = DVector::from_row_slice(&b);
        let sub = QuadraticProgram {
            linear: &g - &h * &bv,
            hessian: h,
            eq_matrix: a.clone(),
            eq_rhs: beq.clone(),
            ineq_matrix: c.clone(),
            ineq_rhs: d.clone(),
        };
        let y = match sub.solve() {
            Ok(s) => s.x,
            Err(_) => {
                damping *= 10.0;
                if damping > 1e6 {
                    break;
                }
                continue;
            }
        };
        // A poorly conditioned subproblem can return a slightly infeasible
        // point; such steps are retried with more damping.
        let yv: Vec<f64> = y.iter().copied().collect();
        if problem.max_violation(&yv)? > feasibility_slack {
            damping *= 10.0;
            if damping > 1e6 {
                break;
            }
            continue;
        }
        let step = &y - &bv;
        if step.norm() <= 1e-13 * (1.0 + bv.norm()) {
            break;
        }
        let slope = g.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = (&bv + &step * alpha).iter().copied().collect();
            let fc = objective.value(&cand);
            if fc < f && fc <= f + 1e-4 * alpha * slope.min(0.0) {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let rel = (f - fc) / f.max(1e-300);
                b = cand;
                f = fc;
                damping = (damping / 3.0).max(1e-12);
                trace.push(TraceRow { iteration: it, objective: f, max_violation: problem.max_violation(&b)? });
                stalls = if rel < 1e-10 { stalls + 1 } else { 0 };
                if stalls >= 3 {
                    break;
                }
            }
            None => {
                damping *= 10.0;
                if damping > 1e6 {
                    break;
                }
            }
        }
    }

    let max_violation = problem.max_violation(&b)?;
    if max_violation > params.tolerance {
        return Err(MvsError::Infeasible(format!("constraint violation {max_violation:e} after {iterations} iterations")));
    }
    let spline = problem.spline.with_depths(&b);
    let dense_violation = dense_corridor_violation(problem, &spline);
    if dense_violation > params.tolerance {
        log::warn!("corridor exceeded by {dense_violation:.3e} between constraint samples");
    }
    Ok(MvsSolution {
        spline,
        initial_objective,
        projected_objective,
        final_objective: f,
        max_violation,
        dense_violation,
        iterations,
        trace,
    })
}

/// Largest corridor violation of `spline` over 1000 uniform parameters,
/// with the corridor linearly interpolated between constraint samples.
pub fn dense_corridor_violation(problem: &MvsProblem, spline: &SplineCurve) -> f64 {
    let (lo, hi) = spline.domain();
    let sp = &problem.sample_params;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let u = lo + (hi - lo) * i as f64 / 999.0;
        let j = sp.partition_point(|&s| s <= u).saturating_sub(1).min(sp.len() - 2);
        let t = ((u - sp[j]) / (sp[j + 1] - sp[j])).clamp(0.0, 1.0);
        let l = problem.lower[j] + t * (problem.lower[j + 1] - problem.lower[j]);
        let h = problem.upper[j] + t * (problem.upper[j + 1] - problem.upper[j]);
        let z = spline.eval(u, 0).map(|p| p[2]).unwrap_or(f64::NAN);
        worst = worst.max(l - z).max(z - h);
    }
    worst
}

/// Maps pixel-depth control points `(x, y, z)` to `z * G^-1 (x, y, 1)`.
pub fn to_camera_frame(spline: &SplineCurve, rig: &StereoRig) -> Result<SplineCurve, MvsError> {
    let ginv = rig.g_matrix().try_inverse().ok_or_else(|| MvsError::Config("singular camera matrix G".into()))?;
    let cps = spline
        .control_points()
        .iter()
        .map(|c| {
            let ray = ginv * Vector3::new(c[0], c[1], 1.0);
            [ray[0] * c[2], ray[1] * c[2], ray[2] * c[2]]
        })
        .collect();
    Ok(spline.with_control_points(cps, Frame::Camera))
}

/// Inverse of [`to_camera_frame`]: `(X, Y, Z) -> (G (X, Y, Z) / w, w)` with
/// `w` the third component of `G (X, Y, Z)`.
pub fn from_camera_frame(spline: &SplineCurve, rig: &StereoRig) -> SplineCurve {
    let g = rig.g_matrix();
    let cps = spline
        .control_points()
        .iter()
        .map(|c| {
            let h = g * Vector3::new(c[0], c[1], c[2]);
            [h[0] / h[2], h[1] / h[2], h[2]]
        })
        .collect();
    spline.with_control_points(cps, Frame::PixelDepth)
}

/// Everything produced by the fitting stage.
#[derive(Debug, Clone)]
pub struct CenterlineFit {
    pub dense: DensePoints,
    pub corridor: DepthCorridor,
    pub initial: FitResult,
    pub problem: MvsProblem,
    pub solution: MvsSolution,
}

/// Densify, build the corridor, initialize and solve.
pub fn fit_centerline(
    chain: &KeypointChain,
    mask: &PixelMask,
    field: &DepthField,
    params: &FitParams,
) -> Result<CenterlineFit, MvsError> {
    params.validate()?;
    if chain.order.len() < 2 {
        return Err(MvsError::InsufficientKeypoints(chain.order.len()));
    }
    let dense = densify(chain, mask, field, params);
    let corridor = build_corridor(&dense, params)?;
    let initial = init_spline(&dense, &corridor, params)?;
    let problem = MvsProblem::new(&initial, &corridor, params)?;
    let solution = solve_mvs(&problem, params)?;
    Ok(CenterlineFit { dense, corridor, initial, problem, solution })
}
