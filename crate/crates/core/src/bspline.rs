//! Clamped B-spline curves in R^3: evaluation, derivatives, depth-graph
//! curvature, arc length and least-squares fitting to ordered points.
//!
//! Control points are stored as `[x, y, z]` triples. In the pixel-depth
//! frame `x`/`y` are left-image pixel coordinates and `z` is depth; in the
//! camera frame all three are metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("parameter {u} outside spline domain [{lo}, {hi}]")]
    OutOfDomain { u: f64, lo: f64, hi: f64 },
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("degree must be at least 1 (got {0})")]
    InvalidDegree(usize),
    #[error("infeasible fit: {points} points cannot determine {m} control points")]
    TooFewPoints { points: usize, m: usize },
    #[error("need m > degree (m = {m}, degree = {degree})")]
    TooFewControlPoints { m: usize, degree: usize },
    #[error("rank-deficient normal equations: rank {rank} < {m} control points (knot spans without data)")]
    RankDeficient { rank: usize, m: usize },
    #[error("parameterization is not strictly increasing: {0}")]
    DegenerateParameterization(String),
}

/// Coordinate frame a spline's control points live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    #[serde(rename = "pixel-depth")]
    PixelDepth,
    #[serde(rename = "camera")]
    Camera,
}

#[derive(Deserialize)]
struct SplineRepr {
    degree: usize,
    knots: Vec<f64>,
    control_points: Vec<[f64; 3]>,
    frame: Frame,
}

impl TryFrom<SplineRepr> for SplineCurve {
    type Error = SplineError;

    fn try_from(r: SplineRepr) -> Result<Self, Self::Error> {
        SplineCurve::new(r.degree, r.knots, r.control_points, r.frame)
    }
}

/// A clamped, non-rational B-spline curve `S: [u0, u1] -> R^3`.
///
/// JSON layout is `{degree, knots, control_points, frame}` in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineRepr")]
pub struct SplineCurve {
    degree: usize,
    knots: Vec<f64>,
    control_points: Vec<[f64; 3]>,
    frame: Frame,
}

/// Clamped knot vector with uniformly spaced interior knots on `[0, end]`.
pub fn clamped_uniform_knots(m: usize, degree: usize, end: f64) -> Vec<f64> {
    let interior = m - degree - 1;
    let mut knots = Vec::with_capacity(m + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for i in 1..=interior {
        knots.push(end * i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(end, degree + 1));
    knots
}

impl SplineCurve {
    pub fn new(
        degree: usize,
        knots: Vec<f64>,
        control_points: Vec<[f64; 3]>,
        frame: Frame,
    ) -> Result<Self, SplineError> {
        if degree < 1 {
            return Err(SplineError::InvalidDegree(degree));
        }
        let m = control_points.len();
        if m <= degree {
            return Err(SplineError::TooFewControlPoints { m, degree });
        }
        if knots.len() != m + degree + 1 {
            return Err(SplineError::InvalidKnots(format!(
                "expected {} knots for {m} control points of degree {degree}, got {}",
                m + degree + 1,
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(SplineError::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(SplineError::InvalidKnots("knots must be nondecreasing".into()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if knots[..=degree].iter().any(|&k| k != first) || knots[m..].iter().any(|&k| k != last) {
            return Err(SplineError::InvalidKnots(
                "end knots must be repeated degree + 1 times".into(),
            ));
        }
        if last <= first {
            return Err(SplineError::InvalidKnots("empty parameter domain".into()));
        }
        Ok(Self { degree, knots, control_points, frame })
    }

    /// Clamped uniform spline on `[0, end]`.
    pub fn clamped_uniform(
        degree: usize,
        end: f64,
        control_points: Vec<[f64; 3]>,
        frame: Frame,
    ) -> Result<Self, SplineError> {
        let m = control_points.len();
        if m <= degree {
            return Err(SplineError::TooFewControlPoints { m, degree });
        }
        Self::new(degree, clamped_uniform_knots(m, degree, end), control_points, frame)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_points(&self) -> &[[f64; 3]] {
        &self.control_points
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn num_control_points(&self) -> usize {
        self.control_points.len()
    }

    /// Parameter domain `[u0, ell]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.control_points.len()])
    }

    /// Replaces the control points, keeping degree and knots.
    pub fn with_control_points(&self, control_points: Vec<[f64; 3]>, frame: Frame) -> Self {
        assert_eq!(control_points.len(), self.control_points.len());
        Self { degree: self.degree, knots: self.knots.clone(), control_points, frame }
    }

    /// Replaces only the depth (`z`) column of the control points.
    pub fn with_depths(&self, depths: &[f64]) -> Self {
        assert_eq!(depths.len(), self.control_points.len());
        let cps = self
            .control_points
            .iter()
            .zip(depths)
            .map(|(c, &z)| [c[0], c[1], z])
            .collect();
        Self { degree: self.degree, knots: self.knots.clone(), control_points: cps, frame: self.frame }
    }

    fn check_domain(&self, u: f64) -> Result<f64, SplineError> {
        let (lo, hi) = self.domain();
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if !(u >= lo - slack && u <= hi + slack) {
            return Err(SplineError::OutOfDomain { u, lo, hi });
        }
        Ok(u.clamp(lo, hi))
    }

    /// Index `i` of the knot span `[knots[i], knots[i+1])` containing `u`.
    /// The right end of the domain maps to the last nonempty span.
    pub fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let n = self.control_points.len() - 1;
        if u >= self.knots[n + 1] {
            return n;
        }
        if u <= self.knots[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n + 1);
        let mut mid = (lo + hi) / 2;
        while u < self.knots[mid] || u >= self.knots[mid + 1] {
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Nonzero basis functions and their derivatives up to `n` at `u` in
    /// span `span`: `out[k][j]` is the `k`-th derivative of `N_{span-p+j}`.
    pub fn basis_derivatives(&self, span: usize, u: f64, n: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let knots = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - knots[span + 1 - j];
            right[j] = knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let nd = n.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Full-length row of `order`-th derivative basis values at `u`
    /// (zeros outside the active span).
    pub fn basis_row(&self, u: f64, order: usize) -> Result<Vec<f64>, SplineError> {
        let u = self.check_domain(u)?;
        let mut row = vec![0.0; self.control_points.len()];
        if order > self.degree {
            return Ok(row);
        }
        let span = self.find_span(u);
        let ders = self.basis_derivatives(span, u, order);
        for (j, v) in ders[order].iter().enumerate() {
            row[span - self.degree + j] = *v;
        }
        Ok(row)
    }

    /// Position (`derivative_order == 0`) or derivative of the curve at `u`.
    /// Orders above the degree are identically zero.
    pub fn eval(&self, u: f64, derivative_order: usize) -> Result<[f64; 3], SplineError> {
        let u = self.check_domain(u)?;
        if derivative_order == 0 {
            return Ok(self.de_boor(u));
        }
        if derivative_order > self.degree {
            return Ok([0.0; 3]);
        }
        Ok(self.derivatives_unchecked(u, derivative_order)[derivative_order])
    }

    /// Position and all derivatives up to `n` at `u`.
    pub fn derivatives(&self, u: f64, n: usize) -> Result<Vec<[f64; 3]>, SplineError> {
        let u = self.check_domain(u)?;
        Ok(self.derivatives_unchecked(u, n))
    }

    fn derivatives_unchecked(&self, u: f64, n: usize) -> Vec<[f64; 3]> {
        let p = self.degree;
        let span = self.find_span(u);
        let ders = self.basis_derivatives(span, u, n);
        let mut out = vec![[0.0; 3]; n + 1];
        for (k, row) in ders.iter().enumerate().take(n.min(p) + 1) {
            let mut acc = [0.0; 3];
            for (j, b) in row.iter().enumerate() {
                let cp = self.control_points[span - p + j];
                for c in 0..3 {
                    acc[c] += b * cp[c];
                }
            }
            out[k] = acc;
        }
        out
    }

    fn de_boor(&self, u: f64) -> [f64; 3] {
        let p = self.degree;
        let span = self.find_span(u);
        let mut d: Vec<[f64; 3]> = (0..=p).map(|j| self.control_points[j + span - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let lo = self.knots[j + span - p];
                let hi = self.knots[j + 1 + span - r];
                let alpha = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
                for c in 0..3 {
                    d[j][c] = (1.0 - alpha) * d[j - 1][c] + alpha * d[j][c];
                }
            }
        }
        d[p]
    }

    /// Planar curvature of the depth graph `(u, S_z(u))`:
    /// `S_z'' / (1 + S_z'^2)^(3/2)`.
    pub fn graph_curvature(&self, u: f64) -> Result<f64, SplineError> {
        let d = self.derivatives(u, 2)?;
        let dz = d[1][2];
        let ddz = d[2][2];
        Ok(ddz / (1.0 + dz * dz).powf(1.5))
    }

    /// Arc length of the 3D curve by adaptive Gauss–Legendre quadrature on
    /// every knot span.
    pub fn arc_length(&self) -> f64 {
        let mut total = 0.0;
        for w in self.knots.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            total += quadrature::integrate_adaptive(w[0], w[1], 1e-9, |u| {
                let d = self.derivatives_unchecked(u, 1)[1];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            });
        }
        total
    }

    /// `n` positions at uniformly spaced parameters over the domain
    /// (both ends included).
    pub fn sample(&self, n: usize) -> Vec<[f64; 3]> {
        let (lo, hi) = self.domain();
        (0..n)
            .map(|i| {
                let u = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
                self.de_boor(u.clamp(lo, hi))
            })
            .collect()
    }
}

/// Output of a least-squares spline fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spline: SplineCurve,
    /// Root-mean-square point-to-curve residual at the assigned parameters.
    pub residual_rms: f64,
    /// Parameter assigned to each input point, strictly increasing.
    pub parameter_assignment: Vec<f64>,
}

/// Chord-length parameters rescaled to `[0, n - 1]`.
pub fn chord_length_parameters(points: &[[f64; 3]]) -> Result<Vec<f64>, SplineError> {
    let n = points.len();
    if n < 2 {
        return Err(SplineError::DegenerateParameterization("need at least two points".into()));
    }
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    for (i, w) in points.windows(2).enumerate() {
        let d = dist3(&w[0], &w[1]);
        if !(d > 0.0) {
            return Err(SplineError::DegenerateParameterization(format!(
                "points {i} and {} coincide",
                i + 1
            )));
        }
        cum.push(cum[i] + d);
    }
    let total = cum[n - 1];
    let ell = (n - 1) as f64;
    let mut params: Vec<f64> = cum.iter().map(|c| c / total * ell).collect();
    params[n - 1] = ell;
    Ok(params)
}

/// Least-squares fit of a clamped uniform spline with `m` control points
/// using chord-length parameters on `[0, n - 1]`.
pub fn fit_least_squares(points: &[[f64; 3]], m: usize, degree: usize) -> Result<FitResult, SplineError> {
    if points.len() < m {
        return Err(SplineError::TooFewPoints { points: points.len(), m });
    }
    let params = chord_length_parameters(points)?;
    fit_with_parameters(points, &params, m, degree)
}

/// Least-squares fit at caller-supplied parameters. The knot vector is
/// clamped uniform over `[params[0], params[last]]`; `params[0]` must be 0.
pub fn fit_with_parameters(
    points: &[[f64; 3]],
    params: &[f64],
    m: usize,
    degree: usize,
) -> Result<FitResult, SplineError> {
    if degree < 1 {
        return Err(SplineError::InvalidDegree(degree));
    }
    if m <= degree {
        return Err(SplineError::TooFewControlPoints { m, degree });
    }
    let n = points.len();
    if n < m {
        return Err(SplineError::TooFewPoints { points: n, m });
    }
    assert_eq!(params.len(), n, "one parameter per point");
    if params.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SplineError::DegenerateParameterization(
            "parameters must be strictly increasing".into(),
        ));
    }
    if params[0] != 0.0 {
        return Err(SplineError::DegenerateParameterization("first parameter must be 0".into()));
    }
    let end = params[n - 1];
    // Control points are placeholders until solved.
    let template = SplineCurve::clamped_uniform(degree, end, vec![[0.0; 3]; m], Frame::PixelDepth)?;
    let mut basis = DMatrix::<f64>::zeros(n, m);
    for (i, &u) in params.iter().enumerate() {
        let row = template.basis_row(u, 0)?;
        for (j, v) in row.into_iter().enumerate() {
            basis[(i, j)] = v;
        }
    }
    let svd = basis.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > smax * 1e-10).count();
    if rank < m {
        return Err(SplineError::RankDeficient { rank, m });
    }
    let mut cps = vec![[0.0; 3]; m];
    for c in 0..3 {
        let rhs = DVector::from_iterator(n, points.iter().map(|p| p[c]));
        let sol = svd
            .solve(&rhs, smax * 1e-14)
            .map_err(|_| SplineError::RankDeficient { rank, m })?;
        for j in 0..m {
            cps[j][c] = sol[j];
        }
    }
    let spline = template.with_control_points(cps, Frame::PixelDepth);
    let residual_rms = residual_rms(&spline, points, params);
    Ok(FitResult { spline, residual_rms, parameter_assignment: params.to_vec() })
}

/// RMS of `|S(u_i) - p_i|` over the given pairs.
pub fn residual_rms(spline: &SplineCurve, points: &[[f64; 3]], params: &[f64]) -> f64 {
    let ss: f64 = points
        .iter()
        .zip(params)
        .map(|(p, &u)| {
            let s = spline.de_boor(u.clamp(spline.domain().0, spline.domain().1));
            let d = dist3(p, &s);
            d * d
        })
        .sum();
    (ss / points.len() as f64).sqrt()
}

pub(crate) fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_spline(degree: usize, m: usize, from: [f64; 3], to: [f64; 3]) -> SplineCurve {
        // Greville abscissae put control points on the line with linear
        // precision, so the curve is the uniformly parameterized segment.
        let knots = clamped_uniform_knots(m, degree, 1.0);
        let cps = (0..m)
            .map(|i| {
                let g: f64 = knots[i + 1..=i + degree].iter().sum::<f64>() / degree as f64;
                [0, 1, 2].map(|c| from[c] + g * (to[c] - from[c]))
            })
            .collect();
        SplineCurve::new(degree, knots, cps, Frame::PixelDepth).unwrap()
    }

    #[test]
    fn constant_spline_evaluates_to_constant() {
        let s = SplineCurve::clamped_uniform(4, 10.0, vec![[1.0, 2.0, 3.0]; 8], Frame::PixelDepth).unwrap();
        for u in [0.0, 2.5, 7.3, 10.0] {
            let p = s.eval(u, 0).unwrap();
            for (a, b) in p.iter().zip([1.0, 2.0, 3.0]) {
                assert!((a - b).abs() < 1e-14);
            }
            assert!(s.eval(u, 1).unwrap().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn straight_line_second_derivative_vanishes() {
        let s = line_spline(4, 9, [0.0, 0.0, 0.0], [3.0, -1.0, 7.0]);
        let u = 0.5;
        let d2 = s.eval(u, 2).unwrap();
        // finite differences of the first derivative
        let h = 1e-5;
        let a = s.eval(u + h, 1).unwrap();
        let b = s.eval(u - h, 1).unwrap();
        for c in 0..3 {
            let fd = (a[c] - b[c]) / (2.0 * h);
            assert!(fd.abs() < 1e-9);
            assert!(d2[c].abs() < 1e-9);
        }
    }

    #[test]
    fn de_boor_matches_basis_evaluation() {
        let cps: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let t = i as f64;
                [t.sin() * 5.0, t.cos() * 3.0, 0.3 * t * t]
            })
            .collect();
        let s = SplineCurve::clamped_uniform(4, 11.0, cps, Frame::PixelDepth).unwrap();
        for i in 0..=110 {
            let u = i as f64 * 0.1;
            let a = s.de_boor(u);
            let b = s.derivatives_unchecked(u, 0)[0];
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let s = line_spline(4, 6, [0.0; 3], [1.0; 3]);
        assert!(matches!(s.eval(1.5, 0), Err(SplineError::OutOfDomain { .. })));
        assert!(matches!(s.eval(-0.1, 0), Err(SplineError::OutOfDomain { .. })));
    }

    #[test]
    fn derivative_above_degree_is_zero() {
        let s = line_spline(3, 6, [0.0; 3], [1.0; 3]);
        assert_eq!(s.eval(0.3, 4).unwrap(), [0.0; 3]);
    }

    #[test]
    fn curvature_of_linear_depth_is_zero() {
        let s = line_spline(4, 7, [0.0, 0.0, 2.0], [5.0, 1.0, 9.0]);
        for i in 0..=10 {
            assert!(s.graph_curvature(i as f64 / 10.0).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn curvature_at_parabola_vertex() {
        // z(u) = (u - 1)^2 on [0, 2] is exactly representable with degree 2.
        let s = SplineCurve::new(
            2,
            vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0],
            vec![[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.0, 0.0, 1.0]],
            Frame::PixelDepth,
        )
        .unwrap();
        let d = s.derivatives(1.0, 2).unwrap();
        assert!(d[1][2].abs() < 1e-12);
        assert!((d[2][2] - 2.0).abs() < 1e-12);
        assert!((s.graph_curvature(1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn line_arc_length() {
        let s = line_spline(4, 8, [0.0; 3], [3.0, 4.0, 0.0]);
        assert!((s.arc_length() - 5.0).abs() < 1e-6);
        let c = SplineCurve::clamped_uniform(4, 3.0, vec![[2.0; 3]; 6], Frame::PixelDepth).unwrap();
        assert!(c.arc_length() < 1e-12);
    }

    #[test]
    fn fit_reproduces_a_line() {
        let pts: Vec<[f64; 3]> = (0..30).map(|i| {
            let t = i as f64 / 29.0;
            [1.0 + 2.0 * t, -3.0 + t, 10.0 - 4.0 * t]
        }).collect();
        let fit = fit_least_squares(&pts, 15, 4).unwrap();
        assert!(fit.residual_rms <= 1e-9, "{}", fit.residual_rms);
    }

    #[test]
    fn square_fit_interpolates() {
        let pts: Vec<[f64; 3]> = (0..15)
            .map(|i| {
                let t = i as f64;
                [t, (t * 0.7).sin() * 4.0, 50.0 + (t * 0.3).cos() * 6.0]
            })
            .collect();
        let fit = fit_least_squares(&pts, 15, 4).unwrap();
        assert!(fit.residual_rms <= 1e-9, "{}", fit.residual_rms);
    }

    #[test]
    fn fit_errors() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert!(matches!(fit_least_squares(&pts, 15, 4), Err(SplineError::TooFewPoints { .. })));
        // All data crowded into one knot span leaves the rest undetermined.
        let params: Vec<f64> = (0..20).map(|i| i as f64 * 1e-3).chain([100.0]).collect();
        let pts: Vec<[f64; 3]> = params.iter().map(|&u| [u, 0.0, 0.0]).collect();
        assert!(matches!(
            fit_with_parameters(&pts, &params, 15, 4),
            Err(SplineError::RankDeficient { .. })
        ));
        let dup = vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        assert!(chord_length_parameters(&dup).is_err());
    }

    #[test]
    fn json_layout_is_fixed() {
        let s = line_spline(2, 3, [0.0; 3], [1.0, 1.0, 1.0]);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.starts_with("{\"degree\":2,\"knots\":["));
        assert!(json.contains("\"control_points\":[["));
        assert!(json.ends_with("\"frame\":\"pixel-depth\"}"));
        let back: SplineCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = json.replace("\"degree\":2", "\"degree\":5");
        assert!(serde_json::from_str::<SplineCurve>(&bad).is_err());
    }
}
