//! Gauss–Legendre rules and composite integration over knot spans.

use std::sync::OnceLock;

/// Number of Gauss–Legendre nodes used per knot span.
pub const NODES_PER_SPAN: usize = 16;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial, seeded
/// with the Chebyshev-like approximation `cos(pi (i + 3/4) / (n + 1/2))`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The cached 16-point rule.
pub fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(NODES_PER_SPAN))
}

/// Integrates `f` over `[a, b]` with the 16-point rule.
pub fn integrate_gl16<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let (nodes, weights) = gl16();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Adaptive bisection on top of the 16-point rule; stops once halving an
/// interval changes its integral by less than `rel_tol` (relative).
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(a: f64, b: f64, rel_tol: f64, mut f: F) -> f64 {
    fn recurse<F: FnMut(f64) -> f64>(a: f64, b: f64, whole: f64, rel_tol: f64, depth: u32, f: &mut F) -> f64 {
        let m = 0.5 * (a + b);
        let left = integrate_gl16(a, m, &mut *f);
        let right = integrate_gl16(m, b, &mut *f);
        let halves = left + right;
        if depth == 0 || (halves - whole).abs() <= rel_tol * halves.abs() + 1e-15 {
            return halves;
        }
        recurse(a, m, left, rel_tol, depth - 1, f) + recurse(m, b, right, rel_tol, depth - 1, f)
    }
    if b <= a {
        return 0.0;
    }
    let whole = integrate_gl16(a, b, &mut f);
    recurse(a, b, whole, rel_tol, 24, &mut f)
}

/// Composite rule over the distinct spans of a knot vector: every nonempty
/// interval `[knots[i], knots[i+1]]` receives [`NODES_PER_SPAN`] nodes.
/// Returns `(parameter, weight)` pairs.
pub fn composite_nodes(knots: &[f64]) -> Vec<(f64, f64)> {
    let (nodes, weights) = gl16();
    let mut out = Vec::new();
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in nodes.iter().zip(weights) {
            out.push((mid + half * x, w * half));
        }
    }
    out
}
