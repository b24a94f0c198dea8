//! Composite Gauss-Legendre quadrature with adaptive panel bisection.

use std::sync::OnceLock;

use crate::scalar::Scalar;

/// Nodes and weights of an `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
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
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate<T: Scalar, F: Fn(T) -> T>(&self, f: &F, a: T, b: T) -> T {
        let half = (b - a) * T::of(0.5);
        let mid = (a + b) * T::of(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc = acc + T::of(w) * f(mid + half * T::of(x));
        }
        acc * half
    }
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
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Shared 12-point rule used by the panel integrator.
pub fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(12))
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature<T> {
    pub value: T,
    /// Sum of the accepted panels' refinement differences.
    pub error: T,
    pub panels: usize,
    pub converged: bool,
}

const MAX_DEPTH: u32 = 48;

/// Breakpoints on `[lo, hi]` at `center` and `center +- 2^k width`,
/// `k = 0..levels`, so that panels near a sharp feature of the given width grow
/// geometrically with their distance from it.
pub fn geometric_breaks<T: Scalar>(lo: T, hi: T, center: T, width: T, levels: u32) -> Vec<T> {
    let mut pts = vec![lo, hi];
    if center > lo && center < hi {
        pts.push(center);
    }
    let mut step = width;
    for _ in 0..levels {
        for z in [center - step, center + step] {
            if z > lo && z < hi {
                pts.push(z);
            }
        }
        step = step * T::of(2.0);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    pts.dedup();
    pts
}

/// Integrates `f` over the union of consecutive intervals given by `breaks`.
///
/// Each panel is compared against the sum over its two halves and bisected
/// until the two agree to within the panel's share of `abs_tol`.
pub fn integrate_panels<T: Scalar, F: Fn(T) -> T>(f: &F, breaks: &[T], abs_tol: T) -> Quadrature<T> {
    let rule = default_rule();
    let mut value = T::zero();
    let mut error = T::zero();
    let mut panels = 0usize;
    let mut converged = true;
    let total = breaks.last().copied().unwrap_or(T::zero()) - breaks.first().copied().unwrap_or(T::zero());
    if total <= T::zero() {
        return Quadrature { value, error, panels, converged };
    }
    // precision floor for narrow types
    let floor = T::epsilon() * T::of(64.0);
    let mut stack: Vec<(T, T, T, u32)> = Vec::with_capacity(64);
    for pair in breaks.windows(2).rev() {
        let (a, b) = (pair[0], pair[1]);
        if b > a {
            stack.push((a, b, rule.integrate(f, a, b), 0));
        }
    }
    while let Some((a, b, coarse, depth)) = stack.pop() {
        let m = (a + b) * T::of(0.5);
        let left = rule.integrate(f, a, m);
        let right = rule.integrate(f, m, b);
        let fine = left + right;
        let diff = (fine - coarse).abs();
        let share = abs_tol * (b - a) / total;
        if diff <= share || diff <= floor * fine.abs() || depth >= MAX_DEPTH {
            if depth >= MAX_DEPTH && diff > share {
                converged = false;
            }
            value = value + fine;
            error = error + diff;
            panels += 1;
        } else {
            stack.push((m, b, right, depth + 1));
            stack.push((a, m, left, depth + 1));
        }
    }
    Quadrature { value, error, panels, converged }
}
