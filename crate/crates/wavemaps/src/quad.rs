//! Quadrature and sampled grid functions.
//!
//! Two integration paths serve the rest of the crate:
//!
//! * adaptive Gauss-Kronrod 7/15 for closures, with the weighted inner
//!   product (u|v) = integral of u v rho^2/(1-rho^2)^2 evaluated after the
//!   substitution rho = tanh x, which turns the weight into sinh^2 x and
//!   removes the double pole at rho = 1 analytically;
//! * exact integration of the cubic Hermite interpolant for data given as
//!   samples with derivatives, with a coarsening-based error estimate.
//!
//! [`SampledFunction`] is the crate's standard carrier for "function on a
//! mesh with derivatives": profile tables loaded from disk, normalized
//! eigenfunctions, and the boundary function of the limiting operator.

use serde::{Deserialize, Serialize};

/// Kronrod-15 abscissae on [0, 1] side of the symmetric rule (QUADPACK dqk15).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
/// Gauss-7 weights, paired with XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod 7/15 panel: returns (kronrod value, error estimate).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        resk += WGK[j] * fsum;
        if j % 2 == 1 {
            resg += WG[j / 2] * fsum;
        }
    }
    let value = resk * h;
    let diff = ((resk - resg) * h).abs();
    // Kronrod is far more accurate than the plain difference suggests; the
    // 1.5-power model is the standard sharpening, kept below the raw bound.
    let err = diff.min((200.0 * diff).powf(1.5)).max(f64::EPSILON * value.abs());
    (value, err)
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

/// Globally adaptive integration of `f` over [a, b] (a < b). Returns the
/// value and an error estimate; splits the worst panel until the estimate
/// meets `rel_tol`/`abs_tol` or the panel budget runs out (the estimate is
/// then honest about what was achieved).
pub fn adaptive_gk(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> (f64, f64) {
    let (v, e) = gk15(f, a, b);
    let mut panels = vec![Panel { a, b, value: v, err: e }];
    for _ in 0..4000 {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        // Split the worst panel.
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .unwrap();
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Interval at rounding resolution; keep it and stop refining.
            panels.push(p);
            break;
        }
        let (v1, e1) = gk15(f, p.a, mid);
        let (v2, e2) = gk15(f, mid, p.b);
        panels.push(Panel { a: p.a, b: mid, value: v1, err: e1 });
        panels.push(Panel { a: mid, b: p.b, value: v2, err: e2 });
    }
    let total: f64 = panels.iter().map(|p| p.value).sum();
    let err: f64 = panels.iter().map(|p| p.err).sum();
    (total, err)
}

/// The spectral-theory weight w = rho^2/(1-rho^2)^2.
pub fn weight(rho: f64) -> f64 {
    let d = 1.0 - rho * rho;
    rho * rho / (d * d)
}

/// Weighted inner product (u|v) = integral over [lo, hi] of u v w d(rho),
/// computed in the variable x = artanh(rho): the integrand becomes
/// u(tanh x) v(tanh x) sinh^2 x, absorbing the (1-rho)^-2 endpoint growth of
/// the weight analytically. Inputs must keep u v w integrable toward hi when
/// hi is close to 1 (eigenfunctions do; their decay beats the weight).
/// Returns (value, error estimate).
pub fn weighted_inner_product(
    u: &dyn Fn(f64) -> f64,
    v: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> (f64, f64) {
    assert!(0.0 <= lo && lo < hi && hi < 1.0, "interval [{lo}, {hi}] not inside [0, 1)");
    let g = |x: f64| {
        let rho = x.tanh();
        let s = x.sinh();
        u(rho) * v(rho) * s * s
    };
    let (xa, xb) = (lo.atanh(), hi.atanh());
    // Seed the adaptive rule with panels instead of one wide interval. Near
    // the origin some inputs oscillate in ln(x) forever (limit-circle
    // behavior), and a single Gauss-Kronrod application across many decades
    // can alias those oscillations into a false converged estimate; panels of
    // bounded logarithmic width keep the first error estimate honest.
    let mut cuts = vec![xa];
    let mut x = xa;
    while x < xb.min(0.5) {
        // max() also unsticks xa = 0, where the integrand vanishes anyway.
        x = (x * 4.0).max(1e-8).min(xb.min(0.5));
        cuts.push(x);
    }
    while x < xb - 1e-12 {
        x = (x + 0.5).min(xb);
        cuts.push(x);
    }
    let mut total = 0.0;
    let mut err = 0.0;
    for w in cuts.windows(2) {
        let (v, e) = adaptive_gk(&g, w[0], w[1], rel_tol, 1e-300);
        total += v;
        err += e;
    }
    (total, err)
}

/// Integral of Hermite data (value + derivative samples) with an error
/// estimate from comparing against the coarsened (every other node) rule.
pub fn grid_integral_with_error(x: &[f64], y: &[f64], dy: &[f64]) -> (f64, f64) {
    assert!(x.len() == y.len() && y.len() == dy.len() && x.len() >= 3);
    let fine = hermite_integral(x, y, dy, 1);
    let coarse = hermite_integral(x, y, dy, 2);
    // Hermite integration is 4th order: coarse-fine overestimates the fine
    // error by ~2^4 - 1.
    (fine, (fine - coarse).abs() / 15.0)
}

fn hermite_integral(x: &[f64], y: &[f64], dy: &[f64], stride: usize) -> f64 {
    let mut total = 0.0;
    let mut i = 0;
    while i + stride < x.len() {
        let j = i + stride;
        let h = x[j] - x[i];
        total += 0.5 * h * (y[i] + y[j]) + h * h / 12.0 * (dy[i] - dy[j]);
        i = j;
    }
    // Tail cells that the stride skipped.
    if i < x.len() - 1 {
        let j = x.len() - 1;
        let h = x[j] - x[i];
        total += 0.5 * h * (y[i] + y[j]) + h * h / 12.0 * (dy[i] - dy[j]);
    }
    total
}

/// A function stored as samples with derivatives on a strictly increasing
/// mesh, evaluated by cubic Hermite interpolation. The interpolant is C^1,
/// reproduces the samples exactly, and carries enough accuracy (O(h^4)) for
/// every consumer in this crate given the meshes the producers write.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledFunction {
    x: Vec<f64>,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl SampledFunction {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dy: Vec<f64>) -> Result<Self, String> {
        if x.len() != y.len() || y.len() != dy.len() {
            return Err("mesh/value/derivative lengths differ".into());
        }
        if x.len() < 2 {
            return Err("need at least two samples".into());
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err("mesh must be strictly increasing".into());
        }
        if x.iter().chain(&y).chain(&dy).any(|t| !t.is_finite()) {
            return Err("non-finite sample data".into());
        }
        Ok(SampledFunction { x, y, dy })
    }

    /// Sample a closure pair on a given mesh.
    pub fn from_fn(
        mesh: Vec<f64>,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Result<Self, String> {
        let y = mesh.iter().map(|&t| f(t)).collect();
        let dy = mesh.iter().map(|&t| df(t)).collect();
        SampledFunction::new(mesh, y, dy)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn mesh(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.dy
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.y {
            *v *= a;
        }
        for v in &mut self.dy {
            *v *= a;
        }
    }

    fn cell(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }

    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let i = self.cell(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let s = ((t - x0) / h).clamp(0.0, 1.0);
        let (y0, y1, d0, d1) = (self.y[i], self.y[i + 1], self.dy[i], self.dy[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1;
        let dv = (6.0 * s2 - 6.0 * s) / h * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (6.0 * s - 6.0 * s2) / h * y1
            + (3.0 * s2 - 2.0 * s) * d1;
        (v, dv)
    }

    /// Second derivative of the interpolant. Piecewise linear, so accuracy
    /// drops to O(h^2); good enough for residual diagnostics, not for
    /// quadrature-grade work.
    pub fn eval_second_derivative(&self, t: f64) -> f64 {
        let i = self.cell(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let s = ((t - x0) / h).clamp(0.0, 1.0);
        let (y0, y1, d0, d1) = (self.y[i], self.y[i + 1], self.dy[i], self.dy[i + 1]);
        ((12.0 * s - 6.0) * (y0 - y1) / h + (6.0 * s - 4.0) * d0 + (6.0 * s - 2.0) * d1) / h
    }

    /// Exact integral of the interpolant over its domain.
    pub fn integral(&self) -> f64 {
        hermite_integral(&self.x, &self.y, &self.dy, 1)
    }
}
