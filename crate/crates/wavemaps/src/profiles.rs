//! Self-similar profiles of the co-rotational wave map inside the backward
//! light cone.
//!
//! In the similarity variable rho the profile f solves
//!
//! ```text
//! f'' + (2/rho) f' - l(l+1)/2 * sin(2 f) / (rho^2 (1 - rho^2)) = 0,
//! f(0) = 0,  f(1) = pi/2,
//! ```
//!
//! with ell >= 1 the equivariance index. Both endpoints are singular; the
//! admissible behavior is f ~ b rho^ell at 0 and f ~ pi/2 - c (1-rho) at 1.
//! For each ell there is a family of solutions labeled by the number n of
//! interior crossings of the equator value pi/2; n = 0, ell = 1 is the
//! closed form 2 arctan rho.
//!
//! Solver structure: nonlinear power-series expansions at both endpoints
//! (coefficients generated from the ODE itself), a geometric scan in b that
//! brackets sign changes of the far-end mismatch, bisection to label and
//! localize one root per crossing count, then a damped two-parameter Newton
//! iteration matching (f, f') at an interior point. The match point stays at
//! 1/2 by default, farthest from both singularities.

use serde::{Deserialize, Serialize};

use crate::error::{OdeError, ProfileError};
use crate::odeint::{integrate_with, EventSpec, IvpSpec, Options, Solution};
use crate::quad::SampledFunction;
use crate::series::Series;

pub const EQUATOR: f64 = std::f64::consts::FRAC_PI_2;

/// Coupling strength l(l+1)/2 in front of sin(2f).
fn coupling(ell: u32) -> f64 {
    (ell * (ell + 1)) as f64 / 2.0
}

/// Right-hand side of the first-order system y = (f, f').
fn profile_rhs(ell: u32) -> impl Fn(f64, &[f64], &mut [f64]) {
    let k = coupling(ell);
    move |rho: f64, y: &[f64], dy: &mut [f64]| {
        dy[0] = y[1];
        dy[1] = -2.0 * y[1] / rho + k * (2.0 * y[0]).sin() / (rho * rho * (1.0 - rho * rho));
    }
}

/// Coefficients alpha_k of the center expansion f = sum_k alpha_k rho^(l+2k),
/// alpha_0 = b. Each coefficient is forced by the vanishing of the
/// denominator-cleared ODE residual
/// rho^2 f'' + 2 rho f' - rho^4 f'' - 2 rho^3 f' - l(l+1) sin(2f)/2
/// at the order it first appears, which gives a triangular recursion.
pub fn center_expansion(ell: u32, b: f64, terms: usize) -> Vec<f64> {
    assert!(ell >= 1 && terms >= 1);
    let l = ell as usize;
    let k = coupling(ell);
    let ll1 = (ell * (ell + 1)) as f64;
    let len = l + 2 * terms + 1;
    let mut alpha = vec![0.0; terms];
    alpha[0] = b;
    for m in 1..terms {
        let mut coeffs = vec![0.0; len];
        for (j, &a) in alpha.iter().enumerate().take(m) {
            coeffs[l + 2 * j] = a;
        }
        let f = Series::new(coeffs);
        let fp = f.derivative();
        let fpp = fp.derivative();
        let (sin2f, _) = f.scale(2.0).sin_cos();
        let resid = fpp
            .shift_up(2)
            .add(&fp.shift_up(1).scale(2.0))
            .sub(&fpp.shift_up(4))
            .sub(&fp.shift_up(3).scale(2.0))
            .sub(&sin2f.scale(k));
        let idx = l + 2 * m;
        let gap = (idx * (idx + 1)) as f64 - ll1;
        alpha[m] = -resid.coeff(idx) / gap;
    }
    alpha
}

/// Evaluate the center expansion: (f, f') at rho.
pub fn center_value(ell: u32, alpha: &[f64], rho: f64) -> (f64, f64) {
    let l = ell as f64;
    let r2 = rho * rho;
    let mut f = 0.0;
    let mut df = 0.0;
    for (j, &a) in alpha.iter().enumerate().rev() {
        let e = l + 2.0 * j as f64;
        f = f * r2 + a;
        df = df * r2 + e * a;
    }
    let lead = rho.powi(ell as i32);
    (f * lead, df * lead / rho)
}

/// Coefficients gamma_k (k = 1..=terms) of the boundary expansion
/// f = pi/2 - G(s), s = 1 - rho, G = sum_k gamma_k s^k, gamma_1 = c.
/// In terms of G the cleared residual is
/// -s(2-s)(1-s)^2 G'' + 2 s(2-s)(1-s) G' - l(l+1) sin(2G)/2,
/// and order s^(m-1) forces gamma_m with denominator 2m(m-1).
pub fn boundary_expansion(ell: u32, c: f64, terms: usize) -> Vec<f64> {
    assert!(ell >= 1 && terms >= 1);
    let k = coupling(ell);
    let len = terms + 2;
    // a(s) = s(2-s)(1-s)^2, b(s) = s(2-s)(1-s)
    let pa = Series::new({
        let mut v = vec![0.0; len];
        let poly = [0.0, 2.0, -5.0, 4.0, -1.0];
        for (i, &p) in poly.iter().enumerate().take(len) {
            v[i] = p;
        }
        v
    });
    let pb = Series::new({
        let mut v = vec![0.0; len];
        let poly = [0.0, 2.0, -3.0, 1.0];
        for (i, &p) in poly.iter().enumerate().take(len) {
            v[i] = p;
        }
        v
    });
    let mut gamma = vec![0.0; terms];
    gamma[0] = c;
    for m in 2..=terms {
        let mut coeffs = vec![0.0; len];
        for (j, &g) in gamma.iter().enumerate().take(m - 1) {
            coeffs[j + 1] = g;
        }
        let g = Series::new(coeffs);
        let gp = g.derivative();
        let gpp = gp.derivative();
        let (sin2g, _) = g.scale(2.0).sin_cos();
        let resid = pb
            .mul(&gp)
            .scale(2.0)
            .sub(&pa.mul(&gpp))
            .sub(&sin2g.scale(k));
        gamma[m - 1] = resid.coeff(m - 1) / (2.0 * (m * (m - 1)) as f64);
    }
    gamma
}

/// Evaluate the boundary expansion: (f, f') at rho = 1 - s.
pub fn boundary_value(gamma: &[f64], s: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut dg = 0.0;
    for (j, &gk) in gamma.iter().enumerate().rev() {
        let e = (j + 1) as f64;
        g = g * s + gk;
        dg = dg * s + e * gk;
    }
    // G = s * (horner), dG/ds accordingly; f = pi/2 - G, df/drho = dG/ds.
    (EQUATOR - g * s, dg)
}

#[derive(Debug, Clone)]
pub struct ShootOptions {
    /// Target endpoint offset where integration hands over to the series.
    /// Shrunk automatically when b or c is large enough to matter.
    pub eps: f64,
    pub match_point: f64,
    pub series_terms: usize,
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub scan_range: (f64, f64),
    pub scan_ratio: f64,
    /// Distance from rho = 1 at which the scan mismatch is read off.
    pub scan_cutoff: f64,
    pub max_newton: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            eps: 1e-6,
            match_point: 0.5,
            series_terms: 8,
            ode_rel: 1e-12,
            ode_abs: 1e-14,
            scan_range: (0.05, 1e6),
            scan_ratio: 1.1,
            scan_cutoff: 0.01,
            max_newton: 60,
        }
    }
}

impl ShootOptions {
    /// Center offset: keep b * eps^ell small so the truncated series is far
    /// below tolerance even for the steep high-n profiles.
    fn center_eps(&self, ell: u32, b: f64) -> f64 {
        let cap = (0.01 / b.abs().max(1e-3)).powf(1.0 / ell as f64);
        self.eps.min(cap)
    }

    fn boundary_eps(&self, c: f64) -> f64 {
        self.eps.min(0.01 / c.abs().max(1e-3))
    }
}

/// Integrate the center branch for slope parameter b from its series patch
/// out to `rho_end`. Optional terminal exit event and equator-crossing
/// bookkeeping are used by the scan.
fn left_leg(
    ell: u32,
    b: f64,
    rho_end: f64,
    opts: &ShootOptions,
    dense: bool,
    with_events: bool,
) -> Result<Solution, OdeError> {
    let eps = opts.center_eps(ell, b);
    let alpha = center_expansion(ell, b, opts.series_terms);
    let (f0, df0) = center_value(ell, &alpha, eps);
    let rhs = profile_rhs(ell);
    let spec = IvpSpec {
        rhs: &rhs,
        interval: (eps, rho_end),
        initial_state: vec![f0, df0],
        rel_tol: opts.ode_rel,
        abs_tol: opts.ode_abs,
    };
    let escape = |_t: f64, y: &[f64]| y[0] * (std::f64::consts::PI - y[0]);
    let crossing = |_t: f64, y: &[f64]| y[0] - EQUATOR;
    let events: Vec<EventSpec> = if with_events {
        vec![
            EventSpec { function: &escape, terminal: true },
            EventSpec { function: &crossing, terminal: false },
        ]
    } else {
        Vec::new()
    };
    integrate_with(&spec, &Options { dense, ..Options::default() }, &events)
}

/// Integrate the boundary branch for slope parameter c from its series patch
/// at rho = 1 - eps backward to `rho_end`.
fn right_leg(
    ell: u32,
    c: f64,
    rho_end: f64,
    opts: &ShootOptions,
    dense: bool,
) -> Result<Solution, OdeError> {
    let eps = opts.boundary_eps(c);
    let gamma = boundary_expansion(ell, c, opts.series_terms);
    let (f0, df0) = boundary_value(&gamma, eps);
    let rhs = profile_rhs(ell);
    let spec = IvpSpec {
        rhs: &rhs,
        interval: (1.0 - eps, rho_end),
        initial_state: vec![f0, df0],
        rel_tol: opts.ode_rel,
        abs_tol: opts.ode_abs,
    };
    integrate_with(&spec, &Options { dense, ..Options::default() }, &[])
}

/// Scan mismatch: f(1 - scan_cutoff) - pi/2, with escaped trajectories
/// assigned a sign-preserving sentinel. Also returns the number of interior
/// equator crossings observed strictly before the readout point.
fn scan_mismatch(ell: u32, b: f64, opts: &ShootOptions) -> Result<(f64, usize), ProfileError> {
    let rho_end = 1.0 - opts.scan_cutoff;
    let scan_opts = ShootOptions { ode_rel: 1e-10, ode_abs: 1e-12, ..opts.clone() };
    let sol = match left_leg(ell, b, rho_end, &scan_opts, false, true) {
        Ok(s) => s,
        // A blow-up before the readout point acts like an escape upward or
        // downward; extremely rare because the escape event fires first.
        Err(OdeError::StepSizeUnderflow { .. }) | Err(OdeError::NonFiniteState { .. }) => {
            return Ok((f64::INFINITY, usize::MAX));
        }
        Err(e) => return Err(e.into()),
    };
    let crossings = sol
        .events
        .iter()
        .filter(|h| h.which == 1 && h.t < rho_end - opts.scan_cutoff)
        .count();
    if sol.terminated_by_event {
        let psi = if sol.state[0] > EQUATOR { 1e3 } else { -1e3 };
        Ok((psi, crossings))
    } else {
        Ok((sol.state[0] - EQUATOR, crossings))
    }
}

/// Two-sided matching residual at the match point: (f_L - f_R, f'_L - f'_R).
fn matching_residual(
    ell: u32,
    b: f64,
    c: f64,
    opts: &ShootOptions,
) -> Result<([f64; 2], [f64; 2]), ProfileError> {
    let rm = opts.match_point;
    let left = left_leg(ell, b, rm, opts, false, false)?;
    let right = right_leg(ell, c, rm, opts, false)?;
    let r = [left.state[0] - right.state[0], left.state[1] - right.state[1]];
    Ok((r, [right.state[0], right.state[1]]))
}

fn scaled_mismatch(r: &[f64; 2], rstate: &[f64; 2]) -> f64 {
    let s0 = rstate[0].abs().max(1.0);
    let s1 = rstate[1].abs().max(1.0);
    (r[0] / s0).abs().max((r[1] / s1).abs())
}

/// Bisect a sign change of the scan mismatch in [lo, hi].
fn bisect_scan(
    ell: u32,
    mut lo: f64,
    mut hi: f64,
    mut psi_lo: f64,
    opts: &ShootOptions,
) -> Result<f64, ProfileError> {
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (psi, _) = scan_mismatch(ell, mid, opts)?;
        if psi.signum() == psi_lo.signum() {
            lo = mid;
            psi_lo = psi;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Find the b parameter of the n-crossing profile by geometric scan and
/// bisection, returning (b, c estimate).
fn locate_parameters(
    n: u32,
    ell: u32,
    opts: &ShootOptions,
) -> Result<(f64, f64), ProfileError> {
    let (lo, hi) = opts.scan_range;
    let mut ratio = opts.scan_ratio;
    for _attempt in 0..3 {
        let mut grid = Vec::new();
        let mut x = lo;
        while x <= hi {
            grid.push(x);
            x *= ratio;
        }
        let mut prev: Option<(f64, f64)> = None;
        for &b in &grid {
            let (psi, _) = scan_mismatch(ell, b, opts)?;
            if !psi.is_finite() {
                prev = None;
                continue;
            }
            if let Some((b0, psi0)) = prev {
                if psi0.signum() != psi.signum() {
                    let root = bisect_scan(ell, b0, b, psi0, opts)?;
                    let (_, crossings) = scan_mismatch(ell, root, opts)?;
                    if crossings == n as usize {
                        // c estimate: slope at the readout point.
                        let sol = left_leg(ell, root, 1.0 - opts.scan_cutoff, opts, false, true)
                            .map_err(ProfileError::from)?;
                        return Ok((root, sol.state[1]));
                    }
                    if crossings > n as usize {
                        // Roots are ordered by crossing count; passed it.
                        break;
                    }
                }
            }
            prev = Some((b, psi));
        }
        ratio = ratio.sqrt();
    }
    Err(ProfileError::NotFound { n, ell, lo, hi })
}

/// Damped Newton iteration on (b, c) driving the two-sided matching residual
/// below tol (scaled sup norm).
fn newton_match(
    n: u32,
    ell: u32,
    mut b: f64,
    mut c: f64,
    tol: f64,
    opts: &ShootOptions,
) -> Result<(f64, f64, f64), ProfileError> {
    let (mut r, rs0) = matching_residual(ell, b, c, opts)?;
    let mut m = scaled_mismatch(&r, &rs0);
    for it in 0..opts.max_newton {
        if m < tol {
            return Ok((b, c, m));
        }
        let db = 3e-8 * b.abs().max(1.0);
        let dc = 3e-8 * c.abs().max(1.0);
        let (rb, _) = matching_residual(ell, b + db, c, opts)?;
        let (rc, _) = matching_residual(ell, b, c + dc, opts)?;
        let j = [
            [(rb[0] - r[0]) / db, (rc[0] - r[0]) / dc],
            [(rb[1] - r[1]) / db, (rc[1] - r[1]) / dc],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(ProfileError::NewtonDiverged {
                n,
                ell,
                b,
                c,
                mismatch: m,
                iterations: it,
            });
        }
        let step_b = (r[0] * j[1][1] - r[1] * j[0][1]) / det;
        let step_c = (r[1] * j[0][0] - r[0] * j[1][0]) / det;
        // Damping: halve until the residual improves (or accept after a few
        // tries to escape finite-difference noise plateaus).
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let bt = b - lambda * step_b;
            let ct = c - lambda * step_c;
            match matching_residual(ell, bt, ct, opts) {
                Ok((rt, rst)) => {
                    let mt = scaled_mismatch(&rt, &rst);
                    if mt < m || (lambda < 1.0 && mt < 2.0 * m) {
                        b = bt;
                        c = ct;
                        r = rt;
                        m = mt;
                        accepted = true;
                        break;
                    }
                }
                Err(ProfileError::Integration(_)) => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(ProfileError::NewtonDiverged {
                n,
                ell,
                b,
                c,
                mismatch: m,
                iterations: it,
            });
        }
    }
    if m < tol {
        Ok((b, c, m))
    } else {
        Err(ProfileError::NewtonDiverged {
            n,
            ell,
            b,
            c,
            mismatch: m,
            iterations: opts.max_newton,
        })
    }
}

/// How the profile evaluates between the endpoint series patches.
#[derive(Debug, Clone)]
enum Body {
    /// f = 2 arctan rho.
    ClosedForm,
    /// Two dense shooting legs glued at the match point.
    Shot { left: crate::odeint::DenseSolution, right: crate::odeint::DenseSolution },
    /// Hermite table loaded from a serialized document.
    Table(SampledFunction),
}

/// A computed self-similar profile.
#[derive(Debug, Clone)]
pub struct Profile {
    pub n: u32,
    pub ell: u32,
    pub b: f64,
    pub c: f64,
    /// Mismatch tolerance the profile was solved to.
    pub tol: f64,
    center_eps: f64,
    boundary_eps: f64,
    center: Vec<f64>,
    boundary: Vec<f64>,
    match_point: f64,
    body: Body,
}

impl Profile {
    /// The n = 0, ell = 1 profile in closed form.
    pub fn closed_form_f0() -> Profile {
        let opts = ShootOptions::default();
        Profile {
            n: 0,
            ell: 1,
            b: 2.0,
            c: 1.0,
            tol: 0.0,
            center_eps: opts.eps,
            boundary_eps: opts.eps,
            center: center_expansion(1, 2.0, opts.series_terms),
            boundary: boundary_expansion(1, 1.0, opts.series_terms),
            match_point: opts.match_point,
            body: Body::ClosedForm,
        }
    }

    pub fn value(&self, rho: f64) -> f64 {
        self.value_and_derivative(rho).0
    }

    pub fn derivative(&self, rho: f64) -> f64 {
        self.value_and_derivative(rho).1
    }

    pub fn value_and_derivative(&self, rho: f64) -> (f64, f64) {
        match &self.body {
            Body::ClosedForm => {
                (2.0 * rho.atan(), 2.0 / (1.0 + rho * rho))
            }
            Body::Shot { left, right } => {
                if rho < self.center_eps {
                    center_value(self.ell, &self.center, rho)
                } else if rho > 1.0 - self.boundary_eps {
                    boundary_value(&self.boundary, 1.0 - rho)
                } else if rho <= self.match_point {
                    let y = left.eval(rho);
                    (y[0], y[1])
                } else {
                    let y = right.eval(rho);
                    (y[0], y[1])
                }
            }
            Body::Table(t) => {
                let (lo, hi) = t.domain();
                if rho < lo {
                    center_value(self.ell, &self.center, rho)
                } else if rho > hi {
                    boundary_value(&self.boundary, 1.0 - rho)
                } else {
                    t.eval_with_derivative(rho)
                }
            }
        }
    }

    /// f'' from the profile equation itself.
    pub fn second_derivative(&self, rho: f64) -> f64 {
        let (f, df) = self.value_and_derivative(rho);
        let k = coupling(self.ell);
        -2.0 * df / rho + k * (2.0 * f).sin() / (rho * rho * (1.0 - rho * rho))
    }

    /// f''' by differentiating the profile equation once.
    pub fn third_derivative(&self, rho: f64) -> f64 {
        let (f, df) = self.value_and_derivative(rho);
        let ddf = self.second_derivative(rho);
        let k = coupling(self.ell);
        let r2 = rho * rho;
        let om = 1.0 - r2;
        let w = 1.0 / (r2 * om);
        let dw = -2.0 / (rho * r2 * om) + 2.0 / (rho * om * om);
        -2.0 * ddf / rho + 2.0 * df / r2
            + k * (2.0 * (2.0 * f).cos() * df * w + (2.0 * f).sin() * dw)
    }

    /// Gauge mode theta = rho sqrt(1-rho^2) f' and its first two derivatives.
    pub fn gauge_mode(&self, rho: f64) -> (f64, f64, f64) {
        let (_, df) = self.value_and_derivative(rho);
        let ddf = self.second_derivative(rho);
        let dddf = self.third_derivative(rho);
        let om = 1.0 - rho * rho;
        let sq = om.sqrt();
        let bfac = rho * sq;
        let afac = (1.0 - 2.0 * rho * rho) / sq;
        let aprime = rho * (2.0 * rho * rho - 3.0) / (sq * om);
        let theta = bfac * df;
        let dtheta = afac * df + bfac * ddf;
        let ddtheta = aprime * df + 2.0 * afac * ddf + bfac * dddf;
        (theta, dtheta, ddtheta)
    }

    /// Number of interior zeros of the gauge mode on (0, 1), certified by
    /// mesh refinement.
    pub fn gauge_zero_count(&self) -> Result<usize, ProfileError> {
        let lo = (2.0 * self.center_eps).max(1e-5);
        let hi = 1.0 - (2.0 * self.boundary_eps).max(1e-5);
        certified_sign_changes(&|rho| self.derivative(rho), lo, hi, 4096)
    }

    pub fn match_point(&self) -> f64 {
        self.match_point
    }

    /// Sample onto a serialization mesh: geometric refinement into both
    /// endpoints, uniform in the middle.
    pub fn to_document(&self) -> ProfileDocument {
        let mesh = serialization_mesh(self.center_eps, self.boundary_eps);
        let mut f = Vec::with_capacity(mesh.len());
        let mut fp = Vec::with_capacity(mesh.len());
        for &rho in &mesh {
            let (v, d) = self.value_and_derivative(rho);
            f.push(v);
            fp.push(d);
        }
        ProfileDocument {
            schema_version: SCHEMA_VERSION,
            n: self.n,
            ell: self.ell,
            b: self.b,
            c: self.c,
            tol: self.tol,
            mesh,
            f,
            fprime: fp,
        }
    }

    pub fn from_document(doc: ProfileDocument) -> Result<Profile, ProfileError> {
        doc.validate()?;
        let opts = ShootOptions::default();
        let table = SampledFunction::new(doc.mesh, doc.f, doc.fprime)
            .map_err(ProfileError::InvalidInput)?;
        let (lo, hi) = table.domain();
        Ok(Profile {
            n: doc.n,
            ell: doc.ell,
            b: doc.b,
            c: doc.c,
            tol: doc.tol,
            center_eps: lo,
            boundary_eps: 1.0 - hi,
            center: center_expansion(doc.ell, doc.b, opts.series_terms),
            boundary: boundary_expansion(doc.ell, doc.c, opts.series_terms),
            match_point: opts.match_point,
            body: Body::Table(table),
        })
    }
}

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk profile document. Unknown keys are rejected so that stale or
/// foreign files fail loudly instead of half-loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDocument {
    pub schema_version: u32,
    pub n: u32,
    pub ell: u32,
    pub b: f64,
    pub c: f64,
    pub tol: f64,
    pub mesh: Vec<f64>,
    pub f: Vec<f64>,
    pub fprime: Vec<f64>,
}

impl ProfileDocument {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ProfileError::InvalidInput(format!(
                "unsupported schema version {} (expected {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        if self.ell < 1 {
            return Err(ProfileError::InvalidInput("ell must be >= 1".into()));
        }
        if self.mesh.len() != self.f.len() || self.f.len() != self.fprime.len() {
            return Err(ProfileError::InvalidInput("mesh/f/fprime lengths differ".into()));
        }
        if self.mesh.len() < 16 {
            return Err(ProfileError::InvalidInput("mesh too short".into()));
        }
        let (first, last) = (self.mesh[0], *self.mesh.last().unwrap());
        if !(first > 0.0 && last < 1.0) || self.mesh.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ProfileError::InvalidInput(
                "mesh must be strictly increasing inside (0, 1)".into(),
            ));
        }
        if self.f.iter().any(|&v| !(v > 0.0 && v < std::f64::consts::PI)) {
            return Err(ProfileError::InvalidInput(
                "profile values must lie in (0, pi)".into(),
            ));
        }
        // Endpoint consistency. This is what rejects degenerate data like the
        // constant equator map: it cannot match b rho^ell near zero.
        let lead = self.b * first.powi(self.ell as i32);
        if (self.f[0] - lead).abs() > 0.1 * lead.abs().max(1e-8) {
            return Err(ProfileError::InvalidInput(format!(
                "first sample {} inconsistent with center behavior {} (violates f(0) = 0)",
                self.f[0], lead
            )));
        }
        let tail = EQUATOR - self.c * (1.0 - last);
        let tail_err = (self.f[self.f.len() - 1] - tail).abs();
        if tail_err > 0.1 * (self.c * (1.0 - last)).abs().max(1e-8) {
            return Err(ProfileError::InvalidInput(
                "last sample inconsistent with boundary behavior at rho = 1".into(),
            ));
        }
        Ok(())
    }
}

fn serialization_mesh(center_eps: f64, boundary_eps: f64) -> Vec<f64> {
    let mut mesh = Vec::with_capacity(10_500);
    // Geometric from center_eps to 0.05.
    let n_geo = 3072;
    let ratio = (0.05f64 / center_eps).powf(1.0 / n_geo as f64);
    let mut x = center_eps;
    for _ in 0..n_geo {
        mesh.push(x);
        x *= ratio;
    }
    // Uniform middle.
    let n_mid = 4096;
    for i in 0..n_mid {
        mesh.push(0.05 + 0.90 * (i as f64) / n_mid as f64);
    }
    // Geometric (in s = 1 - rho) from 0.05 down to boundary_eps.
    let n_tail = 3072;
    let ratio = (boundary_eps / 0.05f64).powf(1.0 / (n_tail - 1) as f64);
    let mut s = 0.05;
    for _ in 0..n_tail {
        mesh.push(1.0 - s);
        s *= ratio;
    }
    mesh.dedup_by(|a, b| *a <= *b);
    mesh
}

/// Shoot the (n, ell) profile to the given matching tolerance.
pub fn shoot_profile(n: u32, ell: u32, tol: f64) -> Result<Profile, ProfileError> {
    shoot_profile_with(n, ell, tol, &ShootOptions::default())
}

pub fn shoot_profile_with(
    n: u32,
    ell: u32,
    tol: f64,
    opts: &ShootOptions,
) -> Result<Profile, ProfileError> {
    if ell < 1 {
        return Err(ProfileError::InvalidInput("ell must be >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(ProfileError::InvalidInput("tol must be positive".into()));
    }
    let (b0, c0) = if n == 0 && ell == 1 {
        (2.0, 1.0)
    } else {
        locate_parameters(n, ell, opts)?
    };
    let (b, c, mismatch) = newton_match(n, ell, b0, c0, tol, opts)?;
    let left = left_leg(ell, b, opts.match_point, opts, true, false)?;
    let right = right_leg(ell, c, opts.match_point, opts, true)?;
    let profile = Profile {
        n,
        ell,
        b,
        c,
        tol: mismatch.max(tol * 1e-3),
        center_eps: opts.center_eps(ell, b),
        boundary_eps: opts.boundary_eps(c),
        center: center_expansion(ell, b, opts.series_terms),
        boundary: boundary_expansion(ell, c, opts.series_terms),
        match_point: opts.match_point,
        body: Body::Shot {
            left: left.dense.expect("dense requested"),
            right: right.dense.expect("dense requested"),
        },
    };
    // The crossing count is what labels the solution; certify it.
    let count = intersection_count(&profile)?;
    if count != n as usize {
        return Err(ProfileError::NotFound {
            n,
            ell,
            lo: opts.scan_range.0,
            hi: opts.scan_range.1,
        });
    }
    Ok(profile)
}

/// Number of interior crossings of the equator value pi/2, certified by mesh
/// refinement (the count must be stable under two successive doublings).
pub fn intersection_count(p: &Profile) -> Result<usize, ProfileError> {
    let lo = (2.0 * p.center_eps).min((0.01 / p.b.abs().max(1e-3)).powf(1.0 / p.ell as f64));
    let hi = 1.0 - (2.0 * p.boundary_eps).max(1e-4);
    certified_sign_changes(&|rho| p.value(rho) - EQUATOR, lo.max(1e-9), hi, 4096)
}

/// Sign changes of g on [lo, hi] over a uniform mesh, certified by needing
/// the same count at x2 and x4 refinement. Near-tangencies that flip the
/// count under refinement are reported as a mesh resolution failure.
fn certified_sign_changes(
    g: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    base: usize,
) -> Result<usize, ProfileError> {
    let count_at = |m: usize| -> usize {
        let mut count = 0;
        let mut prev = g(lo);
        for i in 1..=m {
            let x = lo + (hi - lo) * i as f64 / m as f64;
            let cur = g(x);
            if prev != 0.0 && cur != 0.0 && prev.signum() != cur.signum() {
                count += 1;
            }
            if cur != 0.0 {
                prev = cur;
            }
        }
        count
    };
    let c1 = count_at(base);
    let c2 = count_at(2 * base);
    let c4 = count_at(4 * base);
    if c1 == c2 && c2 == c4 {
        Ok(c1)
    } else {
        Err(ProfileError::MeshTooCoarse { resolution: 4 * base })
    }
}
