//! Linearized operators around the self-similar profiles, and their point
//! spectra.
//!
//! Linearizing the co-rotational flow at a profile f and separating time
//! yields the weighted Sturm-Liouville eigenvalue problem
//!
//! ```text
//! a u = (1/w) ( -(p u')' + q u ) = lambda u,    rho in (0, 1),
//! p = rho^2,   w = rho^2 / (1 - rho^2)^2,
//! q = [ l(l+1) (1 - rho^2) cos(2 f) - rho^2 ] / (1 - rho^2)^2,
//! ```
//!
//! on H = L^2((0,1), w drho). The essential spectrum is [0, infinity);
//! negative eigenvalues lambda = -mu^2 are simple and are found by shooting:
//! integrate the recessive branch from each endpoint (started with local
//! Frobenius data) to an interior match point and look for sign changes of
//! the Wronskian mismatch in mu. Exponential growth over the legs is handled
//! by segmented integration with positive rescaling, which leaves mismatch
//! signs intact.
//!
//! The substitution x = artanh(rho), v = sinh(x) u(tanh x) turns a into the
//! half-line Schroedinger operator -d^2/dx^2 + l(l+1) cos(2 f(tanh x)) /
//! sinh^2(x) and is used as an independent counting oracle: the number of
//! negative eigenvalues equals the number of interior zeros of the gauge
//! mode theta = rho sqrt(1-rho^2) f', which lies in the kernel of a but just
//! fails to be normalizable.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::SlpError;
use crate::frobenius::SingularOde;
use crate::odeint::{integrate_with, DenseSolution, EventSpec, IvpSpec, Options};
use crate::profiles::{boundary_expansion, center_expansion, Profile};
use crate::quad::{weighted_inner_product, SampledFunction};
use crate::series::Series;

// One operator owns one kind; boxing the profile would only add a hop.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum OperatorKind {
    /// Potential built from a computed profile.
    Profile(Profile),
    /// The limiting operator: cos(2 f) replaced by -1 on all of (0, 1).
    Limiting { ell: u32 },
}

#[derive(Debug, Clone)]
pub struct SlpOperator {
    kind: OperatorKind,
}

impl SlpOperator {
    pub fn from_profile(p: Profile) -> SlpOperator {
        SlpOperator { kind: OperatorKind::Profile(p) }
    }

    pub fn limiting(ell: u32) -> Result<SlpOperator, SlpError> {
        if ell < 1 {
            return Err(SlpError::InvalidInput("ell must be >= 1".into()));
        }
        Ok(SlpOperator { kind: OperatorKind::Limiting { ell } })
    }

    pub fn ell(&self) -> u32 {
        match &self.kind {
            OperatorKind::Profile(p) => p.ell,
            OperatorKind::Limiting { ell } => *ell,
        }
    }

    /// Crossing index of the underlying profile; None for the limiting
    /// operator.
    pub fn n(&self) -> Option<u32> {
        match &self.kind {
            OperatorKind::Profile(p) => Some(p.n),
            OperatorKind::Limiting { .. } => None,
        }
    }

    pub fn profile(&self) -> Option<&Profile> {
        match &self.kind {
            OperatorKind::Profile(p) => Some(p),
            OperatorKind::Limiting { .. } => None,
        }
    }

    fn ll(&self) -> f64 {
        let l = self.ell() as f64;
        l * (l + 1.0)
    }

    pub fn cos2f(&self, rho: f64) -> f64 {
        match &self.kind {
            OperatorKind::Profile(p) => (2.0 * p.value(rho)).cos(),
            OperatorKind::Limiting { .. } => -1.0,
        }
    }

    pub fn weight(&self, rho: f64) -> f64 {
        let om = 1.0 - rho * rho;
        rho * rho / (om * om)
    }

    pub fn p_coeff(&self, rho: f64) -> f64 {
        rho * rho
    }

    pub fn q_coeff(&self, rho: f64) -> f64 {
        let om = 1.0 - rho * rho;
        (self.ll() * om * self.cos2f(rho) - rho * rho) / (om * om)
    }

    /// a u at a point, given u, u', u''. This is the pointwise form
    /// -(1-rho^2)^2 u'' - (2/rho)(1-rho^2)^2 u' + (q/w) u.
    pub fn apply_pointwise(&self, rho: f64, u: f64, du: f64, ddu: f64) -> f64 {
        let om = 1.0 - rho * rho;
        let om2 = om * om;
        let q_over_w = (self.ll() * om * self.cos2f(rho) - rho * rho) / (rho * rho);
        -om2 * ddu - 2.0 * om2 * du / rho + q_over_w * u
    }

    /// Apply a to sampled data, returning values of a u on the same mesh.
    /// The second derivative comes from the Hermite interpolant, so the
    /// result is O(h^2) accurate; use apply_pointwise with exact derivatives
    /// when more is needed.
    pub fn apply(&self, u: &SampledFunction) -> Result<Vec<f64>, SlpError> {
        let (lo, hi) = u.domain();
        if lo <= 0.0 {
            return Err(SlpError::MeshTouchesEndpoint(lo));
        }
        if hi >= 1.0 {
            return Err(SlpError::MeshTouchesEndpoint(hi));
        }
        let mut out = Vec::with_capacity(u.mesh().len());
        for ((&rho, &y), &dy) in u.mesh().iter().zip(u.values()).zip(u.derivatives()) {
            let ddy = u.eval_second_derivative(rho);
            out.push(self.apply_pointwise(rho, y, dy, ddy));
        }
        Ok(out)
    }

    /// Potential of the half-line Schroedinger form at x = artanh(rho).
    pub fn schrodinger_potential(&self, x: f64) -> f64 {
        let sh = x.sinh();
        self.ll() * self.cos2f(x.tanh()) / (sh * sh)
    }

    /// The bounded part of the Schroedinger potential: V(x) - l(l+1)/x^2,
    /// computed in a cancellation-free form. Profile operators only.
    pub fn schrodinger_well(&self, x: f64) -> Result<f64, SlpError> {
        let p = match &self.kind {
            OperatorKind::Profile(p) => p,
            OperatorKind::Limiting { .. } => {
                return Err(SlpError::InvalidInput(
                    "well decomposition needs a profile potential".into(),
                ))
            }
        };
        // V - L/x^2 = L [ cos(2f) g(x) - 2 sin(f)^2 / x^2 ],
        // g(x) = 1/sinh^2 x - 1/x^2, analytic with g(0) = -1/3.
        let g = if x.abs() < 0.1 {
            let x2 = x * x;
            -1.0 / 3.0 + x2 / 15.0 - 2.0 * x2 * x2 / 189.0 + x2 * x2 * x2 / 675.0
        } else {
            let sh = x.sinh();
            1.0 / (sh * sh) - 1.0 / (x * x)
        };
        let rho = x.tanh();
        let f = p.value(rho);
        let sf = f.sin();
        let ratio = if x == 0.0 {
            // sin(f)/x -> b for ell = 1, 0 for ell >= 2.
            if p.ell == 1 {
                p.b
            } else {
                0.0
            }
        } else {
            sf / x
        };
        Ok(self.ll() * ((2.0 * f).cos() * g - 2.0 * ratio * ratio))
    }

    /// cos(2 f) as a power series in rho around 0.
    fn center_cos2f_series(&self, len: usize) -> Series {
        match &self.kind {
            OperatorKind::Profile(p) => {
                let terms = len / 2 + 1;
                let alpha = center_expansion(p.ell, p.b, terms);
                let mut coeffs = vec![0.0; len];
                for (j, &a) in alpha.iter().enumerate() {
                    let k = p.ell as usize + 2 * j;
                    if k < len {
                        coeffs[k] = a;
                    }
                }
                Series::new(coeffs).scale(2.0).sin_cos().1
            }
            OperatorKind::Limiting { .. } => Series::constant(-1.0, len),
        }
    }

    /// cos(2 f) as a power series in s = 1 - rho around 0. Uses
    /// cos(2f) = -cos(2G) with G = pi/2 - f.
    fn boundary_cos2f_series(&self, len: usize) -> Series {
        match &self.kind {
            OperatorKind::Profile(p) => {
                let gamma = boundary_expansion(p.ell, p.c, len);
                let mut coeffs = vec![0.0; len];
                for (j, &g) in gamma.iter().enumerate() {
                    if j + 1 < len {
                        coeffs[j + 1] = g;
                    }
                }
                Series::new(coeffs).scale(2.0).sin_cos().1.scale(-1.0)
            }
            OperatorKind::Limiting { .. } => Series::constant(-1.0, len),
        }
    }

    /// Normal form of the eigenvalue equation at rho = 0: indices ell and
    /// -ell-1 for profile potentials.
    pub fn center_singular_ode(&self, lambda: f64, len: usize) -> SingularOde {
        let cos2f = self.center_cos2f_series(len);
        let one = Series::constant(1.0, len);
        let om = one.sub(&Series::monomial(1.0, 2, len));
        let num = om
            .mul(&cos2f)
            .scale(self.ll())
            .sub(&Series::monomial(1.0 + lambda, 2, len));
        let t2q = num.mul(&om.mul(&om).recip()).scale(-1.0);
        SingularOde { point: 0.0, t_p: Series::constant(2.0, len), t2_q: t2q }
    }

    /// Normal form at rho = 1 in s = 1 - rho: indices (1 +- mu)/2 with
    /// mu = sqrt(-lambda).
    pub fn boundary_singular_ode(&self, lambda: f64, len: usize) -> SingularOde {
        let cos2f = self.boundary_cos2f_series(len);
        let mut sp_num = vec![0.0; len];
        if len > 1 {
            sp_num[1] = -2.0;
        }
        let one_ms = Series::constant(1.0, len).sub(&Series::monomial(1.0, 1, len));
        let sp = Series::new(sp_num).mul(&one_ms.recip());
        // s(2-s) and (1-s)^2 and ((2-s)(1-s))^2.
        let s2ms = {
            let mut v = vec![0.0; len];
            v[1] = 2.0;
            if len > 2 {
                v[2] = -1.0;
            }
            Series::new(v)
        };
        let one_ms2 = one_ms.mul(&one_ms);
        let den = {
            let mut v = vec![0.0; len.max(3)];
            v[0] = 2.0;
            v[1] = -3.0;
            v[2] = 1.0;
            v.truncate(len);
            let q = Series::new(v);
            q.mul(&q)
        };
        let num = s2ms
            .mul(&cos2f)
            .scale(self.ll())
            .sub(&one_ms2.scale(1.0 + lambda));
        let s2q = num.mul(&den.recip()).scale(-1.0);
        SingularOde { point: 1.0, t_p: sp, t2_q: s2q }
    }

    /// First-order system for the eigenvalue equation at a fixed lambda.
    fn eigen_rhs(&self, lambda: f64) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
        let ll = self.ll();
        move |rho: f64, y: &[f64], dy: &mut [f64]| {
            let om = 1.0 - rho * rho;
            let coeff =
                (ll * om * self.cos2f(rho) - (1.0 + lambda) * rho * rho) / (om * om * rho * rho);
            dy[0] = y[1];
            dy[1] = -2.0 * y[1] / rho + coeff * y[0];
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// Window of mu = sqrt(-lambda) searched for eigenvalues.
    pub mu_range: (f64, f64),
    pub scan_ratio: f64,
    pub match_point: f64,
    /// Integration tolerance during the coarse scan.
    pub scan_rel: f64,
    /// Integration tolerance during refinement and eigenfunction assembly.
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub series_terms: usize,
    /// Target endpoint offset; shrunk automatically with mu and with the
    /// steepness of the profile.
    pub eps: f64,
    pub bisect_iters: usize,
    /// Whether to reconstruct eigenfunctions. Very deep modes (mu in the
    /// thousands) have dynamic range beyond double precision, so counting
    /// scans turn this off rather than return unrepresentable shapes.
    pub build_eigenfunctions: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            mu_range: (0.5, 8.0),
            scan_ratio: 1.05,
            match_point: 0.5,
            scan_rel: 1e-9,
            ode_rel: 1e-11,
            ode_abs: 1e-14,
            series_terms: 24,
            eps: 1e-4,
            bisect_iters: 60,
            build_eigenfunctions: true,
        }
    }
}

impl SpectrumOptions {
    fn center_eps(&self, op: &SlpOperator, mu: f64) -> f64 {
        let base = match &op.kind {
            OperatorKind::Profile(p) => {
                let cap = (0.01 / p.b.abs().max(1e-3)).powf(1.0 / p.ell as f64);
                self.eps.min(cap)
            }
            OperatorKind::Limiting { .. } => self.eps,
        };
        base.min(0.5 / mu.max(1.0))
    }

    fn boundary_eps(&self, op: &SlpOperator, mu: f64) -> f64 {
        let base = match &op.kind {
            OperatorKind::Profile(p) => self.eps.min(0.01 / p.c.abs().max(1e-3)),
            OperatorKind::Limiting { .. } => self.eps,
        };
        base.min(0.5 / mu.max(1.0))
    }
}

/// One shooting leg, possibly split into segments by overflow rescaling.
/// Values are normalized so the state at the leg's far end has unit norm;
/// `log_scale` converts a segment's raw values to that normalization.
pub(crate) struct Leg {
    pub(crate) segments: Vec<LegSegment>,
    pub(crate) end_state: [f64; 2],
}

pub(crate) struct LegSegment {
    dense: Option<DenseSolution>,
    log_scale: f64,
    t0: f64,
    t1: f64,
}

impl Leg {
    /// Evaluate (u, u') in the leg's normalization. Only valid when the leg
    /// was integrated with dense output.
    pub(crate) fn eval(&self, t: f64) -> (f64, f64) {
        for seg in &self.segments {
            let (lo, hi) = if seg.t0 <= seg.t1 { (seg.t0, seg.t1) } else { (seg.t1, seg.t0) };
            if t >= lo - 1e-300 && t <= hi {
                let dense = seg.dense.as_ref().expect("leg integrated without dense output");
                let y = dense.eval(t);
                let s = seg.log_scale.exp();
                return (y[0] * s, y[1] * s);
            }
        }
        // Clamp to the nearest segment end.
        let seg = if (t - self.segments[0].t0).abs()
            < (t - self.segments.last().unwrap().t1).abs()
        {
            self.segments.first().unwrap()
        } else {
            self.segments.last().unwrap()
        };
        let dense = seg.dense.as_ref().expect("leg integrated without dense output");
        let y = dense.eval(t);
        let s = seg.log_scale.exp();
        (y[0] * s, y[1] * s)
    }

    /// Same lookup returning (u, u', u''), with u'' read off the interpolant
    /// of the first-order system rather than finite differences.
    pub(crate) fn eval_with_second(&self, t: f64) -> (f64, f64, f64) {
        for seg in &self.segments {
            let (lo, hi) = if seg.t0 <= seg.t1 { (seg.t0, seg.t1) } else { (seg.t1, seg.t0) };
            if t >= lo - 1e-300 && t <= hi {
                let dense = seg.dense.as_ref().expect("leg integrated without dense output");
                let (y, dy) = dense.eval_with_derivative(t);
                let s = seg.log_scale.exp();
                return (y[0] * s, y[1] * s, dy[1] * s);
            }
        }
        let seg = self.segments.last().unwrap();
        let dense = seg.dense.as_ref().expect("leg integrated without dense output");
        let (y, dy) = dense.eval_with_derivative(t);
        let s = seg.log_scale.exp();
        (y[0] * s, y[1] * s, dy[1] * s)
    }
}

/// Integrate a linear leg from `from` to `to`, rescaling the state whenever
/// its norm nears the overflow guard. Rescaling factors are positive, so
/// normalized directions (and Wronskian signs built from them) are
/// unaffected.
pub(crate) fn integrate_leg(
    rhs: &dyn Fn(f64, &[f64], &mut [f64]),
    from: f64,
    to: f64,
    init: [f64; 2],
    rel_tol: f64,
    abs_tol: f64,
    dense: bool,
) -> Result<Leg, SlpError> {
    const GUARD: f64 = 1e200; // on |state|^2
    let guard_fn = |_t: f64, y: &[f64]| y[0] * y[0] + y[1] * y[1] - GUARD;
    let mut t = from;
    let mut y = vec![init[0], init[1]];
    let mut raw: Vec<(Option<DenseSolution>, f64, f64, f64)> = Vec::new();
    let mut log_acc = 0.0f64;
    for _ in 0..600 {
        let rhs_ref: &dyn Fn(f64, &[f64], &mut [f64]) = rhs;
        let spec = IvpSpec {
            rhs: rhs_ref,
            interval: (t, to),
            initial_state: y.clone(),
            rel_tol,
            abs_tol,
        };
        let events = [EventSpec { function: &guard_fn, terminal: true }];
        let sol = integrate_with(&spec, &Options { dense, ..Options::default() }, &events)
            .map_err(SlpError::from)?;
        raw.push((sol.dense, log_acc, t, sol.t));
        if sol.terminated_by_event {
            if sol.t == t {
                return Err(SlpError::InvalidInput(
                    "overflow rescaling made no progress".into(),
                ));
            }
            let norm = sol.state[0].hypot(sol.state[1]).max(1e-150);
            y = vec![sol.state[0] / norm, sol.state[1] / norm];
            log_acc += norm.ln();
            t = sol.t;
        } else {
            let norm = sol.state[0].hypot(sol.state[1]);
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(SlpError::InvalidInput(
                    "leg state degenerated to zero or non-finite norm".into(),
                ));
            }
            let total = log_acc + norm.ln();
            let end_state = [sol.state[0] / norm, sol.state[1] / norm];
            let segments = raw
                .into_iter()
                .map(|(d, lg, t0, t1)| LegSegment { dense: d, log_scale: lg - total, t0, t1 })
                .collect();
            return Ok(Leg { segments, end_state });
        }
    }
    Err(SlpError::InvalidInput("leg needed more than 600 rescalings".into()))
}

pub(crate) fn left_leg(
    op: &SlpOperator,
    mu: f64,
    opts: &SpectrumOptions,
    dense: bool,
) -> Result<Leg, SlpError> {
    let lambda = -mu * mu;
    let eps = opts.center_eps(op, mu);
    let ode = op.center_singular_ode(lambda, opts.series_terms);
    let index = Complex64::new(op.ell() as f64, 0.0);
    let expansion = ode.series_solution(index, opts.series_terms)?;
    let (s0, s1) = expansion.eval_scale_free_real(eps);
    let rhs = op.eigen_rhs(lambda);
    integrate_leg(&rhs, eps, opts.match_point, [s0, s1], opts.ode_rel, opts.ode_abs, dense)
}

pub(crate) fn right_leg(
    op: &SlpOperator,
    mu: f64,
    opts: &SpectrumOptions,
    dense: bool,
) -> Result<Leg, SlpError> {
    let lambda = -mu * mu;
    let eps = opts.boundary_eps(op, mu);
    let ode = op.boundary_singular_ode(lambda, opts.series_terms);
    let index = Complex64::new((1.0 + mu) / 2.0, 0.0);
    let expansion = ode.series_solution(index, opts.series_terms)?;
    let (s0, s1) = expansion.eval_scale_free_real(eps);
    // The expansion variable is s = 1 - rho; converting to d/drho flips the
    // derivative sign.
    let rhs = op.eigen_rhs(lambda);
    integrate_leg(
        &rhs,
        1.0 - eps,
        opts.match_point,
        [s0, -s1],
        opts.ode_rel,
        opts.ode_abs,
        dense,
    )
}

/// Wronskian mismatch p (u_L u_R' - u_L' u_R) at the match point, with both
/// legs normalized to unit state norm. Zero exactly at eigenvalues; its sign
/// changes are what the scan brackets.
pub fn mismatch_at_mu(
    op: &SlpOperator,
    mu: f64,
    opts: &SpectrumOptions,
) -> Result<f64, SlpError> {
    if !(mu > 0.0) {
        return Err(SlpError::NotBelowEssentialSpectrum(-mu * mu));
    }
    let l = left_leg(op, mu, opts, false)?;
    let r = right_leg(op, mu, opts, false)?;
    let p = opts.match_point * opts.match_point;
    Ok(p * (l.end_state[0] * r.end_state[1] - l.end_state[1] * r.end_state[0]))
}

/// Mismatch as a function of lambda; refuses lambda in the essential
/// spectrum [0, infinity).
pub fn mismatch_at(
    op: &SlpOperator,
    lambda: f64,
    opts: &SpectrumOptions,
) -> Result<f64, SlpError> {
    if lambda >= 0.0 {
        return Err(SlpError::NotBelowEssentialSpectrum(lambda));
    }
    mismatch_at_mu(op, (-lambda).sqrt(), opts)
}

/// One eigenvalue record. `n` is None for the limiting operator.
#[derive(Debug, Clone, Serialize)]
pub struct EigenvalueRecord {
    pub n: Option<u32>,
    pub ell: u32,
    /// 1-based index, ordered by increasing mu.
    pub j: usize,
    pub lambda: f64,
    pub mu: f64,
    /// |mismatch| at the converged mu, in the unit-normalized legs.
    pub wronskian_residual: f64,
    /// Eigenfunction with unit weighted norm, positive near rho = 0. None
    /// when reconstruction was not requested.
    pub eigenfunction: Option<SampledFunction>,
}

/// Refine a bracketed sign change of the mismatch to an eigenvalue record.
pub fn eigenvalue_in_bracket(
    op: &SlpOperator,
    bracket: (f64, f64),
    opts: &SpectrumOptions,
) -> Result<EigenvalueRecord, SlpError> {
    let (mut lo, mut hi) = bracket;
    if !(0.0 < lo && lo < hi) {
        return Err(SlpError::InvalidInput(format!("bad bracket [{lo}, {hi}]")));
    }
    let mut w_lo = mismatch_at_mu(op, lo, opts)?;
    let w_hi = mismatch_at_mu(op, hi, opts)?;
    if w_lo == 0.0 {
        hi = lo;
    } else if w_hi != 0.0 && w_lo.signum() == w_hi.signum() {
        return Err(SlpError::InvalidInput(format!(
            "mismatch does not change sign on [{lo}, {hi}]"
        )));
    }
    for _ in 0..opts.bisect_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let w_mid = mismatch_at_mu(op, mid, opts)?;
        if w_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if w_mid.signum() == w_lo.signum() {
            lo = mid;
            w_lo = w_mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let residual = mismatch_at_mu(op, mu, opts)?.abs();
    let eigenfunction = if opts.build_eigenfunctions {
        Some(assemble_eigenfunction(op, mu, opts)?)
    } else {
        None
    };
    Ok(EigenvalueRecord {
        n: op.n(),
        ell: op.ell(),
        j: 0,
        lambda: -mu * mu,
        mu,
        wronskian_residual: residual,
        eigenfunction,
    })
}

fn assemble_eigenfunction(
    op: &SlpOperator,
    mu: f64,
    opts: &SpectrumOptions,
) -> Result<SampledFunction, SlpError> {
    let left = left_leg(op, mu, opts, true)?;
    let right = right_leg(op, mu, opts, true)?;
    // Align the right leg's unit direction with the left one; at a converged
    // eigenvalue the directions agree up to sign.
    let align = left.end_state[0] * right.end_state[0] + left.end_state[1] * right.end_state[1];
    let eps_l = opts.center_eps(op, mu);
    let eps_r = opts.boundary_eps(op, mu);
    let rm = opts.match_point;

    let raw = |rho: f64| -> (f64, f64) {
        if rho <= rm {
            left.eval(rho)
        } else {
            let (u, du) = right.eval(rho);
            (align * u, align * du)
        }
    };

    // Sampling mesh: geometric into both endpoints, uniform in the middle.
    let mut mesh = Vec::with_capacity(1300);
    let n1 = 256;
    let ratio = (0.05 / eps_l).powf(1.0 / n1 as f64);
    let mut x = eps_l;
    for _ in 0..n1 {
        mesh.push(x);
        x *= ratio;
    }
    let n2 = 768;
    for i in 0..n2 {
        mesh.push(0.05 + 0.90 * i as f64 / n2 as f64);
    }
    let n3 = 256;
    let ratio = (eps_r / 0.05f64).powf(1.0 / (n3 - 1) as f64);
    let mut s = 0.05;
    for _ in 0..n3 {
        mesh.push(1.0 - s);
        s *= ratio;
    }
    mesh.dedup_by(|a, b| *a <= *b);

    let norm_fn = |rho: f64| raw(rho).0;
    let (norm2, _) = weighted_inner_product(&norm_fn, &norm_fn, eps_l, 1.0 - eps_r, 1e-10);
    if !(norm2 > 0.0) || !norm2.is_finite() {
        return Err(SlpError::InvalidInput(format!(
            "eigenfunction normalization failed: |u|^2 = {norm2}"
        )));
    }
    let scale = 1.0 / norm2.sqrt();
    let mut ys = Vec::with_capacity(mesh.len());
    let mut dys = Vec::with_capacity(mesh.len());
    for &rho in &mesh {
        let (u, du) = raw(rho);
        ys.push(u * scale);
        dys.push(du * scale);
    }
    SampledFunction::new(mesh, ys, dys).map_err(SlpError::InvalidInput)
}

/// All negative eigenvalues with mu in the configured window, found by a
/// geometric scan over mu followed by bisection. The scan is repeated at a
/// finer ratio; if the bracket count keeps changing the window is declared
/// under-resolved.
pub fn negative_spectrum(
    op: &SlpOperator,
    opts: &SpectrumOptions,
) -> Result<Vec<EigenvalueRecord>, SlpError> {
    if matches!(op.kind, OperatorKind::Limiting { .. }) {
        return Err(SlpError::InvalidInput(
            "the limiting operator is limit-circle at rho = 0; its spectrum is computed \
             by the connection methods, not by shooting"
                .into(),
        ));
    }
    let (mu_lo, mu_hi) = opts.mu_range;
    if !(0.0 < mu_lo && mu_lo < mu_hi) {
        return Err(SlpError::InvalidInput(format!(
            "bad mu window [{mu_lo}, {mu_hi}]"
        )));
    }
    let scan_opts = SpectrumOptions { ode_rel: opts.scan_rel, ..opts.clone() };

    let scan = |ratio: f64| -> Result<Vec<(f64, f64)>, SlpError> {
        let mut brackets = Vec::new();
        let mut mu = mu_lo;
        let mut prev: Option<(f64, f64)> = None;
        loop {
            let w = mismatch_at_mu(op, mu, &scan_opts)?;
            if let Some((mu0, w0)) = prev {
                if w0.signum() != w.signum() {
                    brackets.push((mu0, mu));
                }
            }
            prev = Some((mu, w));
            if mu >= mu_hi {
                break;
            }
            mu = (mu * ratio).min(mu_hi);
        }
        Ok(brackets)
    };

    let mut ratio = opts.scan_ratio;
    let mut brackets = scan(ratio)?;
    let mut stable = false;
    for _ in 0..2 {
        ratio = ratio.sqrt();
        let finer = scan(ratio)?;
        if finer.len() == brackets.len() {
            stable = true;
            brackets = finer;
            break;
        }
        let coarse = brackets.len();
        brackets = finer;
        if coarse != brackets.len() {
            continue;
        }
    }
    if !stable {
        let finer = scan(ratio.sqrt())?;
        if finer.len() != brackets.len() {
            return Err(SlpError::ScanTooCoarse {
                coarse: brackets.len(),
                fine: finer.len(),
            });
        }
        brackets = finer;
    }

    let mut records = Vec::with_capacity(brackets.len());
    for bracket in brackets {
        records.push(eigenvalue_in_bracket(op, bracket, opts)?);
    }
    records.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    for (i, r) in records.iter_mut().enumerate() {
        r.j = i + 1;
    }
    Ok(records)
}

/// CSV rendering of eigenvalue records; the limiting operator prints as
/// n = "inf".
pub fn spectrum_csv(records: &[EigenvalueRecord]) -> String {
    let mut out = String::from("n,ell,j,lambda,mu,residual\n");
    for r in records {
        let n = match r.n {
            Some(n) => n.to_string(),
            None => "inf".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{:.15e},{:.15e},{:.3e}\n",
            n, r.ell, r.j, r.lambda, r.mu, r.wronskian_residual
        ));
    }
    out
}

/// First-order factorization of the n = 0, ell = 1 operator: a = B* B with
/// B u = (1 - rho^2) u' - g u built on the logarithmic derivative of the
/// gauge mode, which B annihilates. Exhibits the operator's nonnegativity.
pub mod factorization {
    use super::*;

    /// g(rho) = theta_0'/theta_0 * (1 - rho^2) for the ground profile:
    /// (1 - 3 rho^2) / (rho (1 + rho^2)).
    pub fn g_forward(rho: f64) -> f64 {
        (1.0 - 3.0 * rho * rho) / (rho * (1.0 + rho * rho))
    }

    fn g_forward_derivative(rho: f64) -> f64 {
        let d = rho * (1.0 + rho * rho);
        let r2 = rho * rho;
        (3.0 * r2 * r2 - 6.0 * r2 - 1.0) / (d * d)
    }

    /// Coefficient of the adjoint: g + 2/rho = (3 - rho^2)/(rho (1 + rho^2)).
    pub fn g_adjoint(rho: f64) -> f64 {
        (3.0 - rho * rho) / (rho * (1.0 + rho * rho))
    }

    /// B u = (1 - rho^2) u' - g u.
    pub fn forward(rho: f64, u: f64, du: f64) -> f64 {
        (1.0 - rho * rho) * du - g_forward(rho) * u
    }

    /// d/drho of B u, for chaining into the adjoint.
    pub fn forward_derivative(rho: f64, u: f64, du: f64, ddu: f64) -> f64 {
        (1.0 - rho * rho) * ddu - 2.0 * rho * du - g_forward_derivative(rho) * u
            - g_forward(rho) * du
    }

    /// B* w = -(1 - rho^2) w' - (g + 2/rho) w, the adjoint in the weighted
    /// inner product.
    pub fn adjoint(rho: f64, w: f64, dw: f64) -> f64 {
        -(1.0 - rho * rho) * dw - g_adjoint(rho) * w
    }

    /// Smooth compactly supported test function exp(-1/((rho-lo)(hi-rho))),
    /// zero outside (lo, hi).
    #[derive(Debug, Clone, Copy)]
    pub struct Bump {
        pub lo: f64,
        pub hi: f64,
    }

    impl Bump {
        /// (u, u', u''); identically zero outside the support.
        pub fn eval(&self, rho: f64) -> (f64, f64, f64) {
            if rho <= self.lo || rho >= self.hi {
                return (0.0, 0.0, 0.0);
            }
            let phi = (rho - self.lo) * (self.hi - rho);
            let dphi = self.lo + self.hi - 2.0 * rho;
            let u = (-1.0 / phi).exp();
            let du = u * dphi / (phi * phi);
            let ddu = u * (dphi * dphi / phi.powi(4) - 2.0 * dphi * dphi / phi.powi(3)
                - 2.0 / (phi * phi));
            (u, du, ddu)
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct FactorizationReport {
        /// Weighted L2 residual of a u - B*(B u), relative to |a u|.
        pub residual_rel: f64,
        /// |(B u | v) - (u | B* v)| relative to the factor norms.
        pub adjoint_defect: f64,
        /// Quadratic form (a u | u) in the weighted inner product.
        pub form_value: f64,
        /// |B u|^2; equals the form value when the factorization is exact.
        pub gradient_norm_sq: f64,
        /// |u|^2 in the weighted inner product, the scale for nonnegativity.
        pub u_norm_sq: f64,
    }

    /// Verify a = B* B against a pair of bump test functions.
    pub fn factorization_check(
        op: &SlpOperator,
        u: &Bump,
        v: &Bump,
    ) -> Result<FactorizationReport, SlpError> {
        if op.n() != Some(0) || op.ell() != 1 {
            return Err(SlpError::InvalidInput(
                "factorization is specific to the ground profile at ell = 1".into(),
            ));
        }
        for bump in [u, v] {
            if !(bump.lo > 0.0 && bump.hi < 1.0 && bump.lo < bump.hi) {
                return Err(SlpError::SupportNotCompact { lo: bump.lo, hi: bump.hi });
            }
        }
        let au = |rho: f64| {
            let (y, dy, ddy) = u.eval(rho);
            op.apply_pointwise(rho, y, dy, ddy)
        };
        let bsb = |rho: f64| {
            let (y, dy, ddy) = u.eval(rho);
            let w = forward(rho, y, dy);
            let dw = forward_derivative(rho, y, dy, ddy);
            adjoint(rho, w, dw)
        };
        let diff = |rho: f64| au(rho) - bsb(rho);
        let (lo, hi) = (u.lo, u.hi);
        let tol = 1e-11;
        let (num, _) = weighted_inner_product(&diff, &diff, lo, hi, tol);
        let (den, _) = weighted_inner_product(&au, &au, lo, hi, tol);
        let residual_rel = (num.max(0.0) / den.max(1e-300)).sqrt();

        let bu = |rho: f64| {
            let (y, dy, _) = u.eval(rho);
            forward(rho, y, dy)
        };
        let vv = |rho: f64| v.eval(rho).0;
        let uu = |rho: f64| u.eval(rho).0;
        let bsv = |rho: f64| {
            let (y, dy, _) = v.eval(rho);
            adjoint(rho, y, dy)
        };
        let lo2 = u.lo.min(v.lo);
        let hi2 = u.hi.max(v.hi);
        let (lhs, _) = weighted_inner_product(&bu, &vv, lo2, hi2, tol);
        let (rhs, _) = weighted_inner_product(&uu, &bsv, lo2, hi2, tol);
        let (bu_norm, _) = weighted_inner_product(&bu, &bu, lo, hi, tol);
        let (v_norm, _) = weighted_inner_product(&vv, &vv, v.lo, v.hi, tol);
        let scale = (bu_norm.max(0.0) * v_norm.max(0.0)).sqrt().max(1e-300);
        let adjoint_defect = (lhs - rhs).abs() / scale;

        let (form_value, _) = weighted_inner_product(&au, &uu, lo, hi, tol);
        let (u_norm_sq, _) = weighted_inner_product(&uu, &uu, lo, hi, tol);
        let gradient_norm_sq = bu_norm;
        Ok(FactorizationReport {
            residual_rel,
            adjoint_defect,
            form_value,
            gradient_norm_sq,
            u_norm_sq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::shoot_profile;

    fn ground_op() -> SlpOperator {
        SlpOperator::from_profile(Profile::closed_form_f0())
    }

    #[test]
    fn potential_at_half_matches_rational_value() {
        // q(1/2) = (2 * 3/4 * (-7/25) - 1/4) / (9/16) = -67/56.25.
        let op = ground_op();
        assert!((op.q_coeff(0.5) - (-1.1911111111111111)).abs() < 1e-12);
        // And in the limiting case q(0) = -2.
        let inf = SlpOperator::limiting(1).unwrap();
        assert!((inf.q_coeff(0.0) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn apply_on_linear_ramp_matches_hand_value() {
        // a[rho] at 1/2: -(2/rho)(1-rho^2)^2 + (q/w) rho = -3.59 exactly.
        let op = ground_op();
        let v = op.apply_pointwise(0.5, 0.5, 1.0, 0.0);
        assert!((v + 3.59).abs() < 1e-12, "a[rho](1/2) = {v}");
    }

    #[test]
    fn apply_rejects_meshes_touching_endpoints() {
        let op = ground_op();
        let mesh: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y = vec![1.0; 50];
        let dy = vec![0.0; 50];
        let u = SampledFunction::new(mesh, y, dy).unwrap();
        match op.apply(&u) {
            Err(SlpError::MeshTouchesEndpoint(_)) => {}
            other => panic!("expected MeshTouchesEndpoint, got {other:?}"),
        }
    }

    #[test]
    fn gauge_mode_lies_in_the_kernel() {
        for n in 0..=2u32 {
            let p = if n == 0 {
                Profile::closed_form_f0()
            } else {
                shoot_profile(n, 1, 1e-10).unwrap()
            };
            let op = SlpOperator::from_profile(p.clone());
            let mut sup_theta: f64 = 0.0;
            for i in 0..=400 {
                let rho = 0.05 + 0.90 * i as f64 / 400.0;
                sup_theta = sup_theta.max(p.gauge_mode(rho).0.abs());
            }
            let mut worst: f64 = 0.0;
            for i in 0..=400 {
                let rho = 0.05 + 0.90 * i as f64 / 400.0;
                let (th, dth, ddth) = p.gauge_mode(rho);
                worst = worst.max(op.apply_pointwise(rho, th, dth, ddth).abs());
            }
            assert!(
                worst / sup_theta < 1e-6,
                "gauge residual {} for n = {n}",
                worst / sup_theta
            );
        }
    }

    #[test]
    fn essential_spectrum_is_refused() {
        let op = ground_op();
        match mismatch_at(&op, 0.25, &SpectrumOptions::default()) {
            Err(SlpError::NotBelowEssentialSpectrum(l)) => assert_eq!(l, 0.25),
            other => panic!("expected refusal, got {other:?}"),
        }
        assert!(matches!(
            mismatch_at(&op, 0.0, &SpectrumOptions::default()),
            Err(SlpError::NotBelowEssentialSpectrum(_))
        ));
    }

    #[test]
    fn ground_operator_has_no_negative_spectrum_below_moderate_mu() {
        let op = ground_op();
        let opts = SpectrumOptions { mu_range: (0.05, 20.0), ..SpectrumOptions::default() };
        let records = negative_spectrum(&op, &opts).unwrap();
        assert!(records.is_empty(), "unexpected eigenvalues: {:?}",
            records.iter().map(|r| r.mu).collect::<Vec<_>>());
    }

    #[test]
    fn first_excited_operator_has_single_eigenvalue_near_table_value() {
        let p = shoot_profile(1, 1, 1e-11).unwrap();
        let op = SlpOperator::from_profile(p);
        let opts = SpectrumOptions { mu_range: (0.05, 70.0), ..SpectrumOptions::default() };
        let records = negative_spectrum(&op, &opts).unwrap();
        assert_eq!(records.len(), 1, "mu values: {:?}",
            records.iter().map(|r| r.mu).collect::<Vec<_>>());
        let r = &records[0];
        assert!(
            (r.mu - 5.333625).abs() < 2e-6,
            "mu_1 = {:.8} (expected about 5.333625)",
            r.mu
        );
        assert_eq!(r.j, 1);
        assert!(r.lambda < 0.0 && (r.lambda + r.mu * r.mu).abs() < 1e-12);

        // Unit weighted norm and positivity near the origin.
        let u = r.eigenfunction.as_ref().unwrap();
        let (lo, hi) = u.domain();
        let f = |rho: f64| u.eval(rho);
        let (norm2, _) = weighted_inner_product(&f, &f, lo, hi, 1e-9);
        assert!((norm2 - 1.0).abs() < 1e-6, "norm^2 = {norm2}");
        assert!(u.eval(0.01) > 0.0);
        // Decay into both endpoints.
        assert!(u.eval(lo * 2.0).abs() < u.eval(0.3).abs());
        assert!(u.eval(1.0 - (1.0 - hi) * 2.0).abs() < u.eval(0.7).abs().max(1e-3));
    }

    #[test]
    fn first_eigenvalue_stable_under_method_knobs() {
        let p = shoot_profile(1, 1, 1e-11).unwrap();
        let op = SlpOperator::from_profile(p);
        let bracket = (5.0, 5.7);
        let base = eigenvalue_in_bracket(&op, bracket, &SpectrumOptions::default()).unwrap();
        let tighter_eps = eigenvalue_in_bracket(
            &op,
            bracket,
            &SpectrumOptions { eps: 5e-5, ..SpectrumOptions::default() },
        )
        .unwrap();
        let moved_match = eigenvalue_in_bracket(
            &op,
            bracket,
            &SpectrumOptions { match_point: 0.4, ..SpectrumOptions::default() },
        )
        .unwrap();
        for (label, other) in [("eps", &tighter_eps), ("match point", &moved_match)] {
            let rel = ((base.mu - other.mu) / base.mu).abs();
            assert!(rel < 1e-6, "{label} perturbation moved mu_1 by {rel:.2e} relative");
        }
    }

    #[test]
    fn schrodinger_well_depth_and_decay() {
        let op = ground_op();
        let q0 = op.schrodinger_well(0.0).unwrap();
        assert!((q0 + 50.0 / 3.0).abs() < 1e-10, "well depth {q0}");
        // The series and direct branches must agree where they hand over;
        // the well varies with O(10) slope there, so scale by the gap.
        let near = op.schrodinger_well(0.1 - 1e-7).unwrap();
        let far = op.schrodinger_well(0.1 + 1e-7).unwrap();
        assert!((near - far).abs() < 1e-4, "branch jump {}", near - far);
        // Decay at large x.
        assert!(op.schrodinger_potential(20.0).abs() < 1e-10);
        let q20 = op.schrodinger_well(20.0).unwrap();
        assert!(q20.abs() < 0.01, "well at 20: {q20}");
    }

    #[test]
    fn weighted_norm_equals_transformed_line_integral() {
        // |u|_w^2 over rho should equal the integral of v^2 over x with
        // v = sinh(x) u(tanh x); check on u = 1 - rho^2 where the rho-side
        // value is 1/3.
        let u = |rho: f64| 1.0 - rho * rho;
        let (lhs, _) = weighted_inner_product(&u, &u, 1e-8, 1.0 - 1e-8, 1e-12);
        let v2 = |x: f64| {
            let t: f64 = x.tanh();
            let v = x.sinh() * u(t);
            v * v
        };
        let (rhs, _) = crate::quad::adaptive_gk(&v2, 1e-8f64.atanh(), (1.0 - 1e-8f64).atanh(), 1e-12, 1e-300);
        // The truncated endpoints shave O(1e-8) off the exact value 1/3
        // (the integrand is ~1 near rho = 1); the two routes must agree far
        // more tightly than that.
        assert!((lhs - 1.0 / 3.0).abs() < 3e-8, "lhs = {lhs}");
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn factorization_identities_hold_on_bumps() {
        let op = ground_op();
        let u = factorization::Bump { lo: 0.2, hi: 0.7 };
        let v = factorization::Bump { lo: 0.35, hi: 0.9 };
        let report = factorization::factorization_check(&op, &u, &v).unwrap();
        assert!(report.residual_rel < 1e-9, "residual {}", report.residual_rel);
        assert!(report.adjoint_defect < 1e-9, "defect {}", report.adjoint_defect);
        assert!(report.form_value >= -1e-12);
        let rel = (report.form_value - report.gradient_norm_sq).abs()
            / report.gradient_norm_sq.max(1e-300);
        assert!(rel < 1e-9, "form vs gradient norm: {rel}");
    }

    #[test]
    fn factorization_annihilates_gauge_mode() {
        let p = Profile::closed_form_f0();
        let mut worst: f64 = 0.0;
        for i in 1..200 {
            let rho = i as f64 / 200.0;
            let (th, dth, _) = p.gauge_mode(rho);
            worst = worst.max(factorization::forward(rho, th, dth).abs());
        }
        assert!(worst < 1e-13, "B theta_0 sup = {worst}");
    }

    #[test]
    fn factorization_rejects_non_ground_operators_and_bad_supports() {
        let p = shoot_profile(1, 1, 1e-9).unwrap();
        let op = SlpOperator::from_profile(p);
        let u = factorization::Bump { lo: 0.2, hi: 0.7 };
        assert!(factorization::factorization_check(&op, &u, &u).is_err());
        let op0 = ground_op();
        let bad = factorization::Bump { lo: 0.0, hi: 0.7 };
        match factorization::factorization_check(&op0, &bad, &u) {
            Err(SlpError::SupportNotCompact { .. }) => {}
            other => panic!("expected SupportNotCompact, got {other:?}"),
        }
    }

    #[test]
    fn csv_export_marks_limiting_rows() {
        let mesh = vec![0.1, 0.2, 0.3];
        let f = SampledFunction::new(mesh.clone(), vec![1.0, 2.0, 1.0], vec![0.0; 3]).unwrap();
        let records = vec![EigenvalueRecord {
            n: None,
            ell: 1,
            j: 1,
            lambda: -28.1,
            mu: 5.3009,
            wronskian_residual: 1e-12,
            eigenfunction: Some(f),
        }];
        let csv = spectrum_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n,ell,j,lambda,mu,residual");
        assert!(lines.next().unwrap().starts_with("inf,1,1,"));
    }
}
