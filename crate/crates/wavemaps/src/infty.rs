//! Negative spectrum of the limiting operator, the `ell = 1` linearization
//! around the equator map, by two independent routes.
//!
//! Route one is closed-form: substituting z = rho^2 turns the eigenvalue
//! equation into a hypergeometric equation, so the solution recessive at the
//! light cone connects to the two Frobenius branches at the origin with
//! coefficients that are explicit Gamma-function products. The ratio `m` of
//! those coefficients has unit modulus for lambda <= 0 (the coefficient
//! triples are complex conjugates), and self-adjoint admissibility at the
//! origin pins its phase: eigenvalues sit where arg m(lambda) has dropped by
//! an exact multiple of 2 pi from arg m(0).
//!
//! Route two never leaves f64 shooting: it integrates the recessive solution
//! inward and intersects it against a fixed boundary test function `chi`
//! through the Lagrange bracket at the origin. The two routes share no
//! numerics beyond the ODE coefficients, so their agreement is the main
//! end-to-end check on this module.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{InftyError, SlpError};
use crate::frobenius::FrobeniusExpansion;
use crate::quad::{weighted_inner_product, SampledFunction};
use crate::slp::{right_leg, Leg, SlpOperator, SpectrumOptions};

fn from_slp(e: SlpError) -> InftyError {
    match e {
        SlpError::Integration(o) => InftyError::Integration(o),
        SlpError::Frobenius(f) => InftyError::Frobenius(f),
        other => InftyError::InvalidInput(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Complex Gamma.

/// Lanczos parameters, g = 607/128 with 15 coefficients. Good to a few ulps
/// on Re z >= 1/2; the reflection formula covers the left half plane.
const LANCZOS_G: f64 = 607.0 / 128.0;
const LANCZOS_C: [f64; 15] = [
    0.99999999999999709182,
    57.156235665862923517,
    -59.597960355475491248,
    14.136097974741747174,
    -0.49191381609762019978,
    0.33994649984811888699e-4,
    0.46523628927048575665e-4,
    -0.98374475304879564677e-4,
    0.15808870322491248884e-3,
    -0.21026444172410488319e-3,
    0.21743961811521264320e-3,
    -0.16431810653676389022e-3,
    0.84418223983852743293e-4,
    -0.26190838401581408670e-4,
    0.36899182659531622704e-5,
];

fn lanczos_ln_gamma(z: Complex64) -> Complex64 {
    debug_assert!(z.re >= 0.5);
    let mut sum = Complex64::new(LANCZOS_C[0], 0.0);
    for (k, &c) in LANCZOS_C.iter().enumerate().skip(1) {
        sum += c / (z + (k as f64 - 1.0));
    }
    let t = z + (LANCZOS_G - 0.5);
    0.5 * (2.0 * PI).ln() + (z - 0.5) * t.ln() - t + sum.ln()
}

/// Principal branch of ln Gamma. Branch cuts do not matter to callers here:
/// phases enter only through differences that are afterwards exponentiated
/// or unwrapped along a continuous parameter path.
pub fn ln_gamma(z: Complex64) -> Result<Complex64, InftyError> {
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round() {
        return Err(InftyError::GammaPole(z.re));
    }
    if z.re >= 0.5 {
        Ok(lanczos_ln_gamma(z))
    } else {
        // Reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z).
        let s = (PI * z).sin();
        Ok(PI.ln() - s.ln() - lanczos_ln_gamma(Complex64::new(1.0, 0.0) - z))
    }
}

pub fn gamma(z: Complex64) -> Result<Complex64, InftyError> {
    Ok(ln_gamma(z)?.exp())
}

// ---------------------------------------------------------------------------
// Connection coefficient.

/// Data of the hypergeometric reduction at one spectral parameter. `a`, `b`,
/// `c` are the equation parameters after pulling out z^alpha (1-z)^beta from
/// the eigenfunction, `mu = sqrt(-lambda)`, and `m` is the connection ratio
/// of the origin branches of the solution recessive at rho = 1.
#[derive(Debug, Clone, Copy)]
pub struct ConnectionData {
    pub lambda: f64,
    pub mu: f64,
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub alpha: Complex64,
    pub beta: f64,
    pub m: Complex64,
}

pub fn connection_data(lambda: f64) -> Result<ConnectionData, InftyError> {
    if !(lambda <= 0.0) {
        return Err(InftyError::InvalidInput(format!(
            "connection coefficient needs lambda <= 0, got {lambda}"
        )));
    }
    let mu = (-lambda).sqrt();
    let rt7 = 7f64.sqrt();
    let a = Complex64::new(0.25 + 0.5 * mu, 0.25 * rt7);
    let b = Complex64::new(0.75 + 0.5 * mu, 0.25 * rt7);
    let c = Complex64::new(1.0, 0.5 * rt7);
    let one = Complex64::new(1.0, 0.0);
    // m is evaluated from its defining Gamma product, not from the conjugate
    // symmetry that forces |m| = 1; unit modulus then stays a checkable
    // consistency statement instead of a construction artifact.
    let ln_m = ln_gamma(a + one - c)? + ln_gamma(b + one - c)? + ln_gamma(c - one)?
        - ln_gamma(a)?
        - ln_gamma(b)?
        - ln_gamma(one - c)?;
    Ok(ConnectionData {
        lambda,
        mu,
        a,
        b,
        c,
        alpha: Complex64::new(0.25, -0.25 * rt7),
        beta: -0.5 * (1.0 + mu),
        m: ln_m.exp(),
    })
}

pub fn m_coefficient(lambda: f64) -> Result<Complex64, InftyError> {
    Ok(connection_data(lambda)?.m)
}

/// Eigenvalue spacing ratio mu_{k+1}/mu_k in the deep part of the spectrum,
/// exp(2 pi / sqrt 7).
pub fn asymptotic_ratio() -> f64 {
    (TAU / 7f64.sqrt()).exp()
}

// ---------------------------------------------------------------------------
// Phase route.

#[derive(Debug, Clone, Copy)]
pub struct PhaseOptions {
    /// Where the unwrapped phase is anchored to arg m(0); must sit below the
    /// first eigenvalue.
    pub mu_anchor: f64,
    pub mu_max: f64,
    /// Grid spacing in ln mu. The phase moves by about sqrt(7) per unit of
    /// ln mu, so anything below ~1 keeps the unwrap unambiguous.
    pub grid_step: f64,
    pub bisect_iters: usize,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions { mu_anchor: 1e-3, mu_max: 2e4, grid_step: 0.02, bisect_iters: 80 }
    }
}

/// Roots in mu = sqrt(-lambda), ascending. `truncated` reports that the
/// search ceiling cut the list short of the requested count.
#[derive(Debug, Clone)]
pub struct MuRoots {
    pub mu: Vec<f64>,
    pub truncated: bool,
}

fn arg_m(lambda: f64) -> Result<f64, InftyError> {
    Ok(m_coefficient(lambda)?.arg())
}

fn wrap_to_pi(d: f64) -> f64 {
    d - TAU * (d / TAU).round()
}

fn phase_bisect(
    bracket: (f64, f64),
    phases: (f64, f64),
    target: f64,
    iters: usize,
) -> Result<f64, InftyError> {
    let (mut lo, mut hi) = bracket;
    let (mut phi_lo, mut phi_hi) = phases;
    debug_assert!(phi_lo > target && target >= phi_hi);
    for _ in 0..iters {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let raw = arg_m(-mid * mid)?;
        // Phases inside the bracket stay within pi of the endpoint mean, so
        // the branch is recovered locally instead of re-unwrapping from the
        // anchor.
        let guess = 0.5 * (phi_lo + phi_hi);
        let phi_mid = guess + wrap_to_pi(raw - guess);
        if phi_mid > target {
            lo = mid;
            phi_lo = phi_mid;
        } else {
            hi = mid;
            phi_hi = phi_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalues from the phase of the connection coefficient: the k-th root
/// solves arg m(-mu^2) = arg m(0) - 2 pi k along the continuous branch.
pub fn eigenvalues_by_phase(count: usize, opts: &PhaseOptions) -> Result<MuRoots, InftyError> {
    if !(opts.mu_anchor > 0.0 && opts.mu_anchor < opts.mu_max) {
        return Err(InftyError::InvalidInput(format!(
            "anchor {} and ceiling {} out of order",
            opts.mu_anchor, opts.mu_max
        )));
    }
    if !(opts.grid_step > 0.0 && opts.grid_step <= 0.5) {
        return Err(InftyError::InvalidInput(format!(
            "grid step {} outside (0, 0.5]",
            opts.grid_step
        )));
    }
    let mut roots = Vec::with_capacity(count);
    if count == 0 {
        return Ok(MuRoots { mu: roots, truncated: false });
    }
    let phase0 = arg_m(0.0)?;
    let step = opts.grid_step.exp();
    let mut mu_prev = opts.mu_anchor;
    let mut phi_prev = {
        let raw = arg_m(-mu_prev * mu_prev)?;
        phase0 + wrap_to_pi(raw - phase0)
    };
    let mut k = 1usize;
    while roots.len() < count && mu_prev < opts.mu_max {
        let mu_next = (mu_prev * step).min(opts.mu_max);
        let raw = arg_m(-mu_next * mu_next)?;
        let phi_next = phi_prev + wrap_to_pi(raw - phi_prev);
        if phi_next > phi_prev + 1e-9 {
            return Err(InftyError::InvalidInput(format!(
                "connection phase increased ({phi_prev} -> {phi_next}) near mu = {mu_next}; \
                 grid_step too coarse for unwrapping"
            )));
        }
        let mut target = phase0 - TAU * k as f64;
        while roots.len() < count && phi_next <= target && target < phi_prev {
            roots.push(phase_bisect(
                (mu_prev, mu_next),
                (phi_prev, phi_next),
                target,
                opts.bisect_iters,
            )?);
            k += 1;
            target = phase0 - TAU * k as f64;
        }
        mu_prev = mu_next;
        phi_prev = phi_next;
    }
    let truncated = roots.len() < count;
    Ok(MuRoots { mu: roots, truncated })
}

// ---------------------------------------------------------------------------
// Boundary test function.

#[derive(Debug, Clone, Copy)]
pub struct ChiOptions {
    /// Cutoff transition interval; chi vanishes above it. Must stay strictly
    /// inside (1/2, 1): the bracket route needs chi to solve the limit
    /// equation unmodified on an interval reaching the origin, and the known
    /// solution is only trusted below the light cone midpoint.
    pub cutoff: (f64, f64),
    /// Offset of the series handover at the rho = 1 end.
    pub eps: f64,
    /// Inner end of the shot solution; bracket samples live just above it.
    pub rho_min: f64,
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub series_terms: usize,
    /// Overall multiple, irrelevant to every spectral quantity; exposed so
    /// invariance under it is testable.
    pub scale: f64,
}

impl Default for ChiOptions {
    fn default() -> Self {
        ChiOptions {
            cutoff: (0.55, 0.8),
            eps: 1e-4,
            rho_min: 1e-6,
            ode_rel: 1e-11,
            ode_abs: 1e-14,
            series_terms: 24,
            scale: 1.0,
        }
    }
}

/// The boundary test function: the zero-energy solution recessive at the
/// light cone (behaving like (1 - rho)^{1/2}, the branch without the
/// logarithm), multiplied by a smooth cutoff that kills it before rho = 1 so
/// that brackets against it are taken at the origin only.
pub struct Chi {
    leg: Leg,
    series: FrobeniusExpansion,
    /// Rescales series values onto the leg normalization at the handover.
    junction: f64,
    eps: f64,
    rho_min: f64,
    cutoff: (f64, f64),
    scale: f64,
}

impl Chi {
    /// The underlying exact solution (no cutoff): (value, derivative).
    pub fn tilde(&self, rho: f64) -> (f64, f64) {
        assert!(
            rho >= self.rho_min && rho < 1.0,
            "rho = {rho} outside the resolved interval [{}, 1)",
            self.rho_min
        );
        if rho >= 1.0 - self.eps {
            let s = 1.0 - rho;
            let (v, dv) = self.series.eval(s);
            // Series runs in s = 1 - rho, so d/drho flips sign. The index is
            // real, hence so are the values.
            let f = self.scale * self.junction;
            (f * v.re, -f * dv.re)
        } else {
            let (u, du) = self.leg.eval(rho);
            (self.scale * u, self.scale * du)
        }
    }

    /// (value, derivative, second derivative) of the uncut solution, the
    /// second derivative coming from the dense interpolant of the first-order
    /// system rather than finite differences.
    pub fn tilde_with_second(&self, rho: f64) -> (f64, f64, f64) {
        assert!(rho >= self.rho_min && rho < 1.0 - self.eps);
        let (u, du, ddu) = self.leg.eval_with_second(rho);
        (self.scale * u, self.scale * du, self.scale * ddu)
    }

    fn zeta(&self, rho: f64) -> (f64, f64) {
        let (lo, hi) = self.cutoff;
        if rho <= lo {
            return (1.0, 0.0);
        }
        if rho >= hi {
            return (0.0, 0.0);
        }
        let d = hi - lo;
        let ta = (hi - rho) / d;
        let tb = (rho - lo) / d;
        let a = (-1.0 / ta).exp();
        let b = (-1.0 / tb).exp();
        // h(t) = exp(-1/t) has h'(t) = h(t)/t^2; chain rule in rho.
        let da = -a / (ta * ta * d);
        let db = b / (tb * tb * d);
        let s = a + b;
        (a / s, (da * b - a * db) / (s * s))
    }

    pub fn cutoff(&self) -> (f64, f64) {
        self.cutoff
    }

    pub fn value(&self, rho: f64) -> f64 {
        if rho >= self.cutoff.1 {
            return 0.0;
        }
        self.zeta(rho).0 * self.tilde(rho).0
    }

    pub fn value_and_derivative(&self, rho: f64) -> (f64, f64) {
        if rho >= self.cutoff.1 {
            return (0.0, 0.0);
        }
        let (z, dz) = self.zeta(rho);
        let (u, du) = self.tilde(rho);
        (z * u, z * du + dz * u)
    }
}

fn limiting_options(opts: &ChiOptions) -> SpectrumOptions {
    SpectrumOptions {
        match_point: opts.rho_min,
        ode_rel: opts.ode_rel,
        ode_abs: opts.ode_abs,
        series_terms: opts.series_terms,
        eps: opts.eps,
        ..SpectrumOptions::default()
    }
}

pub fn chi_boundary_function(opts: &ChiOptions) -> Result<Chi, InftyError> {
    let (lo, hi) = opts.cutoff;
    if !(0.5 < lo && lo < hi && hi < 1.0) {
        return Err(InftyError::BadCutoff { lo, hi });
    }
    if !(opts.rho_min > 0.0 && opts.rho_min < 0.4 && opts.eps > 0.0 && opts.eps < 0.1) {
        return Err(InftyError::InvalidInput(format!(
            "rho_min = {}, eps = {} out of range",
            opts.rho_min, opts.eps
        )));
    }
    if opts.scale == 0.0 || !opts.scale.is_finite() {
        return Err(InftyError::InvalidInput("scale must be finite and nonzero".into()));
    }
    let op = SlpOperator::limiting(1).map_err(from_slp)?;
    let sopts = limiting_options(opts);
    // mu = 0: the indicial exponents at rho = 1 collapse to the double root
    // 1/2; the power-series branch built here is exactly the log-free one.
    let leg = right_leg(&op, 0.0, &sopts, true).map_err(from_slp)?;
    let series = op
        .boundary_singular_ode(0.0, opts.series_terms)
        .series_solution(Complex64::new(0.5, 0.0), opts.series_terms)?;
    let (sv, _) = series.eval(opts.eps);
    let (lu, _) = leg.eval(1.0 - opts.eps);
    if sv.re == 0.0 || !lu.is_finite() {
        return Err(InftyError::InvalidInput(
            "degenerate handover between series and shot solution".into(),
        ));
    }
    Ok(Chi {
        leg,
        series,
        junction: lu / sv.re,
        eps: opts.eps,
        rho_min: opts.rho_min,
        cutoff: opts.cutoff,
        scale: opts.scale,
    })
}

// ---------------------------------------------------------------------------
// Bracket route.

/// Lagrange bracket [u_mu, chi] = p (u chi' - u' chi) evaluated in the limit
/// rho -> 0, where u_mu is the solution recessive at the light cone for
/// lambda = -mu^2. Vanishes exactly at eigenvalues. The limit exists because
/// both factors solve the same equation up to the lambda term, making the
/// bracket derivative integrable; it is read off at the innermost sample
/// after checking the samples have settled.
pub fn lagrange_bracket_at_zero(mu: f64, chi: &Chi, opts: &ChiOptions) -> Result<f64, InftyError> {
    Ok(lagrange_bracket_scaled(mu, chi, opts)?.0)
}

/// Bracket limit together with the magnitude it would have without
/// cancellation between its two terms, the natural yardstick for "how close
/// to zero" the bracket is.
pub fn lagrange_bracket_scaled(
    mu: f64,
    chi: &Chi,
    opts: &ChiOptions,
) -> Result<(f64, f64), InftyError> {
    if !(mu > 0.0) {
        return Err(InftyError::InvalidInput(format!("mu must be positive, got {mu}")));
    }
    let op = SlpOperator::limiting(1).map_err(from_slp)?;
    let sopts = limiting_options(opts);
    let leg = right_leg(&op, mu, &sopts, true).map_err(from_slp)?;

    let n_samples = 7usize;
    let ratio = (1e-3_f64 / opts.rho_min).powf(1.0 / (n_samples - 1) as f64);
    let mut w = Vec::with_capacity(n_samples);
    let mut crossref = 0.0_f64;
    for j in 0..n_samples {
        let rho = opts.rho_min * ratio.powi(j as i32);
        let (u, du) = leg.eval(rho);
        let (cv, cdv) = chi.tilde(rho);
        let p = rho * rho;
        w.push(p * (u * cdv - du * cv));
        if j == 0 {
            // The settling test is relative to this, so it stays meaningful
            // when mu sits near a root and every sample is small.
            crossref = p * (u.abs() * cdv.abs() + du.abs() * cv.abs());
        }
    }
    let spread = (w[0] - w[1]).abs();
    if spread > 1e-3 * crossref + 1e-300 {
        return Err(InftyError::BracketNotConvergent { spread });
    }
    Ok((w[0], crossref))
}

/// Eigenvalues as sign changes of the bracket along a geometric mu scan.
pub fn eigenvalues_by_bracket(
    count: usize,
    mu_range: (f64, f64),
    scan_ratio: f64,
    chi: &Chi,
    opts: &ChiOptions,
) -> Result<MuRoots, InftyError> {
    if !(mu_range.0 > 0.0 && mu_range.0 < mu_range.1 && scan_ratio > 1.0) {
        return Err(InftyError::InvalidInput(format!(
            "bad scan window ({}, {}) x{}",
            mu_range.0, mu_range.1, scan_ratio
        )));
    }
    let mut roots = Vec::with_capacity(count);
    if count == 0 {
        return Ok(MuRoots { mu: roots, truncated: false });
    }
    let mut mu_prev = mu_range.0;
    let mut w_prev = lagrange_bracket_at_zero(mu_prev, chi, opts)?;
    while roots.len() < count && mu_prev < mu_range.1 {
        let mu_next = (mu_prev * scan_ratio).min(mu_range.1);
        let w_next = lagrange_bracket_at_zero(mu_next, chi, opts)?;
        if w_prev == 0.0 {
            roots.push(mu_prev);
        } else if w_prev * w_next < 0.0 {
            let (mut lo, mut hi) = (mu_prev, mu_next);
            let mut w_lo = w_prev;
            while hi - lo > 1e-9 * hi {
                let mid = 0.5 * (lo + hi);
                let w_mid = lagrange_bracket_at_zero(mid, chi, opts)?;
                if w_mid == 0.0 {
                    lo = mid;
                    hi = mid;
                } else if w_mid * w_lo > 0.0 {
                    lo = mid;
                    w_lo = w_mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        mu_prev = mu_next;
        w_prev = w_next;
    }
    let truncated = roots.len() < count;
    Ok(MuRoots { mu: roots, truncated })
}

/// Sampled eigenfunction at an eigenvalue mu, weighted-norm one, positive
/// near the light cone. At an exact eigenvalue the recessive leg already
/// satisfies the origin condition, so no matching is involved; calling this
/// away from an eigenvalue yields the recessive solution, not an
/// eigenfunction.
pub fn eigenfunction(mu: f64, opts: &ChiOptions) -> Result<SampledFunction, InftyError> {
    if !(mu > 0.0) {
        return Err(InftyError::InvalidInput(format!("mu must be positive, got {mu}")));
    }
    let op = SlpOperator::limiting(1).map_err(from_slp)?;
    let sopts = limiting_options(opts);
    let leg = right_leg(&op, mu, &sopts, true).map_err(from_slp)?;
    // Mirror of the boundary offset the leg was actually started with.
    let eps_b = opts.eps.min(0.5 / mu.max(1.0));
    let hi = 1.0 - eps_b;

    // Dense geometric sampling on the left: limit-circle solutions keep
    // oscillating in ln(rho) all the way down, so resolution must be uniform
    // on that scale.
    let mut mesh = Vec::new();
    let g1 = (0.1_f64 / opts.rho_min).ln();
    for j in 0..1536 {
        mesh.push(opts.rho_min * (g1 * j as f64 / 1536.0).exp());
    }
    for j in 0..1024 {
        mesh.push(0.1 + 0.8 * j as f64 / 1024.0);
    }
    let g2 = (0.1_f64 / eps_b).ln();
    for j in 0..=512 {
        mesh.push(1.0 - 0.1 * (-g2 * j as f64 / 512.0).exp());
    }
    mesh.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let sign = if leg.eval(1.0 - 2.0 * eps_b).0 < 0.0 { -1.0 } else { 1.0 };
    let (norm_sq, _) =
        weighted_inner_product(&|r| leg.eval(r).0, &|r| leg.eval(r).0, opts.rho_min, hi, 1e-10);
    if !(norm_sq > 0.0 && norm_sq.is_finite()) {
        return Err(InftyError::InvalidInput(format!(
            "eigenfunction normalization failed: |u|^2 = {norm_sq}"
        )));
    }
    let scale = sign / norm_sq.sqrt();
    let mut y = Vec::with_capacity(mesh.len());
    let mut dy = Vec::with_capacity(mesh.len());
    for &r in &mesh {
        let (u, du) = leg.eval(r);
        y.push(scale * u);
        dy.push(scale * du);
    }
    SampledFunction::new(mesh, y, dy).map_err(InftyError::InvalidInput)
}
