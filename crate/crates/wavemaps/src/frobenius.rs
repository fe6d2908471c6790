//! Power-series solutions at regular singular points.
//!
//! A second-order equation u'' + P(t) u' + Q(t) u = 0 has a regular singular
//! point at t = 0 when tP and t^2 Q are analytic there. Solutions behave like
//! t^r times an analytic function, with r a root of the indicial polynomial
//! I(x) = x(x - 1) + p0 x + q0, where p0 = (tP)(0) and q0 = (t^2 Q)(0).
//!
//! Both singular endpoints of the radial problems in this crate are of this
//! type, and every shooting leg starts from a truncated expansion built here.
//! Indices may be complex (the limiting operator has a conjugate pair at the
//! origin), so coefficients are stored complex even when the input series are
//! real.
//!
//! Branch policy: when the requested index is the smaller root of a pair
//! separated by a positive integer, the recursion divides by zero at that
//! integer order and the true second solution carries a log term; we refuse
//! with [`FrobeniusError::LogarithmicBranch`]. A double root is fine: the
//! requested branch itself is log-free (the log appears only in the second
//! solution, which is never requested through this interface).

use num_complex::Complex64;

use crate::error::FrobeniusError;
use crate::series::Series;

/// Normal form of an equation near a regular singular point, in the local
/// variable t >= 0 measuring distance from the point. The two stored series
/// are t*P(t) and t^2*Q(t), which must be analytic at t = 0.
#[derive(Debug, Clone)]
pub struct SingularOde {
    /// Coordinate of the singular point in the original variable, kept for
    /// reporting; the solver works purely in t.
    pub point: f64,
    pub t_p: Series,
    pub t2_q: Series,
}

/// Indicial data at a singular point. `indices` is sorted by descending real
/// part, then descending imaginary part, so `.0` is always a valid start for
/// the recessive-at-the-endpoint shooting branch.
#[derive(Debug, Clone)]
pub struct SingularPointData {
    pub location: f64,
    pub indices: (Complex64, Complex64),
    /// The two roots coincide (within rounding).
    pub degenerate: bool,
}

impl SingularOde {
    fn validate(&self) -> Result<(), FrobeniusError> {
        if self.t_p.is_empty() || self.t2_q.is_empty() {
            return Err(FrobeniusError::InvalidInput(
                "coefficient series must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn indicial(&self, x: Complex64) -> Complex64 {
        let p0 = self.t_p.coeff(0);
        let q0 = self.t2_q.coeff(0);
        x * (x - 1.0) + p0 * x + q0
    }

    pub fn indicial_roots(&self) -> Result<SingularPointData, FrobeniusError> {
        self.validate()?;
        let p0 = self.t_p.coeff(0);
        let q0 = self.t2_q.coeff(0);
        // x^2 + (p0 - 1) x + q0 = 0
        let b = p0 - 1.0;
        let disc = b * b - 4.0 * q0;
        let (r1, r2) = if disc >= 0.0 {
            let s = disc.sqrt();
            // Stable quadratic: avoid cancellation in the smaller-magnitude root.
            let big = -0.5 * (b + b.signum() * s);
            let (x1, x2) = if b == 0.0 {
                (s / 2.0, -s / 2.0)
            } else {
                (big, q0 / big)
            };
            (Complex64::new(x1, 0.0), Complex64::new(x2, 0.0))
        } else {
            let s = (-disc).sqrt() / 2.0;
            (Complex64::new(-b / 2.0, s), Complex64::new(-b / 2.0, -s))
        };
        let scale = 1.0 + r1.norm().max(r2.norm());
        let degenerate = (r1 - r2).norm() < 1e-9 * scale;
        let (hi, lo) = if (r1.re, r1.im) >= (r2.re, r2.im) { (r1, r2) } else { (r2, r1) };
        Ok(SingularPointData { location: self.point, indices: (hi, lo), degenerate })
    }

    /// Build the truncated Frobenius expansion for the given indicial root.
    ///
    /// Coefficients satisfy c_0 = 1 and, for k >= 1,
    ///     c_k I(r + k) = -sum_{j<k} [ (r + j) p_{k-j} + q_{k-j} ] c_j .
    pub fn series_solution(
        &self,
        index: Complex64,
        n_terms: usize,
    ) -> Result<FrobeniusExpansion, FrobeniusError> {
        self.validate()?;
        if n_terms == 0 {
            return Err(FrobeniusError::InvalidInput("n_terms must be at least 1".into()));
        }
        let data = self.indicial_roots()?;
        let (r1, r2) = data.indices;
        let scale = 1.0 + index.norm_sqr();
        if self.indicial(index).norm() > 1e-8 * scale {
            return Err(FrobeniusError::NotAnIndex { index: index.re, r1: r1.re, r2: r2.re });
        }

        let mut coeffs = vec![Complex64::new(0.0, 0.0); n_terms];
        coeffs[0] = Complex64::new(1.0, 0.0);
        for k in 1..n_terms {
            let mut rhs = Complex64::new(0.0, 0.0);
            for j in 0..k {
                let p = self.t_p.coeff(k - j);
                let q = self.t2_q.coeff(k - j);
                if p != 0.0 || q != 0.0 {
                    rhs -= ((index + j as f64) * p + q) * coeffs[j];
                }
            }
            let denom = self.indicial(index + k as f64);
            let dscale = 1.0 + (index + k as f64).norm_sqr();
            if denom.norm() < 1e-8 * dscale {
                return Err(FrobeniusError::LogarithmicBranch {
                    index: index.re,
                    diff: k as f64,
                });
            }
            coeffs[k] = rhs / denom;
        }
        Ok(FrobeniusExpansion { index, coeffs })
    }
}

/// Truncated expansion u(t) = t^r sum_k c_k t^k with c_0 = 1.
#[derive(Debug, Clone)]
pub struct FrobeniusExpansion {
    pub index: Complex64,
    coeffs: Vec<Complex64>,
}

impl FrobeniusExpansion {
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Analytic part and its weighted derivative with t^r factored out:
    /// returns (S0, S1) with S0 = sum c_k t^k and S1 = (1/t) sum (r+k) c_k t^k,
    /// so that (u, u') = t^r (S0, S1). Shooting legs start from (S0, S1)
    /// directly; the overall t^r scale cancels from every matching condition.
    pub fn eval_scale_free(&self, t: f64) -> (Complex64, Complex64) {
        debug_assert!(t > 0.0, "expansion parameter must be positive");
        // Horner in t for both sums.
        let mut s0 = Complex64::new(0.0, 0.0);
        let mut s1 = Complex64::new(0.0, 0.0);
        for (k, &c) in self.coeffs.iter().enumerate().rev() {
            s0 = s0 * t + c;
            s1 = s1 * t + (self.index + k as f64) * c;
        }
        (s0, s1 / t)
    }

    /// Full value: (u, u') = t^r (S0, S1). Requires t > 0; the t^r factor is
    /// exp(r ln t) for complex r.
    pub fn eval(&self, t: f64) -> (Complex64, Complex64) {
        let (s0, s1) = self.eval_scale_free(t);
        let tr = (self.index * t.ln()).exp();
        (tr * s0, tr * s1)
    }

    /// Second derivative bundled with value and first derivative, for
    /// residual checks: u'' = t^{r-2} sum (r+k)(r+k-1) c_k t^k.
    pub fn eval_with_second(&self, t: f64) -> (Complex64, Complex64, Complex64) {
        let mut s0 = Complex64::new(0.0, 0.0);
        let mut s1 = Complex64::new(0.0, 0.0);
        let mut s2 = Complex64::new(0.0, 0.0);
        for (k, &c) in self.coeffs.iter().enumerate().rev() {
            let e = self.index + k as f64;
            s0 = s0 * t + c;
            s1 = s1 * t + e * c;
            s2 = s2 * t + e * (e - 1.0) * c;
        }
        let tr = (self.index * t.ln()).exp();
        (tr * s0, tr * s1 / t, tr * s2 / (t * t))
    }

    /// Real-valued start for problems with real index and real series.
    pub fn eval_scale_free_real(&self, t: f64) -> (f64, f64) {
        let (s0, s1) = self.eval_scale_free(t);
        debug_assert!(
            s0.im.abs() <= 1e-12 * (1.0 + s0.norm()) && s1.im.abs() <= 1e-12 * (1.0 + s1.norm()),
            "imaginary residue in a real-index expansion: {s0}, {s1}"
        );
        (s0.re, s1.re)
    }
}
