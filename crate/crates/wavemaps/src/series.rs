//! Dense truncated power series over f64. All operations truncate to the
//! shorter operand's length; a `Series` of length `m` represents coefficients
//! of t^0 .. t^(m-1) about some expansion point the caller keeps track of.
//!
//! This is deliberately minimal: just what the local-expansion machinery
//! (nonlinear profile germs, Frobenius coefficient series) needs.

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    c: Vec<f64>,
}

impl Series {
    pub fn new(c: Vec<f64>) -> Self {
        Series { c }
    }

    pub fn zeros(len: usize) -> Self {
        Series { c: vec![0.0; len] }
    }

    pub fn constant(value: f64, len: usize) -> Self {
        let mut c = vec![0.0; len];
        if len > 0 {
            c[0] = value;
        }
        Series { c }
    }

    /// The monomial a*t^k, truncated to `len` coefficients.
    pub fn monomial(a: f64, k: usize, len: usize) -> Self {
        let mut c = vec![0.0; len];
        if k < len {
            c[k] = a;
        }
        Series { c }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.c.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    pub fn truncate(mut self, len: usize) -> Self {
        self.c.truncate(len);
        self
    }

    pub fn add(&self, other: &Series) -> Series {
        let n = self.len().min(other.len());
        Series::new((0..n).map(|k| self.c[k] + other.c[k]).collect())
    }

    pub fn sub(&self, other: &Series) -> Series {
        let n = self.len().min(other.len());
        Series::new((0..n).map(|k| self.c[k] - other.c[k]).collect())
    }

    pub fn scale(&self, a: f64) -> Series {
        Series::new(self.c.iter().map(|x| a * x).collect())
    }

    pub fn mul(&self, other: &Series) -> Series {
        let n = self.len().min(other.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.c.iter().enumerate().take(n) {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.c.iter().enumerate().take(n - i) {
                out[i + j] += a * b;
            }
        }
        Series::new(out)
    }

    /// Multiply by t^k (shift up), keeping the original truncation length.
    pub fn shift_up(&self, k: usize) -> Series {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n.saturating_sub(k) {
            out[i + k] = self.c[i];
        }
        Series::new(out)
    }

    /// Divide by t^k. Errors in debug builds if low-order coefficients are
    /// not (numerically) zero; callers only use this on series with an exact
    /// zero of order >= k.
    pub fn shift_down(&self, k: usize) -> Series {
        debug_assert!(self.c.iter().take(k).all(|&x| x == 0.0 || x.abs() < 1e-300));
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in k..n {
            out[i - k] = self.c[i];
        }
        Series::new(out)
    }

    /// Reciprocal 1/self; requires a nonzero constant term.
    pub fn recip(&self) -> Series {
        let n = self.len();
        assert!(n > 0 && self.c[0] != 0.0, "reciprocal needs a unit constant term");
        let mut out = vec![0.0; n];
        out[0] = 1.0 / self.c[0];
        for k in 1..n {
            let mut acc = 0.0;
            for j in 0..k {
                acc += out[j] * self.c[k - j];
            }
            out[k] = -acc / self.c[0];
        }
        Series::new(out)
    }

    pub fn derivative(&self) -> Series {
        let n = self.len();
        let mut out = vec![0.0; n];
        for k in 1..n {
            out[k - 1] = self.c[k] * k as f64;
        }
        Series::new(out)
    }

    /// Horner evaluation at t.
    pub fn eval(&self, t: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
    }

    /// sin and cos of a series with zero constant term, via the coupled
    /// recurrences S' = f' C, C' = -f' S.
    pub fn sin_cos(&self) -> (Series, Series) {
        assert!(
            self.c.first().is_none_or(|&a| a == 0.0),
            "sin/cos composition needs a zero constant term"
        );
        let n = self.len();
        let mut s = vec![0.0; n];
        let mut c = vec![0.0; n];
        if n == 0 {
            return (Series::new(s), Series::new(c));
        }
        c[0] = 1.0;
        for m in 1..n {
            let mut ds = 0.0;
            let mut dc = 0.0;
            for j in 1..=m {
                let jf = j as f64 * self.c[j];
                ds += jf * c[m - j];
                dc += jf * s[m - j];
            }
            s[m] = ds / m as f64;
            c[m] = -dc / m as f64;
        }
        (Series::new(s), Series::new(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mul_matches_polynomial_product() {
        let a = Series::new(vec![1.0, 2.0, 3.0, 0.0]);
        let b = Series::new(vec![4.0, 5.0, 0.0, 0.0]);
        let p = a.mul(&b);
        assert_eq!(p.coeffs(), &[4.0, 13.0, 22.0, 15.0]);
    }

    #[test]
    fn recip_of_one_minus_t_is_geometric() {
        let a = Series::new(vec![1.0, -1.0, 0.0, 0.0, 0.0]);
        let r = a.recip();
        for k in 0..5 {
            assert!(close(r.coeff(k), 1.0, 1e-15));
        }
    }

    #[test]
    fn sin_cos_of_t_matches_taylor() {
        let t = Series::monomial(1.0, 1, 8);
        let (s, c) = t.sin_cos();
        assert!(close(s.coeff(1), 1.0, 1e-15));
        assert!(close(s.coeff(3), -1.0 / 6.0, 1e-15));
        assert!(close(s.coeff(5), 1.0 / 120.0, 1e-15));
        assert!(close(c.coeff(0), 1.0, 1e-15));
        assert!(close(c.coeff(2), -0.5, 1e-15));
        assert!(close(c.coeff(4), 1.0 / 24.0, 1e-15));
        assert!(close(c.coeff(6), -1.0 / 720.0, 1e-15));
    }

    #[test]
    fn sin_cos_of_general_series_satisfies_pythagoras() {
        let f = Series::new(vec![0.0, 0.7, -0.3, 0.11, 0.05, -0.02]);
        let (s, c) = f.sin_cos();
        let one = s.mul(&s).add(&c.mul(&c));
        assert!(close(one.coeff(0), 1.0, 1e-14));
        for k in 1..6 {
            assert!(close(one.coeff(k), 0.0, 1e-14), "coeff {k} = {}", one.coeff(k));
        }
    }

    #[test]
    fn eval_is_horner() {
        let a = Series::new(vec![2.0, -1.0, 0.5]);
        assert!(close(a.eval(2.0), 2.0 - 2.0 + 2.0, 1e-15));
    }
}
