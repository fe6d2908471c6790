//! Adaptive explicit Runge-Kutta integration with dense output and event
//! location.
//!
//! One method, fixed by design: the Dormand-Prince 5(4) embedded pair with
//! its standard quartic interpolant. Order five is enough for every solver
//! path in this crate once tolerances are tight, the dense output is free
//! (no extra stages), and having exactly one integrator keeps the shooting
//! and spectral code honest about where discretization error comes from.
//!
//! Integration direction follows the sign of `interval.1 - interval.0`;
//! backward integration is used heavily by the right-to-left shooting legs.
//! Step-size underflow is reported as an error carrying the reach point: the
//! profile shooter relies on it to reject parameters whose trajectories blow
//! up before the far endpoint.

use crate::error::OdeError;

/// Initial value problem specification. `dimension` is implied by
/// `initial_state`; tolerances are scalar and apply per component through a
/// weighted RMS error norm.
pub struct IvpSpec<'a> {
    pub rhs: &'a dyn Fn(f64, &[f64], &mut [f64]),
    pub interval: (f64, f64),
    pub initial_state: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl<'a> IvpSpec<'a> {
    fn validate(&self) -> Result<(), OdeError> {
        let (a, b) = self.interval;
        if !a.is_finite() || !b.is_finite() || a == b {
            return Err(OdeError::InvalidInput(format!(
                "interval ({a}, {b}) must be finite with distinct endpoints"
            )));
        }
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(OdeError::InvalidInput("tolerances must be positive".into()));
        }
        if self.initial_state.is_empty() {
            return Err(OdeError::InvalidInput("empty initial state".into()));
        }
        if self.initial_state.iter().any(|x| !x.is_finite()) {
            return Err(OdeError::InvalidInput("non-finite initial state".into()));
        }
        Ok(())
    }
}

/// An event to watch during integration: a scalar function of (t, y) whose
/// sign changes are located on the dense interpolant of the accepting step.
pub struct EventSpec<'a> {
    pub function: &'a dyn Fn(f64, &[f64]) -> f64,
    /// Stop the integration at the first located crossing.
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct EventHit {
    /// Index into the `EventSpec` slice.
    pub which: usize,
    pub t: f64,
    pub state: Vec<f64>,
}

const MAX_STEPS_DEFAULT: usize = 40_000_000;

/// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
/// Error coefficients (b - bhat).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
/// Dense-output coefficients for the quartic continuous extension.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Per-step dense coefficients: y(t0 + theta h) =
/// r0 + theta (r1 + (1-theta) (r2 + theta (r3 + (1-theta) r4))).
/// `span` rescales the node interval onto the polynomial's parameter when a
/// terminal event truncated the step (the polynomial always spans the full
/// attempted step).
#[derive(Debug, Clone)]
struct StepInterp {
    r: [Vec<f64>; 5],
    span: f64,
}

impl StepInterp {
    fn eval_into(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for i in 0..out.len() {
            out[i] = self.r[0][i]
                + theta
                    * (self.r[1][i]
                        + th1 * (self.r[2][i] + theta * (self.r[3][i] + th1 * self.r[4][i])));
        }
    }

    /// d/dtheta of the interpolant (divide by h for d/dt).
    fn eval_deriv_into(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for i in 0..out.len() {
            let d34 = self.r[3][i] + th1 * self.r[4][i];
            out[i] = self.r[1][i]
                + (1.0 - 2.0 * theta) * (self.r[2][i] + theta * d34)
                + theta * th1 * (self.r[3][i] + (1.0 - 2.0 * theta) * self.r[4][i]);
        }
    }
}

/// Continuous solution on the integration interval: step nodes plus one
/// interpolant per step. Evaluation at a node reproduces the stored state
/// (the interpolant is exact at both step ends by construction).
#[derive(Debug, Clone)]
pub struct DenseSolution {
    /// Step nodes, monotone in integration direction (len = steps + 1).
    nodes: Vec<f64>,
    steps: Vec<StepInterp>,
    dim: usize,
}

impl DenseSolution {
    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.steps.len();
        let forward = self.nodes[n] >= self.nodes[0];
        // Binary search for the step containing t.
        let (mut lo, mut hi) = (0usize, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let inside = if forward { t >= self.nodes[mid] } else { t <= self.nodes[mid] };
            if inside {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.nodes[lo + 1] - self.nodes[lo];
        let u = if h == 0.0 { 0.0 } else { (t - self.nodes[lo]) / h };
        (lo, u.clamp(0.0, 1.0) * self.steps[lo].span)
    }

    /// Evaluate the solution at `t`, which must lie within the covered span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let (k, theta) = self.locate(t);
        self.steps[k].eval_into(theta, out);
    }

    /// Evaluate state and its t-derivative at `t`.
    pub fn eval_with_derivative(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let (k, theta) = self.locate(t);
        // Polynomial parameter runs over the attempted step, which the node
        // interval covers a `span` fraction of.
        let h_poly = (self.nodes[k + 1] - self.nodes[k]) / self.steps[k].span;
        let mut y = vec![0.0; self.dim];
        let mut dy = vec![0.0; self.dim];
        self.steps[k].eval_into(theta, &mut y);
        self.steps[k].eval_deriv_into(theta, &mut dy);
        for d in dy.iter_mut() {
            *d /= h_poly;
        }
        (y, dy)
    }

    /// Scale the represented solution by a constant (valid because the
    /// interpolant is linear in the stored step data). Used when gluing
    /// rescaled shooting legs back together.
    pub fn scale(&mut self, a: f64) {
        for s in &mut self.steps {
            for r in &mut s.r {
                for x in r.iter_mut() {
                    *x *= a;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub t: f64,
    pub state: Vec<f64>,
    pub steps_taken: usize,
    pub dense: Option<DenseSolution>,
    pub events: Vec<EventHit>,
    /// Set when a terminal event cut the run short of `interval.1`.
    pub terminated_by_event: bool,
}

pub struct Options {
    pub dense: bool,
    pub max_steps: usize,
    /// Cap on |h|; zero means no cap.
    pub max_step: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { dense: false, max_steps: MAX_STEPS_DEFAULT, max_step: 0.0 }
    }
}

pub fn integrate(spec: &IvpSpec) -> Result<Solution, OdeError> {
    integrate_with(spec, &Options::default(), &[])
}

pub fn integrate_dense(spec: &IvpSpec) -> Result<Solution, OdeError> {
    integrate_with(spec, &Options { dense: true, ..Options::default() }, &[])
}

/// Core loop. Events are checked on every accepted step; crossings are
/// located by bisection on the dense interpolant of that step.
pub fn integrate_with(
    spec: &IvpSpec,
    opts: &Options,
    events: &[EventSpec],
) -> Result<Solution, OdeError> {
    spec.validate()?;
    let (t0, t1) = spec.interval;
    let dir = (t1 - t0).signum();
    let dim = spec.initial_state.len();
    let rhs = spec.rhs;

    let mut t = t0;
    let mut y = spec.initial_state.clone();
    let mut k1 = vec![0.0; dim];
    rhs(t, &y, &mut k1);

    let mut h = initial_step(spec, &y, &k1, dir);
    let mut stages = vec![vec![0.0; dim]; 7];
    let mut y_next = vec![0.0; dim];
    let mut y_err = vec![0.0; dim];
    let mut y_stage = vec![0.0; dim];

    let mut nodes = vec![t];
    let mut interps: Vec<StepInterp> = Vec::new();
    let mut hits: Vec<EventHit> = Vec::new();
    let mut ev_prev: Vec<f64> = events.iter().map(|e| (e.function)(t, &y)).collect();

    let mut steps_taken = 0usize;
    let mut terminated = false;

    while dir * (t1 - t) > 0.0 {
        if steps_taken >= opts.max_steps {
            return Err(OdeError::MaxStepsExceeded { t, max_steps: opts.max_steps });
        }
        // Trim the final step to land exactly on t1.
        if dir * (t + h - t1) > 0.0 {
            h = t1 - t;
        }
        if opts.max_step > 0.0 && h.abs() > opts.max_step {
            h = dir * opts.max_step;
        }
        if h.abs() <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(OdeError::StepSizeUnderflow { t, h });
        }

        stages[0].copy_from_slice(&k1);
        // Stage 2
        for i in 0..dim {
            y_stage[i] = y[i] + h * A21 * stages[0][i];
        }
        rhs(t + C2 * h, &y_stage, &mut stages[1]);
        // Stage 3
        for i in 0..dim {
            y_stage[i] = y[i] + h * (A31 * stages[0][i] + A32 * stages[1][i]);
        }
        rhs(t + C3 * h, &y_stage, &mut stages[2]);
        // Stage 4
        for i in 0..dim {
            y_stage[i] =
                y[i] + h * (A41 * stages[0][i] + A42 * stages[1][i] + A43 * stages[2][i]);
        }
        rhs(t + C4 * h, &y_stage, &mut stages[3]);
        // Stage 5
        for i in 0..dim {
            y_stage[i] = y[i]
                + h * (A51 * stages[0][i]
                    + A52 * stages[1][i]
                    + A53 * stages[2][i]
                    + A54 * stages[3][i]);
        }
        rhs(t + C5 * h, &y_stage, &mut stages[4]);
        // Stage 6 (c = 1)
        for i in 0..dim {
            y_stage[i] = y[i]
                + h * (A61 * stages[0][i]
                    + A62 * stages[1][i]
                    + A63 * stages[2][i]
                    + A64 * stages[3][i]
                    + A65 * stages[4][i]);
        }
        rhs(t + h, &y_stage, &mut stages[5]);
        // Fifth-order solution, then stage 7 = f at the new point (FSAL).
        for i in 0..dim {
            y_next[i] = y[i]
                + h * (B1 * stages[0][i]
                    + B3 * stages[2][i]
                    + B4 * stages[3][i]
                    + B5 * stages[4][i]
                    + B6 * stages[5][i]);
        }
        rhs(t + h, &y_next, &mut stages[6]);
        for i in 0..dim {
            y_err[i] = h
                * (E1 * stages[0][i]
                    + E3 * stages[2][i]
                    + E4 * stages[3][i]
                    + E5 * stages[4][i]
                    + E6 * stages[5][i]
                    + E7 * stages[6][i]);
        }

        let mut err = 0.0;
        let mut finite = true;
        for i in 0..dim {
            if !y_next[i].is_finite() {
                finite = false;
                break;
            }
            let sc = spec.abs_tol + spec.rel_tol * y[i].abs().max(y_next[i].abs());
            let e = y_err[i] / sc;
            err += e * e;
        }
        err = (err / dim as f64).sqrt();

        if !finite {
            // Treat like a hard rejection; if h is already tiny, report.
            let h_new = 0.25 * h;
            if h_new.abs() <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(OdeError::NonFiniteState { t });
            }
            h = h_new;
            continue;
        }

        if err <= 1.0 {
            // Accepted.
            steps_taken += 1;
            let interp = build_interp(&y, &y_next, &stages, h, dim);

            // Event handling on this step.
            let mut cut: Option<(f64, usize)> = None;
            for (ei, ev) in events.iter().enumerate() {
                let g1 = (ev.function)(t + h, &y_next);
                let g0 = ev_prev[ei];
                if g0 == 0.0 {
                    ev_prev[ei] = g1;
                    continue;
                }
                if g0.signum() != g1.signum() && g1 != 0.0 || g1 == 0.0 {
                    let theta = locate_crossing(ev.function, &interp, t, h, dim);
                    let te = t + theta * h;
                    let mut ye = vec![0.0; dim];
                    interp.eval_into(theta, &mut ye);
                    hits.push(EventHit { which: ei, t: te, state: ye });
                    if ev.terminal && cut.is_none_or(|(th, _)| theta < th) {
                        cut = Some((theta, ei));
                    }
                }
                ev_prev[ei] = g1;
            }

            if let Some((theta, _)) = cut {
                let te = t + theta * h;
                let mut ye = vec![0.0; dim];
                interp.eval_into(theta, &mut ye);
                if opts.dense && theta > 0.0 {
                    nodes.push(te);
                    interps.push(StepInterp { span: theta, ..interp });
                }
                t = te;
                y = ye;
                terminated = true;
                break;
            }

            if opts.dense {
                nodes.push(t + h);
                interps.push(interp);
            }
            t += h;
            std::mem::swap(&mut y, &mut y_next);
            k1.copy_from_slice(&stages[6]);
        }

        // PI-free standard controller.
        let scale = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= scale;
    }

    let dense = if opts.dense {
        Some(DenseSolution { nodes, steps: interps, dim })
    } else {
        None
    };
    Ok(Solution { t, state: y, steps_taken, dense, events: hits, terminated_by_event: terminated })
}

fn build_interp(y0: &[f64], y1: &[f64], k: &[Vec<f64>], h: f64, dim: usize) -> StepInterp {
    let mut r0 = vec![0.0; dim];
    let mut r1 = vec![0.0; dim];
    let mut r2 = vec![0.0; dim];
    let mut r3 = vec![0.0; dim];
    let mut r4 = vec![0.0; dim];
    for i in 0..dim {
        let dy = y1[i] - y0[i];
        let bspl = h * k[0][i] - dy;
        r0[i] = y0[i];
        r1[i] = dy;
        r2[i] = bspl;
        r3[i] = dy - h * k[6][i] - bspl;
        r4[i] = h
            * (D1 * k[0][i]
                + D3 * k[2][i]
                + D4 * k[3][i]
                + D5 * k[4][i]
                + D6 * k[5][i]
                + D7 * k[6][i]);
    }
    StepInterp { r: [r0, r1, r2, r3, r4], span: 1.0 }
}

fn locate_crossing(
    g: &dyn Fn(f64, &[f64]) -> f64,
    interp: &StepInterp,
    t: f64,
    h: f64,
    dim: usize,
) -> f64 {
    let mut buf = vec![0.0; dim];
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    interp.eval_into(lo, &mut buf);
    let mut glo = g(t + lo * h, &buf);
    if glo == 0.0 {
        return 0.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        interp.eval_into(mid, &mut buf);
        let gm = g(t + mid * h, &buf);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Conservative automatic initial step (refined immediately by the
/// controller, so only the order of magnitude matters).
fn initial_step(spec: &IvpSpec, y: &[f64], f: &[f64], dir: f64) -> f64 {
    let span = (spec.interval.1 - spec.interval.0).abs();
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..y.len() {
        let sc = spec.abs_tol + spec.rel_tol * y[i].abs();
        d0 = d0.max((y[i] / sc).abs());
        d1 = d1.max((f[i] / sc).abs());
    }
    let h0 = if d1 <= 1e-10 { 1e-6 * span } else { 0.01 * (d0.max(1.0) / d1) };
    dir * h0.min(0.1 * span).max(1e-12 * span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_rhs(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[0];
    }

    #[test]
    fn exponential_hits_e_to_tolerance() {
        let spec = IvpSpec {
            rhs: &exp_rhs,
            interval: (0.0, 1.0),
            initial_state: vec![1.0],
            rel_tol: 1e-12,
            abs_tol: 1e-14,
        };
        let sol = integrate(&spec).unwrap();
        assert!((sol.state[0] - std::f64::consts::E).abs() < 1e-11);
    }

    #[test]
    fn backward_integration_works() {
        let spec = IvpSpec {
            rhs: &exp_rhs,
            interval: (1.0, 0.0),
            initial_state: vec![std::f64::consts::E],
            rel_tol: 1e-12,
            abs_tol: 1e-14,
        };
        let sol = integrate(&spec).unwrap();
        assert!((sol.state[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn tightening_tolerance_reduces_endpoint_error() {
        // err(tol) should scale roughly linearly with tol for a
        // proportional controller; demand at least a factor 5 per 100x.
        let mut errs = Vec::new();
        for tol in [1e-5, 1e-7, 1e-9] {
            let spec = IvpSpec {
                rhs: &exp_rhs,
                interval: (0.0, 2.0),
                initial_state: vec![1.0],
                rel_tol: tol,
                abs_tol: tol * 1e-2,
            };
            let sol = integrate(&spec).unwrap();
            errs.push((sol.state[0] - (2.0f64).exp()).abs());
        }
        assert!(errs[1] < errs[0] / 5.0, "errors {errs:?}");
        assert!(errs[2] < errs[1] / 5.0, "errors {errs:?}");
    }

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn harmonic_oscillator_energy_drift_small() {
        let spec = IvpSpec {
            rhs: &oscillator,
            interval: (0.0, 10.0 * std::f64::consts::PI),
            initial_state: vec![1.0, 0.0],
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        };
        let sol = integrate(&spec).unwrap();
        let e = sol.state[0] * sol.state[0] + sol.state[1] * sol.state[1];
        assert!((e - 1.0).abs() < 1e-8, "energy drift {}", (e - 1.0).abs());
    }

    #[test]
    fn dense_output_reproduces_nodes_and_interpolates() {
        let spec = IvpSpec {
            rhs: &oscillator,
            interval: (0.0, 6.0),
            initial_state: vec![0.0, 1.0],
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        };
        let sol = integrate_dense(&spec).unwrap();
        let dense = sol.dense.as_ref().unwrap();
        // Node states equal interpolant ends.
        for &tn in dense.nodes() {
            let y = dense.eval(tn);
            assert!((y[0] - tn.sin()).abs() < 1e-9);
        }
        // Off-node evaluation matches the true solution to interpolant order.
        let mut t = 0.05;
        while t < 6.0 {
            let (y, dy) = dense.eval_with_derivative(t);
            assert!((y[0] - t.sin()).abs() < 1e-8, "value at {t}");
            assert!((dy[0] - t.cos()).abs() < 1e-7, "derivative at {t}");
            t += 0.234;
        }
    }

    #[test]
    fn dense_evaluation_is_order_independent() {
        let spec = IvpSpec {
            rhs: &oscillator,
            interval: (0.0, 3.0),
            initial_state: vec![0.0, 1.0],
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        };
        let sol = integrate_dense(&spec).unwrap();
        let dense = sol.dense.as_ref().unwrap();
        let pts: Vec<f64> = (0..50).map(|i| 3.0 * (i as f64 + 0.5) / 50.0).collect();
        let forward: Vec<f64> = pts.iter().map(|&t| dense.eval(t)[0]).collect();
        let backward: Vec<f64> = pts.iter().rev().map(|&t| dense.eval(t)[0]).collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn event_located_and_terminal_stops() {
        // sin crosses zero at pi.
        let ev = EventSpec { function: &|_t, y: &[f64]| y[0], terminal: true };
        let spec = IvpSpec {
            rhs: &oscillator,
            interval: (0.5, 6.0),
            initial_state: vec![0.5f64.sin(), 0.5f64.cos()],
            rel_tol: 1e-11,
            abs_tol: 1e-13,
        };
        let sol = integrate_with(&spec, &Options::default(), &[ev]).unwrap();
        assert!(sol.terminated_by_event);
        assert!((sol.t - std::f64::consts::PI).abs() < 1e-9, "event at {}", sol.t);
    }

    #[test]
    fn blow_up_reports_step_underflow() {
        // y' = y^2 from y(0)=1 blows up at t=1.
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0] * y[0];
        };
        let spec = IvpSpec {
            rhs: &rhs,
            interval: (0.0, 2.0),
            initial_state: vec![1.0],
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        };
        match integrate(&spec) {
            Err(OdeError::StepSizeUnderflow { t, .. }) | Err(OdeError::NonFiniteState { t }) => {
                assert!((t - 1.0).abs() < 1e-3, "blow-up reported at {t}");
            }
            other => panic!("expected blow-up error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_interval() {
        let spec = IvpSpec {
            rhs: &exp_rhs,
            interval: (1.0, 1.0),
            initial_state: vec![1.0],
            rel_tol: 1e-8,
            abs_tol: 1e-10,
        };
        assert!(matches!(integrate(&spec), Err(OdeError::InvalidInput(_))));
    }
}
