//! Adaptive explicit Runge-Kutta 4(5) integration (Dormand-Prince pair) with
//! a quartic dense-output interpolant and bisection-based root location for
//! state events.
//!
//! The stepper is deliberately self-contained: event handling in the
//! simulator needs exact control over step truncation, state resets and
//! re-priming, which is awkward to thread through a general-purpose solver
//! interface.

use thiserror::Error;

/// Error-control and event-location settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance per component.
    pub rel_tol: f64,
    /// Absolute tolerance per component.
    pub abs_tol: f64,
    /// Hard cap on the step size (s).
    pub max_step: f64,
    /// Event time location tolerance (s).
    pub event_tol: f64,
    /// Velocity magnitude accepted as "at an extremum" (m/s).
    pub vel_tol: f64,
    /// Steps below this size abort the run (s).
    pub min_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-5,
            abs_tol: 1e-8,
            // 50 steps per period of the fastest anticipated drive (110 Hz).
            max_step: 1.0 / (50.0 * 110.0),
            event_tol: 1e-9,
            vel_tol: 1e-6,
            min_step: 1e-15,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("step size underflow at t = {t:.9e} (h = {h:.3e} s)")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("event function has no sign change over the bracket")]
    NoSignChange,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (identical to the last tableau row; first-same-as-last).
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded fourth-order weights.
const BH: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
/// Dense-output weights for the quartic correction term.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Step-size controller bounds: growth/shrink factor is clamped to this range.
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;
const SAFETY: f64 = 0.9;

/// Continuous extension of one accepted step over `[t0, t1]`.
///
/// `eval` reproduces the step endpoints exactly and is fifth-order accurate
/// in the interior.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn dim(&self) -> usize {
        self.rcont[0].len()
    }

    /// Interpolated state at `t` (clamped to the step interval).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let theta = ((t - self.t0) / self.span()).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        for i in 0..self.dim() {
            out[i] = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + theta1
                            * (self.rcont[2][i]
                                + theta * (self.rcont[3][i] + theta1 * self.rcont[4][i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_component(&self, idx: usize, t: f64) -> f64 {
        let theta = ((t - self.t0) / self.span()).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        self.rcont[0][idx]
            + theta
                * (self.rcont[1][idx]
                    + theta1
                        * (self.rcont[2][idx]
                            + theta * (self.rcont[3][idx] + theta1 * self.rcont[4][idx])))
    }
}

/// Counters for diagnostics and regression checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

/// The adaptive stepper. `rhs(t, y, dy)` writes the derivative into `dy`.
pub struct Dopri5<F> {
    rhs: F,
    pub t: f64,
    pub y: Vec<f64>,
    h: f64,
    cfg: SolverConfig,
    k: [Vec<f64>; 7],
    /// Derivative at (t, y) carried over from the last accepted step.
    fsal_valid: bool,
    pub stats: StepStats,
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Dopri5<F> {
    pub fn new(rhs: F, t0: f64, y0: Vec<f64>, cfg: SolverConfig) -> Self {
        let n = y0.len();
        Self {
            rhs,
            t: t0,
            y: y0,
            h: cfg.max_step.min(1e-4),
            cfg,
            k: std::array::from_fn(|_| vec![0.0; n]),
            fsal_valid: false,
            stats: StepStats::default(),
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Overwrite the state (event handlers, mode changes). Invalidates the
    /// carried-over derivative.
    pub fn set_state(&mut self, t: f64, y: &[f64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        self.fsal_valid = false;
    }

    /// Mutable access to the state vector; invalidates the carried-over
    /// derivative since the caller may change it.
    pub fn y_mut(&mut self) -> &mut [f64] {
        self.fsal_valid = false;
        &mut self.y
    }

    /// The rhs must be re-evaluated after external parameter swaps (duty
    /// cycle, effective capacitance, load) even though y is untouched.
    pub fn invalidate_derivative(&mut self) {
        self.fsal_valid = false;
    }

    /// Take one accepted step, not crossing `t_stop`. Returns `None` when the
    /// stepper is already at `t_stop` (within snapping distance).
    pub fn advance(&mut self, t_stop: f64) -> Result<Option<DenseStep>, SolverError> {
        let snap = 1e-14 * t_stop.abs().max(1.0);
        if t_stop - self.t <= snap {
            self.t = t_stop;
            return Ok(None);
        }

        if !self.fsal_valid {
            let (k0, rest) = self.k.split_at_mut(1);
            let _ = rest;
            (self.rhs)(self.t, &self.y, &mut k0[0]);
            self.stats.rhs_evals += 1;
            self.fsal_valid = true;
        }

        loop {
            let proposal = self.h.min(self.cfg.max_step);
            let h = proposal.min(t_stop - self.t);
            let truncated = h < proposal;
            if h < self.cfg.min_step {
                return Err(SolverError::StepSizeUnderflow { t: self.t, h });
            }

            // Stages 2..7 (stage 1 is the carried-over derivative).
            for s in 1..7 {
                for i in 0..self.y.len() {
                    let mut acc = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[j][i];
                    }
                    self.y_stage[i] = self.y[i] + h * acc;
                }
                let t_s = self.t + C[s] * h;
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                (self.rhs)(t_s, &self.y_stage, &mut tail[0]);
                self.stats.rhs_evals += 1;
            }

            // Fifth-order solution and embedded error estimate.
            let mut err_sq = 0.0;
            for i in 0..self.y.len() {
                let mut acc5 = 0.0;
                let mut acc_err = 0.0;
                for s in 0..7 {
                    acc5 += B[s] * self.k[s][i];
                    acc_err += (B[s] - BH[s]) * self.k[s][i];
                }
                self.y_new[i] = self.y[i] + h * acc5;
                let scale =
                    self.cfg.abs_tol + self.cfg.rel_tol * self.y[i].abs().max(self.y_new[i].abs());
                let e = h * acc_err / scale;
                err_sq += e * e;
            }
            let err = (err_sq / self.y.len() as f64).sqrt();

            if err <= 1.0 || h <= self.cfg.min_step * 2.0 {
                let factor = if err > 0.0 {
                    (SAFETY * err.powf(-0.2)).clamp(FACTOR_MIN, FACTOR_MAX)
                } else {
                    FACTOR_MAX
                };
                let dense = self.build_dense(h);
                self.t += h;
                std::mem::swap(&mut self.y, &mut self.y_new);
                // First-same-as-last: stage 7 sits at (t1, y1).
                self.k.swap(0, 6);
                self.fsal_valid = true;
                // A step cut short by t_stop says nothing about the error at
                // full length; keep the standing proposal in that case.
                if !truncated {
                    self.h = (h * factor).min(self.cfg.max_step);
                }
                self.stats.accepted += 1;
                return Ok(Some(dense));
            }

            self.stats.rejected += 1;
            let factor = (SAFETY * err.powf(-0.2)).clamp(FACTOR_MIN, 1.0);
            self.h = h * factor;
        }
    }

    fn build_dense(&self, h: f64) -> DenseStep {
        let n = self.y.len();
        let mut rcont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
        for i in 0..n {
            let ydiff = self.y_new[i] - self.y[i];
            let bspl = h * self.k[0][i] - ydiff;
            rcont[0][i] = self.y[i];
            rcont[1][i] = ydiff;
            rcont[2][i] = bspl;
            rcont[3][i] = ydiff - h * self.k[6][i] - bspl;
            let mut acc = 0.0;
            for s in 0..7 {
                acc += D[s] * self.k[s][i];
            }
            rcont[4][i] = h * acc;
        }
        DenseStep {
            t0: self.t,
            t1: self.t + h,
            rcont,
        }
    }
}

/// Locate a sign change of `g` inside a dense-output interval by bisection.
///
/// Returns the bracket endpoint past the crossing, within `tol` seconds of
/// the true root. Errors if `g` has the same sign at both step ends.
pub fn locate_event<G>(dense: &DenseStep, g: G, tol: f64) -> Result<f64, SolverError>
where
    G: Fn(f64, &[f64]) -> f64,
{
    let mut buf = vec![0.0; dense.dim()];
    let eval = |t: f64, buf: &mut Vec<f64>| {
        dense.eval_into(t, buf);
        g(t, buf)
    };
    let mut a = dense.t0;
    let mut b = dense.t1;
    let ga = eval(a, &mut buf);
    let gb = eval(b, &mut buf);
    if ga == 0.0 {
        return Ok(a);
    }
    if ga * gb > 0.0 {
        return Err(SolverError::NoSignChange);
    }
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let gm = eval(mid, &mut buf);
        if gm == 0.0 {
            return Ok(mid);
        }
        if ga * gm < 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}
