//! Hybrid maximum-power-point tracker: a coarse duty jump toward a fixed
//! operating ratio whenever load power collapses below the tracked peak,
//! plus an adaptive perturb-and-observe hill climb between jumps.

/// Controller constants. All are soft tuning knobs, none are plant physics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpptConfig {
    /// Operating-ratio target for the coarse jump.
    pub k_focv: f64,
    /// Tick cadence (s).
    pub control_period: f64,
    /// Step magnitude right after a jump.
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
    /// Blend factor between the previous step and the power-error drive.
    pub step_gain: f64,
    /// Jump trigger: P below (1 - ratio) of the tracked peak.
    pub power_drop_ratio: f64,
    /// Minimum spacing between jumps (s).
    pub focv_holdoff: f64,
}

impl Default for MpptConfig {
    fn default() -> Self {
        Self {
            k_focv: 0.75,
            control_period: 10e-3,
            step_init: 0.01,
            step_min: 0.001,
            step_max: 0.05,
            step_gain: 0.5,
            power_drop_ratio: 0.2,
            // Spacing must exceed the storage settling time R(C_storage +
            // D^2 C_out)/D^2, else one load disturbance triggers a jump train.
            focv_holdoff: 1.0,
        }
    }
}

/// Measurements sampled at a controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpptMeasurement {
    pub v_storage: f64,
    pub v_out: f64,
    pub p_load: f64,
}

/// Mutable tracker state carried between ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpptState {
    pub duty: f64,
    /// Hill-climb direction, +1 or -1.
    pub direction: f64,
    pub last_p: f64,
    pub peak_p: f64,
    /// Current step magnitude.
    pub last_step: f64,
    pub t_last_jump: f64,
}

impl MpptState {
    pub fn new(initial_duty: f64, cfg: &MpptConfig) -> Self {
        Self {
            duty: initial_duty,
            direction: 1.0,
            last_p: 0.0,
            peak_p: 0.0,
            last_step: cfg.step_init,
            // Far enough in the past that the first trigger is never masked.
            t_last_jump: f64::NEG_INFINITY,
        }
    }
}

/// Outcome of one tick, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickAction {
    CoarseJump,
    HillClimb,
}

const POWER_EPS: f64 = 1e-12;
/// Relative power change saturating the step-size drive.
const DELTA_REF: f64 = 0.1;

/// Map a normalized power change into a step magnitude.
fn scale(delta_ratio: f64, cfg: &MpptConfig) -> f64 {
    let x = (delta_ratio / DELTA_REF).min(1.0);
    cfg.step_min + (cfg.step_max - cfg.step_min) * x
}

/// One controller update. `limits` is the converter's (d_min, d_max).
pub fn controller_tick(
    state: &mut MpptState,
    meas: MpptMeasurement,
    cfg: &MpptConfig,
    limits: (f64, f64),
    t: f64,
) -> TickAction {
    let (d_min, d_max) = limits;
    let p = meas.p_load;
    let collapsed = p < (1.0 - cfg.power_drop_ratio) * state.peak_p;
    let action = if collapsed && t - state.t_last_jump >= cfg.focv_holdoff {
        // Coarse repositioning: park the duty at the target operating ratio
        // and restart the climb from a fresh step.
        state.duty = cfg.k_focv.clamp(d_min, d_max);
        state.last_step = cfg.step_init;
        state.t_last_jump = t;
        state.peak_p = p;
        TickAction::CoarseJump
    } else {
        if p < state.last_p {
            state.direction = -state.direction;
        }
        let delta_ratio = (p - state.last_p).abs() / p.max(POWER_EPS);
        state.last_step = (cfg.step_gain * state.last_step
            + (1.0 - cfg.step_gain) * scale(delta_ratio, cfg))
        .clamp(cfg.step_min, cfg.step_max);
        state.duty = (state.duty + state.direction * state.last_step).clamp(d_min, d_max);
        TickAction::HillClimb
    };
    state.last_p = p;
    state.peak_p = state.peak_p.max(p);
    action
}

/// Ratio of achieved mean power to an externally supplied optimum.
pub fn mppt_efficiency(mean_power: f64, oracle_power: f64) -> f64 {
    mean_power / oracle_power
}
