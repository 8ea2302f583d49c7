//! Nonlinear electromechanical transducer model: a spring-mass-damper whose
//! restoring force blends a linear elastic branch with a Bouc-Wen hysteretic
//! branch, coupled to a piezoelectric port through a force-voltage term.

use thiserror::Error;

/// Lumped mechanical constants of the oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanicalParams {
    /// Effective mass (kg).
    pub m: f64,
    /// Viscous damping coefficient (N*s/m).
    pub c: f64,
    /// Nominal spring stiffness (N/m).
    pub k_s: f64,
}

impl Default for MechanicalParams {
    fn default() -> Self {
        Self {
            m: 0.01,
            c: 0.5,
            k_s: 4000.0,
        }
    }
}

impl MechanicalParams {
    /// Undamped natural frequency of the purely elastic oscillator (Hz).
    pub fn natural_frequency_hz(&self) -> f64 {
        (self.k_s / self.m).sqrt() / (2.0 * std::f64::consts::PI)
    }
}

/// Bouc-Wen hysteresis shape constants.
///
/// The internal variable `h` carries displacement units. `beta` and `gamma`
/// are dimensionless; they act on `h / z_ref`, so `z_ref` sets the
/// displacement scale at which the loop saturates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoucWenParams {
    /// Elastic/hysteretic blend: 1 = purely elastic, 0 = purely hysteretic.
    pub alpha: f64,
    /// Amplitude constant of the evolution law (dimensionless).
    pub a: f64,
    /// Loop shape constant (dimensionless, >= 0).
    pub beta: f64,
    /// Loop shape constant (dimensionless).
    pub gamma: f64,
    /// Sharpness exponent (>= 1).
    pub n: f64,
    /// Reference displacement scale for the hysteretic variable (m).
    pub z_ref: f64,
}

impl Default for BoucWenParams {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            a: 1.0,
            beta: 0.5,
            gamma: 0.5,
            n: 1.0,
            z_ref: 1e-3,
        }
    }
}

impl BoucWenParams {
    /// Ultimate bound on |h|: the evolution law cannot push the hysteretic
    /// variable past `z_ref * (a / (beta + gamma))^(1/n)`.
    pub fn h_bound(&self) -> f64 {
        self.z_ref * (self.a / (self.beta + self.gamma)).powf(1.0 / self.n)
    }
}

/// Piezoelectric port constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectricalParams {
    /// Force-voltage coupling factor (N/V, equivalently A*s/m).
    pub theta: f64,
    /// Intrinsic piezo capacitance (F).
    pub c_p: f64,
}

impl Default for ElectricalParams {
    fn default() -> Self {
        Self {
            theta: 2.0e-3,
            c_p: 15e-9,
        }
    }
}

/// Mechanical state triple.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MechState {
    /// Tip displacement (m).
    pub z: f64,
    /// Tip velocity (m/s).
    pub z_dot: f64,
    /// Bouc-Wen hysteretic displacement (m).
    pub h: f64,
}

/// Restoring force of the blended spring:
/// `alpha * k_s * z + (1 - alpha) * k_s * h`.
pub fn spring_force(z: f64, h: f64, k_s: f64, bw: &BoucWenParams) -> f64 {
    bw.alpha * k_s * z + (1.0 - bw.alpha) * k_s * h
}

/// Evolution rate of the hysteretic variable.
///
/// With `eta = h / z_ref`:
/// `dh/dt = a*z_dot - beta*|z_dot|*|eta|^(n-1)*eta - gamma*z_dot*|eta|^n`.
pub fn bouc_wen_rate(z_dot: f64, h: f64, bw: &BoucWenParams) -> f64 {
    let eta = h / bw.z_ref;
    let abs_eta = eta.abs();
    bw.a * z_dot
        - bw.beta * z_dot.abs() * abs_eta.powf(bw.n - 1.0) * eta
        - bw.gamma * z_dot * abs_eta.powf(bw.n)
}

/// Open-circuit charge balance: with no rectifier current the piezo voltage
/// slews at `theta * z_dot / c_effective`.
pub fn piezo_open_circuit_rate(theta: f64, z_dot: f64, c_effective: f64) -> f64 {
    theta * z_dot / c_effective
}

/// Time derivatives of the mechanical state under a drive force and a piezo
/// back-force `theta * v_p`.
pub fn mech_derivatives(
    state: &MechState,
    v_p: f64,
    f_drive: f64,
    mech: &MechanicalParams,
    bw: &BoucWenParams,
    theta: f64,
) -> (f64, f64, f64) {
    let f_spring = spring_force(state.z, state.h, mech.k_s, bw);
    let dz = state.z_dot;
    let dz_dot = (f_drive - mech.c * state.z_dot - f_spring - theta * v_p) / mech.m;
    let dh = bouc_wen_rate(state.z_dot, state.h, bw);
    (dz, dz_dot, dh)
}

/// One sample of a mechanical trajectory, used for loop-area post-processing.
#[derive(Debug, Clone, Copy)]
pub struct MechSample {
    pub t: f64,
    pub z: f64,
    pub z_dot: f64,
    pub h: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LoopAreaError {
    #[error("trajectory does not contain a full displacement cycle")]
    InsufficientCycle,
}

/// Net energy dissipated by the spring over the last full displacement cycle
/// of the trajectory (J), computed as the contour integral of
/// `F_spring dz` parameterized by time.
///
/// A cycle is delimited by consecutive upward zero crossings of `z`. The
/// crossing times are located by linear interpolation so the contour closes
/// cleanly; for a purely elastic spring the result vanishes to within
/// quadrature noise.
pub fn hysteresis_loop_area(
    samples: &[MechSample],
    k_s: f64,
    bw: &BoucWenParams,
) -> Result<f64, LoopAreaError> {
    let crossings = upward_crossings(samples);
    if crossings.len() < 2 {
        return Err(LoopAreaError::InsufficientCycle);
    }
    let (start, end) = (
        crossings[crossings.len() - 2],
        crossings[crossings.len() - 1],
    );

    // Integrand F_spring(t) * z_dot(t); trapezoid between the interpolated
    // cycle endpoints.
    let f_v = |s: &MechSample| spring_force(s.z, s.h, k_s, bw) * s.z_dot;
    let mut area = 0.0;
    let mut prev_t = start.t;
    let mut prev_fv = f_v(&start.state);
    for s in samples.iter().filter(|s| s.t > start.t && s.t < end.t) {
        let fv = f_v(s);
        area += 0.5 * (prev_fv + fv) * (s.t - prev_t);
        prev_t = s.t;
        prev_fv = fv;
    }
    area += 0.5 * (prev_fv + f_v(&end.state)) * (end.t - prev_t);
    Ok(area)
}

/// Dissipation estimate for the same cycle through the independent route
/// `integral (1 - alpha) * k_s * h * z_dot dt`.
pub fn hysteretic_branch_work(
    samples: &[MechSample],
    k_s: f64,
    bw: &BoucWenParams,
) -> Result<f64, LoopAreaError> {
    let crossings = upward_crossings(samples);
    if crossings.len() < 2 {
        return Err(LoopAreaError::InsufficientCycle);
    }
    let (start, end) = (
        crossings[crossings.len() - 2],
        crossings[crossings.len() - 1],
    );
    let branch = |s: &MechSample| (1.0 - bw.alpha) * k_s * s.h * s.z_dot;
    let mut work = 0.0;
    let mut prev_t = start.t;
    let mut prev_v = branch(&start.state);
    for s in samples.iter().filter(|s| s.t > start.t && s.t < end.t) {
        let v = branch(s);
        work += 0.5 * (prev_v + v) * (s.t - prev_t);
        prev_t = s.t;
        prev_v = v;
    }
    work += 0.5 * (prev_v + branch(&end.state)) * (end.t - prev_t);
    Ok(work)
}

#[derive(Clone, Copy)]
struct Crossing {
    t: f64,
    state: MechSample,
}

/// Upward zero crossings of z, linearly interpolated between samples.
fn upward_crossings(samples: &[MechSample]) -> Vec<Crossing> {
    let mut out = Vec::new();
    for pair in samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.z < 0.0 && b.z >= 0.0 && b.z_dot > 0.0 {
            let frac = -a.z / (b.z - a.z);
            let lerp = |x: f64, y: f64| x + frac * (y - x);
            let t = lerp(a.t, b.t);
            out.push(Crossing {
                t,
                state: MechSample {
                    t,
                    z: 0.0,
                    z_dot: lerp(a.z_dot, b.z_dot),
                    h: lerp(a.h, b.h),
                },
            });
        }
    }
    out
}
