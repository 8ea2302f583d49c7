//! Synchronous electric charge extraction stage: a full-bridge rectifier
//! feeding an intermediate capacitor that is dumped into bulk storage through
//! an inductive path each time the beam passes a displacement extremum.
//!
//! The inductive transfer is orders of magnitude faster than the mechanical
//! period, so it is modeled as an instantaneous event with a fixed transfer
//! efficiency rather than integrated in time.

/// Extraction-path constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeceParams {
    /// Transfer inductance (H).
    pub l_sece: f64,
    /// Intermediate rectifier capacitor (F).
    pub c_rect: f64,
    /// Forward drop per bridge diode (V).
    pub v_diode: f64,
    /// Fraction of the intermediate-capacitor energy that reaches storage.
    pub eta: f64,
    /// Minimum |z| at an extremum for extraction to fire (m).
    pub arm_threshold_z: f64,
}

impl Default for SeceParams {
    fn default() -> Self {
        Self {
            l_sece: 2.7e-3,
            c_rect: 10e-9,
            v_diode: 0.3,
            eta: 0.85,
            arm_threshold_z: 1e-5,
        }
    }
}

/// Conduction state of the bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiodeMode {
    Blocking,
    /// Positive piezo terminal conducting: V_p pinned to V_rect + 2*V_diode.
    PositiveConducting,
    /// Mirror branch: V_p pinned to -(V_rect + 2*V_diode).
    NegativeConducting,
}

/// Bridge mode implied by the instantaneous voltages.
pub fn rectifier_mode(v_p: f64, v_rect: f64, v_diode: f64) -> DiodeMode {
    let threshold = v_rect + 2.0 * v_diode;
    if v_p >= threshold {
        DiodeMode::PositiveConducting
    } else if v_p <= -threshold {
        DiodeMode::NegativeConducting
    } else {
        DiodeMode::Blocking
    }
}

/// Outcome of one extraction event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionResult {
    /// Energy held on the piezo and intermediate capacitors before transfer (J).
    pub e_available: f64,
    /// Energy deposited into storage (J).
    pub e_delivered: f64,
    /// Storage voltage after the deposit (V).
    pub v_storage_after: f64,
}

/// Flip both charged capacitors into storage through the pulsed inductor.
///
/// The switch closes at a displacement extremum and rings the piezo node and
/// the intermediate rail down to zero, so the available energy is the sum of
/// both capacitor energies. The deposit raises the storage energy by exactly
/// `eta * e_available`:
/// `V_storage' = sqrt(V_storage^2 + 2 * eta * e_available / C_storage)`.
pub fn extract_at_extremum(
    v_p: f64,
    c_effective: f64,
    v_rect: f64,
    c_rect: f64,
    v_storage: f64,
    c_storage: f64,
    eta: f64,
) -> ExtractionResult {
    let e_available = 0.5 * (c_effective * v_p * v_p + c_rect * v_rect * v_rect);
    let e_delivered = eta * e_available;
    let v_storage_after = (v_storage * v_storage + 2.0 * e_delivered / c_storage).sqrt();
    ExtractionResult {
        e_available,
        e_delivered,
        v_storage_after,
    }
}

/// Half period of the L-C transfer ringing (s): the duration the switch stays
/// closed, `pi * sqrt(L * C_rect)`.
pub fn lc_half_period(l: f64, c: f64) -> f64 {
    std::f64::consts::PI * (l * c).sqrt()
}

/// The instantaneous-event idealization holds when the transfer half period
/// is a small fraction of the drive period.
pub fn lc_transfer_period_ratio(l: f64, c: f64, f_drive_hz: f64) -> f64 {
    lc_half_period(l, c) * f_drive_hz
}
