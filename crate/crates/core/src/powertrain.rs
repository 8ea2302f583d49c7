//! Storage capacitor, averaged buck converter, and the stepped resistive
//! load. The buck is an ideal averaged model: duty cycle D commands the
//! conversion ratio, an inductor-current clamp emulates the freewheeling
//! diode at light load.

/// Downstream power-stage parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    /// Storage capacitor fed by the extraction pulses (F).
    pub c_storage: f64,
    /// Load before the scheduled step (ohm).
    pub r_load: f64,
    /// Load after the step (ohm).
    pub r_load_after_step: f64,
    /// When the load switches (s).
    pub t_load_step: f64,
    /// Buck inductance (H).
    pub l_buck: f64,
    /// Buck output capacitance (F).
    pub c_out: f64,
    /// Duty-cycle actuation range.
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            c_storage: 100e-6,
            r_load: 50e3,
            r_load_after_step: 10e3,
            t_load_step: 1.0,
            l_buck: 1e-3,
            c_out: 10e-6,
            d_min: 0.01,
            d_max: 0.95,
        }
    }
}

/// Active load resistance at time t. The simulation also schedules a hard
/// event at `t_load_step` so no integration step straddles the switch.
pub fn load_resistance(t: f64, p: &PowerParams) -> f64 {
    if t < p.t_load_step {
        p.r_load
    } else {
        p.r_load_after_step
    }
}

/// Averaged buck rates: (dV_storage, di_L, dV_out).
///
/// di_L = (D*V_storage - V_out)/L with the current clamped at zero when the
/// converter cannot push it positive (discontinuous conduction). The buck
/// draws D*i_L from the storage capacitor.
pub fn buck_derivatives(
    v_storage: f64,
    i_l: f64,
    v_out: f64,
    duty: f64,
    r_load: f64,
    p: &PowerParams,
) -> (f64, f64, f64) {
    let drive = duty * v_storage - v_out;
    let (i_l_eff, di_l) = if i_l <= 0.0 && drive <= 0.0 {
        (0.0, 0.0)
    } else {
        (i_l.max(0.0), drive / p.l_buck)
    };
    let dv_storage = -duty * i_l_eff / p.c_storage;
    let dv_out = (i_l_eff - v_out / r_load) / p.c_out;
    (dv_storage, di_l, dv_out)
}

pub fn delivered_power(v_out: f64, r_load: f64) -> f64 {
    v_out * v_out / r_load
}

/// Energy held in the downstream stage.
pub fn chain_stored_energy(v_storage: f64, i_l: f64, v_out: f64, p: &PowerParams) -> f64 {
    0.5 * p.c_storage * v_storage * v_storage
        + 0.5 * p.l_buck * i_l * i_l
        + 0.5 * p.c_out * v_out * v_out
}

/// Trapezoidal integral of sampled load power over the run.
pub fn net_energy(samples: &[(f64, f64)]) -> f64 {
    samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn zero_duty_leaves_storage_alone() {
        let p = PowerParams::default();
        let (dvs, dil, _) = buck_derivatives(40.0, 0.0, 5.0, 0.0, p.r_load, &p);
        assert_eq!(dvs, 0.0);
        assert!(dil <= 0.0);
    }

    #[test]
    fn dc_equilibrium_has_zero_rates() {
        let p = PowerParams::default();
        let (v_storage, duty, r) = (50.0, 0.5, 10e3);
        let v_out = duty * v_storage;
        let i_l = v_out / r;
        let (dvs, dil, dvo) = buck_derivatives(v_storage, i_l, v_out, duty, r, &p);
        assert_abs_diff_eq!(dil, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dvo, 0.0, epsilon = 1e-9);
        // Equilibrium still drains the storage capacitor.
        assert_relative_eq!(dvs, -duty * i_l / p.c_storage, max_relative = 1e-12);
        assert_abs_diff_eq!(delivered_power(v_out, r), 62.5e-3, epsilon = 1e-12);
    }

    #[test]
    fn diode_clamp_blocks_reverse_current() {
        let p = PowerParams::default();
        // Converter cannot lift the current: output voltage exceeds D*V_storage.
        let (dvs, dil, _) = buck_derivatives(10.0, 0.0, 20.0, 0.5, p.r_load, &p);
        assert_eq!(dil, 0.0);
        assert_eq!(dvs, 0.0);
        // Positive current still decays normally.
        let (_, dil, _) = buck_derivatives(10.0, 0.01, 20.0, 0.5, p.r_load, &p);
        assert!(dil < 0.0);
    }

    #[test]
    fn load_step_schedule() {
        let p = PowerParams::default();
        assert_eq!(load_resistance(0.5, &p), 50e3);
        assert_eq!(load_resistance(1.0, &p), 10e3);
        assert_eq!(load_resistance(4.999, &p), 10e3);
    }

    #[test]
    fn power_scales_quadratically() {
        assert_eq!(delivered_power(0.0, 10e3), 0.0);
        assert_abs_diff_eq!(delivered_power(50.0, 10e3), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(
            delivered_power(100.0, 10e3),
            4.0 * delivered_power(50.0, 10e3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn net_energy_trapezoid() {
        assert_eq!(net_energy(&[(0.0, 0.0), (5.0, 0.0)]), 0.0);
        let flat: Vec<(f64, f64)> = (0..=50).map(|i| (i as f64 * 0.1, 0.1)).collect();
        assert_abs_diff_eq!(net_energy(&flat), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn net_energy_converges_under_refinement() {
        let p = |t: f64| 0.1 + 0.05 * (2.0 * std::f64::consts::PI * t).sin();
        let sample = |n: usize| -> Vec<(f64, f64)> {
            (0..=n).map(|i| 5.0 * i as f64 / n as f64).map(|t| (t, p(t))).collect()
        };
        let coarse = net_energy(&sample(500));
        let fine = net_energy(&sample(1000));
        assert!((fine - coarse).abs() < 1e-3 * fine.abs());
    }

    /// Integrate the buck alone with a stiff source and check that input
    /// energy splits exactly into stored energy plus load dissipation.
    #[test]
    fn averaged_converter_conserves_energy() {
        let p = PowerParams::default();
        let duty = 0.5;
        let r = 10e3;
        let v_storage = 50.0;
        let mut y = [0.0f64, 0.0]; // i_L, V_out
        let dt = 1e-6;
        let mut e_in = 0.0;
        let mut e_load = 0.0;
        let rhs = |y: &[f64; 2]| {
            let (_, dil, dvo) = buck_derivatives(v_storage, y[0], y[1], duty, r, &p);
            [dil, dvo]
        };
        for _ in 0..200_000 {
            let k1 = rhs(&y);
            let k2 = rhs(&[y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
            let k3 = rhs(&[y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
            let k4 = rhs(&[y[0] + dt * k3[0], y[1] + dt * k3[1]]);
            let mid = [
                y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
            // Trapezoid on the power integrals.
            e_in += 0.5 * dt * duty * v_storage * (y[0].max(0.0) + mid[0].max(0.0));
            e_load += 0.5 * dt * (delivered_power(y[1], r) + delivered_power(mid[1], r));
            y = mid;
        }
        let stored = 0.5 * p.l_buck * y[0] * y[0] + 0.5 * p.c_out * y[1] * y[1];
        assert_relative_eq!(e_in, e_load + stored, max_relative = 1e-4);
        // And it reached the expected operating point.
        assert_relative_eq!(y[1], duty * v_storage, max_relative = 1e-3);
    }

    /// With no extraction input, an ideal buck discharges the storage with
    /// time constant R*C_storage/(2 D^2) for the squared voltage.
    #[test]
    fn storage_discharge_time_constant() {
        let p = PowerParams::default();
        let duty = 0.95;
        let r = 10e3;
        // Start on the DC operating point so the output filter does not ring.
        let mut y = [30.0f64, duty * 30.0 / r, duty * 30.0]; // V_storage, i_L, V_out
        let dt = 1e-6;
        let t_end = 0.3;
        let rhs = |y: &[f64; 3]| {
            let (dvs, dil, dvo) = buck_derivatives(y[0], y[1], y[2], duty, r, &p);
            [dvs, dil, dvo]
        };
        let steps = (t_end / dt) as usize;
        for _ in 0..steps {
            let k1 = rhs(&y);
            let k2 = rhs(&std::array::from_fn(|i| y[i] + 0.5 * dt * k1[i]));
            let k3 = rhs(&std::array::from_fn(|i| y[i] + 0.5 * dt * k2[i]));
            let k4 = rhs(&std::array::from_fn(|i| y[i] + dt * k3[i]));
            for i in 0..3 {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        // Slow-mode rate D^2 / (R (C_storage + D^2 C_out)); the output
        // capacitor counts toward storage through the conversion ratio.
        let lambda = duty * duty / (r * (p.c_storage + duty * duty * p.c_out));
        let v_pred = 30.0 * (-t_end * lambda).exp();
        assert_relative_eq!(y[0], v_pred, max_relative = 1e-3);
    }
}
