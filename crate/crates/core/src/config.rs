//! Flat `key = value` configuration with dotted section prefixes.
//!
//! Every key is optional and falls back to the built-in defaults, so an
//! empty file is a valid config. Values are plain SI floats (no unit
//! suffixes), booleans are `true`/`false`, and `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::params::HarvesterParams;
use crate::sca::BANK_STAGES;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid config: {0}")]
    Validation(String),
}

/// Run-level switches that sit outside the physical parameter structs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub duration: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub retune_period: f64,
    pub noise_enabled: bool,
    pub sece_enabled: bool,
    pub buck_enabled: bool,
    pub mppt_enabled: bool,
    pub initial_duty: f64,
    /// Drive frequency for the constant-frequency scenarios.
    pub f_drive_hz: f64,
    /// Lookup table consumed by the adaptive scenarios.
    pub lut_path: Option<PathBuf>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration: 5.0,
            seed: 1,
            sample_rate_hz: 10e3,
            retune_period: 50e-3,
            noise_enabled: true,
            sece_enabled: true,
            buck_enabled: true,
            mppt_enabled: true,
            initial_duty: 0.1,
            f_drive_hz: 100.0,
            lut_path: None,
        }
    }
}

/// Frequency grid and per-cell settling time for table construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutBuildSettings {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub step_hz: f64,
    pub cell_duration: f64,
}

impl Default for LutBuildSettings {
    fn default() -> Self {
        Self {
            f_min_hz: 90.0,
            f_max_hz: 110.0,
            step_hz: 1.0,
            cell_duration: 0.5,
        }
    }
}

/// Duty-sweep settings for the frozen-state maximum power search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub window: f64,
    pub duty_step: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            window: 0.5,
            duty_step: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub params: HarvesterParams,
    pub sim: SimSettings,
    pub lut: LutBuildSettings,
    pub oracle: OracleSettings,
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| ConfigError::InvalidValue {
        line,
        key: key.to_string(),
        msg: format!("`{v}` is not a number"),
    })
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>().map_err(|_| ConfigError::InvalidValue {
        line,
        key: key.to_string(),
        msg: format!("`{v}` is not a non-negative integer"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            msg: format!("`{v}` is not `true` or `false`"),
        }),
    }
}

fn parse_stages(line: usize, key: &str, v: &str) -> Result<[f64; BANK_STAGES], ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != BANK_STAGES {
        return Err(ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            msg: format!("expected {BANK_STAGES} comma-separated values, got {}", parts.len()),
        });
    }
    let mut out = [0.0; BANK_STAGES];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_f64(line, key, part)?;
    }
    Ok(out)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse_str(&text, base)
    }

    /// Parse config text; relative `sim.lut_path` resolves against `base_dir`.
    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: body.to_string(),
                });
            };
            let key = key.trim();
            let v = value.trim();
            cfg.apply(line, key, v, base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, line: usize, key: &str, v: &str, base_dir: &Path) -> Result<(), ConfigError> {
        let p = &mut self.params;
        match key {
            "mech.m" => p.mech.m = parse_f64(line, key, v)?,
            "mech.c" => p.mech.c = parse_f64(line, key, v)?,
            "mech.k_s" => p.mech.k_s = parse_f64(line, key, v)?,

            "bw.alpha" => p.bw.alpha = parse_f64(line, key, v)?,
            "bw.a" => p.bw.a = parse_f64(line, key, v)?,
            "bw.beta" => p.bw.beta = parse_f64(line, key, v)?,
            "bw.gamma" => p.bw.gamma = parse_f64(line, key, v)?,
            "bw.n" => p.bw.n = parse_f64(line, key, v)?,
            "bw.z_ref" => p.bw.z_ref = parse_f64(line, key, v)?,

            "elec.theta" => p.elec.theta = parse_f64(line, key, v)?,
            // One knob for the transducer capacitance keeps the electrical
            // model and the bank bypass consistent.
            "elec.c_p" => {
                let c = parse_f64(line, key, v)?;
                p.elec.c_p = c;
                p.bank.c_p = c;
            }

            "exc.f0" => p.exc.f0 = parse_f64(line, key, v)?,
            "exc.noise_rms" => p.exc.noise_rms = parse_f64(line, key, v)?,
            "exc.noise_cutoff_hz" => p.exc.noise_cutoff_hz = parse_f64(line, key, v)?,

            "sece.l_sece" => p.sece.l_sece = parse_f64(line, key, v)?,
            "sece.c_rect" => p.sece.c_rect = parse_f64(line, key, v)?,
            "sece.v_diode" => p.sece.v_diode = parse_f64(line, key, v)?,
            "sece.eta" => p.sece.eta = parse_f64(line, key, v)?,
            "sece.arm_threshold_z" => p.sece.arm_threshold_z = parse_f64(line, key, v)?,

            "bank.stages" => p.bank.stages = parse_stages(line, key, v)?,

            "power.c_storage" => p.power.c_storage = parse_f64(line, key, v)?,
            "power.r_load" => p.power.r_load = parse_f64(line, key, v)?,
            "power.r_load_after_step" => p.power.r_load_after_step = parse_f64(line, key, v)?,
            "power.t_load_step" => p.power.t_load_step = parse_f64(line, key, v)?,
            "power.l_buck" => p.power.l_buck = parse_f64(line, key, v)?,
            "power.c_out" => p.power.c_out = parse_f64(line, key, v)?,
            "power.d_min" => p.power.d_min = parse_f64(line, key, v)?,
            "power.d_max" => p.power.d_max = parse_f64(line, key, v)?,

            "mppt.k_focv" => p.mppt.k_focv = parse_f64(line, key, v)?,
            "mppt.control_period" => p.mppt.control_period = parse_f64(line, key, v)?,
            "mppt.step_init" => p.mppt.step_init = parse_f64(line, key, v)?,
            "mppt.step_min" => p.mppt.step_min = parse_f64(line, key, v)?,
            "mppt.step_max" => p.mppt.step_max = parse_f64(line, key, v)?,
            "mppt.step_gain" => p.mppt.step_gain = parse_f64(line, key, v)?,
            "mppt.power_drop_ratio" => p.mppt.power_drop_ratio = parse_f64(line, key, v)?,
            "mppt.focv_holdoff" => p.mppt.focv_holdoff = parse_f64(line, key, v)?,

            "solver.rel_tol" => p.solver.rel_tol = parse_f64(line, key, v)?,
            "solver.abs_tol" => p.solver.abs_tol = parse_f64(line, key, v)?,
            "solver.max_step" => p.solver.max_step = parse_f64(line, key, v)?,
            "solver.event_tol" => p.solver.event_tol = parse_f64(line, key, v)?,
            "solver.vel_tol" => p.solver.vel_tol = parse_f64(line, key, v)?,
            "solver.min_step" => p.solver.min_step = parse_f64(line, key, v)?,

            "sim.duration" => self.sim.duration = parse_f64(line, key, v)?,
            "sim.seed" => self.sim.seed = parse_u64(line, key, v)?,
            "sim.sample_rate_hz" => self.sim.sample_rate_hz = parse_f64(line, key, v)?,
            "sim.retune_period" => self.sim.retune_period = parse_f64(line, key, v)?,
            "sim.noise_enabled" => self.sim.noise_enabled = parse_bool(line, key, v)?,
            "sim.sece_enabled" => self.sim.sece_enabled = parse_bool(line, key, v)?,
            "sim.buck_enabled" => self.sim.buck_enabled = parse_bool(line, key, v)?,
            "sim.mppt_enabled" => self.sim.mppt_enabled = parse_bool(line, key, v)?,
            "sim.initial_duty" => self.sim.initial_duty = parse_f64(line, key, v)?,
            "sim.f_drive_hz" => self.sim.f_drive_hz = parse_f64(line, key, v)?,
            "sim.lut_path" => {
                let raw = PathBuf::from(v);
                self.sim.lut_path = Some(if raw.is_absolute() {
                    raw
                } else {
                    base_dir.join(raw)
                });
            }

            "lut.f_min_hz" => self.lut.f_min_hz = parse_f64(line, key, v)?,
            "lut.f_max_hz" => self.lut.f_max_hz = parse_f64(line, key, v)?,
            "lut.step_hz" => self.lut.step_hz = parse_f64(line, key, v)?,
            "lut.cell_duration" => self.lut.cell_duration = parse_f64(line, key, v)?,

            "oracle.window" => self.oracle.window = parse_f64(line, key, v)?,
            "oracle.duty_step" => self.oracle.duty_step = parse_f64(line, key, v)?,

            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.params;
        let err = |msg: String| Err(ConfigError::Validation(msg));
        if !(self.sim.duration > 0.0) {
            return err(format!("sim.duration must be positive, got {}", self.sim.duration));
        }
        if !(self.sim.sample_rate_hz > 0.0) {
            return err("sim.sample_rate_hz must be positive".into());
        }
        if !(self.sim.retune_period > 0.0) {
            return err("sim.retune_period must be positive".into());
        }
        if !(p.mech.m > 0.0 && p.mech.k_s > 0.0 && p.mech.c >= 0.0) {
            return err("mech.m and mech.k_s must be positive, mech.c non-negative".into());
        }
        if !(0.0..=1.0).contains(&p.bw.alpha) {
            return err(format!("bw.alpha must lie in [0, 1], got {}", p.bw.alpha));
        }
        if !(p.bw.n >= 1.0) {
            return err(format!("bw.n must be at least 1, got {}", p.bw.n));
        }
        if !(p.bw.beta + p.bw.gamma > 0.0) {
            return err("bw.beta + bw.gamma must be positive".into());
        }
        if !(p.bw.z_ref > 0.0 && p.bw.a > 0.0) {
            return err("bw.z_ref and bw.a must be positive".into());
        }
        if !(p.elec.theta >= 0.0) {
            return err("elec.theta must be non-negative".into());
        }
        if !(p.elec.c_p > 0.0) {
            return err("elec.c_p must be positive".into());
        }
        if !(p.sece.c_rect > 0.0 && p.sece.l_sece > 0.0) {
            return err("sece.c_rect and sece.l_sece must be positive".into());
        }
        if !(p.sece.v_diode >= 0.0 && p.sece.arm_threshold_z >= 0.0) {
            return err("sece.v_diode and sece.arm_threshold_z must be non-negative".into());
        }
        if !(p.sece.eta > 0.0 && p.sece.eta <= 1.0) {
            return err(format!("sece.eta must lie in (0, 1], got {}", p.sece.eta));
        }
        if p.bank.stages.iter().any(|&s| !(s > 0.0)) {
            return err("bank.stages entries must all be positive".into());
        }
        if !(p.power.c_storage > 0.0 && p.power.l_buck > 0.0 && p.power.c_out > 0.0) {
            return err("power.c_storage, power.l_buck, power.c_out must be positive".into());
        }
        if !(p.power.r_load > 0.0 && p.power.r_load_after_step > 0.0) {
            return err("load resistances must be positive".into());
        }
        if !(p.power.d_min > 0.0 && p.power.d_min < p.power.d_max && p.power.d_max <= 1.0) {
            return err(format!(
                "duty limits must satisfy 0 < d_min < d_max <= 1, got [{}, {}]",
                p.power.d_min, p.power.d_max
            ));
        }
        if !(p.mppt.control_period > 0.0) {
            return err("mppt.control_period must be positive".into());
        }
        if !(p.mppt.step_min > 0.0
            && p.mppt.step_min <= p.mppt.step_init
            && p.mppt.step_init <= p.mppt.step_max)
        {
            return err(format!(
                "duty steps must satisfy 0 < step_min <= step_init <= step_max, got {} / {} / {}",
                p.mppt.step_min, p.mppt.step_init, p.mppt.step_max
            ));
        }
        if !(0.0..=1.0).contains(&p.mppt.step_gain) {
            return err("mppt.step_gain must lie in [0, 1]".into());
        }
        if !(p.mppt.k_focv > 0.0 && p.mppt.k_focv < 1.0) {
            return err("mppt.k_focv must lie in (0, 1)".into());
        }
        if !(p.mppt.power_drop_ratio > 0.0 && p.mppt.power_drop_ratio < 1.0) {
            return err("mppt.power_drop_ratio must lie in (0, 1)".into());
        }
        if !(p.mppt.focv_holdoff >= 0.0) {
            return err("mppt.focv_holdoff must be non-negative".into());
        }
        let s = &p.solver;
        if !(s.rel_tol > 0.0 && s.abs_tol > 0.0 && s.max_step > 0.0 && s.event_tol > 0.0 && s.min_step > 0.0)
        {
            return err("solver tolerances and step bounds must all be positive".into());
        }
        if !(self.lut.f_min_hz < self.lut.f_max_hz) {
            return err("lut.f_min_hz must be below lut.f_max_hz".into());
        }
        if !(self.lut.step_hz > 0.0 && self.lut.cell_duration > 0.0) {
            return err("lut.step_hz and lut.cell_duration must be positive".into());
        }
        if !(self.oracle.window > 0.0) {
            return err("oracle.window must be positive".into());
        }
        if !(self.oracle.duty_step > 0.0 && self.oracle.duty_step <= 0.005) {
            return err(format!(
                "oracle.duty_step must lie in (0, 0.005], got {}",
                self.oracle.duty_step
            ));
        }
        Ok(())
    }

    /// Canonical dump of every key. Reparsing the dump reproduces the config
    /// exactly, and run reports embed it so results stay reproducible.
    pub fn echo(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: f64| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(&mut s, "mech.m", p.mech.m);
        kv(&mut s, "mech.c", p.mech.c);
        kv(&mut s, "mech.k_s", p.mech.k_s);
        kv(&mut s, "bw.alpha", p.bw.alpha);
        kv(&mut s, "bw.a", p.bw.a);
        kv(&mut s, "bw.beta", p.bw.beta);
        kv(&mut s, "bw.gamma", p.bw.gamma);
        kv(&mut s, "bw.n", p.bw.n);
        kv(&mut s, "bw.z_ref", p.bw.z_ref);
        kv(&mut s, "elec.theta", p.elec.theta);
        kv(&mut s, "elec.c_p", p.elec.c_p);
        kv(&mut s, "exc.f0", p.exc.f0);
        kv(&mut s, "exc.noise_rms", p.exc.noise_rms);
        kv(&mut s, "exc.noise_cutoff_hz", p.exc.noise_cutoff_hz);
        kv(&mut s, "sece.l_sece", p.sece.l_sece);
        kv(&mut s, "sece.c_rect", p.sece.c_rect);
        kv(&mut s, "sece.v_diode", p.sece.v_diode);
        kv(&mut s, "sece.eta", p.sece.eta);
        kv(&mut s, "sece.arm_threshold_z", p.sece.arm_threshold_z);
        let stages = p
            .bank
            .stages
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "bank.stages = {stages}");
        kv(&mut s, "power.c_storage", p.power.c_storage);
        kv(&mut s, "power.r_load", p.power.r_load);
        kv(&mut s, "power.r_load_after_step", p.power.r_load_after_step);
        kv(&mut s, "power.t_load_step", p.power.t_load_step);
        kv(&mut s, "power.l_buck", p.power.l_buck);
        kv(&mut s, "power.c_out", p.power.c_out);
        kv(&mut s, "power.d_min", p.power.d_min);
        kv(&mut s, "power.d_max", p.power.d_max);
        kv(&mut s, "mppt.k_focv", p.mppt.k_focv);
        kv(&mut s, "mppt.control_period", p.mppt.control_period);
        kv(&mut s, "mppt.step_init", p.mppt.step_init);
        kv(&mut s, "mppt.step_min", p.mppt.step_min);
        kv(&mut s, "mppt.step_max", p.mppt.step_max);
        kv(&mut s, "mppt.step_gain", p.mppt.step_gain);
        kv(&mut s, "mppt.power_drop_ratio", p.mppt.power_drop_ratio);
        kv(&mut s, "mppt.focv_holdoff", p.mppt.focv_holdoff);
        kv(&mut s, "solver.rel_tol", p.solver.rel_tol);
        kv(&mut s, "solver.abs_tol", p.solver.abs_tol);
        kv(&mut s, "solver.max_step", p.solver.max_step);
        kv(&mut s, "solver.event_tol", p.solver.event_tol);
        kv(&mut s, "solver.vel_tol", p.solver.vel_tol);
        kv(&mut s, "solver.min_step", p.solver.min_step);
        kv(&mut s, "sim.duration", self.sim.duration);
        let _ = writeln!(s, "sim.seed = {}", self.sim.seed);
        kv(&mut s, "sim.sample_rate_hz", self.sim.sample_rate_hz);
        kv(&mut s, "sim.retune_period", self.sim.retune_period);
        let _ = writeln!(s, "sim.noise_enabled = {}", self.sim.noise_enabled);
        let _ = writeln!(s, "sim.sece_enabled = {}", self.sim.sece_enabled);
        let _ = writeln!(s, "sim.buck_enabled = {}", self.sim.buck_enabled);
        let _ = writeln!(s, "sim.mppt_enabled = {}", self.sim.mppt_enabled);
        kv(&mut s, "sim.initial_duty", self.sim.initial_duty);
        kv(&mut s, "sim.f_drive_hz", self.sim.f_drive_hz);
        if let Some(path) = &self.sim.lut_path {
            let _ = writeln!(s, "sim.lut_path = {}", path.display());
        }
        kv(&mut s, "lut.f_min_hz", self.lut.f_min_hz);
        kv(&mut s, "lut.f_max_hz", self.lut.f_max_hz);
        kv(&mut s, "lut.step_hz", self.lut.step_hz);
        kv(&mut s, "lut.cell_duration", self.lut.cell_duration);
        kv(&mut s, "oracle.window", self.oracle.window);
        kv(&mut s, "oracle.duty_step", self.oracle.duty_step);
        s
    }
}
