//! Experiment orchestration: named scenarios, full runs with CSV and report
//! output, characterization sweeps for table construction, frozen-state duty
//! oracles, and report comparison.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::excitation::DriveProfile;
use crate::mppt::MpptState;
use crate::params::HarvesterParams;
use crate::sca::{build_lut, enumerate_settings, LutBuild, LutTable, ScaError};
use crate::sim::{
    run_sim, EventCounts, RunOutput, Sample, ScaMode, SimError, SimOptions, Snapshot, CSV_HEADER,
    IDX_E_LOAD, IDX_V_STORAGE,
};
use crate::transducer::{hysteresis_loop_area, MechSample};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sca(#[from] ScaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unknown scenario `{name}`; available: {available}")]
    UnknownScenario { name: String, available: String },
    #[error("scenario `{name}` needs a lookup table; set sim.lut_path or run build-lut first")]
    LutRequired { name: String },
    #[error("reports are not comparable: {0}")]
    MismatchedScenarios(String),
    #[error("cannot parse report {path}: {msg}")]
    ReportParse { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A named experiment: drive profile plus array mode. Everything else comes
/// from the config.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub drive: DriveProfile,
    pub adaptive: bool,
}

pub const SCENARIO_NAMES: [&str; 4] = ["control", "adaptive", "constant", "constant-adaptive"];

pub fn scenario_by_name(name: &str, cfg: &RunConfig) -> Result<Scenario, HarnessError> {
    let constant = DriveProfile::Constant {
        f_hz: cfg.sim.f_drive_hz,
    };
    match name {
        "control" => Ok(Scenario {
            name: "control",
            drive: DriveProfile::VariablePath,
            adaptive: false,
        }),
        "adaptive" => Ok(Scenario {
            name: "adaptive",
            drive: DriveProfile::VariablePath,
            adaptive: true,
        }),
        "constant" => Ok(Scenario {
            name: "constant",
            drive: constant,
            adaptive: false,
        }),
        "constant-adaptive" => Ok(Scenario {
            name: "constant-adaptive",
            drive: constant,
            adaptive: true,
        }),
        _ => Err(HarnessError::UnknownScenario {
            name: name.to_string(),
            available: SCENARIO_NAMES.join(", "),
        }),
    }
}

/// Assemble run options for a scenario, loading the lookup table when the
/// scenario needs one.
pub fn sim_options(cfg: &RunConfig, scenario: &Scenario) -> Result<SimOptions, HarnessError> {
    let sca_mode = if scenario.adaptive {
        let path = cfg.sim.lut_path.as_ref().ok_or_else(|| HarnessError::LutRequired {
            name: scenario.name.to_string(),
        })?;
        ScaMode::Adaptive(LutTable::load_csv(path)?)
    } else {
        ScaMode::FixedBypass
    };
    Ok(SimOptions {
        drive: scenario.drive,
        duration: cfg.sim.duration,
        seed: cfg.sim.seed,
        noise_enabled: cfg.sim.noise_enabled,
        sece_enabled: cfg.sim.sece_enabled,
        buck_enabled: cfg.sim.buck_enabled,
        mppt_enabled: cfg.sim.mppt_enabled,
        initial_duty: cfg.sim.initial_duty,
        sca_mode,
        retune_period: cfg.sim.retune_period,
        sample_rate_hz: cfg.sim.sample_rate_hz,
        collect_samples: true,
        resume_from: None,
    })
}

/// Summary written next to the timeseries; parseable back for comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub duration_s: f64,
    pub seed: u64,
    pub net_energy_j: f64,
    pub mean_power_w: f64,
    pub mppt_efficiency: f64,
    pub extraction_count: u64,
    pub hysteresis_loop_area_j_per_cycle: f64,
    pub extracted_energy_j: f64,
    pub input_work_j: f64,
    pub ledger_residual_fraction: f64,
    pub counts: EventCounts,
    pub config_echo: String,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "duration_s = {}", self.duration_s);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "net_energy_J = {}", self.net_energy_j);
        let _ = writeln!(s, "mean_power_W = {}", self.mean_power_w);
        let _ = writeln!(s, "mppt_efficiency = {}", self.mppt_efficiency);
        let _ = writeln!(s, "extraction_count = {}", self.extraction_count);
        let _ = writeln!(
            s,
            "hysteresis_loop_area_J_per_cycle = {}",
            self.hysteresis_loop_area_j_per_cycle
        );
        let _ = writeln!(s, "extracted_energy_J = {}", self.extracted_energy_j);
        let _ = writeln!(s, "input_work_J = {}", self.input_work_j);
        let _ = writeln!(
            s,
            "ledger_residual_fraction = {}",
            self.ledger_residual_fraction
        );
        let c = &self.counts;
        let _ = writeln!(s, "events.extremum = {}", c.extremum);
        let _ = writeln!(s, "events.extraction = {}", c.extraction);
        let _ = writeln!(s, "events.diode_on = {}", c.diode_on);
        let _ = writeln!(s, "events.diode_off = {}", c.diode_off);
        let _ = writeln!(s, "events.controller_tick = {}", c.controller_tick);
        let _ = writeln!(s, "events.focv_jump = {}", c.focv_jump);
        let _ = writeln!(s, "events.load_step = {}", c.load_step);
        let _ = writeln!(s, "events.lut_retune = {}", c.lut_retune);
        for line in self.config_echo.lines() {
            let _ = writeln!(s, "config.{line}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map = std::collections::BTreeMap::new();
        let mut echo = String::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("config.") {
                echo.push_str(rest);
                echo.push('\n');
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("expected `key = value`, got `{line}`"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let f = |k: &str| -> Result<f64, String> {
            map.get(k)
                .ok_or_else(|| format!("missing key `{k}`"))?
                .parse::<f64>()
                .map_err(|_| format!("key `{k}` is not a number"))
        };
        let u = |k: &str| -> Result<u64, String> {
            map.get(k)
                .ok_or_else(|| format!("missing key `{k}`"))?
                .parse::<u64>()
                .map_err(|_| format!("key `{k}` is not an integer"))
        };
        Ok(Self {
            scenario: map
                .get("scenario")
                .ok_or("missing key `scenario`")?
                .clone(),
            duration_s: f("duration_s")?,
            seed: u("seed")?,
            net_energy_j: f("net_energy_J")?,
            mean_power_w: f("mean_power_W")?,
            mppt_efficiency: f("mppt_efficiency")?,
            extraction_count: u("extraction_count")?,
            hysteresis_loop_area_j_per_cycle: f("hysteresis_loop_area_J_per_cycle")?,
            extracted_energy_j: f("extracted_energy_J")?,
            input_work_j: f("input_work_J")?,
            ledger_residual_fraction: f("ledger_residual_fraction")?,
            counts: EventCounts {
                extremum: u("events.extremum")?,
                extraction: u("events.extraction")?,
                diode_on: u("events.diode_on")?,
                diode_off: u("events.diode_off")?,
                controller_tick: u("events.controller_tick")?,
                focv_jump: u("events.focv_jump")?,
                load_step: u("events.load_step")?,
                lut_retune: u("events.lut_retune")?,
            },
            config_echo: echo,
        })
    }
}

pub fn load_report(path: &Path) -> Result<RunReport, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    RunReport::parse(&text).map_err(|msg| HarnessError::ReportParse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_timeseries_csv<W: io::Write>(mut w: W, samples: &[Sample]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.z,
            s.z_dot,
            s.h,
            s.v_p,
            s.v_rect,
            s.v_storage,
            s.i_l,
            s.v_out,
            s.p_load,
            s.duty,
            s.f_drive,
            s.c_effective,
            s.event_flags
        )?;
    }
    Ok(())
}

/// Inclusive duty grid from `d_min` to `d_max` at `step` spacing.
pub fn duty_grid(d_min: f64, d_max: f64, step: f64) -> Vec<f64> {
    let n = ((d_max - d_min) / step).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| (d_min + i as f64 * step).min(d_max)).collect();
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    grid
}

/// Exhaustive duty sweep from a frozen mid-run state: the best constant duty
/// and its mean delivered power over the evaluation window.
#[derive(Debug, Clone)]
pub struct OracleScan {
    pub t_freeze: f64,
    pub window: f64,
    pub d_star: f64,
    pub p_star: f64,
    /// (duty, mean power) for every grid point, in grid order.
    pub cells: Vec<(f64, f64)>,
    pub frozen: Snapshot,
}

pub fn mpp_oracle(
    cfg: &RunConfig,
    scenario: &Scenario,
    t_freeze: f64,
) -> Result<OracleScan, HarnessError> {
    let mut freeze_opts = sim_options(cfg, scenario)?;
    freeze_opts.duration = t_freeze;
    freeze_opts.collect_samples = false;
    let frozen = run_sim(&freeze_opts, &cfg.params)?.snapshot;

    let window = cfg.oracle.window;
    let base = {
        let mut o = freeze_opts;
        o.duration = t_freeze + window;
        o.mppt_enabled = false;
        o
    };
    let grid = duty_grid(
        cfg.params.power.d_min,
        cfg.params.power.d_max,
        cfg.oracle.duty_step,
    );
    let cells: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&d| {
            let mut opts = base.clone();
            let mut snap = frozen;
            snap.duty = d;
            snap.mppt = MpptState::new(d, &cfg.params.mppt);
            opts.resume_from = Some(snap);
            run_sim(&opts, &cfg.params)
                .map(|out| (d, (out.snapshot.y[IDX_E_LOAD] - frozen.y[IDX_E_LOAD]) / window))
        })
        .collect::<Result<_, SimError>>()?;
    let (mut d_star, mut p_star) = (grid[0], f64::NEG_INFINITY);
    for &(d, p) in &cells {
        if p > p_star {
            d_star = d;
            p_star = p;
        }
    }
    Ok(OracleScan {
        t_freeze,
        window,
        d_star,
        p_star,
        cells,
        frozen,
    })
}

fn make_report(
    cfg: &RunConfig,
    scenario: &Scenario,
    out: &RunOutput,
) -> Result<RunReport, HarnessError> {
    let duration = cfg.sim.duration;
    let net_energy_j = out.snapshot.y[IDX_E_LOAD];
    let mean_power_w = net_energy_j / duration;

    let mech: Vec<MechSample> = out
        .samples
        .iter()
        .map(|s| MechSample {
            t: s.t,
            z: s.z,
            z_dot: s.z_dot,
            h: s.h,
        })
        .collect();
    let loop_area = hysteresis_loop_area(&mech, cfg.params.mech.k_s, &cfg.params.bw).unwrap_or(0.0);

    // Efficiency is measured against the best constant duty found by a
    // frozen-state sweep over the final window of the run.
    let mppt_efficiency = if cfg.sim.buck_enabled && duration > cfg.oracle.window {
        let scan = mpp_oracle(cfg, scenario, duration - cfg.oracle.window)?;
        let p_window = (net_energy_j - scan.frozen.y[IDX_E_LOAD]) / scan.window;
        if scan.p_star > 0.0 {
            p_window / scan.p_star
        } else {
            0.0
        }
    } else {
        0.0
    };

    Ok(RunReport {
        scenario: scenario.name.to_string(),
        duration_s: duration,
        seed: cfg.sim.seed,
        net_energy_j,
        mean_power_w,
        mppt_efficiency,
        extraction_count: out.extraction_count,
        hysteresis_loop_area_j_per_cycle: loop_area,
        extracted_energy_j: out.extracted_energy,
        input_work_j: out.ledger.input_work,
        ledger_residual_fraction: out.ledger.residual_fraction(),
        counts: out.counts,
        config_echo: cfg.echo(),
    })
}

/// Run one scenario end to end, writing `timeseries.csv` and `report.txt`
/// into `out_dir`.
pub fn run_scenario(
    cfg: &RunConfig,
    scenario_name: &str,
    out_dir: &Path,
) -> Result<RunReport, HarnessError> {
    let scenario = scenario_by_name(scenario_name, cfg)?;
    let opts = sim_options(cfg, &scenario)?;
    let out = run_sim(&opts, &cfg.params)?;
    let report = make_report(cfg, &scenario, &out)?;

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv_path = out_dir.join("timeseries.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_timeseries_csv(BufWriter::new(file), &out.samples).map_err(io_err(&csv_path))?;
    let report_path = out_dir.join("report.txt");
    fs::write(&report_path, report.to_text()).map_err(io_err(&report_path))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ComparisonSummary {
    pub scenario_a: String,
    pub scenario_b: String,
    /// (metric, a, b) rows in print order.
    pub metrics: Vec<(&'static str, f64, f64)>,
    /// Percentage net-energy gain of b over a.
    pub gain_pct: f64,
}

impl fmt::Display for ComparisonSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "a = {}, b = {}", self.scenario_a, self.scenario_b)?;
        for (name, a, b) in &self.metrics {
            writeln!(f, "{name}: a = {a:.6e}, b = {b:.6e}, delta = {:.6e}", b - a)?;
        }
        write!(f, "net energy gain of b over a: {:.2}%", self.gain_pct)
    }
}

/// Compare two run directories produced by `run_scenario`.
pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<ComparisonSummary, HarnessError> {
    let a = load_report(&dir_a.join("report.txt"))?;
    let b = load_report(&dir_b.join("report.txt"))?;
    if a.seed != b.seed {
        return Err(HarnessError::MismatchedScenarios(format!(
            "drive seeds differ ({} vs {})",
            a.seed, b.seed
        )));
    }
    if (a.duration_s - b.duration_s).abs() > 1e-12 {
        return Err(HarnessError::MismatchedScenarios(format!(
            "durations differ ({} s vs {} s)",
            a.duration_s, b.duration_s
        )));
    }
    let gain_pct = if a.net_energy_j != 0.0 {
        (b.net_energy_j - a.net_energy_j) / a.net_energy_j * 100.0
    } else if b.net_energy_j == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ComparisonSummary {
        scenario_a: a.scenario.clone(),
        scenario_b: b.scenario.clone(),
        metrics: vec![
            ("net_energy_J", a.net_energy_j, b.net_energy_j),
            ("mean_power_W", a.mean_power_w, b.mean_power_w),
            ("mppt_efficiency", a.mppt_efficiency, b.mppt_efficiency),
            (
                "extraction_count",
                a.extraction_count as f64,
                b.extraction_count as f64,
            ),
            (
                "hysteresis_loop_area_J_per_cycle",
                a.hysteresis_loop_area_j_per_cycle,
                b.hysteresis_loop_area_j_per_cycle,
            ),
        ],
        gain_pct,
    })
}

/// Mean storage-deposit power for one (frequency, setting) cell, measured
/// from rest with the converter idle so the metric isolates the array.
fn cell_power(
    cfg: &RunConfig,
    f_hz: f64,
    setting: crate::sca::ScaSetting,
) -> Result<f64, SimError> {
    let opts = SimOptions {
        drive: DriveProfile::Constant { f_hz },
        duration: cfg.lut.cell_duration,
        seed: cfg.sim.seed,
        noise_enabled: false,
        sece_enabled: true,
        buck_enabled: false,
        mppt_enabled: false,
        initial_duty: cfg.sim.initial_duty,
        sca_mode: ScaMode::Fixed(setting),
        retune_period: cfg.sim.retune_period,
        sample_rate_hz: cfg.sim.sample_rate_hz,
        collect_samples: false,
        resume_from: None,
    };
    let out = run_sim(&opts, &cfg.params)?;
    let v = out.snapshot.y[IDX_V_STORAGE];
    Ok(0.5 * cfg.params.power.c_storage * v * v / cfg.lut.cell_duration)
}

/// Characterize every realizable setting across the configured frequency
/// grid and keep the argmax capacitance per frequency.
pub fn build_lut_table(cfg: &RunConfig) -> Result<LutBuild, HarnessError> {
    let n = ((cfg.lut.f_max_hz - cfg.lut.f_min_hz) / cfg.lut.step_hz).round() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| (cfg.lut.f_min_hz + i as f64 * cfg.lut.step_hz).min(cfg.lut.f_max_hz))
        .collect();
    let settings = enumerate_settings(&cfg.params.bank);

    let powers: Vec<f64> = grid
        .par_iter()
        .flat_map(|&f| settings.par_iter().map(move |s| (f, *s)))
        .map(|(f, s)| cell_power(cfg, f, s))
        .collect::<Result<_, SimError>>()?;

    let cols = settings.len();
    let lut = build_lut(&grid, &settings, |f, s| {
        let fi = grid
            .iter()
            .position(|&x| x == f)
            .expect("frequency comes from the grid");
        let si = settings
            .iter()
            .position(|x| x.topology == s.topology && x.mask == s.mask)
            .expect("setting comes from the enumeration");
        powers[fi * cols + si]
    })?;
    Ok(lut)
}

/// Steady-state displacement amplitude at each frequency of an inclusive
/// grid; the drive is a clean sine and the converter stays idle.
pub fn resonance_sweep(
    params: &HarvesterParams,
    f_lo: f64,
    f_hi: f64,
    df: f64,
    settle: f64,
    window: f64,
) -> Result<Vec<(f64, f64)>, SimError> {
    let n = ((f_hi - f_lo) / df).round() as usize;
    let freqs: Vec<f64> = (0..=n).map(|i| (f_lo + i as f64 * df).min(f_hi)).collect();
    freqs
        .par_iter()
        .map(|&f| {
            let opts = SimOptions {
                drive: DriveProfile::Constant { f_hz: f },
                duration: settle + window,
                noise_enabled: false,
                sece_enabled: false,
                buck_enabled: false,
                mppt_enabled: false,
                sca_mode: ScaMode::FixedBypass,
                collect_samples: true,
                ..SimOptions::default()
            };
            let out = run_sim(&opts, params)?;
            let amp = out
                .samples
                .iter()
                .filter(|s| s.t >= settle)
                .map(|s| s.z.abs())
                .fold(0.0, f64::max);
            Ok((f, amp))
        })
        .collect()
}

/// Grid argmax of a sweep.
pub fn peak_frequency(points: &[(f64, f64)]) -> (f64, f64) {
    let mut best = points[0];
    for &p in points {
        if p.1 > best.1 {
            best = p;
        }
    }
    best
}
