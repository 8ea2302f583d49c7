//! Switched-capacitor array management: enumerating realizable effective
//! capacitances, snapping continuous targets onto the bank, and the
//! frequency-indexed lookup table that drives retuning.

use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

/// Number of switchable stages in the array.
pub const BANK_STAGES: usize = 5;

/// The physical bank: intrinsic piezo capacitance plus binary-weighted
/// switchable stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorBank {
    /// Intrinsic piezo capacitance (F).
    pub c_p: f64,
    /// Stage values (F), engaged individually by the mask.
    pub stages: [f64; BANK_STAGES],
}

impl Default for CapacitorBank {
    fn default() -> Self {
        Self {
            c_p: 15e-9,
            stages: [2e-9, 4e-9, 8e-9, 16e-9, 32e-9],
        }
    }
}

/// How the engaged stages connect to the piezo capacitance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Topology {
    /// Engaged stages sit directly across the piezo: C_eff = C_p + sum.
    Parallel,
    /// Engaged stages (wired in parallel with each other) form one leg in
    /// series with the piezo: C_eff = C_p * sum / (C_p + sum).
    Series,
}

/// One realizable array configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaSetting {
    pub topology: Topology,
    /// Bit i engages stage i.
    pub mask: u8,
    /// Resulting effective capacitance (F).
    pub c_effective: f64,
}

impl ScaSetting {
    pub fn closed_switches(&self) -> u32 {
        self.mask.count_ones()
    }

    /// An empty mask leaves the bare piezo regardless of topology.
    pub fn is_bypass(&self) -> bool {
        self.mask == 0
    }
}

/// Effective capacitance of a mask under a topology.
pub fn c_effective(bank: &CapacitorBank, topology: Topology, mask: u8) -> f64 {
    let sum: f64 = (0..BANK_STAGES)
        .filter(|i| mask & (1 << i) != 0)
        .map(|i| bank.stages[i])
        .sum();
    match topology {
        Topology::Parallel => bank.c_p + sum,
        Topology::Series => {
            if sum == 0.0 {
                bank.c_p
            } else {
                bank.c_p * sum / (bank.c_p + sum)
            }
        }
    }
}

/// All distinct realizable settings, sorted by effective capacitance.
///
/// Values closer than 0.1% are merged, keeping the representative with the
/// fewest closed switches (Parallel preferred on a further tie). For the
/// nominal bank this yields 63 settings including the bypass.
pub fn enumerate_settings(bank: &CapacitorBank) -> Vec<ScaSetting> {
    let mut all = Vec::with_capacity(64);
    for topology in [Topology::Parallel, Topology::Series] {
        for mask in 0..(1u16 << BANK_STAGES) {
            let mask = mask as u8;
            all.push(ScaSetting {
                topology,
                mask,
                c_effective: c_effective(bank, topology, mask),
            });
        }
    }
    all.sort_by(|a, b| {
        a.c_effective
            .total_cmp(&b.c_effective)
            .then(a.closed_switches().cmp(&b.closed_switches()))
            .then(a.topology.cmp(&b.topology))
    });
    let mut out: Vec<ScaSetting> = Vec::new();
    for s in all {
        match out.last() {
            Some(last)
                if (s.c_effective - last.c_effective).abs()
                    <= 1e-3 * last.c_effective.max(s.c_effective) => {}
            _ => out.push(s),
        }
    }
    out
}

/// Closest realizable setting to a continuous capacitance target.
///
/// Distance ties prefer fewer closed switches, then Parallel topology, then
/// the smaller capacitance, making the choice deterministic.
pub fn snap_to_realizable(target: f64, settings: &[ScaSetting]) -> ScaSetting {
    *settings
        .iter()
        .min_by(|a, b| {
            (a.c_effective - target)
                .abs()
                .total_cmp(&(b.c_effective - target).abs())
                .then(a.closed_switches().cmp(&b.closed_switches()))
                .then(a.topology.cmp(&b.topology))
                .then(a.c_effective.total_cmp(&b.c_effective))
        })
        .expect("settings list is never empty")
}

#[derive(Debug, Error)]
pub enum ScaError {
    #[error("capacitance sweep produced no usable power at any setting")]
    DegenerateSweep,
    #[error("lookup table is empty")]
    EmptyLut,
    #[error("lut io: {0}")]
    Io(#[from] std::io::Error),
    #[error("lut parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Frequency-to-capacitance lookup table (entries sorted by frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct LutTable {
    entries: Vec<(f64, f64)>,
}

impl LutTable {
    pub fn new(mut entries: Vec<(f64, f64)>) -> Result<Self, ScaError> {
        if entries.is_empty() {
            return Err(ScaError::EmptyLut);
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    /// Target capacitance for a sensed frequency: linear interpolation inside
    /// the grid, clamped to the end entries outside it.
    pub fn query(&self, f_hz: f64) -> f64 {
        let e = &self.entries;
        if f_hz <= e[0].0 {
            return e[0].1;
        }
        if f_hz >= e[e.len() - 1].0 {
            return e[e.len() - 1].1;
        }
        let idx = e.partition_point(|&(f, _)| f <= f_hz);
        let (f0, c0) = e[idx - 1];
        let (f1, c1) = e[idx];
        let w = (f_hz - f0) / (f1 - f0);
        c0 + w * (c1 - c0)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), ScaError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "freq_hz,c_effective_f")?;
        for &(freq, c) in &self.entries {
            writeln!(f, "{freq},{c}")?;
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self, ScaError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "freq_hz,c_effective_f" {
                    return Err(ScaError::Parse {
                        line: 1,
                        msg: format!("unexpected header {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let parse = |s: Option<&str>| -> Result<f64, ScaError> {
                s.ok_or(ScaError::Parse {
                    line: i + 1,
                    msg: "missing field".into(),
                })?
                .trim()
                .parse()
                .map_err(|e| ScaError::Parse {
                    line: i + 1,
                    msg: format!("{e}"),
                })
            };
            let freq = parse(parts.next())?;
            let c = parse(parts.next())?;
            entries.push((freq, c));
        }
        Self::new(entries)
    }
}

/// Result of a characterization sweep.
#[derive(Debug, Clone)]
pub struct LutBuild {
    pub table: LutTable,
    /// Winning setting and its measured power per grid frequency.
    pub winners: Vec<(f64, ScaSetting, f64)>,
    /// Bypass power per grid frequency, for dominance checks.
    pub bypass_power: Vec<f64>,
}

/// Sweep every realizable setting at every grid frequency and record the
/// argmax capacitance per frequency. `measure` returns mean harvested power
/// for one (frequency, setting) cell.
pub fn build_lut<M>(
    grid_hz: &[f64],
    settings: &[ScaSetting],
    mut measure: M,
) -> Result<LutBuild, ScaError>
where
    M: FnMut(f64, &ScaSetting) -> f64,
{
    let mut entries = Vec::with_capacity(grid_hz.len());
    let mut winners = Vec::with_capacity(grid_hz.len());
    let mut bypass_power = Vec::with_capacity(grid_hz.len());
    let mut any_power = false;
    for &f in grid_hz {
        let mut best: Option<(ScaSetting, f64)> = None;
        let mut bypass = 0.0;
        for s in settings {
            let p = measure(f, s);
            if s.is_bypass() {
                bypass = p;
            }
            if p > 0.0 {
                any_power = true;
            }
            let better = match best {
                None => true,
                Some((_, bp)) => p > bp,
            };
            if better {
                best = Some((*s, p));
            }
        }
        let (setting, power) = best.expect("settings list is never empty");
        entries.push((f, setting.c_effective));
        winners.push((f, setting, power));
        bypass_power.push(bypass);
    }
    if !any_power {
        return Err(ScaError::DegenerateSweep);
    }
    Ok(LutBuild {
        table: LutTable::new(entries)?,
        winners,
        bypass_power,
    })
}

///// The nominal characterization grid: 90-110 Hz at 1 Hz spacing.
pub fn default_grid() -> Vec<f64> {
    (90..=110).map(|f| f as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn bank() -> CapacitorBank {
        CapacitorBank::default()
    }

    #[test]
    fn parallel_adds_engaged_stages() {
        // Stage 2 alone is 8 nF.
        assert_abs_diff_eq!(
            c_effective(&bank(), Topology::Parallel, 0b00100),
            23e-9,
            epsilon = 1e-18
        );
        assert_abs_diff_eq!(
            c_effective(&bank(), Topology::Parallel, 0b11111),
            77e-9,
            epsilon = 1e-18
        );
    }

    #[test]
    fn series_divides_through_the_leg() {
        assert_relative_eq!(
            c_effective(&bank(), Topology::Series, 0b00100),
            15e-9 * 8e-9 / 23e-9,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            c_effective(&bank(), Topology::Series, 0b11111),
            15e-9 * 62e-9 / 77e-9,
            max_relative = 1e-12
        );
    }

    #[test]
    fn empty_mask_is_bypass_in_both_topologies() {
        assert_eq!(c_effective(&bank(), Topology::Parallel, 0), 15e-9);
        assert_eq!(c_effective(&bank(), Topology::Series, 0), 15e-9);
    }

    #[test]
    fn enumeration_counts_distinct_settings() {
        let settings = enumerate_settings(&bank());
        assert_eq!(settings.len(), 63);
        assert_eq!(settings.iter().filter(|s| s.is_bypass()).count(), 1);
        // Sorted ascending and spanning the full range.
        for w in settings.windows(2) {
            assert!(w[0].c_effective < w[1].c_effective);
        }
        assert_relative_eq!(
            settings[0].c_effective,
            15e-9 * 2e-9 / 17e-9,
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(
            settings.last().unwrap().c_effective,
            77e-9,
            epsilon = 1e-18
        );
        // The surviving bypass representative is the Parallel one.
        let bypass = settings.iter().find(|s| s.is_bypass()).unwrap();
        assert_eq!(bypass.topology, Topology::Parallel);
    }

    #[test]
    fn snap_exact_and_endpoint_targets() {
        let settings = enumerate_settings(&bank());
        let s = snap_to_realizable(23e-9, &settings);
        assert_eq!((s.topology, s.mask), (Topology::Parallel, 0b00100));
        // Unreachably small and large targets clamp to the range ends.
        assert_relative_eq!(
            snap_to_realizable(0.0, &settings).c_effective,
            15e-9 * 2e-9 / 17e-9,
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(
            snap_to_realizable(1.0, &settings).c_effective,
            77e-9,
            epsilon = 1e-18
        );
    }

    #[test]
    fn snap_tie_prefers_fewer_switches() {
        // Synthetic bank where 18 nF is exactly between parallel {2} and {4}.
        let settings = enumerate_settings(&bank());
        let s = snap_to_realizable(18e-9, &settings);
        assert_eq!(s.closed_switches(), 1);
        assert_eq!(s.topology, Topology::Parallel);
        assert_abs_diff_eq!(s.c_effective, 17e-9, epsilon = 1e-18);
    }

    #[test]
    fn query_interpolates_and_clamps() {
        let lut = LutTable::new(vec![(90.0, 10e-9), (100.0, 20e-9), (110.0, 40e-9)]).unwrap();
        assert_abs_diff_eq!(lut.query(95.0), 15e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(lut.query(105.0), 30e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(lut.query(100.0), 20e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(lut.query(50.0), 10e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(lut.query(500.0), 40e-9, epsilon = 1e-18);
    }

    #[test]
    fn lut_round_trips_through_csv_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lut.csv");
        let entries: Vec<(f64, f64)> = default_grid()
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, 15e-9 + i as f64 * 1.37e-10 / 3.0))
            .collect();
        let lut = LutTable::new(entries).unwrap();
        lut.save_csv(&path).unwrap();
        let reloaded = LutTable::load_csv(&path).unwrap();
        assert_eq!(lut, reloaded);
    }

    #[test]
    fn build_lut_picks_the_argmax_and_tracks_bypass() {
        let settings = enumerate_settings(&bank());
        // Synthetic merit surface: best capacitance slides linearly with
        // frequency from 5 nF at 90 Hz to 60 nF at 110 Hz.
        let target = |f: f64| 5e-9 + (f - 90.0) / 20.0 * 55e-9;
        let measure = |f: f64, s: &ScaSetting| {
            let d = (s.c_effective - target(f)) / 1e-9;
            1e-3 * (-d * d / 50.0).exp()
        };
        let grid = default_grid();
        let build = build_lut(&grid, &settings, measure).unwrap();
        for (i, &(f, setting, power)) in build.winners.iter().enumerate() {
            // Winner beats every other setting including bypass.
            assert!(power >= build.bypass_power[i]);
            let snapped = snap_to_realizable(target(f), &settings);
            assert_eq!(setting.mask, snapped.mask);
            assert_eq!(setting.topology, snapped.topology);
        }
        // Low-frequency winners are series side, high-frequency parallel side.
        assert!(build.winners[0].1.c_effective < 15e-9);
        assert!(build.winners.last().unwrap().1.c_effective > 15e-9);
    }

    #[test]
    fn all_zero_sweep_is_degenerate() {
        let settings = enumerate_settings(&bank());
        let res = build_lut(&default_grid(), &settings, |_, _| 0.0);
        assert!(matches!(res, Err(ScaError::DegenerateSweep)));
    }

    proptest! {
        /// Snapping agrees with a brute-force scan over all raw mask and
        /// topology combinations.
        #[test]
        fn snap_matches_exhaustive_argmin(target_nf in 0.0..100.0f64) {
            let target = target_nf * 1e-9;
            let settings = enumerate_settings(&bank());
            let snapped = snap_to_realizable(target, &settings);
            let mut best = f64::INFINITY;
            for topology in [Topology::Parallel, Topology::Series] {
                for mask in 0..32u8 {
                    let c = c_effective(&bank(), topology, mask);
                    let d = (c - target).abs();
                    if d < best {
                        best = d;
                    }
                }
            }
            let d_snap = (snapped.c_effective - target).abs();
            // Equal up to the 0.1% dedup mergers.
            prop_assert!(d_snap <= best + 1.1e-3 * snapped.c_effective);
        }

        /// Series always reduces, parallel always increases capacitance.
        #[test]
        fn topology_ordering_holds(mask in 1u8..32) {
            let b = bank();
            prop_assert!(c_effective(&b, Topology::Series, mask) < b.c_p);
            prop_assert!(c_effective(&b, Topology::Parallel, mask) > b.c_p);
        }
    }
}
