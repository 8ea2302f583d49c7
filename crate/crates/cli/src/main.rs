use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peh_core::config::RunConfig;
use peh_core::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "sim", version, about = "Adaptive piezoelectric harvesting chain simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario; writes timeseries.csv and report.txt to --out.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// One of: control, adaptive, constant, constant-adaptive.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Characterize the capacitor array and write the frequency lookup table.
    BuildLut {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two run directories; reports deltas and the energy gain of b over a.
    Compare {
        report_a_dir: PathBuf,
        report_b_dir: PathBuf,
    },
    /// Freeze a run at a given time and sweep constant duties for the true
    /// maximum power point.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Freeze time in seconds.
        #[arg(long = "freeze-at")]
        freeze_at: f64,
        /// Scenario to freeze.
        #[arg(long, default_value = "constant")]
        scenario: String,
    },
}

fn exit_code_for(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_)
        | HarnessError::UnknownScenario { .. }
        | HarnessError::LutRequired { .. }
        | HarnessError::Sca(_)
        | HarnessError::ReportParse { .. }
        | HarnessError::MismatchedScenarios(_) => 2,
        HarnessError::Sim(_) => 3,
        HarnessError::Io { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            scenario,
            out,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            let report = harness::run_scenario(&cfg, &scenario, &out)?;
            println!("wrote {}", out.join("timeseries.csv").display());
            println!("wrote {}", out.join("report.txt").display());
            println!("net_energy_J = {}", report.net_energy_j);
            println!("mean_power_W = {}", report.mean_power_w);
            println!("mppt_efficiency = {}", report.mppt_efficiency);
            println!("extraction_count = {}", report.extraction_count);
        }
        Command::BuildLut { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let lb = harness::build_lut_table(&cfg)?;
            lb.table.save_csv(&out)?;
            println!("wrote {} ({} entries)", out.display(), lb.table.entries().len());
            println!("f_hz  winner            c_eff_F     p_W         gain_vs_bypass");
            for (i, (f, s, p)) in lb.winners.iter().enumerate() {
                let bypass = lb.bypass_power[i];
                let gain = if bypass > 0.0 {
                    format!("{:+.1}%", (p - bypass) / bypass * 100.0)
                } else {
                    "n/a".to_string()
                };
                println!(
                    "{f:<5} {:?} {:05b}    {:.3e}  {:.4e}  {gain}",
                    s.topology, s.mask, s.c_effective, p
                );
            }
        }
        Command::Compare {
            report_a_dir,
            report_b_dir,
        } => {
            let summary = harness::compare(&report_a_dir, &report_b_dir)?;
            println!("{summary}");
        }
        Command::Oracle {
            config,
            freeze_at,
            scenario,
        } => {
            let cfg = RunConfig::load(&config)?;
            let sc = harness::scenario_by_name(&scenario, &cfg)?;
            let scan = harness::mpp_oracle(&cfg, &sc, freeze_at)?;
            println!("t_freeze_s = {}", scan.t_freeze);
            println!("window_s = {}", scan.window);
            println!("d_star = {}", scan.d_star);
            println!("p_star_W = {}", scan.p_star);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}
