//! Command-line front end: single runs, multi-seed aggregates, ρ sweeps and
//! SDP instance dumps.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 invalid config or
//! arguments, 3 infeasible QoS targets (completed frames are still written).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hrisim::sdp::write_dump;
use hrisim::sim::{
    emit_outputs, initial_precoder_instance, load_config, monte_carlo, run_tracking, save_config, sweep_rho, write_aggregate,
    write_tradeoff, RunAborted, ScenarioConfig,
};
use hrisim::Error;

#[derive(Parser)]
#[command(name = "hrisim", version, about = "Tracking-aided multi-user beam design with a hybrid RIS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write frames.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of frames M.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Number of consecutive seeds; above 1 writes aggregate.json instead.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Sweep the absorption ratio ρ with a common seed and write tradeoff.csv.
    SweepRho {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the first precoder SDP of a run in the plain-text dump format.
    DumpSdp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a config with every field set to its default.
    InitConfig {
        /// Use the small desk scenario instead of the full-size defaults.
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Parse(_) => 2,
        Error::InfeasibleQos { .. } => 3,
        _ => 1,
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: code_for(&e),
            message: e.to_string(),
        }
    }
}

impl From<RunAborted> for Failure {
    fn from(e: RunAborted) -> Self {
        Self {
            code: code_for(&e.source),
            message: e.to_string(),
        }
    }
}

fn config_with(path: &Path, seed: Option<u64>, frames: Option<usize>) -> Result<ScenarioConfig, Error> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = frames {
        cfg.m = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ScenarioConfig, out: &Path, runs: usize) -> Result<(), Failure> {
    if runs == 0 {
        let e = Error::Validation {
            field: "runs".into(),
            message: "must be at least 1".into(),
        };
        return Err(e.into());
    }
    if runs > 1 {
        let mc = monte_carlo(cfg, runs)?;
        write_aggregate(&mc, out)?;
        println!(
            "{runs} runs (seeds {}..={}): final RMSE {:.4e} m, mean CRB-implied error {:.4e} m",
            mc.seeds[0],
            mc.seeds[runs - 1],
            mc.final_rmse,
            mc.final_mean_position_bound
        );
        println!("wrote {}", out.join("aggregate.json").display());
        return Ok(());
    }
    match run_tracking(cfg) {
        Ok(r) => {
            emit_outputs(&r.logs, Some(&r.summary), out)?;
            let s = &r.summary;
            println!(
                "{} frames in {:.2} s: final PEB {:.4e}, final RMSE {:.4e} m, best-effort frames {}",
                r.logs.len(),
                s.wall_clock_s,
                r.logs.last().map_or(f64::NAN, |f| f.peb),
                s.final_rmse,
                s.best_effort_frames
            );
            println!("wrote {} and {}", out.join("frames.csv").display(), out.join("summary.json").display());
            Ok(())
        }
        Err(aborted) => {
            emit_outputs(&aborted.logs, None, out)?;
            eprintln!("wrote {} completed frames to {}", aborted.logs.len(), out.join("frames.csv").display());
            Err(aborted.into())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, frames, out, runs } => run(&config_with(&config, seed, frames)?, &out, runs),
        Command::SweepRho { config, values, out } => {
            let rows = sweep_rho(&config_with(&config, None, None)?, &values)?;
            write_tradeoff(&rows, &out)?;
            for r in &rows {
                println!("rho {:.3}: final PEB {:.4e}, mean rate {:.4} bit/s/Hz", r.rho, r.final_peb, r.mean_rate);
            }
            println!("wrote {}", out.join("tradeoff.csv").display());
            Ok(())
        }
        Command::DumpSdp { config, seed, out } => {
            let problem = initial_precoder_instance(&config_with(&config, seed, None)?)?;
            write_dump(&problem, BufWriter::new(File::create(&out).map_err(Error::from)?))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::InitConfig { desk, out } => {
            let cfg = if desk { ScenarioConfig::desk() } else { ScenarioConfig::default() };
            save_config(&cfg, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
