// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use spotlight_core::bounds::{default_rate_grid, nob_table};
use spotlight_core::ExecTimeModel;
use spotlight_sim::{metrics, run_with, RunMode, ScenarioConfig, SimError};

#[derive(Parser)]
#[command(name = "spotlight", version, about = "Camera-network tracking pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Des,
    Realtime,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.csv, timeline.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "des")]
        mode: Mode,
        /// Virtual seconds per wall-clock second in realtime mode.
        #[arg(long, default_value_t = 1.0)]
        speedup: f64,
    },
    /// Write a rate -> batch size table for lookup-table batching.
    Calibrate {
        /// Affine execution time `base,per_item` in ms.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        xi: Vec<f64>,
        /// Latency headroom in ms.
        #[arg(long)]
        gamma: i64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        m_max: usize,
        /// Input rates in events/s; defaults to 1, 10, 20, ..., 1000.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

fn run(config: &Path, out: &Path, seed: Option<u64>, mode: RunMode) -> Result<(), Failure> {
    let mut cfg = ScenarioConfig::load(config).map_err(|e| Failure::Config(e.into()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let result = run_with(&cfg, mode).map_err(|e| match e {
        SimError::Engine(_) => Failure::Other(e.into()),
        _ => Failure::Config(e.into()),
    })?;
    metrics::write_all(out, &result.events, &result.timeline, &result.summary)
        .with_context(|| format!("writing results to {}", out.display()))
        .map_err(Failure::Other)?;
    let s = &result.summary;
    println!(
        "generated {} delivered {} delayed {} dropped {} in_flight {} peak_active {}",
        s.generated, s.delivered, s.delayed, s.dropped, s.in_flight, s.peak_active_cameras
    );
    Ok(())
}

fn calibrate(xi: &[f64], gamma: i64, out: &Path, m_max: usize, rates: &[f64]) -> Result<(), Failure> {
    let &[base, per_item] = xi else {
        return Err(Failure::Config(anyhow::anyhow!("--xi takes two values, base and per-item ms")));
    };
    let model = ExecTimeModel::affine(base, per_item, m_max).map_err(|e| Failure::Config(e.into()))?;
    let rates = if rates.is_empty() { default_rate_grid() } else { rates.to_vec() };
    if rates.iter().any(|r| !(*r > 0.0)) {
        return Err(Failure::Config(anyhow::anyhow!("rates must be positive")));
    }
    let table = nob_table(&model, gamma, &rates).map_err(|e| Failure::Config(e.into()))?;
    let write = || -> anyhow::Result<()> {
        let mut w = BufWriter::new(File::create(out)?);
        writeln!(w, "rate,batch")?;
        for &(rate, batch) in table.entries() {
            writeln!(w, "{rate},{batch}")?;
        }
        w.flush()?;
        Ok(())
    };
    write()
        .with_context(|| format!("writing {}", out.display()))
        .map_err(Failure::Other)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            mode,
            speedup,
        } => {
            let mode = match mode {
                Mode::Des => RunMode::Des,
                Mode::Realtime => RunMode::Realtime { speedup },
            };
            run(&config, &out, seed, mode)
        }
        Command::Calibrate {
            xi,
            gamma,
            out,
            m_max,
            rates,
        } => calibrate(&xi, gamma, &out, m_max, &rates),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
