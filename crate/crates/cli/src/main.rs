use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gridbid_core::evaluation::oracle_check;
use gridbid_core::experiment::{self, ExperimentConfig};
use gridbid_core::grid::{bundled_grid, load_grid, Grid};

#[derive(Parser)]
#[command(
    name = "gridbid",
    version,
    about = "Strategic bidding agents on a pay-as-bid market"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Trainer name, e.g. `maddpg` or `mmaddpg`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Paired table of two finished runs.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV for one figure over several runs.
    EmitPlotData {
        /// bids, regret_curve, regret_box or mape_scatter
        #[arg(long)]
        figure: String,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regret of a saved checkpoint.
    RegretTest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the evaluation seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reference clearing against exhaustive search.
    OracleCheck {
        /// Bundled grid name or grid file; repeatable.
        #[arg(long = "grid", default_values_t = ["case2".to_string(), "case3".to_string()])]
        grids: Vec<String>,
        #[arg(long, default_value_t = 50)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lattice step in MW.
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long, default_value_t = 600.0)]
        p_max: f64,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn grid_arg(name: &str) -> Result<Grid> {
    let path = Path::new(name);
    if path.exists() {
        Ok(load_grid(path)?)
    } else {
        Ok(bundled_grid(name)?)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out,
            steps,
            mode,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds.training = s;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| {
                PathBuf::from(format!("runs/{}_seed{}", cfg.mode, cfg.seeds.training))
            });
            let summary =
                experiment::run(&cfg, &out).with_context(|| format!("run {}", out.display()))?;
            println!("run directory: {}", out.display());
            println!("final mean bid: {:.4} of p_max", summary.final_mean_bid);
            println!(
                "regret: {:.3} (random bids {:.3})",
                summary.final_regret, summary.random_regret
            );
            if let Some(m) = summary.final_mape {
                println!("surrogate MAPE: {m:.2}%");
            }
            println!(
                "per step: env {:.3} ms, train {:.3} ms",
                1e3 * summary.env_step_seconds,
                1e3 * summary.train_step_seconds
            );
        }
        Command::Compare { run_a, run_b, out } => {
            let c = experiment::compare(&run_a, &run_b)?;
            emit(&c.to_csv(), out.as_deref())?;
        }
        Command::EmitPlotData { figure, runs, out } => {
            emit(&experiment::emit_plot_data(&runs, &figure)?, out.as_deref())?;
        }
        Command::RegretTest {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds.evaluation = s;
            }
            let report = experiment::regret_of_checkpoint(&cfg, &checkpoint)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            emit(&String::from_utf8(buf)?, out.as_deref())?;
        }
        Command::OracleCheck {
            grids,
            draws,
            seed,
            step,
            p_max,
        } => {
            let mut all_ok = true;
            for name in &grids {
                let grid = grid_arg(name)?;
                let report = oracle_check(&grid, draws, seed, step, p_max)?;
                let failed = report.cases.iter().filter(|c| !c.agree).count();
                println!(
                    "{name}: {} {} compared, {failed} disagree, {} skipped, worst gap {:.3} of tolerance",
                    if report.passed() { "PASS" } else { "FAIL" },
                    report.cases.len(),
                    report.skipped,
                    report.worst_gap()
                );
                all_ok &= report.passed();
            }
            if !all_ok {
                bail!("reference clearing disagrees with exhaustive search");
            }
        }
    }
    Ok(())
}
