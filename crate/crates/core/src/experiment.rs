//! Experiment configuration, run directories, run comparison and plot data.
//!
//! A run directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | resolved config; re-running it reproduces the run |
//! | `grid.grid` | copy of the grid file the config points to |
//! | `metrics.csv` | one row per metric interval |
//! | `timing.csv` | per-interval wall times |
//! | `regret_step<N>.csv` | regret of the noiseless policies after `N` steps |
//! | `regret_random.csv` | regret of uniformly random bids on the same states |
//! | `checkpoint.json` | final trainer state |
//! | `timing_summary.toml` | accumulated wall times |
//! | `summary.json` | headline numbers used by `compare` and plot data |
//! | `FAILED` | present only if the run aborted; holds the error |
//!
//! Every CSV starts with a `# schema: <name> v<version>` line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{BiddingEnv, MarketConfig};
use crate::error::{Error, Result};
use crate::evaluation::{opf_mape, random_baseline, regret_test, SearchSettings};
use crate::grid::load_grid;
use crate::market::ReferenceOpf;
use crate::neural::{load_json, save_json};
use crate::params::{AlgoOverrides, AlgoParams};
use crate::registry::Registry;
use crate::replay::DEFAULT_CAPACITY;
use crate::surrogate::DEFAULT_PENALTY_WEIGHT;
use crate::trainers::{
    restore_trainer, trainer_registry, training_loop, Checkpoint, LoopOutput, LoopSettings,
    MetricRow, RunRngs, TimingRow, TimingSummary, Trainer, TrainerSetup,
};

pub const METRICS_SCHEMA: &str = "# schema: metrics v1";
pub const TIMING_SCHEMA: &str = "# schema: timing v1";
pub const COMPARE_SCHEMA: &str = "# schema: compare v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub training: u64,
    pub evaluation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateMode {
    /// Surrogate and agents learn side by side from one buffer.
    Parallel,
    /// The surrogate is first trained alone on random bids.
    Pretrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSettings {
    pub mode: SurrogateMode,
    pub pretrain_steps: usize,
    pub penalty_weight: f64,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        SurrogateSettings {
            mode: SurrogateMode::Parallel,
            pretrain_steps: 0,
            penalty_weight: DEFAULT_PENALTY_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub metric_every: usize,
    /// Regret (and MAPE) every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub regret_states: usize,
    pub mape_samples: usize,
    pub search_seeds: usize,
    pub search_tolerance: f64,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            metric_every: 500,
            eval_every: 0,
            regret_states: 50,
            mape_samples: 500,
            search_seeds: 13,
            search_tolerance: 1e-3,
        }
    }
}

impl EvaluationSettings {
    pub fn search(&self) -> SearchSettings {
        SearchSettings {
            seeds: self.search_seeds,
            tolerance: self.search_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySettings {
    pub capacity: usize,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        ReplaySettings {
            capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are resolved against the config file's directory.
    pub grid: PathBuf,
    pub mode: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seeds: Seeds,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub maddpg: AlgoOverrides,
    #[serde(default)]
    pub mmaddpg: AlgoOverrides,
    #[serde(default)]
    pub ddpg: AlgoOverrides,
    #[serde(default)]
    pub surrogate: SurrogateSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub replay: ReplaySettings,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file and resolves its grid path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.grid.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.grid = dir.join(&cfg.grid);
            }
        }
        if let (Some(out), Some(dir)) = (&cfg.out, path.parent()) {
            if out.is_relative() {
                cfg.out = Some(dir.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn agent_params(&self) -> AlgoParams {
        if self.mode == "mmaddpg" {
            self.mmaddpg.apply(AlgoParams::mmaddpg())
        } else {
            self.maddpg.apply(AlgoParams::maddpg())
        }
    }

    pub fn surrogate_params(&self) -> AlgoParams {
        self.ddpg.apply(AlgoParams::ddpg())
    }

    pub fn setup(&self) -> TrainerSetup {
        TrainerSetup {
            agent_params: self.agent_params(),
            surrogate_params: self.surrogate_params(),
            penalty_weight: self.surrogate.penalty_weight,
            seed: self.seeds.training,
        }
    }

    pub fn validate(&self) -> Result<()> {
        trainer_registry().get(&self.mode)?;
        self.market.validate()?;
        self.agent_params().validate(&self.mode)?;
        self.surrogate_params().validate("ddpg")?;
        if self.mmaddpg.has_critic_keys() {
            return Err(Error::Config(
                "mmaddpg agents have no critic; remove critic keys".into(),
            ));
        }
        if !self.grid.exists() {
            return Err(Error::Config(format!(
                "grid file {} does not exist",
                self.grid.display()
            )));
        }
        let ev = &self.evaluation;
        if ev.metric_every == 0 {
            return Err(Error::Config(
                "evaluation.metric_every must be positive".into(),
            ));
        }
        if ev.eval_every % ev.metric_every != 0 {
            return Err(Error::Config(
                "evaluation.eval_every must be a multiple of evaluation.metric_every".into(),
            ));
        }
        if self.replay.capacity == 0 {
            return Err(Error::Config("replay.capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<BiddingEnv> {
        BiddingEnv::new(&load_grid(&self.grid)?, self.market.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub steps: usize,
    pub training_seed: u64,
    pub evaluation_seed: u64,
    /// Mean executed bid (fraction of `p_max`) over the last 10% of steps.
    pub final_mean_bid: f64,
    pub final_regret: f64,
    pub random_regret: f64,
    pub initial_mape: Option<f64>,
    pub final_mape: Option<f64>,
    pub env_step_seconds: f64,
    pub train_step_seconds: f64,
}

fn csv_writer(path: &Path, schema: &str) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{schema}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv_writer(path, METRICS_SCHEMA)?;
    w.write_record([
        "step",
        "mode",
        "mean_bid",
        "std_bid",
        "mean_reward",
        "surrogate_mape",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mode.clone(),
            r.mean_bid.to_string(),
            r.std_bid.to_string(),
            r.mean_reward.to_string(),
            opt(r.surrogate_mape),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timing(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv_writer(path, TIMING_SCHEMA)?;
    w.write_record(["step", "mode", "env_step_seconds", "train_step_seconds"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mode.clone(),
            r.env_step_seconds.to_string(),
            r.train_step_seconds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(Error::IncompleteRun {
            path: path.parent().unwrap_or(path).to_path_buf(),
            reason: format!(
                "missing {}",
                path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
            ),
        });
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv_reader(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("{}: bad field {i}", path.display())))
        };
        rows.push(MetricRow {
            step: num(0)? as usize,
            mode: rec.get(1).unwrap_or_default().to_string(),
            mean_bid: num(2)?,
            std_bid: num(3)?,
            mean_reward: num(4)?,
            surrogate_mape: rec.get(5).and_then(|s| s.parse().ok()),
        });
    }
    Ok(rows)
}

/// Prepares an existing-or-new directory; removes a stale failure marker.
fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let failed = out.join("FAILED");
    if failed.exists() {
        fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
    }
    Ok(())
}

/// Runs one experiment into `out`. On failure a `FAILED` marker and a final
/// checkpoint are written before the error is returned.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    prepare_dir(out)?;
    let result = run_inner(cfg, out);
    if let Err(e) = &result {
        let marker = out.join("FAILED");
        fs::write(&marker, format!("{e}\n")).map_err(|io| Error::io(&marker, io))?;
    }
    result
}

fn run_inner(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let grid_text = fs::read_to_string(&cfg.grid).map_err(|e| Error::io(&cfg.grid, e))?;
    let grid_copy = out.join("grid.grid");
    fs::write(&grid_copy, grid_text).map_err(|e| Error::io(&grid_copy, e))?;
    let mut snapshot = cfg.clone();
    snapshot.grid = PathBuf::from("grid.grid");
    snapshot.out = None;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, snapshot.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;

    let env = cfg.environment()?;
    let ctor = trainer_registry().get(&cfg.mode)?;
    let mut trainer = ctor(&env, &cfg.setup())?;
    let mut rngs = RunRngs::new(cfg.seeds.training);
    let ev = cfg.evaluation.clone();
    let search = ev.search();
    let reference = ReferenceOpf::default();

    if cfg.surrogate.mode == SurrogateMode::Pretrain {
        trainer.pretrain(&env, cfg.surrogate.pretrain_steps, &mut rngs)?;
    }
    let initial_mape = match trainer.surrogate() {
        Some(s) => Some(opf_mape(s, &reference, &env, ev.mape_samples, cfg.seeds.evaluation)?.mape),
        None => None,
    };

    let mut final_regret = f64::NAN;
    let mut final_mape = None;
    let steps = cfg.steps;
    let loop_result = {
        let mut hook = |step: usize, t: &dyn Trainer| -> Result<Option<f64>> {
            let due = step == steps || (ev.eval_every > 0 && step % ev.eval_every == 0);
            if !due {
                return Ok(None);
            }
            let report = regret_test(
                &env,
                t.agents(),
                ev.regret_states,
                cfg.seeds.evaluation,
                &search,
            )?;
            report.save_csv(&out.join(format!("regret_step{step}.csv")))?;
            final_regret = report.total;
            let mape = match t.surrogate() {
                Some(s) => {
                    Some(opf_mape(s, &reference, &env, ev.mape_samples, cfg.seeds.evaluation)?.mape)
                }
                None => None,
            };
            final_mape = mape;
            Ok(mape)
        };
        training_loop(
            &env,
            trainer.as_mut(),
            LoopSettings {
                steps,
                metric_every: ev.metric_every,
                buffer_capacity: cfg.replay.capacity,
            },
            &mut rngs,
            &mut hook,
        )
    };
    let ck_path = out.join("checkpoint.json");
    let output: LoopOutput = match loop_result {
        Ok(o) => o,
        Err(e) => {
            save_json(&ck_path, &trainer.checkpoint(0))?;
            return Err(e);
        }
    };
    save_json(&ck_path, &trainer.checkpoint(steps))?;
    write_metrics(&out.join("metrics.csv"), &output.metrics)?;
    write_timing(&out.join("timing.csv"), &output.timing_rows)?;

    if steps == 0 {
        let report = regret_test(
            &env,
            trainer.agents(),
            ev.regret_states,
            cfg.seeds.evaluation,
            &search,
        )?;
        report.save_csv(&out.join("regret_step0.csv"))?;
        final_regret = report.total;
        final_mape = initial_mape;
    }
    let random = random_baseline(&env, ev.regret_states, cfg.seeds.evaluation, &search)?;
    random.save_csv(&out.join("regret_random.csv"))?;

    let timing_path = out.join("timing_summary.toml");
    let timing = TimingFile::from(&output.timing);
    fs::write(
        &timing_path,
        toml::to_string(&timing).map_err(|e| Error::Config(e.to_string()))?,
    )
    .map_err(|e| Error::io(&timing_path, e))?;

    let tail = (steps / 10).max(1).min(output.step_bids.len().max(1));
    let final_bids = &output.step_bids[output.step_bids.len().saturating_sub(tail)..];
    let summary = RunSummary {
        mode: cfg.mode.clone(),
        steps,
        training_seed: cfg.seeds.training,
        evaluation_seed: cfg.seeds.evaluation,
        final_mean_bid: if final_bids.is_empty() {
            f64::NAN
        } else {
            final_bids.iter().sum::<f64>() / final_bids.len() as f64
        },
        final_regret,
        random_regret: random.total,
        initial_mape,
        final_mape,
        env_step_seconds: timing.env_step_seconds,
        train_step_seconds: timing.train_step_seconds,
    };
    save_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Accumulated wall times of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub steps: usize,
    pub total_seconds: f64,
    pub env_seconds: f64,
    pub train_seconds: f64,
    pub env_step_seconds: f64,
    pub train_step_seconds: f64,
}

impl From<&TimingSummary> for TimingFile {
    fn from(t: &TimingSummary) -> Self {
        let per = |v: f64| {
            if t.steps == 0 {
                0.0
            } else {
                v / t.steps as f64
            }
        };
        TimingFile {
            steps: t.steps,
            total_seconds: t.total_seconds,
            env_seconds: t.env_seconds,
            train_seconds: t.train_seconds,
            env_step_seconds: per(t.env_seconds),
            train_step_seconds: per(t.train_seconds),
        }
    }
}

/// Loads a finished run's summary; unfinished or failed runs are rejected.
pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    if dir.join("FAILED").exists() {
        return Err(Error::IncompleteRun {
            path: dir.to_path_buf(),
            reason: "run failed".into(),
        });
    }
    for f in ["metrics.csv", "summary.json", "config.toml"] {
        if !dir.join(f).exists() {
            return Err(Error::IncompleteRun {
                path: dir.to_path_buf(),
                reason: format!("missing {f}"),
            });
        }
    }
    load_json(&dir.join("summary.json"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_json(path)
}

/// Regret of a saved checkpoint's noiseless policies.
pub fn regret_of_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
) -> Result<crate::evaluation::RegretReport> {
    let env = cfg.environment()?;
    let ck = load_checkpoint(checkpoint)?;
    let trainer = restore_trainer(&env, &cfg.setup(), ck)?;
    let ev = &cfg.evaluation;
    regret_test(
        &env,
        trainer.agents(),
        ev.regret_states,
        cfg.seeds.evaluation,
        &ev.search(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<(String, String, String)>,
    /// `env_step_seconds(a) / env_step_seconds(b)`.
    pub speedup: f64,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARE_SCHEMA}\nmetric,run_a,run_b\n");
        for (m, a, b) in &self.rows {
            s.push_str(&format!("{m},{a},{b}\n"));
        }
        s.push_str(&format!("speedup_ratio,{},\n", self.speedup));
        s
    }
}

/// Paired table of two finished runs.
pub fn compare(run_a: &Path, run_b: &Path) -> Result<Comparison> {
    let (a, b) = (load_summary(run_a)?, load_summary(run_b)?);
    read_metrics(&run_a.join("metrics.csv"))?;
    read_metrics(&run_b.join("metrics.csv"))?;
    let f = |v: f64| v.to_string();
    let o = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let rows = vec![
        ("mode".into(), a.mode.clone(), b.mode.clone()),
        ("steps".into(), a.steps.to_string(), b.steps.to_string()),
        ("final_regret".into(), f(a.final_regret), f(b.final_regret)),
        (
            "random_regret".into(),
            f(a.random_regret),
            f(b.random_regret),
        ),
        (
            "final_mean_bid".into(),
            f(a.final_mean_bid),
            f(b.final_mean_bid),
        ),
        ("final_mape".into(), o(a.final_mape), o(b.final_mape)),
        (
            "env_step_seconds".into(),
            f(a.env_step_seconds),
            f(b.env_step_seconds),
        ),
        (
            "train_step_seconds".into(),
            f(a.train_step_seconds),
            f(b.train_step_seconds),
        ),
    ];
    let speedup = if a.env_step_seconds == b.env_step_seconds {
        1.0
    } else {
        a.env_step_seconds / b.env_step_seconds
    };
    Ok(Comparison { rows, speedup })
}

pub type PlotEmitter = fn(&[PathBuf]) -> Result<String>;

pub fn plot_registry() -> Registry<PlotEmitter> {
    let mut r: Registry<PlotEmitter> = Registry::new("figure");
    r.register("bids", plot_bids)
        .register("regret_curve", plot_regret_curve)
        .register("regret_box", plot_regret_box)
        .register("mape_scatter", plot_mape_scatter);
    r
}

/// Plot-ready CSV for one figure kind over several runs.
pub fn emit_plot_data(runs: &[PathBuf], figure: &str) -> Result<String> {
    plot_registry().get(figure)?(runs)
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .replace(',', "_")
}

/// `run,mode,step,mean_bid,std_bid`: one row per metric interval.
fn plot_bids(runs: &[PathBuf]) -> Result<String> {
    let mut s = String::from("# schema: plot-bids v1\nrun,mode,step,mean_bid,std_bid\n");
    for dir in runs {
        load_summary(dir)?;
        for m in read_metrics(&dir.join("metrics.csv"))? {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                run_name(dir),
                m.mode,
                m.step,
                m.mean_bid,
                m.std_bid
            ));
        }
    }
    Ok(s)
}

fn regret_total(path: &Path) -> Result<f64> {
    let mut r = csv_reader(path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.get(0) == Some("mean") {
            return rec.get(6).and_then(|v| v.parse().ok()).ok_or_else(|| {
                Error::InvalidInput(format!("{}: bad summary row", path.display()))
            });
        }
    }
    Err(Error::InvalidInput(format!(
        "{}: no summary row",
        path.display()
    )))
}

/// `run,mode,step,total_regret`: one row per evaluation checkpoint.
fn plot_regret_curve(runs: &[PathBuf]) -> Result<String> {
    let mut s = String::from("# schema: plot-regret-curve v1\nrun,mode,step,total_regret\n");
    for dir in runs {
        let summary = load_summary(dir)?;
        let mut points = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            if let Some(step) = name
                .strip_prefix("regret_step")
                .and_then(|r| r.strip_suffix(".csv"))
                .and_then(|n| n.parse::<usize>().ok())
            {
                points.push((step, regret_total(&path)?));
            }
        }
        points.sort_by_key(|p| p.0);
        for (step, total) in points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                run_name(dir),
                summary.mode,
                step,
                total
            ));
        }
    }
    Ok(s)
}

/// `run,mode,final_regret,random_regret`: one row per run.
fn plot_regret_box(runs: &[PathBuf]) -> Result<String> {
    let mut s = String::from("# schema: plot-regret-box v1\nrun,mode,final_regret,random_regret\n");
    for dir in runs {
        let m = load_summary(dir)?;
        s.push_str(&format!(
            "{},{},{},{}\n",
            run_name(dir),
            m.mode,
            m.final_regret,
            m.random_regret
        ));
    }
    Ok(s)
}

/// `run,mape,total_regret`: one row per run that has a surrogate.
fn plot_mape_scatter(runs: &[PathBuf]) -> Result<String> {
    let mut s = String::from("# schema: plot-mape-scatter v1\nrun,mape,total_regret\n");
    for dir in runs {
        let m = load_summary(dir)?;
        if let Some(mape) = m.final_mape {
            s.push_str(&format!("{},{},{}\n", run_name(dir), mape, m.final_regret));
        }
    }
    Ok(s)
}
