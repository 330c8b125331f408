//! Configuration files, checkpoints, metrics and the run drivers behind the
//! command line tool.

mod checkpoint;
mod config;
mod metrics;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use config::{RunConfig, RunSection, OUTPUT_ROOT_VAR, PRESETS};
pub use metrics::{MetricsWriter, METRICS_COLUMNS};

use crate::analysis::{analyze_run, AnalysisConfig, RunAnalysis};
use crate::error::{Error, Result};
use crate::trainer::{eval_seed, run_training, EvalSummary, RoundReport, Trainer, TrainingHooks, UpdateStats};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Hooks that write metrics rows and periodic checkpoints for one run.
struct RunHooks {
    dir: PathBuf,
    metrics: MetricsWriter,
    start: Instant,
    last_stats: Vec<UpdateStats>,
}

impl TrainingHooks for RunHooks {
    fn on_round(&mut self, _trainer: &Trainer, report: &RoundReport) -> Result<()> {
        self.last_stats.clone_from(&report.stats);
        Ok(())
    }

    fn on_eval(&mut self, trainer: &Trainer, summary: &EvalSummary) -> Result<()> {
        let wall = self.start.elapsed().as_secs_f64();
        self.metrics.write(trainer, wall, summary, &self.last_stats)?;
        log::info!(
            "step {} eval {:.3} ± {:.3} train {} ({wall:.0}s)",
            trainer.env_steps,
            summary.mean,
            summary.std_error,
            trainer.recent_reward().map_or("-".into(), |r| format!("{r:.3}")),
        );
        Ok(())
    }

    fn on_checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        let path = self.dir.join(CHECKPOINT_DIR).join(format!("step_{:010}.ckpt", trainer.env_steps));
        save_checkpoint(&path, trainer)?;
        log::info!("checkpoint {}", path.display());
        Ok(())
    }
}

/// What a finished training run left behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub trainer: Trainer,
}

fn check_resumable(cfg: &RunConfig, seed: u64, t: &Trainer) -> Result<()> {
    let mismatch = |what: &str| {
        Err(Error::Checkpoint {
            section: "meta".into(),
            reason: format!("checkpoint {what} differs from the requested run"),
        })
    };
    if t.seed != seed {
        return mismatch("seed");
    }
    if t.env != cfg.env {
        return mismatch("environment");
    }
    if t.cacl != cfg.cacl {
        return mismatch("grounding config");
    }
    let mut train = cfg.train.clone();
    train.total_steps = t.train.total_steps;
    if train != t.train {
        return mismatch("training config");
    }
    if cfg.train.total_steps < t.env_steps {
        return Err(Error::Config(format!(
            "checkpoint is already at step {}, beyond total_steps {}",
            t.env_steps, cfg.train.total_steps
        )));
    }
    Ok(())
}

/// Trains one seed of `cfg`, writing the resolved config, the metrics CSV,
/// periodic checkpoints and a final checkpoint under the run directory.
/// With `resume`, training continues from that checkpoint and metrics are
/// appended.
pub fn train_seed(cfg: &RunConfig, seed: u64, resume: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.run_dir(seed);
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut trainer = match resume {
        Some(path) => {
            let t = load_checkpoint(path)?;
            check_resumable(cfg, seed, &t)?;
            let mut t = t;
            t.train.total_steps = cfg.train.total_steps;
            log::info!("resuming {} at step {}", path.display(), t.env_steps);
            t
        }
        None => {
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path)?;
            }
            Trainer::new(cfg.train.clone(), cfg.env.clone(), cfg.cacl.clone(), seed)?
        }
    };
    std::fs::write(dir.join(CONFIG_FILE), cfg.for_seed(seed).to_toml()?)?;
    let mut hooks =
        RunHooks { dir: dir.clone(), metrics: MetricsWriter::append(&metrics_path)?, start: Instant::now(), last_stats: vec![] };
    run_training(&mut trainer, &mut hooks)?;
    save_checkpoint(&dir.join(FINAL_CHECKPOINT), &trainer)?;
    Ok(RunOutcome { dir, trainer })
}

/// Trains every seed listed in the config, one after another.
pub fn train_all(cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    cfg.run.seeds.iter().map(|&s| train_seed(cfg, s, None)).collect()
}

/// Evaluates a checkpoint. Without an explicit seed the evaluation stream is
/// derived from the run seed.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: Option<u64>) -> Result<(EvalSummary, u64)> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let t = load_checkpoint(path)?;
    let seed = seed.unwrap_or_else(|| eval_seed(t.seed, u64::MAX));
    let summary = crate::trainer::evaluate(&t.agents, &t.env, episodes, seed, t.arrival_rate())?;
    Ok((summary, seed))
}

/// `key = value` rendering of an evaluation summary.
pub fn eval_report(summary: &EvalSummary, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "episodes = {}", summary.rows.len());
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "mean = {}", summary.mean);
    let _ = writeln!(s, "std_error = {}", summary.std_error);
    let _ = writeln!(s, "reward_mean = {}", summary.reward_mean);
    let _ = writeln!(s, "success_rate = {}", summary.success_rate);
    for r in &summary.rows {
        let _ = writeln!(s, "episode_{} = {} {} {}", r.episode, r.reward, r.success, r.length);
    }
    s
}

/// Message clustering for a checkpoint; writes `<stem>.analysis.txt` and
/// `<stem>.messages.csv` into `out_dir`.
pub fn analyze_checkpoint(path: &Path, config: &AnalysisConfig, out_dir: &Path) -> Result<RunAnalysis> {
    let t = load_checkpoint(path)?;
    let analysis = analyze_run(&t.agents, &t.env, t.arrival_rate(), config)?;
    std::fs::create_dir_all(out_dir)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    analysis.write_report(&out_dir.join(format!("{stem}.analysis.txt")))?;
    analysis.write_points(&out_dir.join(format!("{stem}.messages.csv")))?;
    Ok(analysis)
}
