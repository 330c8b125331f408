use std::fs::{File, OpenOptions};
use std::path::Path;

use crate::error::Result;
use crate::trainer::{EvalSummary, Trainer, UpdateStats};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 15] = [
    "step",
    "wall_time",
    "updates",
    "episodes",
    "train_reward",
    "train_success",
    "eval_mean",
    "eval_se",
    "eval_reward",
    "eval_success",
    "policy_loss",
    "value_loss",
    "entropy",
    "grounding_loss",
    "grad_norm",
];

/// Append-only metrics file, one row per evaluation, flushed after each row.
pub struct MetricsWriter {
    writer: csv::Writer<File>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsWriter {
    /// Opens `path` for appending; the header is written only to a new or
    /// empty file.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(METRICS_COLUMNS)?;
            writer.flush()?;
        }
        Ok(MetricsWriter { writer })
    }

    /// `stats` holds the per-agent statistics of the latest update round.
    pub fn write(&mut self, trainer: &Trainer, wall_time: f64, eval: &EvalSummary, stats: &[UpdateStats]) -> Result<()> {
        let row = [
            trainer.env_steps.to_string(),
            format!("{wall_time:.3}"),
            trainer.updates.to_string(),
            trainer.episodes.to_string(),
            opt(trainer.recent_reward()),
            opt(trainer.recent_success()),
            eval.mean.to_string(),
            eval.std_error.to_string(),
            eval.reward_mean.to_string(),
            eval.success_rate.to_string(),
            opt(mean(stats.iter().map(|s| s.policy_loss))),
            opt(mean(stats.iter().map(|s| s.value_loss))),
            opt(mean(stats.iter().map(|s| s.entropy))),
            opt(mean(stats.iter().filter_map(|s| s.grounding_loss))),
            opt(mean(stats.iter().map(|s| s.grad_norm))),
        ];
        self.writer.write_record(&row)?;
        self.writer.flush()?;
        Ok(())
    }
}
