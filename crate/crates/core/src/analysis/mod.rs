//! Clustering analysis of the messages agents send during evaluation.

mod dbscan;
mod silhouette;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dbscan::dbscan;
pub use silhouette::silhouette;

use crate::envs::{Env, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::nets::{AgentNet, Message};
use crate::trainer::{evaluate, SentMessage};

pub const DEFAULT_EPS: f64 = 0.15;
pub const DEFAULT_MIN_PTS: usize = 4;
pub const DEFAULT_EPISODES: usize = 7;

/// Messages with the episode, step and agent that produced each one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessagePointSet {
    pub points: Vec<Message>,
    pub episode: Vec<usize>,
    pub step: Vec<usize>,
    pub agent: Vec<usize>,
}

impl MessagePointSet {
    pub fn from_sent(sent: &[SentMessage]) -> Self {
        MessagePointSet {
            points: sent.iter().map(|s| s.message).collect(),
            episode: sent.iter().map(|s| s.episode).collect(),
            step: sent.iter().map(|s| s.step).collect(),
            agent: sent.iter().map(|s| s.agent).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub clusters: usize,
    pub noise: usize,
    /// Silhouette coefficient; `None` with fewer than two clusters.
    pub silhouette: Option<f64>,
}

impl ClusterReport {
    pub fn compute<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> Self {
        let labels = dbscan(points, eps, min_pts);
        let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        let noise = labels.iter().filter(|l| l.is_none()).count();
        let silhouette = silhouette(points, &labels);
        ClusterReport { labels, clusters, noise, silhouette }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub episodes: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { episodes: DEFAULT_EPISODES, eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS, seed: 0 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("analysis needs at least one episode".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunAnalysis {
    pub config: AnalysisConfig,
    pub points: MessagePointSet,
    pub report: ClusterReport,
}

/// Runs evaluation episodes, pools every message sent by every agent and
/// clusters the raw message vectors.
pub fn analyze_run(
    agents: &[AgentNet],
    env: &EnvConfig,
    arrival_rate: Option<f64>,
    config: &AnalysisConfig,
) -> Result<RunAnalysis> {
    config.validate()?;
    let probe = Env::new(env)?;
    if agents.len() != probe.n_agents() {
        return Err(Error::Contract(format!(
            "checkpoint holds {} agents, environment has {}",
            agents.len(),
            probe.n_agents()
        )));
    }
    if let Some(a) = agents.iter().find(|a| a.config.obs_dim != probe.obs_dim() || a.config.n_actions != probe.n_actions()) {
        return Err(Error::Contract(format!(
            "agent expects {} observations and {} actions, environment gives {} and {}",
            a.config.obs_dim,
            a.config.n_actions,
            probe.obs_dim(),
            probe.n_actions()
        )));
    }
    let summary = evaluate(agents, env, config.episodes, config.seed, arrival_rate)?;
    let points = MessagePointSet::from_sent(&summary.messages);
    let report = ClusterReport::compute(&points.points, config.eps, config.min_pts);
    Ok(RunAnalysis { config: config.clone(), points, report })
}

impl RunAnalysis {
    /// Plain-text `key = value` report.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let sc = self.report.silhouette.map_or("unavailable".to_string(), |v| format!("{v}"));
        let _ = writeln!(s, "NC = {}", self.report.clusters);
        let _ = writeln!(s, "NP = {}", self.report.noise);
        let _ = writeln!(s, "SC = {sc}");
        let _ = writeln!(s, "eps = {}", self.config.eps);
        let _ = writeln!(s, "min_pts = {}", self.config.min_pts);
        let _ = writeln!(s, "episodes = {}", self.config.episodes);
        let _ = writeln!(s, "seed = {}", self.config.seed);
        let _ = writeln!(s, "messages = {}", self.points.len());
        s
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.report_text())?;
        Ok(())
    }

    /// Points CSV: `episode,step,agent,m1,m2,m3,m4,label` with label `-1` for noise.
    pub fn write_points(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["episode", "step", "agent", "m1", "m2", "m3", "m4", "label"])?;
        let p = &self.points;
        for i in 0..p.len() {
            let label = self.report.labels[i].map_or(-1, |c| c as i64);
            let mut row = vec![p.episode[i].to_string(), p.step[i].to_string(), p.agent[i].to_string()];
            row.extend(p.points[i].iter().map(|v| v.to_string()));
            row.push(label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
