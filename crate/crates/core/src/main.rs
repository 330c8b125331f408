use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use emcomm::analysis::AnalysisConfig;
use emcomm::harness::{
    analyze_checkpoint, eval_checkpoint, eval_report, train_seed, RunConfig, OUTPUT_ROOT_VAR, PRESETS,
};

#[derive(Parser)]
#[command(name = "emcomm", version, about = "Train and analyze grounded emergent-communication agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Cluster the messages a checkpoint's agents send.
    Analyze(AnalyzeArgs),
    /// Print the fully resolved configuration.
    InspectConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file or preset name.
    #[arg(long, short)]
    config: String,
    /// Override a key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Train these seeds instead of the configured ones.
    #[arg(long, num_args = 1..)]
    seed: Vec<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Grounding loss weight.
    #[arg(long)]
    kappa: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    /// Output root; defaults to the config value, then $EMCOMM_OUT, then ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = RunConfig::load(&self.config)?;
        let mut overrides = self.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push(format!("{k}={v}"));
            }
        };
        push("train.method", self.method.as_ref().map(|m| format!("\"{m}\"")));
        push("cacl.weight", self.kappa.map(|v| format!("{v:?}")));
        push("cacl.temperature", self.tau.map(|v| format!("{v:?}")));
        push("train.total_steps", self.steps.map(|v| v.to_string()));
        push("train.workers", self.workers.map(|v| v.to_string()));
        push("run.name", self.name.as_ref().map(|n| format!("\"{n}\"")));
        if !self.seed.is_empty() {
            let seeds: Vec<String> = self.seed.iter().map(u64::to_string).collect();
            push("run.seeds", Some(format!("[{}]", seeds.join(", "))));
        }
        if let Some(out) = &self.out {
            push("run.output_dir", Some(format!("{:?}", out.display().to_string())));
        }
        Ok(base.with_overrides(&overrides)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from this checkpoint (single seed only).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 12)]
    episodes: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Summary file; defaults to `<checkpoint>.eval.txt`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 7)]
    episodes: usize,
    #[arg(long, default_value_t = emcomm::analysis::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = emcomm::analysis::DEFAULT_MIN_PTS)]
    min_pts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the report and points CSV; defaults to the checkpoint's.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.resume.is_some() && cfg.run.seeds.len() != 1 {
        bail!("--resume needs exactly one seed, got {:?}", cfg.run.seeds);
    }
    for &seed in &cfg.run.seeds {
        let out = train_seed(&cfg, seed, args.resume.as_deref())
            .with_context(|| format!("training seed {seed}"))?;
        println!("seed {seed}: {} steps, artifacts in {}", out.trainer.env_steps, out.dir.display());
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (summary, seed) = eval_checkpoint(&args.checkpoint, args.episodes, args.seed)?;
    let text = eval_report(&summary, seed);
    let path = args.output.clone().unwrap_or_else(|| args.checkpoint.with_extension("eval.txt"));
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    println!("{:.4} ± {:.4} over {} episodes ({})", summary.mean, summary.std_error, args.episodes, path.display());
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let cfg = AnalysisConfig { episodes: args.episodes, eps: args.eps, min_pts: args.min_pts, seed: args.seed };
    let out_dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(PathBuf::from).unwrap_or_default(),
    };
    let a = analyze_checkpoint(&args.checkpoint, &cfg, &out_dir)?;
    print!("{}", a.report_text());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::InspectConfig(a) => {
            let cfg = a.resolve()?;
            println!("# presets: {}", PRESETS.join(", "));
            println!("# output root: {} (${OUTPUT_ROOT_VAR})", cfg.output_root().display());
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}
