mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amot::eval::{evaluate_labeled, fixed_baseline_policy, ipt_benchmark, GreedyPolicy};
use amot::neuralnet::{gradient_check, Checkpoint, GRADCHECK_TOLERANCE};
use amot::trainer::{evaluation_seeds, run_training, MetricsRecord, TrainError, TrainingSink};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "amot", version, about = "Train and evaluate cooperative camera control policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the shared Q-network.
    Train(TrainArgs),
    /// Evaluate a checkpoint or the fixed-camera baseline.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Measure ground-coordinate estimation error.
    IptBench(IptArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    outdir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(dir) = &self.outdir {
            cfg.run.outdir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    total_steps: Option<u64>,
    /// Reward term to disable; repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Print a progress line every this many episodes.
    #[arg(long, default_value_t = 10)]
    progress_every: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Evaluate cameras that never leave their home poses.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 20)]
    runs: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Corrupts one analytic gradient entry by this relative amount.
    #[arg(long, hide = true)]
    fault: Option<f64>,
}

#[derive(Args)]
struct IptArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Enable detector noise regardless of the config.
    #[arg(long)]
    noise: bool,
}

/// Writes metrics and checkpoints under the output directory.
struct DirSink {
    metrics: BufWriter<File>,
    checkpoints: PathBuf,
    progress_every: u64,
}

impl DirSink {
    fn create(outdir: &Path, progress_every: u64) -> Result<Self> {
        let checkpoints = outdir.join("checkpoints");
        fs::create_dir_all(&checkpoints).with_context(|| format!("cannot create {}", checkpoints.display()))?;
        let path = outdir.join("metrics.log");
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(Self {
            metrics: BufWriter::new(file),
            checkpoints,
            progress_every,
        })
    }
}

fn output_error(e: impl std::fmt::Display) -> TrainError {
    TrainError::Output(e.to_string())
}

impl TrainingSink for DirSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<(), TrainError> {
        let line = serde_json::to_string(record).map_err(output_error)?;
        writeln!(self.metrics, "{line}").map_err(output_error)?;
        match record {
            MetricsRecord::Header { topology, parameters, composition, .. } => {
                println!("network {topology}, {parameters} parameters");
                println!("reward {composition}");
            }
            MetricsRecord::Episode { episode, step, epsilon, loss, coverage, reward, .. }
                if self.progress_every > 0 && episode % self.progress_every == 0 =>
            {
                let loss = loss.map_or("-".to_string(), |l| format!("{l:.4}"));
                println!(
                    "episode {episode:>6} step {step:>8} eps {epsilon:.3} loss {loss} coverage {:.1}% reward {reward:.3}",
                    100.0 * coverage
                );
            }
            MetricsRecord::Eval { episode, coverage_mean, coverage_std, .. } => {
                println!(
                    "eval after episode {episode}: coverage {:.1}% +- {:.1}%",
                    100.0 * coverage_mean,
                    100.0 * coverage_std
                );
            }
            MetricsRecord::Episode { .. } => {}
        }
        Ok(())
    }

    fn checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<(), TrainError> {
        self.metrics.flush().map_err(output_error)?;
        let path = self.checkpoints.join(format!("step-{step}.ckpt"));
        checkpoint.save(&path).map_err(output_error)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn prepare_outdir(cfg: &RunConfig) -> Result<PathBuf> {
    let outdir = cfg.run.outdir.clone();
    fs::create_dir_all(&outdir).with_context(|| format!("cannot create {}", outdir.display()))?;
    write_file(&outdir.join("config.echo"), &cfg.to_toml()?)?;
    Ok(outdir)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(steps) = args.total_steps {
        cfg.trainer.total_steps = steps;
    }
    if let Some(k) = args.eval_every {
        cfg.trainer.eval_every_episodes = k;
    }
    if let Some(k) = args.checkpoint_every {
        cfg.trainer.checkpoint_every_episodes = k;
    }
    cfg.reward.ablate.extend(args.ablate.iter().cloned());
    let setup = cfg.training_setup()?;
    let outdir = prepare_outdir(&cfg)?;
    let mut sink = DirSink::create(&outdir, args.progress_every)?;
    let outcome = run_training(&setup, &mut sink)?;
    sink.metrics.flush()?;
    let summary = format!(
        "steps {}\nepisodes {}\noptimizer steps {}\nfinal checkpoint step-{}.ckpt\n",
        outcome.steps, outcome.episodes, outcome.optimizer_steps, outcome.steps
    );
    write_file(&outdir.join("report"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let cfg = args.common.load()?;
    let setup = cfg.env_setup()?;
    let seeds = evaluation_seeds(args.runs);
    let report = if args.baseline {
        evaluate_labeled("baseline", &mut fixed_baseline_policy(setup.world.n_cameras), &setup, &seeds)?
    } else {
        let path = args.checkpoint.as_deref().expect("clap requires a checkpoint");
        let expected = cfg.network.topology(&setup);
        let checkpoint = Checkpoint::load(path, Some(expected))
            .with_context(|| format!("cannot use checkpoint {}", path.display()))?;
        evaluate_labeled("greedy", &mut GreedyPolicy::new(&checkpoint.params), &setup, &seeds)?
    };
    let outdir = prepare_outdir(&cfg)?;
    write_file(&outdir.join("report"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!("{report}");
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    if args.trials == 0 {
        eprintln!("warning: zero trials, nothing was checked");
    }
    let report = gradient_check(args.seed, args.trials, args.fault)?;
    for (k, t) in report.trials.iter().enumerate() {
        println!("trial {k:>3}: {} max relative error {:.3e}", t.topology, t.max_relative_error);
    }
    let worst = report.max_relative_error();
    if report.passed() {
        println!("PASS max relative error {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_ipt_bench(args: &IptArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if args.noise {
        cfg.noise.enabled = true;
    }
    let report = ipt_benchmark(&cfg.env, args.steps, &cfg.noise, cfg.run.seed)?;
    println!("{report}");
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(args) => cmd_train(args)?,
        Command::Eval(args) => cmd_eval(args)?,
        Command::Gradcheck(args) => return cmd_gradcheck(args),
        Command::IptBench(args) => cmd_ipt_bench(args)?,
    }
    Ok(ExitCode::SUCCESS)
}
