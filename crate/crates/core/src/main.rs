use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use saferl::envs::EnvKind;
use saferl::harness::checkpoint;
use saferl::harness::{evaluate, sweep, train_to_dir, Algo, RunConfig, SweepAxis};
use saferl::oracle;

#[derive(Parser)]
#[command(name = "saferl", version, about = "State-wise safe off-policy RL: training, evaluation, sweeps, and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write CSV logs, summary, and checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Refuse checkpoints trained by a different algorithm.
        #[arg(long)]
        algo: Option<Algo>,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
    },
    /// Train one run per value and seed of a hyperparameter.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Run the oracle suites and report deviations.
    Verify,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::new(Algo::Usl, EnvKind::Stabilization);
        let mut steps_set = false;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            steps_set = text
                .lines()
                .any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("total_steps"));
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(a) = self.algo {
            cfg.algo = a;
        }
        if let Some(e) = self.env {
            cfg.env = e;
            if !steps_set {
                cfg.total_steps = saferl::harness::config::default_total_steps(e);
            }
        }
        if let Some(s) = self.steps {
            cfg.total_steps = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{o}`");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { run, out } => {
            let cfg = run.resolve()?;
            eprintln!("training {} on {} for {} steps (seed {})", cfg.algo, cfg.env, cfg.total_steps, cfg.seed);
            let result = train_to_dir(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            eprintln!("wrote {}", out.display());
        }
        Command::Eval {
            checkpoint: path,
            episodes,
            algo,
            seed,
        } => {
            let ck = match algo {
                Some(a) => checkpoint::load_for(&path, a)?,
                None => checkpoint::load(&path)?,
            };
            let summary = evaluate(&ck.agent, episodes, seed, ck.manifest.step)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            run,
            out,
        } => {
            let base = run.resolve()?;
            let runs = sweep(&base, axis, &values, &seeds, Some(&out))?;
            for r in &runs {
                let s = &r.result.summary;
                println!(
                    "{axis}={} seed={} total_cost_rate={:.4} eval_return={:.2} eval_cost_rate={:.4}",
                    r.value, s.seed, s.total_cost_rate, s.final_eval.return_mean, s.final_eval.cost_rate_mean
                );
            }
            eprintln!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Verify => {
            let reports = oracle::run_all()?;
            for r in &reports {
                println!("{r}");
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
