use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{Agent, NetSeeds};
use super::checkpoint;
use super::config::{Algo, RunConfig};
use super::metrics::{cost_rate, mean_std, write_csv, write_json, EpisodeAccumulator, EvalRow, EvalSummary, TrainRow};
use crate::envs::EnvKind;
use crate::error::Result;
use crate::projection::ProjectionDiagnostics;
use crate::replay::{ReplayBuffer, Transition};
use crate::usl::UslDiagnostics;

/// Independent random streams of one run, all derived from its seed.
struct Streams {
    nets: NetSeeds,
    noise: ChaCha8Rng,
    sample: ChaCha8Rng,
    reset: ChaCha8Rng,
    eval_seed: u64,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let nets = NetSeeds::draw(&mut master);
        Self {
            nets,
            noise: ChaCha8Rng::seed_from_u64(master.gen()),
            sample: ChaCha8Rng::seed_from_u64(master.gen()),
            reset: ChaCha8Rng::seed_from_u64(master.gen()),
            eval_seed: master.gen(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: Algo,
    pub env: EnvKind,
    pub seed: u64,
    pub total_steps: u64,
    pub total_cost: u64,
    pub total_cost_rate: f64,
    pub episodes: u64,
    pub final_eval: EvalSummary,
    pub usl: UslDiagnostics,
    pub projection: Option<ProjectionDiagnostics>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub agent: Agent,
    pub train_rows: Vec<TrainRow>,
    pub eval_rows: Vec<EvalRow>,
    pub summary: RunSummary,
    /// Seed of the first evaluation episode; episode `i` uses `eval_seed + i`.
    pub eval_seed: u64,
}

/// Deterministic rollouts of the agent's full action pipeline, with
/// warm-up-gated safeguards in the state they have at `step`.
pub fn evaluate(agent: &Agent, episodes: usize, seed: u64, step: u64) -> Result<EvalSummary> {
    let mut agent = agent.clone();
    let cfg = agent.config.clone();
    let mut env = cfg.env.make(cfg.horizon);
    let mut returns = Vec::with_capacity(episodes);
    let mut rates = Vec::with_capacity(episodes);
    let mut lens = Vec::with_capacity(episodes);
    let (mut iters, mut calls) = (0u64, 0u64);
    for i in 0..episodes {
        let mut obs = env.reset(seed.wrapping_add(i as u64));
        let (mut ret, mut len, mut costs) = (0.0, 0u64, 0u64);
        loop {
            let d = agent.decide::<ChaCha8Rng>(&obs, env.prev_cost(), step, None)?;
            if let Some(k) = d.usl_iterations {
                iters += k as u64;
                calls += 1;
            }
            let r = env.step(&d.action)?;
            ret += r.reward;
            len += 1;
            costs += r.cost as u64;
            if r.done {
                break;
            }
            obs = r.next_obs;
        }
        returns.push(ret);
        rates.push(cost_rate(costs, len));
        lens.push(len as f64);
    }
    let (return_mean, return_std) = mean_std(&returns);
    let (cost_rate_mean, cost_rate_std) = mean_std(&rates);
    Ok(EvalSummary {
        episodes,
        return_mean,
        return_std,
        cost_rate_mean,
        cost_rate_std,
        len_mean: mean_std(&lens).0,
        usl_iters_mean: if calls == 0 { 0.0 } else { iters as f64 / calls as f64 },
        returns,
        cost_rates: rates,
    })
}

/// Runs the full training loop for `config`.
pub fn train(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let started = Instant::now();
    let mut streams = Streams::new(config.seed);
    let mut agent = Agent::new(config, streams.nets)?;
    let mut env = config.env.make(config.horizon);
    let spec = env.spec();
    let mut buffer = ReplayBuffer::new(config.replay_capacity, spec.obs_dim, spec.act_dim);
    let (seed, algo, env_kind) = (config.seed, config.algo, config.env);

    let mut train_rows = Vec::new();
    let mut eval_rows = Vec::new();
    let mut total_cost = 0u64;
    let mut episode = 0u64;
    let mut acc = EpisodeAccumulator::default();
    let mut obs = env.reset(streams.reset.gen());

    for t in 0..config.total_steps {
        let timer = Instant::now();
        let d = if t < config.start_steps {
            agent.random_decision(&mut streams.noise)
        } else {
            agent.decide(&obs, env.prev_cost(), t, Some(&mut streams.noise))?
        };
        acc.act_time_us += timer.elapsed().as_secs_f64() * 1e6;

        let prev_cost = env.prev_cost();
        let r = env.step(&d.action)?;
        acc.ret += r.reward;
        acc.len += 1;
        acc.cost_count += r.cost as u64;
        total_cost += r.cost as u64;
        acc.recovery_steps += d.used_recovery as u64;
        if let Some(k) = d.usl_iterations {
            acc.usl_iters += k as u64;
            acc.usl_calls += 1;
        }
        let done = r.done;
        let next_obs = r.next_obs;
        buffer.push(Transition {
            obs: std::mem::replace(&mut obs, next_obs.clone()),
            action: d.action,
            next_obs,
            reward: r.reward,
            cost: r.cost,
            done: if r.terminal { 1.0 } else { 0.0 },
            prev_cost,
            task_action: d.task_action,
        })?;

        if t >= config.start_steps {
            let batch = buffer.sample(config.hyper.batch_size, &mut streams.sample)?;
            agent.update(&batch, t, &mut streams.sample)?;
        }
        acc.lambda_sum += agent.last_lambda;

        let steps_done = t + 1;
        if done {
            train_rows.push(acc.row(steps_done, episode, total_cost, seed, algo, env_kind));
            episode += 1;
            acc = EpisodeAccumulator::default();
            obs = env.reset(streams.reset.gen());
        }
        if config.eval_every > 0 && steps_done % config.eval_every == 0 && steps_done < config.total_steps {
            let s = evaluate(&agent, config.eval_episodes, streams.eval_seed, steps_done)?;
            eval_rows.push(EvalRow::new(steps_done, &s, seed, algo, env_kind));
        }
    }

    let final_eval = evaluate(&agent, config.eval_episodes, streams.eval_seed, config.total_steps)?;
    eval_rows.push(EvalRow::new(config.total_steps, &final_eval, seed, algo, env_kind));
    let summary = RunSummary {
        algo,
        env: env_kind,
        seed,
        total_steps: config.total_steps,
        total_cost,
        total_cost_rate: cost_rate(total_cost, config.total_steps),
        episodes: episode,
        final_eval,
        usl: agent.usl_diagnostics,
        projection: agent.safety.as_ref().map(|s| s.diagnostics.clone()),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        config: config.clone(),
        agent,
        train_rows,
        eval_rows,
        summary,
        eval_seed: streams.eval_seed,
    })
}

pub const TRAIN_CSV: &str = "train.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes the CSV logs, summary, resolved config, and final checkpoint of a
/// finished run into `dir`.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(TRAIN_CSV), &result.train_rows)?;
    write_csv(&dir.join(EVAL_CSV), &result.eval_rows)?;
    write_json(&dir.join(SUMMARY_FILE), &result.summary)?;
    write_json(&dir.join(CONFIG_FILE), &result.config)?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &result.agent, result.config.total_steps)?;
    Ok(())
}

pub fn train_to_dir(config: &RunConfig, dir: &Path) -> Result<RunResult> {
    let result = train(config)?;
    write_run(&result, dir)?;
    Ok(result)
}
