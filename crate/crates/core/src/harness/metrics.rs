use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Algo;
use crate::envs::EnvKind;
use crate::error::Result;

/// Cost signals per step; zero for an empty span.
pub fn cost_rate(cost_count: u64, steps: u64) -> f64 {
    if steps == 0 {
        0.0
    } else {
        cost_count as f64 / steps as f64
    }
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    /// Cumulative training steps when the episode ended.
    pub step: u64,
    pub episode: u64,
    pub ep_return: f64,
    pub ep_len: u64,
    pub ep_cost_count: u64,
    pub ep_cost_rate: f64,
    /// Cumulative cost signals over cumulative training steps.
    pub total_cost_rate: f64,
    pub lambda_mean: f64,
    pub recovery_frac: f64,
    pub usl_iters_mean: f64,
    /// Mean wall-clock microseconds spent choosing each action.
    pub act_time_us: f64,
    pub seed: u64,
    pub algo: Algo,
    pub env: EnvKind,
}

impl TrainRow {
    /// Equality on every column except the wall-clock timing.
    pub fn same_outcome(&self, other: &TrainRow) -> bool {
        let mut a = self.clone();
        a.act_time_us = other.act_time_us;
        a == *other
    }
}

/// Running sums for the episode in progress.
#[derive(Debug, Clone, Default)]
pub struct EpisodeAccumulator {
    pub ret: f64,
    pub len: u64,
    pub cost_count: u64,
    pub lambda_sum: f64,
    pub recovery_steps: u64,
    pub usl_iters: u64,
    pub usl_calls: u64,
    pub act_time_us: f64,
}

impl EpisodeAccumulator {
    pub fn row(&self, step: u64, episode: u64, total_cost: u64, seed: u64, algo: Algo, env: EnvKind) -> TrainRow {
        let per_step = |x: f64| if self.len == 0 { 0.0 } else { x / self.len as f64 };
        TrainRow {
            step,
            episode,
            ep_return: self.ret,
            ep_len: self.len,
            ep_cost_count: self.cost_count,
            ep_cost_rate: cost_rate(self.cost_count, self.len),
            total_cost_rate: cost_rate(total_cost, step),
            lambda_mean: per_step(self.lambda_sum),
            recovery_frac: per_step(self.recovery_steps as f64),
            usl_iters_mean: if self.usl_calls == 0 {
                0.0
            } else {
                self.usl_iters as f64 / self.usl_calls as f64
            },
            act_time_us: per_step(self.act_time_us),
            seed,
            algo,
            env,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_rate_mean: f64,
    pub cost_rate_std: f64,
    pub len_mean: f64,
    pub usl_iters_mean: f64,
    pub returns: Vec<f64>,
    pub cost_rates: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One evaluation point during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_rate_mean: f64,
    pub cost_rate_std: f64,
    pub len_mean: f64,
    pub usl_iters_mean: f64,
    pub seed: u64,
    pub algo: Algo,
    pub env: EnvKind,
}

impl EvalRow {
    pub fn new(step: u64, s: &EvalSummary, seed: u64, algo: Algo, env: EnvKind) -> Self {
        Self {
            step,
            episodes: s.episodes,
            return_mean: s.return_mean,
            return_std: s.return_std,
            cost_rate_mean: s.cost_rate_mean,
            cost_rate_std: s.cost_rate_std,
            len_mean: s.len_mean,
            usl_iters_mean: s.usl_iters_mean,
            seed,
            algo,
            env,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes rows to CSV text, header included.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_train_csv(path: &Path) -> Result<Vec<TrainRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TrainRow>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
