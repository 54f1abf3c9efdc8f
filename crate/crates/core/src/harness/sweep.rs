use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::write_csv;
use super::train::{train, write_run, RunResult};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Kappa,
    KMax,
    LrLambda,
    Delta,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::Kappa, SweepAxis::KMax, SweepAxis::LrLambda, SweepAxis::Delta];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Kappa => "kappa",
            SweepAxis::KMax => "k_max",
            SweepAxis::LrLambda => "lr_lambda",
            SweepAxis::Delta => "delta",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = base.clone();
        match self {
            SweepAxis::Kappa => c.penalty_factor = value,
            SweepAxis::KMax => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!("k_max must be a non-negative integer, got {value}")));
                }
                c.iterative_step = value as usize;
            }
            SweepAxis::LrLambda => c.multiplier_lr = value,
            SweepAxis::Delta => c.cost_limit = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub axis: SweepAxis,
    pub value: f64,
    pub result: RunResult,
}

/// One line per run in `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub algo: String,
    pub env: EnvKind,
    pub total_cost_rate: f64,
    pub eval_return_mean: f64,
    pub eval_cost_rate_mean: f64,
}

/// Expands `values x seeds` into configs, in that nesting order.
pub fn plan(base: &RunConfig, axis: SweepAxis, values: &[f64], seeds: &[u64]) -> Result<Vec<(f64, RunConfig)>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(values.len() * seeds.len());
    for &v in values {
        for &s in seeds {
            let mut c = axis.apply(base, v)?;
            c.seed = s;
            out.push((v, c));
        }
    }
    Ok(out)
}

/// Trains every grid point in parallel. With `out`, each run is written to
/// `out/<axis>=<value>/seed=<seed>/` and a summary to `out/sweep.csv`.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64], seeds: &[u64], out: Option<&Path>) -> Result<Vec<SweepRun>> {
    let runs = plan(base, axis, values, seeds)?;
    let results: Vec<SweepRun> = runs
        .into_par_iter()
        .map(|(value, cfg)| -> Result<SweepRun> {
            let result = train(&cfg)?;
            if let Some(dir) = out {
                write_run(&result, &dir.join(format!("{axis}={value}")).join(format!("seed={}", cfg.seed)))?;
            }
            Ok(SweepRun { axis, value, result })
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = out {
        let rows: Vec<SweepRow> = results
            .iter()
            .map(|r| SweepRow {
                axis,
                value: r.value,
                seed: r.result.config.seed,
                algo: r.result.config.algo.to_string(),
                env: r.result.config.env,
                total_cost_rate: r.result.summary.total_cost_rate,
                eval_return_mean: r.result.summary.final_eval.return_mean,
                eval_cost_rate_mean: r.result.summary.final_eval.cost_rate_mean,
            })
            .collect();
        write_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(results)
}
