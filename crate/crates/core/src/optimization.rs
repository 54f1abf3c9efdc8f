//! Primal-dual baselines: an off-policy Lagrangian with one scalar multiplier,
//! and Feasible Actor-Critic with a state-dependent multiplier network.

use serde::{Deserialize, Serialize};

use crate::approximator::{Adam, Mlp, MlpSpec, OutputActivation};
use crate::backbone::{q_values, ActorObjective, AgentBundle};
use crate::error::{Error, Result};
use crate::replay::Batch;

pub const DEFAULT_MULTIPLIER_LR: f64 = 1e-5;
pub const DEFAULT_MULTIPLIER_DELAY: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMultiplier {
    pub lambda: f64,
    pub lr: f64,
}

impl ScalarMultiplier {
    pub fn new(lambda: f64, lr: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !(lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "multiplier needs lambda >= 0 and lr > 0, got {lambda} and {lr}"
            )));
        }
        Ok(Self { lambda, lr })
    }

    /// `λ ← max(0, λ + lr (mean_qc - eps))`.
    pub fn dual_step(&mut self, mean_qc: f64, eps: f64) {
        self.lambda = (self.lambda + self.lr * (mean_qc - eps)).max(0.0);
    }

    /// Dual step using the current actor's cost estimate on `batch`.
    pub fn dual_update(&mut self, bundle: &AgentBundle, batch: &Batch, eps: f64) -> Result<()> {
        let act = bundle.actor.net.forward_batch(&batch.obs, batch.len)?.into_output();
        let qc = q_values(&bundle.qc.net, &batch.obs, bundle.obs_dim, &act, bundle.act_dim)?;
        self.dual_step(qc.iter().sum::<f64>() / batch.len as f64, eps);
        Ok(())
    }

    pub fn objective(&self) -> LagrangianObjective {
        LagrangianObjective { lambda: self.lambda }
    }
}

/// `-Q(s, π(s)) + λ Q_c(s, π(s))` with λ held constant.
pub struct LagrangianObjective {
    pub lambda: f64,
}

impl ActorObjective for LagrangianObjective {
    fn uses_cost(&self) -> bool {
        self.lambda != 0.0
    }

    fn sample_loss(&self, _i: usize, q: f64, qc: f64) -> (f64, f64, f64) {
        (-q + self.lambda * qc, -1.0, self.lambda)
    }
}

/// `-Q(s_i, π(s_i)) + λ_i (Q_c(s_i, π(s_i)) - eps)` with per-state multipliers
/// evaluated beforehand and held constant.
pub struct FacObjective {
    pub lambdas: Vec<f64>,
    pub eps: f64,
}

impl ActorObjective for FacObjective {
    fn uses_cost(&self) -> bool {
        true
    }

    fn sample_loss(&self, i: usize, q: f64, qc: f64) -> (f64, f64, f64) {
        let lambda = self.lambdas[i];
        (-q + lambda * (qc - self.eps), -1.0, lambda)
    }
}

/// Softplus-headed network `s -> λ(s) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierNet {
    pub net: Mlp,
    pub opt: Adam,
    pub delay: u64,
}

impl MultiplierNet {
    pub fn new(obs_dim: usize, seed: u64, lr: f64, delay: u64) -> Result<Self> {
        let net = Mlp::new(MlpSpec::two_hidden(obs_dim, 1, OutputActivation::Softplus)?, seed)?;
        let opt = Adam::new(net.params().len(), lr);
        Ok(Self { net, opt, delay })
    }

    pub fn lambdas(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let n = obs.len() / self.net.input_dim();
        Ok(self.net.forward_batch(obs, n)?.into_output())
    }

    pub fn objective(&self, obs: &[f64], eps: f64) -> Result<FacObjective> {
        Ok(FacObjective {
            lambdas: self.lambdas(obs)?,
            eps,
        })
    }

    pub fn due(&self, update_counter: u64) -> bool {
        update_counter > 0 && update_counter % self.delay.max(1) == 0
    }

    /// One ascent step on `mean λ(s) (Q_c(s, π(s)) - eps)` with the actor and
    /// cost critic frozen. Returns the batch-mean multiplier before the step.
    pub fn ascend(&mut self, bundle: &AgentBundle, batch: &Batch, eps: f64) -> Result<f64> {
        let n = batch.len;
        let act = bundle.actor.net.forward_batch(&batch.obs, n)?.into_output();
        let qc = q_values(&bundle.qc.net, &batch.obs, bundle.obs_dim, &act, bundle.act_dim)?;
        self.ascend_on_gaps(&batch.obs, &qc.iter().map(|q| q - eps).collect::<Vec<_>>())
    }

    /// Ascent step given precomputed constraint gaps `Q_c - eps` per state.
    pub fn ascend_on_gaps(&mut self, obs: &[f64], gaps: &[f64]) -> Result<f64> {
        let n = gaps.len();
        let tape = self.net.forward_batch(obs, n)?;
        let mean = tape.output().iter().sum::<f64>() / n as f64;
        // Adam minimizes, so descend the negated objective.
        let upstream: Vec<f64> = gaps.iter().map(|g| -g / n as f64).collect();
        let mut grad = vec![0.0; self.net.params().len()];
        self.net.backward(&tape, &upstream, Some(&mut grad), false)?;
        self.opt.step(self.net.params_mut(), &grad)?;
        Ok(mean)
    }
}
