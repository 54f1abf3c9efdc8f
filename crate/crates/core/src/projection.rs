//! Safety layer: a learned linear cost model `c_t ≈ g(s_t)ᵀ a_t + c_{t-1}`
//! and the closed-form projection of an action onto its halfspace
//! `gᵀ a + c_{t-1} ≤ ε`.

use serde::{Deserialize, Serialize};

use crate::approximator::{Adam, Mlp, MlpSpec, OutputActivation};
use crate::error::{check_dim, Result};
use crate::replay::Batch;

/// Squared norms below this make the projection undefined.
pub const DEGENERATE_NORM_SQ: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionStatus {
    /// Already inside the halfspace; returned unchanged.
    Feasible,
    Projected,
    /// Predicted violation but `g ≈ 0`; returned unchanged.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Projected action before box clamping.
    pub unclamped: Vec<f64>,
    /// Final action in `[-1, 1]^m`.
    pub action: Vec<f64>,
    pub status: ProjectionStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a* = μ - [(gᵀμ + c - ε) / gᵀg]⁺ g`, then clamped to the unit box.
pub fn safe_project(mu: &[f64], g: &[f64], prev_cost: f64, eps: f64) -> Projection {
    let violation = dot(g, mu) + prev_cost - eps;
    let (unclamped, status) = if violation <= 0.0 {
        (mu.to_vec(), ProjectionStatus::Feasible)
    } else {
        let norm_sq = dot(g, g);
        if norm_sq < DEGENERATE_NORM_SQ {
            (mu.to_vec(), ProjectionStatus::Degenerate)
        } else {
            let multiplier = violation / norm_sq;
            (
                mu.iter().zip(g).map(|(m, gi)| m - multiplier * gi).collect(),
                ProjectionStatus::Projected,
            )
        }
    };
    Projection {
        action: unclamped.iter().map(|a| a.clamp(-1.0, 1.0)).collect(),
        unclamped,
        status,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    pub projected: u64,
    pub degenerate: u64,
    /// Box clamping pushed a projected action back outside the halfspace.
    pub clamp_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCostModel {
    pub g_net: Mlp,
    pub opt: Adam,
}

impl LinearCostModel {
    pub fn new(obs_dim: usize, act_dim: usize, seed: u64, lr: f64) -> Result<Self> {
        let g_net = Mlp::new(MlpSpec::two_hidden(obs_dim, act_dim, OutputActivation::Identity)?, seed)?;
        let opt = Adam::new(g_net.params().len(), lr);
        Ok(Self { g_net, opt })
    }

    pub fn coefficients(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.g_net.forward(obs)
    }

    pub fn predict(&self, obs: &[f64], action: &[f64], prev_cost: f64) -> Result<f64> {
        let g = self.coefficients(obs)?;
        check_dim("action", g.len(), action.len())?;
        Ok(dot(&g, action) + prev_cost)
    }

    fn residuals(&self, batch: &Batch, g: &[f64]) -> Vec<f64> {
        (0..batch.len)
            .map(|i| {
                let gi = &g[i * batch.act_dim..(i + 1) * batch.act_dim];
                dot(gi, batch.action_row(i)) + batch.prev_cost[i] - batch.cost[i]
            })
            .collect()
    }

    /// Mean squared error of the linear model on `batch`.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let g = self.g_net.forward_batch(&batch.obs, batch.len)?.into_output();
        let r = self.residuals(batch, &g);
        Ok(r.iter().map(|x| x * x).sum::<f64>() / batch.len as f64)
    }

    /// One Adam step on the model's squared error; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let n = batch.len;
        let tape = self.g_net.forward_batch(&batch.obs, n)?;
        let r = self.residuals(batch, tape.output());
        let mut upstream = Vec::with_capacity(n * batch.act_dim);
        for (i, ri) in r.iter().enumerate() {
            upstream.extend(batch.action_row(i).iter().map(|a| 2.0 * ri * a / n as f64));
        }
        let mut grad = vec![0.0; self.g_net.params().len()];
        self.g_net.backward(&tape, &upstream, Some(&mut grad), false)?;
        self.opt.step(self.g_net.params_mut(), &grad)?;
        Ok(r.iter().map(|x| x * x).sum::<f64>() / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyLayer {
    pub model: LinearCostModel,
    pub eps: f64,
    pub warmup_ratio: f64,
    pub diagnostics: ProjectionDiagnostics,
}

impl SafetyLayer {
    pub fn new(model: LinearCostModel, eps: f64, warmup_ratio: f64) -> Self {
        Self {
            model,
            eps,
            warmup_ratio,
            diagnostics: ProjectionDiagnostics::default(),
        }
    }

    pub fn warmed_up(&self, step: u64, total_steps: u64) -> bool {
        step as f64 >= self.warmup_ratio * total_steps as f64
    }

    /// Corrects `proposal` once warm-up is over; before that it passes
    /// through untouched while the model keeps training.
    pub fn act(
        &mut self,
        obs: &[f64],
        proposal: Vec<f64>,
        prev_cost: f64,
        step: u64,
        total_steps: u64,
    ) -> Result<Vec<f64>> {
        if !self.warmed_up(step, total_steps) {
            return Ok(proposal);
        }
        let g = self.model.coefficients(obs)?;
        let p = safe_project(&proposal, &g, prev_cost, self.eps);
        match p.status {
            ProjectionStatus::Feasible => {}
            ProjectionStatus::Degenerate => self.diagnostics.degenerate += 1,
            ProjectionStatus::Projected => {
                self.diagnostics.projected += 1;
                if dot(&g, &p.action) + prev_cost > self.eps + 1e-9 {
                    self.diagnostics.clamp_violations += 1;
                }
            }
        }
        Ok(p.action)
    }
}
