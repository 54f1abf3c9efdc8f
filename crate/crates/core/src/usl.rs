//! Unrolling Safety Layer.
//!
//! Stage one trains the actor on an exact-penalty objective
//! `-Q + κ max(0, Q_c - δ)`. Stage two corrects each proposed action by
//! repeated normalized gradient steps on the cost critic until the predicted
//! cost drops to `δ` or the iteration cap is hit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::Mlp;
use crate::backbone::{explore_action, ActorObjective, AgentBundle};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UslConfig {
    pub kappa: f64,
    pub delta: f64,
    pub eta: f64,
    pub k_max: usize,
    pub grad_tol: f64,
}

impl Default for UslConfig {
    fn default() -> Self {
        Self {
            kappa: 5.0,
            delta: 0.1,
            eta: 0.05,
            k_max: 20,
            grad_tol: 1e-8,
        }
    }
}

impl UslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.delta >= 0.0) || !(self.kappa >= 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "usl needs eta > 0, delta >= 0, kappa >= 0, grad_tol > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn objective(&self) -> PenaltyObjective {
        PenaltyObjective {
            kappa: self.kappa,
            delta: self.delta,
        }
    }
}

/// `-Q + κ max(0, Q_c - δ)`.
pub struct PenaltyObjective {
    pub kappa: f64,
    pub delta: f64,
}

impl ActorObjective for PenaltyObjective {
    fn uses_cost(&self) -> bool {
        self.kappa != 0.0
    }

    fn sample_loss(&self, _i: usize, q: f64, qc: f64) -> (f64, f64, f64) {
        if qc > self.delta {
            (-q + self.kappa * (qc - self.delta), -1.0, self.kappa)
        } else {
            (-q, -1.0, 0.0)
        }
    }
}

/// A differentiable cost over actions at a fixed state.
pub trait ActionCost {
    fn value(&self, action: &[f64]) -> Result<f64>;

    fn value_grad(&self, action: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The cost critic with the state argument pinned.
pub struct CriticAtState<'a> {
    pub net: &'a Mlp,
    pub obs: &'a [f64],
}

impl CriticAtState<'_> {
    fn input(&self, action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.obs.len() + action.len());
        x.extend_from_slice(self.obs);
        x.extend_from_slice(action);
        x
    }
}

impl ActionCost for CriticAtState<'_> {
    fn value(&self, action: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.input(action))?[0])
    }

    fn value_grad(&self, action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = self.net.forward_batch(&self.input(action), 1)?;
        let value = tape.output()[0];
        let dx = self.net.backward(&tape, &[1.0], None, true)?.unwrap();
        Ok((value, dx[self.obs.len()..].to_vec()))
    }
}

/// `(a - c)ᵀ H (a - c)` with a dense symmetric `H`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub hessian: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticCost {
    pub fn new(hessian: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        check_dim("quadratic hessian", center.len() * center.len(), hessian.len())?;
        Ok(Self { hessian, center })
    }

    fn h_times(&self, d: &[f64]) -> Vec<f64> {
        let m = self.center.len();
        (0..m)
            .map(|i| (0..m).map(|j| self.hessian[i * m + j] * d[j]).sum())
            .collect()
    }
}

impl ActionCost for QuadraticCost {
    fn value(&self, action: &[f64]) -> Result<f64> {
        check_dim("action", self.center.len(), action.len())?;
        let d: Vec<f64> = action.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        Ok(d.iter().zip(self.h_times(&d)).map(|(x, y)| x * y).sum())
    }

    fn value_grad(&self, action: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim("action", self.center.len(), action.len())?;
        let d: Vec<f64> = action.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let hd = self.h_times(&d);
        let value = d.iter().zip(&hd).map(|(x, y)| x * y).sum();
        Ok((value, hd.iter().map(|v| 2.0 * v).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiStatus {
    Feasible,
    Moved,
    /// Infeasible but the gradient norm fell below `grad_tol`.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiStep {
    pub action: Vec<f64>,
    pub status: PsiStatus,
}

/// One normalized descent step on `max(0, Q_c - δ)`, clamped to the unit box.
pub fn psi(cost: &dyn ActionCost, action: &[f64], cfg: &UslConfig) -> Result<PsiStep> {
    let (value, grad) = cost.value_grad(action)?;
    Ok(psi_from(action, value, &grad, cfg))
}

fn psi_from(action: &[f64], value: f64, grad: &[f64], cfg: &UslConfig) -> PsiStep {
    if value <= cfg.delta {
        return PsiStep {
            action: action.to_vec(),
            status: PsiStatus::Feasible,
        };
    }
    let z = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    if !(z >= cfg.grad_tol) {
        return PsiStep {
            action: action.to_vec(),
            status: PsiStatus::Degenerate,
        };
    }
    let step = cfg.eta / z;
    PsiStep {
        action: action.iter().zip(grad).map(|(a, g)| (a - step * g).clamp(-1.0, 1.0)).collect(),
        status: PsiStatus::Moved,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unrolled {
    pub action: Vec<f64>,
    pub iterations: usize,
    /// The returned action satisfies `Q_c ≤ δ`.
    pub converged: bool,
    pub degenerate: bool,
}

/// Applies `psi` up to `k_max` times, stopping as soon as the iterate is
/// predicted feasible.
pub fn unroll(cost: &dyn ActionCost, a0: &[f64], cfg: &UslConfig) -> Result<Unrolled> {
    let mut action = a0.to_vec();
    let mut iterations = 0;
    let mut degenerate = false;
    let converged = loop {
        if iterations == cfg.k_max {
            break cost.value(&action)? <= cfg.delta;
        }
        let (value, grad) = cost.value_grad(&action)?;
        let step = psi_from(&action, value, &grad, cfg);
        match step.status {
            PsiStatus::Feasible => break true,
            PsiStatus::Degenerate => {
                degenerate = true;
                break false;
            }
            PsiStatus::Moved => {
                action = step.action;
                iterations += 1;
            }
        }
    };
    Ok(Unrolled {
        action,
        iterations,
        converged,
        degenerate,
    })
}

pub enum ActMode<'a, R: Rng + ?Sized> {
    /// Exploration noise is added to the proposal before unrolling.
    Train { expl_sigma: f64, rng: &'a mut R },
    Eval,
}

pub fn usl_act<R: Rng + ?Sized>(bundle: &AgentBundle, obs: &[f64], cfg: &UslConfig, mode: ActMode<'_, R>) -> Result<Unrolled> {
    let a0 = match mode {
        ActMode::Train { expl_sigma, rng } => explore_action(&bundle.actor.net, obs, expl_sigma, rng)?,
        ActMode::Eval => bundle.act(obs)?,
    };
    if cfg.k_max == 0 {
        return Ok(Unrolled {
            action: a0,
            iterations: 0,
            converged: false,
            degenerate: false,
        });
    }
    let cost = CriticAtState {
        net: &bundle.qc.net,
        obs,
    };
    unroll(&cost, &a0, cfg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UslDiagnostics {
    pub calls: u64,
    pub iterations: u64,
    pub non_converged: u64,
    pub degenerate: u64,
}

impl UslDiagnostics {
    pub fn record(&mut self, u: &Unrolled, k_max: usize) {
        self.calls += 1;
        self.iterations += u.iterations as u64;
        if k_max > 0 && !u.converged && !u.degenerate {
            self.non_converged += 1;
        }
        if u.degenerate {
            self.degenerate += 1;
        }
    }
}
