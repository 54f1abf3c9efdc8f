//! TD3-style actor-critic core shared by every algorithm.
//!
//! The bundle owns the deterministic actor, twin reward critics, a single
//! cost critic, and target copies of all of them. Algorithms differ only in
//! the [`ActorObjective`] handed to [`AgentBundle::update_actor_and_targets`]
//! and in how they pick actions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approximator::{polyak, Adam, Mlp, MlpSpec, OutputActivation, Tape};
use crate::error::{check_dim, Result};
use crate::replay::Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub gamma_r: f64,
    pub gamma_c: f64,
    pub policy_delay: u64,
    pub expl_sigma: f64,
    pub smooth_sigma: f64,
    pub smooth_clip: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub cost_critic_lr: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            gamma_r: 0.99,
            gamma_c: 0.99,
            policy_delay: 2,
            expl_sigma: 0.1,
            smooth_sigma: 0.2,
            smooth_clip: 0.5,
            batch_size: 256,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            cost_critic_lr: 3e-4,
        }
    }
}

/// Row-wise concatenation `[a | b]` of two row-major matrices.
pub fn concat_rows(a: &[f64], a_cols: usize, b: &[f64], b_cols: usize) -> Vec<f64> {
    let n = if a_cols == 0 { 0 } else { a.len() / a_cols };
    let mut out = Vec::with_capacity(n * (a_cols + b_cols));
    for (ra, rb) in a.chunks_exact(a_cols).zip(b.chunks_exact(b_cols)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

/// Columns `[from, from + cols)` of a row-major matrix with `width` columns.
pub fn take_columns(m: &[f64], width: usize, from: usize, cols: usize) -> Vec<f64> {
    m.chunks_exact(width)
        .flat_map(|row| row[from..from + cols].iter().copied())
        .collect()
}

/// An online network with its target copy and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracked {
    pub net: Mlp,
    pub target: Mlp,
    pub opt: Adam,
}

impl Tracked {
    pub fn new(spec: MlpSpec, seed: u64, lr: f64) -> Result<Self> {
        let net = Mlp::new(spec, seed)?;
        let opt = Adam::new(net.params().len(), lr);
        Ok(Self {
            target: net.clone(),
            net,
            opt,
        })
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        polyak(&mut self.target, &self.net, tau)
    }

    /// One Adam step on `mean_i (net(x_i) - y_i)^2`; returns the loss before the step.
    pub fn regress(&mut self, inputs: &[f64], targets: &[f64]) -> Result<f64> {
        let n = targets.len();
        let tape = self.net.forward_batch(inputs, n)?;
        check_dim("regression output", n, tape.output().len())?;
        let mut loss = 0.0;
        let upstream: Vec<f64> = tape
            .output()
            .iter()
            .zip(targets)
            .map(|(q, y)| {
                let r = q - y;
                loss += r * r;
                2.0 * r / n as f64
            })
            .collect();
        let mut grad = vec![0.0; self.net.params().len()];
        self.net.backward(&tape, &upstream, Some(&mut grad), false)?;
        self.opt.step(self.net.params_mut(), &grad)?;
        Ok(loss / n as f64)
    }
}

/// Evaluates a scalar `Q(s, a)` network row-wise.
pub fn q_values(net: &Mlp, obs: &[f64], obs_dim: usize, act: &[f64], act_dim: usize) -> Result<Vec<f64>> {
    let x = concat_rows(obs, obs_dim, act, act_dim);
    let n = obs.len() / obs_dim;
    Ok(net.forward_batch(&x, n)?.into_output())
}

/// Per-sample actor loss written in terms of the reward and cost critic
/// values at `(s_i, π(s_i))`.
pub trait ActorObjective {
    /// Whether the cost critic enters the loss at all.
    fn uses_cost(&self) -> bool;

    /// `(loss_i, ∂loss_i/∂q, ∂loss_i/∂q_c)`.
    fn sample_loss(&self, i: usize, q: f64, qc: f64) -> (f64, f64, f64);
}

/// Plain TD3: maximize `Q_1(s, π(s))`.
pub struct Td3Objective;

impl ActorObjective for Td3Objective {
    fn uses_cost(&self) -> bool {
        false
    }

    fn sample_loss(&self, _i: usize, q: f64, _qc: f64) -> (f64, f64, f64) {
        (-q, -1.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub q1: f64,
    pub q2: f64,
    pub qc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep {
    pub loss: f64,
    /// Batch mean of `Q_c(s, π(s))` before the step, when it was computed.
    pub mean_qc: Option<f64>,
}

/// Knobs that let algorithms reshape what the shared critics regress on.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CriticInputs {
    /// Reward-shaping weight σ: reward critics see `r - σ c`.
    pub shaping: f64,
    /// Train reward critics on stored task proposals instead of executed actions.
    pub reward_on_task_action: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBundle {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor: Tracked,
    pub q1: Tracked,
    pub q2: Tracked,
    pub qc: Tracked,
    pub update_counter: u64,
}

impl AgentBundle {
    pub fn new(obs_dim: usize, act_dim: usize, hyper: &Hyper, seed: u64) -> Result<Self> {
        let actor_spec = MlpSpec::two_hidden(obs_dim, act_dim, OutputActivation::Tanh)?;
        let critic_spec = MlpSpec::two_hidden(obs_dim + act_dim, 1, OutputActivation::Identity)?;
        Ok(Self {
            obs_dim,
            act_dim,
            actor: Tracked::new(actor_spec, seed.wrapping_mul(4).wrapping_add(1), hyper.actor_lr)?,
            q1: Tracked::new(critic_spec.clone(), seed.wrapping_mul(4).wrapping_add(2), hyper.critic_lr)?,
            q2: Tracked::new(critic_spec.clone(), seed.wrapping_mul(4).wrapping_add(3), hyper.critic_lr)?,
            qc: Tracked::new(critic_spec, seed.wrapping_mul(4).wrapping_add(4), hyper.cost_critic_lr)?,
            update_counter: 0,
        })
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.net.forward(obs)
    }

    pub fn cost_value(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let mut x = obs.to_vec();
        x.extend_from_slice(action);
        Ok(self.qc.net.forward(&x)?[0])
    }

    /// Actor proposal plus Gaussian noise, clamped to the unit box.
    pub fn explore_action<R: Rng + ?Sized>(&self, obs: &[f64], expl_sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        explore_action(&self.actor.net, obs, expl_sigma, rng)
    }

    /// `y = r + γ_r (1 - d) min(Q'_1, Q'_2)(s', ã')` with a smoothed target action.
    pub fn reward_critic_target<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        hyper: &Hyper,
        shaping: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n = batch.len;
        let mut next_act = self.actor.target.forward_batch(&batch.next_obs, n)?.into_output();
        for a in next_act.iter_mut() {
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * hyper.smooth_sigma;
            *a = (*a + eps.clamp(-hyper.smooth_clip, hyper.smooth_clip)).clamp(-1.0, 1.0);
        }
        let q1 = q_values(&self.q1.target, &batch.next_obs, self.obs_dim, &next_act, self.act_dim)?;
        let q2 = q_values(&self.q2.target, &batch.next_obs, self.obs_dim, &next_act, self.act_dim)?;
        Ok((0..n)
            .map(|i| {
                let r = batch.reward[i] - shaping * batch.cost[i];
                r + hyper.gamma_r * (1.0 - batch.done[i]) * q1[i].min(q2[i])
            })
            .collect())
    }

    /// `y_c = c + γ_c (1 - d) Q'_c(s', π(s'))`, successor value clamped to
    /// `[0, 1 / (1 - γ_c)]`.
    pub fn cost_critic_target(&self, batch: &Batch, hyper: &Hyper) -> Result<Vec<f64>> {
        let n = batch.len;
        let next_act = self.actor.net.forward_batch(&batch.next_obs, n)?.into_output();
        let qc = q_values(&self.qc.target, &batch.next_obs, self.obs_dim, &next_act, self.act_dim)?;
        let upper = 1.0 / (1.0 - hyper.gamma_c);
        Ok((0..n)
            .map(|i| batch.cost[i] + hyper.gamma_c * (1.0 - batch.done[i]) * qc[i].clamp(0.0, upper))
            .collect())
    }

    /// One regression step for each critic; advances the update counter.
    pub fn update_critics<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        hyper: &Hyper,
        inputs: CriticInputs,
        rng: &mut R,
    ) -> Result<CriticLosses> {
        let y = self.reward_critic_target(batch, hyper, inputs.shaping, rng)?;
        let y_c = self.cost_critic_target(batch, hyper)?;
        let executed = concat_rows(&batch.obs, self.obs_dim, &batch.action, self.act_dim);
        let reward_inputs = match (&batch.task_action, inputs.reward_on_task_action) {
            (Some(task), true) => concat_rows(&batch.obs, self.obs_dim, task, self.act_dim),
            _ => executed.clone(),
        };
        let losses = CriticLosses {
            q1: self.q1.regress(&reward_inputs, &y)?,
            q2: self.q2.regress(&reward_inputs, &y)?,
            qc: self.qc.regress(&executed, &y_c)?,
        };
        self.update_counter += 1;
        Ok(losses)
    }

    pub fn actor_due(&self, hyper: &Hyper) -> bool {
        self.update_counter > 0 && self.update_counter % hyper.policy_delay.max(1) == 0
    }

    /// Forward-only actor loss on a batch of observations.
    pub fn actor_loss(&self, obs: &[f64], objective: &dyn ActorObjective) -> Result<f64> {
        let n = obs.len() / self.obs_dim;
        let act = self.actor.net.forward_batch(obs, n)?.into_output();
        let q = q_values(&self.q1.net, obs, self.obs_dim, &act, self.act_dim)?;
        let qc = if objective.uses_cost() {
            q_values(&self.qc.net, obs, self.obs_dim, &act, self.act_dim)?
        } else {
            vec![0.0; n]
        };
        Ok((0..n).map(|i| objective.sample_loss(i, q[i], qc[i]).0).sum::<f64>() / n as f64)
    }

    /// Actor loss and its gradient with respect to the actor parameters,
    /// holding both critics fixed.
    pub fn actor_loss_grad(&self, obs: &[f64], objective: &dyn ActorObjective) -> Result<(f64, Vec<f64>, Option<f64>)> {
        let n = obs.len() / self.obs_dim;
        let width = self.obs_dim + self.act_dim;
        let actor_tape = self.actor.net.forward_batch(obs, n)?;
        let x = concat_rows(obs, self.obs_dim, actor_tape.output(), self.act_dim);
        let q_tape = self.q1.net.forward_batch(&x, n)?;
        let c_tape: Option<Tape> = if objective.uses_cost() {
            Some(self.qc.net.forward_batch(&x, n)?)
        } else {
            None
        };
        let mut loss = 0.0;
        let mut up_q = Vec::with_capacity(n);
        let mut up_c = Vec::with_capacity(n);
        for i in 0..n {
            let qc = c_tape.as_ref().map_or(0.0, |t| t.output()[i]);
            let (l, dq, dqc) = objective.sample_loss(i, q_tape.output()[i], qc);
            loss += l;
            up_q.push(dq / n as f64);
            up_c.push(dqc / n as f64);
        }
        let dx = self.q1.net.backward(&q_tape, &up_q, None, true)?.unwrap();
        let mut grad_a = take_columns(&dx, width, self.obs_dim, self.act_dim);
        if let Some(tape) = &c_tape {
            if up_c.iter().any(|&u| u != 0.0) {
                let dx_c = self.qc.net.backward(tape, &up_c, None, true)?.unwrap();
                for (g, d) in grad_a.iter_mut().zip(take_columns(&dx_c, width, self.obs_dim, self.act_dim)) {
                    *g += d;
                }
            }
        }
        let mut grad = vec![0.0; self.actor.net.params().len()];
        self.actor.net.backward(&actor_tape, &grad_a, Some(&mut grad), false)?;
        let mean_qc = c_tape.map(|t| t.output().iter().sum::<f64>() / n as f64);
        Ok((loss / n as f64, grad, mean_qc))
    }

    /// On policy-delay boundaries: one actor step on `objective`, then Polyak
    /// updates of every target. Returns `None` off-schedule.
    pub fn update_actor_and_targets(
        &mut self,
        batch: &Batch,
        hyper: &Hyper,
        objective: &dyn ActorObjective,
    ) -> Result<Option<ActorStep>> {
        if !self.actor_due(hyper) {
            return Ok(None);
        }
        let (loss, grad, mean_qc) = self.actor_loss_grad(&batch.obs, objective)?;
        self.actor.opt.step(self.actor.net.params_mut(), &grad)?;
        for t in [&mut self.actor, &mut self.q1, &mut self.q2, &mut self.qc] {
            t.soft_update(hyper.tau)?;
        }
        Ok(Some(ActorStep { loss, mean_qc }))
    }
}

pub fn explore_action<R: Rng + ?Sized>(actor: &Mlp, obs: &[f64], expl_sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut a = actor.forward(obs)?;
    for v in a.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = (*v + expl_sigma * noise).clamp(-1.0, 1.0);
    }
    Ok(a)
}
