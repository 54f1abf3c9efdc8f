use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algo, RunConfig};
use crate::backbone::{q_values, ActorObjective, AgentBundle, CriticInputs, Td3Objective};
use crate::error::Result;
use crate::optimization::{MultiplierNet, ScalarMultiplier};
use crate::projection::{LinearCostModel, SafetyLayer};
use crate::recovery::RiskPair;
use crate::replay::Batch;
use crate::usl::{usl_act, ActMode, UslDiagnostics};

/// Seeds for every network an agent may own, drawn up front so that all
/// algorithms consume the run's seed stream identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSeeds {
    pub backbone: u64,
    pub safety: u64,
    pub risk: u64,
    pub multiplier: u64,
}

impl NetSeeds {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            backbone: rng.gen(),
            safety: rng.gen(),
            risk: rng.gen(),
            multiplier: rng.gen(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub config: RunConfig,
    pub bundle: AgentBundle,
    pub safety: Option<SafetyLayer>,
    pub risk: Option<RiskPair>,
    pub multiplier: Option<ScalarMultiplier>,
    pub multiplier_net: Option<MultiplierNet>,
    pub usl_diagnostics: UslDiagnostics,
    /// Most recent scalar or batch-mean multiplier.
    pub last_lambda: f64,
}

/// What the action pipeline chose and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Vec<f64>,
    /// Actor proposal, kept for the recovery algorithm.
    pub task_action: Option<Vec<f64>>,
    pub used_recovery: bool,
    pub usl_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateInfo {
    pub actor_updated: bool,
    pub multiplier_updated: bool,
}

impl Agent {
    pub fn new(config: &RunConfig, seeds: NetSeeds) -> Result<Self> {
        config.validate()?;
        let spec = config.env.make(config.horizon).spec();
        let (o, a) = (spec.obs_dim, spec.act_dim);
        let h = &config.hyper;
        let bundle = AgentBundle::new(o, a, h, seeds.backbone)?;
        let safety = match config.algo {
            Algo::SafetyLayer => Some(SafetyLayer::new(
                LinearCostModel::new(o, a, seeds.safety, h.cost_critic_lr)?,
                config.cost_limit,
                config.warmup_ratio,
            )),
            _ => None,
        };
        let risk = match config.algo {
            Algo::Recovery => Some(RiskPair::new(o, a, seeds.risk, h.cost_critic_lr, config.safe_actor_lr)?),
            _ => None,
        };
        let multiplier = match config.algo {
            Algo::Lagrangian => Some(ScalarMultiplier::new(config.multiplier_init, config.multiplier_lr)?),
            _ => None,
        };
        let multiplier_net = match config.algo {
            Algo::Fac => Some(MultiplierNet::new(o, seeds.multiplier, config.multiplier_lr, config.multiplier_delay)?),
            _ => None,
        };
        Ok(Self {
            last_lambda: multiplier.map_or(0.0, |m| m.lambda),
            config: config.clone(),
            bundle,
            safety,
            risk,
            multiplier,
            multiplier_net,
            usl_diagnostics: UslDiagnostics::default(),
        })
    }

    pub fn algo(&self) -> Algo {
        self.config.algo
    }

    fn warmed_up(&self, step: u64) -> bool {
        step >= self.config.warmup_steps()
    }

    /// The algorithm's action pipeline. With `noise` the actor proposal gets
    /// exploration noise; without it the policy is deterministic. Warm-up
    /// gated safeguards follow `step`.
    pub fn decide<R: Rng + ?Sized>(
        &mut self,
        obs: &[f64],
        prev_cost: f64,
        step: u64,
        noise: Option<&mut R>,
    ) -> Result<Decision> {
        let sigma = self.config.hyper.expl_sigma;
        if self.config.algo == Algo::Usl {
            let cfg = self.config.usl();
            let mode = match noise {
                Some(rng) => ActMode::Train { expl_sigma: sigma, rng },
                None => ActMode::Eval,
            };
            let u = usl_act(&self.bundle, obs, &cfg, mode)?;
            self.usl_diagnostics.record(&u, cfg.k_max);
            return Ok(Decision {
                action: u.action,
                task_action: None,
                used_recovery: false,
                usl_iterations: Some(u.iterations),
            });
        }
        let proposal = match noise {
            Some(rng) => self.bundle.explore_action(obs, sigma, rng)?,
            None => self.bundle.act(obs)?,
        };
        let warmed = self.warmed_up(step);
        Ok(match self.config.algo {
            Algo::SafetyLayer => {
                let total = self.config.total_steps;
                let layer = self.safety.as_mut().expect("safety layer present");
                let action = layer.act(obs, proposal, prev_cost, step, total)?;
                Decision {
                    action,
                    task_action: None,
                    used_recovery: false,
                    usl_iterations: None,
                }
            }
            Algo::Recovery => {
                let pair = self.risk.as_ref().expect("risk pair present");
                let (action, used) = if warmed {
                    pair.gate(obs, &proposal, self.config.cost_limit)?
                } else {
                    (proposal.clone(), false)
                };
                Decision {
                    action,
                    task_action: Some(proposal),
                    used_recovery: used,
                    usl_iterations: None,
                }
            }
            _ => Decision {
                action: proposal,
                task_action: None,
                used_recovery: false,
                usl_iterations: None,
            },
        })
    }

    /// Uniform-random exploration used before learning starts.
    pub fn random_decision<R: Rng + ?Sized>(&self, rng: &mut R) -> Decision {
        let action: Vec<f64> = (0..self.bundle.act_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Decision {
            task_action: (self.config.algo == Algo::Recovery).then(|| action.clone()),
            action,
            used_recovery: false,
            usl_iterations: None,
        }
    }

    fn mean_cost_value(&self, obs: &[f64]) -> Result<f64> {
        let b = &self.bundle;
        let n = obs.len() / b.obs_dim;
        let act = b.actor.net.forward_batch(obs, n)?.into_output();
        let qc = q_values(&b.qc.net, obs, b.obs_dim, &act, b.act_dim)?;
        Ok(qc.iter().sum::<f64>() / n as f64)
    }

    /// One training iteration on `batch`: critics every call, auxiliary
    /// learners, then the delayed actor and multiplier steps.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, step: u64, rng: &mut R) -> Result<UpdateInfo> {
        let cfg = &self.config;
        let hyper = cfg.hyper.clone();
        let eps = cfg.cost_limit;
        let inputs = CriticInputs {
            shaping: if cfg.algo == Algo::RewardShaping { cfg.shaping_sigma } else { 0.0 },
            reward_on_task_action: cfg.algo == Algo::Recovery,
        };
        self.bundle.update_critics(batch, &hyper, inputs, rng)?;
        let gate_active = self.warmed_up(step);
        if let Some(layer) = self.safety.as_mut() {
            layer.model.train_step(batch)?;
        }
        if let Some(pair) = self.risk.as_mut() {
            pair.update(batch, &self.bundle.actor.net, hyper.gamma_c, eps, gate_active, hyper.tau)?;
        }
        let mut info = UpdateInfo::default();
        if let Some(mnet) = self.multiplier_net.as_mut() {
            if mnet.due(self.bundle.update_counter) {
                self.last_lambda = mnet.ascend(&self.bundle, batch, eps)?;
                info.multiplier_updated = true;
            }
        }
        if !self.bundle.actor_due(&hyper) {
            return Ok(info);
        }
        let dual_gap_qc = match self.multiplier {
            Some(_) if !self.config.freeze_multiplier => Some(self.mean_cost_value(&batch.obs)?),
            _ => None,
        };
        let objective: Box<dyn ActorObjective> = match self.config.algo {
            Algo::Lagrangian => Box::new(self.multiplier.expect("multiplier present").objective()),
            Algo::Fac => {
                let o = self.multiplier_net.as_ref().expect("multiplier net present").objective(&batch.obs, eps)?;
                self.last_lambda = o.lambdas.iter().sum::<f64>() / o.lambdas.len() as f64;
                Box::new(o)
            }
            Algo::Usl => Box::new(self.config.usl().objective()),
            _ => Box::new(Td3Objective),
        };
        self.bundle.update_actor_and_targets(batch, &hyper, objective.as_ref())?;
        info.actor_updated = true;
        if let (Some(m), Some(qc)) = (self.multiplier.as_mut(), dual_gap_qc) {
            m.dual_step(qc, eps);
            info.multiplier_updated = true;
        }
        if let Some(m) = self.multiplier {
            self.last_lambda = m.lambda;
        }
        Ok(info)
    }
}
