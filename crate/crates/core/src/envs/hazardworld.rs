//! Planar point-goal navigation among circular hazards.
//!
//! The agent commands a planar velocity. Observations are relative positions:
//! agent to goal, then agent to each hazard center. Reaching the goal pays a
//! bonus and relocates the goal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Outcome, Task};

pub const ARENA_HALF_WIDTH: f64 = 2.0;
pub const NUM_HAZARDS: usize = 8;
pub const HAZARD_RADIUS: f64 = 0.3;
pub const GOAL_RADIUS: f64 = 0.3;
pub const GOAL_BONUS: f64 = 1.0;
/// Distance covered per tick at full speed along one axis.
pub const STEP_LENGTH: f64 = 0.1;

type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone)]
pub struct HazardWorld {
    agent: Point,
    goal: Point,
    hazards: [Point; NUM_HAZARDS],
    goal_rng: ChaCha8Rng,
}

impl Default for HazardWorld {
    fn default() -> Self {
        Self {
            agent: [0.0; 2],
            goal: [0.0; 2],
            hazards: [[0.0; 2]; NUM_HAZARDS],
            goal_rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl HazardWorld {
    pub fn agent(&self) -> Point {
        self.agent
    }

    pub fn goal(&self) -> Point {
        self.goal
    }

    pub fn hazards(&self) -> &[Point; NUM_HAZARDS] {
        &self.hazards
    }

    pub fn set_agent(&mut self, agent: Point) {
        self.agent = agent;
    }

    pub fn in_hazard(&self, p: Point) -> bool {
        self.hazards.iter().any(|&h| dist(p, h) < HAZARD_RADIUS)
    }

    fn sample_free_point(
        &self,
        rng: &mut ChaCha8Rng,
        clearance: f64,
        avoid: Option<(Point, f64)>,
    ) -> Point {
        let lim = ARENA_HALF_WIDTH - 0.2;
        loop {
            let p = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim)];
            let clear = self.hazards.iter().all(|&h| dist(p, h) >= HAZARD_RADIUS + clearance);
            let apart = avoid.map_or(true, |(q, d)| dist(p, q) >= d);
            if clear && apart {
                return p;
            }
        }
    }
}

impl Task for HazardWorld {
    fn name(&self) -> &'static str {
        "hazardworld"
    }

    fn obs_dim(&self) -> usize {
        2 + 2 * NUM_HAZARDS
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        let lim = ARENA_HALF_WIDTH - HAZARD_RADIUS;
        for h in &mut self.hazards {
            *h = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim)];
        }
        self.agent = self.sample_free_point(rng, 0.1, None);
        self.goal = self.sample_free_point(rng, GOAL_RADIUS, Some((self.agent, 1.0)));
        self.goal_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend([self.goal[0] - self.agent[0], self.goal[1] - self.agent[1]]);
        for h in &self.hazards {
            obs.extend([h[0] - self.agent[0], h[1] - self.agent[1]]);
        }
        obs
    }

    fn advance(&mut self, action: &[f64]) -> Outcome {
        let before = dist(self.agent, self.goal);
        for (p, a) in self.agent.iter_mut().zip(action) {
            *p = (*p + STEP_LENGTH * a).clamp(-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
        }
        let after = dist(self.agent, self.goal);
        let mut reward = before - after;
        if after < GOAL_RADIUS {
            reward += GOAL_BONUS;
            let mut rng = self.goal_rng.clone();
            self.goal = self.sample_free_point(&mut rng, GOAL_RADIUS, Some((self.agent, 1.0)));
            self.goal_rng = rng;
        }
        Outcome {
            reward,
            unsafe_transition: self.in_hazard(self.agent),
            terminal: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvKind;
    use proptest::prelude::*;

    fn reset_world(seed: u64) -> HazardWorld {
        let mut w = HazardWorld::default();
        w.reset(&mut ChaCha8Rng::seed_from_u64(seed));
        w
    }

    #[test]
    fn reset_places_agent_and_goal_in_arena_outside_hazards() {
        for seed in 0..200 {
            let w = reset_world(seed);
            for p in [w.agent(), w.goal()] {
                assert!(p.iter().all(|c| c.abs() <= ARENA_HALF_WIDTH));
                assert!(!w.in_hazard(p));
            }
        }
    }

    #[test]
    fn hazard_layout_is_fixed_per_seed() {
        assert_eq!(reset_world(5).hazards(), reset_world(5).hazards());
        assert_ne!(reset_world(5).hazards(), reset_world(6).hazards());
    }

    #[test]
    fn moving_toward_goal_is_rewarded() {
        let mut w = reset_world(3);
        let g = w.goal();
        let a = w.agent();
        let d = dist(a, g);
        let dir = [(g[0] - a[0]) / d, (g[1] - a[1]) / d];
        let out = w.advance(&dir);
        assert!(out.reward > 0.0);
    }

    #[test]
    fn observation_layout() {
        let mut env = EnvKind::HazardWorld.make(10);
        let obs = env.reset(11);
        assert_eq!(obs.len(), 18);
    }

    proptest! {
        #[test]
        fn cost_iff_inside_some_hazard(seed in any::<u64>(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let mut w = reset_world(seed);
            w.set_agent([x, y]);
            let out = w.advance(&[0.0, 0.0]);
            let min_d = w.hazards().iter().map(|&h| dist([x, y], h)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(out.unsafe_transition, min_d < HAZARD_RADIUS);
        }
    }
}
