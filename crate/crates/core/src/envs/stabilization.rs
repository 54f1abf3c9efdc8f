//! Cart-pole balancing with bounded pole angle and angular velocity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Outcome, Task};

pub const THETA_MAX: f64 = 0.2;
pub const THETA_DOT_MAX: f64 = 0.2;
/// Past this angle the pole is considered fallen and the episode terminates.
pub const FALL_ANGLE: f64 = std::f64::consts::FRAC_PI_4;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const HALF_LENGTH: f64 = 0.5;
const FORCE_SCALE: f64 = 10.0;
const DT: f64 = 0.02;

/// Reward and cost for a pole state: `(1{|θ| ≤ θmax}, 1{|θ| > θmax ∨ |θ̇| > θ̇max})`.
pub fn signals(theta: f64, theta_dot: f64) -> (f64, bool) {
    let reward = if theta.abs() <= THETA_MAX { 1.0 } else { 0.0 };
    let unsafe_state = theta.abs() > THETA_MAX || theta_dot.abs() > THETA_DOT_MAX;
    (reward, unsafe_state)
}

/// State `[x, ẋ, θ, θ̇]`.
#[derive(Debug, Clone, Default)]
pub struct Stabilization {
    state: [f64; 4],
}

impl Stabilization {
    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    /// Semi-implicit Euler step of the classic cart-pole equations.
    pub fn integrate(state: [f64; 4], force: f64) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let total_mass = CART_MASS + POLE_MASS;
        let pole_moment = POLE_MASS * HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        let x_dot = x_dot + DT * x_acc;
        let theta_dot = theta_dot + DT * theta_acc;
        [x + DT * x_dot, x_dot, theta + DT * theta_dot, theta_dot]
    }
}

impl Task for Stabilization {
    fn name(&self) -> &'static str {
        "stabilization"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        for s in &mut self.state {
            *s = rng.gen_range(-0.05..0.05);
        }
    }

    fn observe(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn advance(&mut self, action: &[f64]) -> Outcome {
        self.state = Self::integrate(self.state, FORCE_SCALE * action[0]);
        let (reward, unsafe_transition) = signals(self.state[2], self.state[3]);
        Outcome {
            reward,
            unsafe_transition,
            terminal: self.state[2].abs() > FALL_ANGLE,
        }
    }
}
