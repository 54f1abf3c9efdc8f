//! One-dimensional car with linear drag, rewarded for distance and
//! constrained by a speed limit.

use rand_chacha::ChaCha8Rng;

use super::{Outcome, Task};

/// Acceleration at full throttle.
pub const MAX_ACCEL: f64 = 2.0;
/// Linear drag coefficient; top speed is `MAX_ACCEL / DRAG`.
pub const DRAG: f64 = 1.0;
pub const TOP_SPEED: f64 = MAX_ACCEL / DRAG;
/// Half of the attainable top speed, so the constraint binds.
pub const SPEED_LIMIT: f64 = 0.5 * TOP_SPEED;
pub const DT: f64 = 0.1;
/// Normalizes the observed position to roughly `[0, 1]` over a default episode.
const POSITION_SCALE: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct SpeedLimit {
    position: f64,
    velocity: f64,
    dt: f64,
}

impl Default for SpeedLimit {
    fn default() -> Self {
        Self::with_dt(DT)
    }
}

impl SpeedLimit {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            dt,
        }
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
    }

    /// Semi-implicit Euler step of `ẍ = MAX_ACCEL * a - DRAG * ẋ`.
    pub fn integrate(position: f64, velocity: f64, action: f64, dt: f64) -> (f64, f64) {
        let velocity = velocity + dt * (MAX_ACCEL * action - DRAG * velocity);
        (position + dt * velocity, velocity)
    }
}

impl Task for SpeedLimit {
    fn name(&self) -> &'static str {
        "speedlimit"
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) {
        self.position = 0.0;
        self.velocity = 0.0;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.position / POSITION_SCALE, self.velocity]
    }

    fn advance(&mut self, action: &[f64]) -> Outcome {
        let before = self.position;
        (self.position, self.velocity) =
            Self::integrate(self.position, self.velocity, action[0], self.dt);
        Outcome {
            reward: self.position - before,
            unsafe_transition: self.velocity > SPEED_LIMIT,
            terminal: false,
        }
    }
}
