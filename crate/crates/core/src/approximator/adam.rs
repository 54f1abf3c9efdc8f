use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

/// Adam with bias correction. Moments start at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.first_moment.len(), params.len())?;
        check_dim("adam gradient", self.first_moment.len(), grad.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 1e-3);
        let mut p = vec![0.5, -1.0, 2.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert!(adam.first_moment().iter().all(|&m| m == 0.0));
        assert!(adam.second_moment().iter().all(|&v| v == 0.0));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr() {
        let lr = 0.001;
        let mut adam = Adam::new(4, lr);
        let grad = [3.0, -0.25, 1e-3, -40.0];
        let mut p = vec![0.0; 4];
        adam.step(&mut p, &grad).unwrap();
        for (d, g) in p.iter().zip(grad) {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((d - expected).abs() < 1e-15, "{d} vs {expected}");
            assert!((d.abs() - lr).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_calls_are_pure() {
        let adam = Adam::new(2, 0.01);
        let grad = [0.3, -0.7];
        let (mut a1, mut p1) = (adam.clone(), vec![1.0, 2.0]);
        let (mut a2, mut p2) = (adam.clone(), vec![1.0, 2.0]);
        a1.step(&mut p1, &grad).unwrap();
        a2.step(&mut p2, &grad).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut adam = Adam::new(2, 0.01);
        assert!(adam.step(&mut [0.0, 0.0], &[1.0]).is_err());
        assert!(adam.step(&mut [0.0], &[1.0, 1.0]).is_err());
    }
}
