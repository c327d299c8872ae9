//! Adaptive moment estimation with bias correction.
//!
//! The optimizer owns one first- and one second-moment buffer per parameter,
//! matched by position, and updates parameter data in place. Parameters whose
//! gradient is absent in a step (their tensor never appeared in the loss
//! graph) are left untouched, moments included.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(format!("{name} must be in [0, 1), got {beta}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

pub struct Adam {
    config: AdamConfig,
    steps: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    /// Buffers are allocated per parameter, in the order given; every later
    /// [`Adam::step`] call must pass the same parameters in the same order.
    pub fn new(params: &[(String, Tensor)], config: AdamConfig) -> Adam {
        Adam {
            config,
            steps: 0,
            first_moment: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step(&mut self, params: &[(String, Tensor)]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (index, (_, param)) in params.iter().enumerate() {
            let Some(grad) = param.grad_vec() else {
                continue;
            };
            let mut data = param.data_vec();
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            for i in 0..data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
            param.set_data(&data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // With bias correction, the very first update is
        // lr * g / (|g| + eps) = lr * sign(g) up to eps rounding.
        let p = Tensor::param(&[2], vec![1.0, -1.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(&params, AdamConfig::default());

        let loss = p.mul(&p).unwrap().sum(); // grad = 2p = (2, -2)
        loss.backward().unwrap();
        adam.step(&params);

        let after = p.data_vec();
        assert!((after[0] - (1.0 - 1e-3)).abs() < 1e-8, "{after:?}");
        assert!((after[1] - (-1.0 + 1e-3)).abs() < 1e-8, "{after:?}");
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        let p = Tensor::param(&[3], vec![5.0, -3.0, 2.0]).unwrap();
        let target = Tensor::from_values(&[3], vec![1.0, 2.0, -1.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(
            &params,
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            p.zero_grad();
            let diff = p.sub(&target).unwrap();
            let loss = diff.mul(&diff).unwrap().sum();
            loss.backward().unwrap();
            adam.step(&params);
        }
        for (value, want) in p.data_vec().iter().zip([1.0, 2.0, -1.0]) {
            assert!((value - want).abs() < 1e-3, "{:?}", p.data_vec());
        }
    }

    #[test]
    fn parameters_without_gradients_are_untouched() {
        let used = Tensor::param(&[1], vec![1.0]).unwrap();
        let unused = Tensor::param(&[1], vec![7.0]).unwrap();
        let params = vec![
            ("used".to_string(), used.clone()),
            ("unused".to_string(), unused.clone()),
        ];
        let mut adam = Adam::new(&params, AdamConfig::default());
        let loss = used.mul(&used).unwrap().sum();
        loss.backward().unwrap();
        adam.step(&params);
        assert_eq!(unused.data_vec(), vec![7.0]);
        assert_ne!(used.data_vec(), vec![1.0]);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let ok = AdamConfig::default();
        assert!(ok.validate().is_ok());
        assert!(AdamConfig { learning_rate: 0.0, ..ok }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..ok }.validate().is_err());
        assert!(AdamConfig { beta2: -0.1, ..ok }.validate().is_err());
        assert!(AdamConfig { epsilon: 0.0, ..ok }.validate().is_err());
    }
}
