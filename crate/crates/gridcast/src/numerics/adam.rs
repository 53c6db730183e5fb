//! Adam parameter updates with bias correction.

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy)]
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
    pub fn with_learning_rate(learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        let check = |name: &'static str, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(NumericsError::InvalidHyperParameter { name, value })
            }
        };
        check(
            "learning_rate",
            self.learning_rate,
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
        )?;
        check("beta1", self.beta1, (0.0..1.0).contains(&self.beta1))?;
        check("beta2", self.beta2, (0.0..1.0).contains(&self.beta2))?;
        check("epsilon", self.epsilon, self.epsilon > 0.0)
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> AdamState {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One in-place Adam update. The state tracks its own step count, so the
/// caller only feeds gradients in order.
pub fn adam_step(
    params: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), NumericsError> {
    config.validate()?;
    if params.shape() != grad.shape() || params.shape() != state.m.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            lhs: params.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    grad.validate_finite("adam_step")?;

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);

    for i in 0..params.len() {
        let g = grad.data()[i];
        let m = config.beta1 * state.m.data()[i] + (1.0 - config.beta1) * g;
        let v = config.beta2 * state.v.data()[i] + (1.0 - config.beta2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params.data_mut()[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    params.validate_finite("adam_step")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = params.clone();
        let grad = Tensor::zeros(&[3]);
        let mut state = AdamState::new(&[3]);
        adam_step(&mut params, &grad, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g/|g| regardless of
        // gradient magnitude (up to epsilon).
        let mut params = Tensor::scalar(1.0);
        let grad = Tensor::scalar(2.0);
        let mut state = AdamState::new(&[]);
        adam_step(&mut params, &grad, &mut state, &AdamConfig::default()).unwrap();
        assert!((params.scalar_value() - (1.0 - 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn quadratic_loss_decreases_over_steps() {
        let mut params = Tensor::scalar(1.0);
        let mut state = AdamState::new(&[]);
        let config = AdamConfig::default();
        let mut prev_loss = params.scalar_value().powi(2);
        for _ in 0..2 {
            let grad = Tensor::scalar(2.0 * params.scalar_value());
            adam_step(&mut params, &grad, &mut state, &config).unwrap();
            let loss = params.scalar_value().powi(2);
            assert!(loss < prev_loss);
            prev_loss = loss;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = Tensor::zeros(&[2]);
        let grad = Tensor::zeros(&[3]);
        let mut state = AdamState::new(&[2]);
        assert!(matches!(
            adam_step(&mut params, &grad, &mut state, &AdamConfig::default()),
            Err(NumericsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bad_learning_rate_rejected() {
        let mut params = Tensor::scalar(0.0);
        let grad = Tensor::scalar(1.0);
        let mut state = AdamState::new(&[]);
        let config = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(matches!(
            adam_step(&mut params, &grad, &mut state, &config),
            Err(NumericsError::InvalidHyperParameter { .. })
        ));
    }
}
