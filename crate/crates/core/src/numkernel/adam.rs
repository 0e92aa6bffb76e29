use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Bias-corrected Adam over an ordered list of parameter matrices.
///
/// Moments are stored in the same order as the parameters passed to
/// [`AdamState::step`]; the step counter advances once per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Fresh state with zeroed moments for parameters of the given shapes.
    pub fn new<I>(shapes: I, learning_rate: f64) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let first_moment: Vec<Matrix> = shapes
            .into_iter()
            .map(|(r, c)| Matrix::zeros(r, c))
            .collect();
        let second_moment = first_moment.clone();
        Self {
            step: 0,
            first_moment,
            second_moment,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            learning_rate,
        }
    }

    /// Applies one update to every parameter. Nothing is modified on shape errors.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam holds {} moments, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            p.ensure_shape("adam_step", m.shape())?;
            g.ensure_shape("adam_step", m.shape())?;
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].as_mut_slice();
            let v = self.second_moment[i].as_mut_slice();
            for (((pj, &gj), mj), vj) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let m_hat = *mj / bias1;
                let v_hat = *vj / bias2;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-parameter convenience wrapper around [`AdamState::step`].
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState) -> Result<()> {
    state.step(&mut [param], &[grad])
}
