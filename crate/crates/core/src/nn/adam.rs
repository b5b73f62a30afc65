//! Adaptive moment estimation.
//!
//! The moments are held as undamped exponential sums `S ← β·S + g` together
//! with their total weight `W ← β·W + 1`. The conventional moment is
//! `m = (1 - β)·S` and the bias-corrected one is `m̂ = m / (1 - β^i) = S / W`,
//! which at step one is exactly the gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: 1e-8,
        }
    }
}

/// One parameter block presented to the optimizer.
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    first_weight: f64,
    second_weight: f64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
            first_weight: 0.0,
            second_weight: 0.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Conventional first moment `m` of parameter block `i`.
    pub fn first_moment(&self, i: usize) -> Vec<f64> {
        self.first[i]
            .iter()
            .map(|s| (1.0 - self.config.beta1) * s)
            .collect()
    }

    /// Conventional second moment `v` of parameter block `i`.
    pub fn second_moment(&self, i: usize) -> Vec<f64> {
        self.second[i]
            .iter()
            .map(|s| (1.0 - self.config.beta2) * s)
            .collect()
    }

    /// Bias-corrected first moment `m̂` of parameter block `i`.
    pub fn corrected_first_moment(&self, i: usize) -> Vec<f64> {
        self.first[i]
            .iter()
            .map(|s| s / self.first_weight)
            .collect()
    }

    /// Bias-corrected second moment `v̂` of parameter block `i`.
    pub fn corrected_second_moment(&self, i: usize) -> Vec<f64> {
        self.second[i]
            .iter()
            .map(|s| s / self.second_weight)
            .collect()
    }

    /// Applies one update to every block. Nothing is modified if any gradient
    /// is non-finite.
    pub fn update(&mut self, params: &mut [ParamRef<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::shape(format!(
                    "parameter `{}` has {} values but {} gradients",
                    p.name,
                    p.value.len(),
                    p.grad.len()
                )));
            }
            if let Some(index) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    name: p.name.to_string(),
                    index,
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::State(
                "parameter layout changed between optimizer steps".into(),
            ));
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        self.first_weight = beta1 * self.first_weight + 1.0;
        self.second_weight = beta2 * self.second_weight + 1.0;
        let (w1, w2) = (self.first_weight, self.second_weight);
        for ((p, s1), s2) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((x, &g), m), v) in p
                .value
                .iter_mut()
                .zip(p.grad)
                .zip(s1.iter_mut())
                .zip(s2.iter_mut())
            {
                *m = beta1 * *m + g;
                *v = beta2 * *v + g * g;
                let m_hat = *m / w1;
                let v_hat = *v / w2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Updates `params` in place from `grads`, block by block.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameter blocks but {} gradient blocks",
            params.len(),
            grads.len()
        )));
    }
    let names: Vec<String> = (0..params.len()).map(|i| format!("param[{i}]")).collect();
    let mut refs: Vec<ParamRef<'_>> = params
        .iter_mut()
        .zip(grads)
        .zip(&names)
        .map(|((p, g), name)| {
            p.expect_same_shape(g)?;
            Ok(ParamRef {
                name,
                value: p.data_mut(),
                grad: g.data(),
            })
        })
        .collect::<Result<_>>()?;
    state.update(&mut refs)
}
