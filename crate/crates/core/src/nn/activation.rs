use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    pub fn backward(self, x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for ((d, &xv), &yv) in dx.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *d *= self.derivative(xv, yv);
        }
        dx
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Activation::Relu.forward(x)
}

pub fn leaky_relu(x: &Tensor) -> Tensor {
    Activation::LeakyRelu.forward(x)
}

pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    Activation::Sigmoid.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::LeakyRelu.apply(-1.0), -0.3);
        assert_eq!(Activation::LeakyRelu.apply(1.5), 1.5);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn sigmoid_is_stable_in_tails() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_derivative_closed_form() {
        for x in [-4.0, -0.5, 0.0, 0.3, 2.5] {
            let y = sigmoid(x);
            let h = 1e-5;
            let fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            assert!((Activation::Sigmoid.derivative(x, y) - fd).abs() < 1e-6);
        }
    }
}
