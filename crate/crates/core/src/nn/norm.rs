//! Per-channel batch normalization over every axis but the last.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

/// Values saved by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

fn check_params(x: &Tensor, params: &[&Tensor]) -> Result<usize> {
    let c = x.channels();
    for p in params {
        if p.shape() != [c] {
            return Err(Error::shape(format!(
                "batchnorm parameter shape {:?} does not match {c} channels",
                p.shape()
            )));
        }
    }
    Ok(c)
}

/// Biased per-channel mean and variance, accumulated in element order.
fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let count = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}

/// Training mode: normalizes with batch statistics and folds them into the
/// running averages.
pub fn batchnorm_train_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
) -> Result<(Tensor, BatchNormCache)> {
    let c = check_params(x, &[gamma, beta, running_mean, running_var])?;
    let (mean, var) = channel_stats(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = x.clone();
    for px in xhat.data_mut().chunks_exact_mut(c) {
        for ((v, m), s) in px.iter_mut().zip(&mean).zip(&inv_std) {
            *v = (*v - m) * s;
        }
    }
    let mut y = xhat.clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for ((v, g), b) in px.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    for (r, m) in running_mean.data_mut().iter_mut().zip(&mean) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
    }
    for (r, v) in running_var.data_mut().iter_mut().zip(&var) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
    }
    Ok((y, BatchNormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)` for the training-mode forward pass.
pub fn batchnorm_train_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    cache.xhat.expect_same_shape(dy)?;
    let c = check_params(dy, &[gamma])?;
    let count = (dy.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (g, xh) in dy
        .data()
        .chunks_exact(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for k in 0..c {
            dbeta[k] += g[k];
            dgamma[k] += g[k] * xh[k];
        }
    }
    let mut dx = dy.clone();
    for (d, xh) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for k in 0..c {
            let scale = gamma.data()[k] * cache.inv_std[k] / count;
            d[k] = scale * (count * d[k] - dbeta[k] - xh[k] * dgamma[k]);
        }
    }
    Ok((
        dx,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

/// Inference mode: normalizes with the running statistics.
pub fn batchnorm_infer_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<Tensor> {
    let c = check_params(x, &[gamma, beta, running_mean, running_var])?;
    let mut y = x.clone();
    for px in y.data_mut().chunks_exact_mut(c) {
        for (k, v) in px.iter_mut().enumerate() {
            let s = 1.0 / (running_var.data()[k] + BN_EPSILON).sqrt();
            *v = (*v - running_mean.data()[k]) * s * gamma.data()[k] + beta.data()[k];
        }
    }
    Ok(y)
}

/// Returns `(dx, dgamma, dbeta)` for the inference-mode forward pass.
pub fn batchnorm_infer_backward(
    x: &Tensor,
    gamma: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    x.expect_same_shape(dy)?;
    let c = check_params(x, &[gamma, running_mean, running_var])?;
    let inv_std: Vec<f64> = running_var
        .data()
        .iter()
        .map(|v| 1.0 / (v + BN_EPSILON).sqrt())
        .collect();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = dy.clone();
    for ((d, xs), g) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(dy.data().chunks_exact(c))
    {
        for k in 0..c {
            dbeta[k] += g[k];
            dgamma[k] += g[k] * (xs[k] - running_mean.data()[k]) * inv_std[k];
            d[k] = g[k] * gamma.data()[k] * inv_std[k];
        }
    }
    Ok((
        dx,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(c: usize) -> Tensor {
        Tensor::full(&[c], 1.0).unwrap()
    }

    fn zeros(c: usize) -> Tensor {
        Tensor::zeros(&[c]).unwrap()
    }

    #[test]
    fn standardized_batch_passes_through() {
        // Two values per channel at ±1: mean 0, biased variance 1.
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let (mut rm, mut rv) = (zeros(2), ones(2));
        let (y, _) = batchnorm_train_forward(&x, &ones(2), &zeros(2), &mut rm, &mut rv).unwrap();
        let shrink = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * shrink).abs() < 1e-15);
        }
        assert!(y.max_abs_diff(&x).unwrap() < 1e-3);
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::full(&[3, 2, 2, 1], 4.2).unwrap();
        let beta = Tensor::from_vec(&[1], vec![0.7]).unwrap();
        let (mut rm, mut rv) = (zeros(1), ones(1));
        let (y, _) = batchnorm_train_forward(&x, &ones(1), &beta, &mut rm, &mut rv).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn random_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4 * 5 * 5;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-3.0..5.0)).collect();
        let x = Tensor::from_vec(&[4, 5, 5, 3], data).unwrap();
        let (mut rm, mut rv) = (zeros(3), ones(3));
        let (y, _) = batchnorm_train_forward(&x, &ones(3), &zeros(3), &mut rm, &mut rv).unwrap();
        for k in 0..3 {
            let xs: Vec<f64> = x.data().iter().skip(k).step_by(3).copied().collect();
            let ys: Vec<f64> = y.data().iter().skip(k).step_by(3).copied().collect();
            let mx = xs.iter().sum::<f64>() / n as f64;
            let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n as f64;
            let my = ys.iter().sum::<f64>() / n as f64;
            let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n as f64;
            assert!(my.abs() < 1e-10);
            assert!((vy - vx / (vx + BN_EPSILON)).abs() < 1e-6);
            assert!((rm.data()[k] - 0.01 * mx).abs() < 1e-12);
            assert!((rv.data()[k] - (0.99 + 0.01 * vx)).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_uses_running_stats() {
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![3.0, 5.0]).unwrap();
        let rm = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let rv = Tensor::from_vec(&[1], vec![4.0 - BN_EPSILON]).unwrap();
        let y = batchnorm_infer_forward(&x, &ones(1), &zeros(1), &rm, &rv).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_mismatch() {
        let x = Tensor::zeros(&[1, 2, 2, 3]).unwrap();
        let (mut rm, mut rv) = (zeros(2), ones(2));
        assert!(matches!(
            batchnorm_train_forward(&x, &ones(2), &zeros(2), &mut rm, &mut rv),
            Err(Error::Shape(_))
        ));
    }
}
