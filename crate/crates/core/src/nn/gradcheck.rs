//! Central-difference gradient verification for the layer vocabulary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward,
};
use super::loss::logcosh_loss;
use super::norm::{
    batchnorm_infer_backward, batchnorm_infer_forward, batchnorm_train_backward,
    batchnorm_train_forward,
};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Relative errors are taken against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so that exactly-zero gradients do not divide by zero.
pub const REL_FLOOR: f64 = 1e-4;

/// A named input of the checked function with its analytic gradient.
#[derive(Debug, Clone)]
pub struct GradBlock {
    pub name: String,
    pub value: Tensor,
    pub analytic: Tensor,
}

impl GradBlock {
    pub fn new(name: impl Into<String>, value: Tensor, analytic: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            analytic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(block name, max relative error)` per block.
    pub blocks: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub worst_block: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every block's analytic gradient against central differences of
/// the scalar function `f`, which receives all block values in order.
pub fn gradient_check(
    blocks: &[GradBlock],
    f: impl Fn(&[Tensor]) -> f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut values: Vec<Tensor> = blocks.iter().map(|b| b.value.clone()).collect();
    let mut report = GradCheckReport {
        blocks: Vec::with_capacity(blocks.len()),
        max_rel_err: 0.0,
        worst_block: String::new(),
    };
    for (bi, block) in blocks.iter().enumerate() {
        block.value.expect_same_shape(&block.analytic)?;
        let mut worst = 0.0f64;
        for i in 0..block.value.len() {
            let orig = values[bi].data()[i];
            values[bi].data_mut()[i] = orig + FD_STEP;
            let up = f(&values);
            values[bi].data_mut()[i] = orig - FD_STEP;
            let down = f(&values);
            values[bi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(block.analytic.data()[i], numeric));
        }
        if worst > report.max_rel_err || report.worst_block.is_empty() {
            report.max_rel_err = worst;
            report.worst_block = block.name.clone();
        }
        report.blocks.push((block.name.clone(), worst));
    }
    if report.max_rel_err > tolerance {
        return Err(Error::GradientCheck {
            block: report.worst_block.clone(),
            max_rel_err: report.max_rel_err,
            tolerance,
        });
    }
    Ok(report)
}

/// A layer configuration that [`check_layer`] knows how to probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerProbe {
    Conv2d {
        filters: usize,
        stride: usize,
    },
    ConvTranspose2d {
        filters: usize,
    },
    BatchNormTrain,
    BatchNormInference,
    Activation(Activation),
    /// Dropout with its mask frozen.
    Dropout,
    /// Concatenation along the channel axis with a second random tensor.
    Concat,
    /// Extraction of channel 0.
    Slice,
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Inputs kept away from activation kinks so the differences stay smooth.
fn kink_free(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let t = random_tensor(shape, rng, -2.0, 2.0)?;
    Ok(t.map(|v| {
        if v.abs() < 0.05 {
            v + 0.1_f64.copysign(v)
        } else {
            v
        }
    }))
}

/// Checks one layer on a random NHWC input of `shape`, contracting the
/// output with a fixed random projection to obtain a scalar.
pub fn check_layer(
    probe: LayerProbe,
    shape: &[usize],
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = kink_free(shape, &mut rng)?;
    let c = x.channels();
    match probe {
        LayerProbe::Conv2d { filters, stride } => {
            let w = random_tensor(&[3, 3, c, filters], &mut rng, -1.0, 1.0)?;
            let b = random_tensor(&[filters], &mut rng, -1.0, 1.0)?;
            let y = conv2d_forward(&x, &w, &b, stride)?;
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let (dx, dw, db) = conv2d_backward(&x, &w, stride, &r)?;
            let blocks = [
                GradBlock::new("conv2d/input", x, dx),
                GradBlock::new("conv2d/kernel", w, dw),
                GradBlock::new("conv2d/bias", b, db),
            ];
            gradient_check(
                &blocks,
                |v| dot(&conv2d_forward(&v[0], &v[1], &v[2], stride).unwrap(), &r),
                tolerance,
            )
        }
        LayerProbe::ConvTranspose2d { filters } => {
            let w = random_tensor(&[3, 3, filters, c], &mut rng, -1.0, 1.0)?;
            let b = random_tensor(&[filters], &mut rng, -1.0, 1.0)?;
            let y = conv_transpose2d_forward(&x, &w, &b)?;
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let (dx, dw, db) = conv_transpose2d_backward(&x, &w, &r)?;
            let blocks = [
                GradBlock::new("conv2d_transpose/input", x, dx),
                GradBlock::new("conv2d_transpose/kernel", w, dw),
                GradBlock::new("conv2d_transpose/bias", b, db),
            ];
            gradient_check(
                &blocks,
                |v| dot(&conv_transpose2d_forward(&v[0], &v[1], &v[2]).unwrap(), &r),
                tolerance,
            )
        }
        LayerProbe::BatchNormTrain => {
            let gamma = random_tensor(&[c], &mut rng, 0.5, 1.5)?;
            let beta = random_tensor(&[c], &mut rng, -0.5, 0.5)?;
            let run = |x: &Tensor, g: &Tensor, b: &Tensor| {
                let (mut m, mut v) = (
                    Tensor::zeros(&[c]).unwrap(),
                    Tensor::full(&[c], 1.0).unwrap(),
                );
                batchnorm_train_forward(x, g, b, &mut m, &mut v).unwrap()
            };
            let (y, cache) = run(&x, &gamma, &beta);
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let (dx, dg, db) = batchnorm_train_backward(&cache, &gamma, &r)?;
            let blocks = [
                GradBlock::new("batchnorm/input", x, dx),
                GradBlock::new("batchnorm/gamma", gamma, dg),
                GradBlock::new("batchnorm/beta", beta, db),
            ];
            gradient_check(&blocks, |v| dot(&run(&v[0], &v[1], &v[2]).0, &r), tolerance)
        }
        LayerProbe::BatchNormInference => {
            let gamma = random_tensor(&[c], &mut rng, 0.5, 1.5)?;
            let beta = random_tensor(&[c], &mut rng, -0.5, 0.5)?;
            let mean = random_tensor(&[c], &mut rng, -0.5, 0.5)?;
            let var = random_tensor(&[c], &mut rng, 0.5, 2.0)?;
            let y = batchnorm_infer_forward(&x, &gamma, &beta, &mean, &var)?;
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let (dx, dg, db) = batchnorm_infer_backward(&x, &gamma, &mean, &var, &r)?;
            let blocks = [
                GradBlock::new("batchnorm/input", x, dx),
                GradBlock::new("batchnorm/gamma", gamma, dg),
                GradBlock::new("batchnorm/beta", beta, db),
            ];
            gradient_check(
                &blocks,
                |v| {
                    dot(
                        &batchnorm_infer_forward(&v[0], &v[1], &v[2], &mean, &var).unwrap(),
                        &r,
                    )
                },
                tolerance,
            )
        }
        LayerProbe::Activation(act) => {
            let y = act.forward(&x);
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let dx = act.backward(&x, &y, &r);
            let name = format!("{}/input", act.name());
            gradient_check(
                &[GradBlock::new(name, x, dx)],
                |v| dot(&act.forward(&v[0]), &r),
                tolerance,
            )
        }
        LayerProbe::Dropout => {
            let mask = x.map(|_| if rng.gen::<bool>() { 2.0 } else { 0.0 });
            let r = random_tensor(x.shape(), &mut rng, -1.0, 1.0)?;
            let dx = r.zip_map(&mask, |a, m| a * m)?;
            gradient_check(
                &[GradBlock::new("dropout/input", x, dx)],
                |v| dot(&v[0].zip_map(&mask, |a, m| a * m).unwrap(), &r),
                tolerance,
            )
        }
        LayerProbe::Concat => {
            let axis = x.rank() - 1;
            let other = random_tensor(x.shape(), &mut rng, -1.0, 1.0)?;
            let y = tensor::concat(&x, &other, axis)?;
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let (dx, dother) = tensor::split(&r, axis, c)?;
            let blocks = [
                GradBlock::new("concat/left", x, dx),
                GradBlock::new("concat/right", other, dother),
            ];
            gradient_check(
                &blocks,
                |v| dot(&tensor::concat(&v[0], &v[1], axis).unwrap(), &r),
                tolerance,
            )
        }
        LayerProbe::Slice => {
            let y = tensor::channel(&x, 0)?;
            let r = random_tensor(y.shape(), &mut rng, -1.0, 1.0)?;
            let mut dx = x.zeros_like();
            for (d, g) in dx.data_mut().iter_mut().step_by(c).zip(r.data()) {
                *d = *g;
            }
            gradient_check(
                &[GradBlock::new("slice/input", x, dx)],
                |v| dot(&tensor::channel(&v[0], 0).unwrap(), &r),
                tolerance,
            )
        }
    }
}

/// Checks the log-cosh gradient against central differences on random
/// prediction/target pairs of `len` elements.
pub fn check_logcosh(len: usize, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = random_tensor(&[len], &mut rng, -3.0, 3.0)?;
    let target = random_tensor(&[len], &mut rng, -3.0, 3.0)?;
    let (_, grad) = logcosh_loss(&pred, &target)?;
    gradient_check(
        &[GradBlock::new("logcosh/prediction", pred, grad)],
        |v| logcosh_loss(&v[0], &target).unwrap().0,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-4;

    #[test]
    fn conv2d_small_case() {
        let r = check_layer(
            LayerProbe::Conv2d {
                filters: 3,
                stride: 1,
            },
            &[1, 8, 8, 2],
            1,
            TOL,
        )
        .unwrap();
        assert!(r.max_rel_err < TOL);
        assert_eq!(r.blocks.len(), 3);
    }

    #[test]
    fn logcosh_matches_tanh_over_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = random_tensor(&[50], &mut rng, -3.0, 3.0).unwrap();
        let target = random_tensor(&[50], &mut rng, -3.0, 3.0).unwrap();
        let (_, g) = logcosh_loss(&pred, &target).unwrap();
        for ((gv, p), t) in g.data().iter().zip(pred.data()).zip(target.data()) {
            assert!((gv - (p - t).tanh() / 50.0).abs() < 1e-6);
        }
        check_logcosh(50, 4, 1e-6).unwrap();
    }

    #[test]
    fn sigmoid_chain() {
        check_layer(
            LayerProbe::Activation(Activation::Sigmoid),
            &[2, 3, 3, 2],
            8,
            1e-6,
        )
        .unwrap();
    }

    #[test]
    fn wrong_gradient_names_block() {
        let x = Tensor::from_vec(&[3], vec![0.5, 1.0, -2.0]).unwrap();
        let wrong = x.map(|v| 3.0 * v);
        let err = gradient_check(
            &[GradBlock::new("square/input", x, wrong)],
            |v| v[0].sum_squares(),
            TOL,
        )
        .unwrap_err();
        match err {
            Error::GradientCheck { block, .. } => assert_eq!(block, "square/input"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
