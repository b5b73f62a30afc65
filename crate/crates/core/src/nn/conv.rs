//! 3×3 convolution and transposed convolution on NHWC batches.
//!
//! Padding follows the SAME convention: the output of a stride-`s`
//! convolution has extent `ceil(in / s)`, with the odd padding pixel placed
//! at the bottom/right. The transposed convolution is the adjoint of the
//! stride-2 convolution from `2H × 2W` down to `H × W`, so it exactly doubles
//! the spatial extent.

use rayon::prelude::*;

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Spatial bookkeeping between the wide ("image") side and the narrow
/// ("patch grid") side of a 3×3 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn same(in_h: usize, in_w: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + KERNEL).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + KERNEL).saturating_sub(in_w);
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Image coordinate touched by patch row `o` at kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(pad)?;
        (p < extent).then_some(p)
    }
}

/// Unfolds one `in_h × in_w × c` image into a `patches × (9·c)` matrix.
pub(crate) fn im2col(img: &[f64], c: usize, g: &Geometry, cols: &mut [f64]) {
    debug_assert_eq!(img.len(), g.in_h * g.in_w * c);
    debug_assert_eq!(cols.len(), g.patches() * TAPS * c);
    let row_len = TAPS * c;
    for oi in 0..g.out_h {
        for oj in 0..g.out_w {
            let row = &mut cols[(oi * g.out_w + oj) * row_len..][..row_len];
            for ki in 0..KERNEL {
                let si = g.src(oi, ki, g.pad_top, g.in_h);
                for kj in 0..KERNEL {
                    let dst = &mut row[(ki * KERNEL + kj) * c..][..c];
                    match (si, g.src(oj, kj, g.pad_left, g.in_w)) {
                        (Some(i), Some(j)) => {
                            dst.copy_from_slice(&img[(i * g.in_w + j) * c..][..c])
                        }
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the patch matrix back into the image.
pub(crate) fn col2im(cols: &[f64], c: usize, g: &Geometry, img: &mut [f64]) {
    debug_assert_eq!(img.len(), g.in_h * g.in_w * c);
    let row_len = TAPS * c;
    for oi in 0..g.out_h {
        for oj in 0..g.out_w {
            let row = &cols[(oi * g.out_w + oj) * row_len..][..row_len];
            for ki in 0..KERNEL {
                let Some(i) = g.src(oi, ki, g.pad_top, g.in_h) else {
                    continue;
                };
                for kj in 0..KERNEL {
                    let Some(j) = g.src(oj, kj, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let dst = &mut img[(i * g.in_w + j) * c..][..c];
                    for (d, s) in dst.iter_mut().zip(&row[(ki * KERNEL + kj) * c..][..c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn nhwc(x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        &[n, h, w, c] => Ok((n, h, w, c)),
        s => Err(Error::shape(format!(
            "expected an NHWC tensor, got shape {s:?}"
        ))),
    }
}

fn check_kernel(w: &Tensor, a: usize, b: usize, what: &str) -> Result<()> {
    if w.shape() != [KERNEL, KERNEL, a, b] {
        return Err(Error::shape(format!(
            "{what} kernel must be [3, 3, {a}, {b}], got {:?}",
            w.shape()
        )));
    }
    Ok(())
}

fn check_bias(bias: &Tensor, f: usize) -> Result<()> {
    if bias.shape() != [f] {
        return Err(Error::shape(format!(
            "bias must be [{f}], got {:?}",
            bias.shape()
        )));
    }
    Ok(())
}

fn conv_geometry(h: usize, w: usize, stride: usize) -> Result<Geometry> {
    match stride {
        1 => Ok(Geometry::same(h, w, 1)),
        2 if h.is_multiple_of(2) && w.is_multiple_of(2) => Ok(Geometry::same(h, w, 2)),
        2 => Err(Error::shape(format!(
            "stride-2 convolution needs even extents, got {h}x{w}"
        ))),
        s => Err(Error::shape(format!("stride must be 1 or 2, got {s}"))),
    }
}

fn add_bias(y: &mut [f64], bias: &[f64]) {
    for px in y.chunks_exact_mut(bias.len()) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad(dy: &Tensor) -> Vec<f64> {
    let f = dy.channels();
    let mut db = vec![0.0; f];
    for px in dy.data().chunks_exact(f) {
        for (d, g) in db.iter_mut().zip(px) {
            *d += g;
        }
    }
    db
}

/// SAME 3×3 convolution. `x` is `[N, H, W, C]`, `weights` `[3, 3, C, F]`,
/// `bias` `[F]`; the result is `[N, H/stride, W/stride, F]`.
pub fn conv2d_forward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (n, h, w, c) = nhwc(x)?;
    let f = *weights.shape().last().unwrap_or(&0);
    check_kernel(weights, c, f, "conv2d")?;
    check_bias(bias, f)?;
    let g = conv_geometry(h, w, stride)?;
    let mut y = Tensor::zeros(&[n, g.out_h, g.out_w, f])?;
    let in_len = h * w * c;
    let out_len = g.patches() * f;
    y.data_mut()
        .par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(ys, xs)| {
            let mut cols = vec![0.0; g.patches() * TAPS * c];
            im2col(xs, c, &g, &mut cols);
            gemm(
                g.patches(),
                TAPS * c,
                f,
                &cols,
                false,
                weights.data(),
                false,
                ys,
                false,
            );
            add_bias(ys, bias.data());
        });
    Ok(y)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, w, c) = nhwc(x)?;
    let f = *weights.shape().last().unwrap_or(&0);
    check_kernel(weights, c, f, "conv2d")?;
    let g = conv_geometry(h, w, stride)?;
    if dy.shape() != [n, g.out_h, g.out_w, f] {
        return Err(Error::shape(format!(
            "conv2d output gradient has shape {:?}, expected {:?}",
            dy.shape(),
            [n, g.out_h, g.out_w, f]
        )));
    }
    let in_len = h * w * c;
    let out_len = g.patches() * f;
    let k = TAPS * c;

    let mut dx = x.zeros_like();
    dx.data_mut()
        .par_chunks_mut(in_len)
        .zip(dy.data().par_chunks(out_len))
        .for_each(|(dxs, dys)| {
            let mut dcols = vec![0.0; g.patches() * k];
            gemm(
                g.patches(),
                f,
                k,
                dys,
                false,
                weights.data(),
                true,
                &mut dcols,
                false,
            );
            col2im(&dcols, c, &g, dxs);
        });

    // Weight gradient accumulates sample by sample in index order.
    let mut dw = weights.zeros_like();
    let mut cols = vec![0.0; g.patches() * k];
    for (xs, dys) in x
        .data()
        .chunks_exact(in_len)
        .zip(dy.data().chunks_exact(out_len))
    {
        im2col(xs, c, &g, &mut cols);
        gemm(
            k,
            g.patches(),
            f,
            &cols,
            true,
            dys,
            false,
            dw.data_mut(),
            true,
        );
    }
    let db = Tensor::from_vec(&[f], bias_grad(dy))?;
    Ok((dx, dw, db))
}

fn transpose_geometry(h: usize, w: usize) -> Geometry {
    Geometry::same(2 * h, 2 * w, 2)
}

/// Stride-2 transposed convolution. `x` is `[N, H, W, C]`, `weights`
/// `[3, 3, F, C]`, `bias` `[F]`; the result is `[N, 2H, 2W, F]`.
pub fn conv_transpose2d_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = nhwc(x)?;
    let f = weights.shape().get(2).copied().unwrap_or(0);
    check_kernel(weights, f, c, "conv2d_transpose")?;
    check_bias(bias, f)?;
    let g = transpose_geometry(h, w);
    let mut y = Tensor::zeros(&[n, 2 * h, 2 * w, f])?;
    let in_len = h * w * c;
    let out_len = 4 * h * w * f;
    y.data_mut()
        .par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(ys, xs)| {
            let mut cols = vec![0.0; h * w * TAPS * f];
            gemm(
                h * w,
                c,
                TAPS * f,
                xs,
                false,
                weights.data(),
                true,
                &mut cols,
                false,
            );
            col2im(&cols, f, &g, ys);
            add_bias(ys, bias.data());
        });
    Ok(y)
}

/// Gradients of [`conv_transpose2d_forward`] with respect to input, weights and bias.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    weights: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, h, w, c) = nhwc(x)?;
    let f = weights.shape().get(2).copied().unwrap_or(0);
    check_kernel(weights, f, c, "conv2d_transpose")?;
    if dy.shape() != [n, 2 * h, 2 * w, f] {
        return Err(Error::shape(format!(
            "conv2d_transpose output gradient has shape {:?}, expected {:?}",
            dy.shape(),
            [n, 2 * h, 2 * w, f]
        )));
    }
    let g = transpose_geometry(h, w);
    let in_len = h * w * c;
    let out_len = 4 * h * w * f;
    let k = TAPS * f;

    let mut dx = x.zeros_like();
    dx.data_mut()
        .par_chunks_mut(in_len)
        .zip(dy.data().par_chunks(out_len))
        .for_each(|(dxs, dys)| {
            let mut dcols = vec![0.0; h * w * k];
            im2col(dys, f, &g, &mut dcols);
            gemm(
                h * w,
                k,
                c,
                &dcols,
                false,
                weights.data(),
                false,
                dxs,
                false,
            );
        });

    let mut dw = weights.zeros_like();
    let mut dcols = vec![0.0; h * w * k];
    for (xs, dys) in x
        .data()
        .chunks_exact(in_len)
        .zip(dy.data().chunks_exact(out_len))
    {
        im2col(dys, f, &g, &mut dcols);
        gemm(k, h * w, c, &dcols, true, xs, false, dw.data_mut(), true);
    }
    let db = Tensor::from_vec(&[f], bias_grad(dy))?;
    Ok((dx, dw, db))
}
