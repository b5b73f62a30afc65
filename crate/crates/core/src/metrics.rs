//! Objective scores on 8-bit intensities: MSE, cosine similarity and SSIM.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreTriple {
    pub ssim: f64,
    pub cossim: f64,
    pub mse: f64,
}

impl ScoreTriple {
    /// `ssim cossim mse` with six decimals.
    pub fn to_line(&self) -> String {
        format!("{:.6} {:.6} {:.6}", self.ssim, self.cossim, self.mse)
    }
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.expect_same_dims(b)?;
    let sum: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.pixels().len() as f64)
}

pub fn cossim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.expect_same_dims(b)?;
    let va: Vec<f64> = a.pixels().iter().map(|&v| f64::from(v)).collect();
    let vb: Vec<f64> = b.pixels().iter().map(|&v| f64::from(v)).collect();
    Ok(cossim_real(&va, &vb))
}

/// Cosine similarity of real vectors; two zero vectors score 1, one zero
/// vector scores 0.
pub fn cossim_real(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na * nb),
    }
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.expect_same_dims(b)?;
    let (h, w) = a.dims();
    let fa: Vec<f64> = a.pixels().iter().map(|&v| f64::from(v)).collect();
    let fb: Vec<f64> = b.pixels().iter().map(|&v| f64::from(v)).collect();
    ssim_plane(&fa, &fb, h, w)
}

pub fn scores(a: &GrayImage, b: &GrayImage) -> Result<ScoreTriple> {
    Ok(ScoreTriple {
        ssim: ssim(a, b)?,
        cossim: cossim(a, b)?,
        mse: mse(a, b)?,
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Valid-mode separable filtering of a `h × w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = taps
                .iter()
                .zip(&row[c..c + SSIM_WINDOW])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * horiz[(r + k) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 windows of two `h × w` planes
/// on the 0–255 scale.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape("SSIM plane length does not match its extent"));
    }
    let taps = gaussian_taps();
    let products = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&products(&|x, _| x * x), h, w, &taps);
    let e_bb = filter_valid(&products(&|_, y| y * y), h, w, &taps);
    let e_ab = filter_valid(&products(&|x, y| x * y), h, w, &taps);
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> GrayImage {
        GrayImage::from_fn(h, w, |_, _| rng.gen()).unwrap()
    }

    /// Direct per-window summation with centred second moments.
    #[allow(clippy::needless_range_loop)]
    fn ssim_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
        let (h, w) = a.dims();
        let half = 5.0f64;
        let mut win = [[0.0; 11]; 11];
        let mut total = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - half, j as f64 - half);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                total += *v;
            }
        }
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let mut acc = 0.0;
        let mut count = 0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let px = |img: &GrayImage, i: usize, j: usize| f64::from(img.get(r + i, c + j));
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        ma += k * px(a, i, j);
                        mb += k * px(b, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn mse_and_cossim_hand_values() {
        let a = GrayImage::new(1, 1, vec![10]).unwrap();
        let b = GrayImage::new(1, 1, vec![13]).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 9.0);
        let x = GrayImage::new(1, 2, vec![1, 0]).unwrap();
        let y = GrayImage::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(cossim(&x, &y).unwrap(), 0.0);
        let z = GrayImage::filled(1, 2, 0).unwrap();
        assert_eq!(cossim(&z, &z).unwrap(), 1.0);
        assert_eq!(cossim(&z, &x).unwrap(), 0.0);
        assert!(matches!(mse(&x, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn cossim_scale_invariant() {
        let a = [3.0, 1.0, 4.0, 1.5];
        let b = [2.0, 7.0, 1.0, 8.0];
        let base = cossim_real(&a, &b);
        let sa: Vec<f64> = a.iter().map(|v| v * 2.5).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * 0.3).collect();
        assert!((cossim_real(&sa, &sb) - base).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let a = random_image(32, 32, &mut rng);
            let b = random_image(32, 32, &mut rng);
            let fast = ssim(&a, &b).unwrap();
            assert!((fast - ssim_oracle(&a, &b)).abs() < 1e-9);
            assert_eq!(fast, ssim(&b, &a).unwrap());
        }
    }

    #[test]
    fn ssim_self_and_inverted() {
        let a = GrayImage::from_fn(24, 24, |r, c| (r * 5 + c * 3 + 40) as u8).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = GrayImage::from_fn(24, 24, |r, c| 255 - a.get(r, c)).unwrap();
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.0);
        assert!((s - ssim_oracle(&a, &inv)).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = GrayImage::filled(10, 40, 1).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::Validation(_))));
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
