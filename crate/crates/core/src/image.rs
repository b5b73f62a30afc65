//! 8-bit grayscale images and conversions to the unit-interval planes the
//! model consumes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "image extent {height}x{width} is empty"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} pixels supplied for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn expect_same_dims(&self, other: &GrayImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "image extents differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// `rows × cols` plane with values `v / 255`.
    pub fn to_unit(&self) -> Tensor {
        Tensor::from_vec(
            &[self.height, self.width],
            self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        )
        .expect("nonempty image")
    }

    /// Inverse of [`GrayImage::to_unit`]: `round(255·v)` with halves away from
    /// zero, clamped to the 8-bit range. Accepts `[H, W]` or `[H, W, 1]`.
    pub fn from_unit(plane: &Tensor) -> Result<Self> {
        let (h, w) = plane_dims(plane)?;
        Self::new(
            h,
            w,
            plane.data().iter().map(|&v| to_u8(255.0 * v)).collect(),
        )
    }

    /// Copy of the rectangle with inclusive corners `(r0, c0)`–`(r1, c1)`.
    pub fn crop(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> Result<Self> {
        if r0 > r1 || c0 > c1 || r1 >= self.height || c1 >= self.width {
            return Err(Error::validation(format!(
                "crop ({r0},{c0})-({r1},{c1}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Self::from_fn(r1 - r0 + 1, c1 - c0 + 1, |r, c| self.get(r0 + r, c0 + c))
    }

    /// Bilinear resampling to `height × width`.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let plane = Tensor::from_vec(
            &[self.height, self.width],
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )?;
        let out = resize_bilinear(&plane, height, width)?;
        Self::new(
            height,
            width,
            out.data().iter().map(|&v| to_u8(v)).collect(),
        )
    }
}

/// Rounds half away from zero and clamps to `0..=255`.
pub fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn plane_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [h, w, 1] => Ok((*h, *w)),
        s => Err(Error::shape(format!(
            "expected a single-channel plane, got {s:?}"
        ))),
    }
}

/// Bilinear resampling of a `[H, W]` (or `[H, W, 1]`) plane using pixel
/// centres: source coordinate `(dst + 0.5)·scale − 0.5`, clamped to the edge.
pub fn resize_bilinear(plane: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (h, w) = plane_dims(plane)?;
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target is empty"));
    }
    let src = plane.data();
    let axis = |dst: usize, n_in: usize, n_out: usize| {
        let pos =
            ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|j| axis(j, w, width)).collect();
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        let (r0, r1, fr) = axis(i, h, height);
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    let shape: Vec<usize> = if plane.rank() == 3 {
        vec![height, width, 1]
    } else {
        vec![height, width]
    };
    Tensor::from_vec(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_round_trip_is_exact() {
        let img = GrayImage::from_fn(3, 5, |r, c| (r * 60 + c * 13) as u8).unwrap();
        assert_eq!(GrayImage::from_unit(&img.to_unit()).unwrap(), img);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_u8(100.5), 101);
        assert_eq!(to_u8(100.49), 100);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(300.0), 255);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::from_fn(4, 6, |r, c| (r * 10 + c) as u8).unwrap();
        assert_eq!(img.resize(4, 6).unwrap(), img);
        let flat = GrayImage::filled(7, 9, 42).unwrap();
        assert!(flat
            .resize(32, 17)
            .unwrap()
            .pixels()
            .iter()
            .all(|&v| v == 42));
    }

    #[test]
    fn resize_upsample_interpolates() {
        let plane = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let up = resize_bilinear(&plane, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn crop_bounds() {
        let img = GrayImage::from_fn(4, 4, |r, c| (r * 4 + c) as u8).unwrap();
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.pixels(), &[6, 7, 10, 11]);
        assert!(img.crop(0, 0, 4, 1).is_err());
    }
}
