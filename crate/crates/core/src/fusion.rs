//! Averaging fusion, histogram equalization and training-target construction.

use crate::dwtnet::Model;
use crate::error::{Error, Result};
use crate::image::{resize_bilinear, to_u8, GrayImage};
use crate::nn::Mode;
use crate::tensor::Tensor;

/// Annotated rectangle with inclusive corners; `x` indexes rows, `y` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    #[serde(rename = "class")]
    pub class: u8,
}

impl RoiBox {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(1..=5).contains(&self.class) {
            return Err(Error::validation(format!(
                "class {} outside 1..=5",
                self.class
            )));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(Error::validation(format!(
                "box ({},{})-({},{}) has inverted corners",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        if self.x1 >= height || self.y1 >= width {
            return Err(Error::validation(format!(
                "box ({},{})-({},{}) outside {height}x{width} image",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.x0..=self.x1).contains(&row) && (self.y0..=self.y1).contains(&col)
    }

    pub fn height(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn width(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

fn average(t: u8, m: u8) -> u8 {
    to_u8((f64::from(t) + f64::from(m)) / 2.0)
}

/// Per-pixel `round((T + M) / 2)`.
pub fn average_fuse(thermal: &GrayImage, mask: &GrayImage) -> Result<GrayImage> {
    thermal.expect_same_dims(mask)?;
    let data = thermal
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(&t, &m)| average(t, m))
        .collect();
    GrayImage::new(thermal.height(), thermal.width(), data)
}

/// The gray-level map `h(v) = round((cdf(v) − cdf_min) / (N − cdf_min) · 255)`.
/// Returns the identity map for single-level images.
pub fn equalization_map(img: &GrayImage) -> [u8; 256] {
    let mut hist = [0usize; 256];
    for &v in img.pixels() {
        hist[v as usize] += 1;
    }
    let mut identity = [0u8; 256];
    for (i, v) in identity.iter_mut().enumerate() {
        *v = i as u8;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return identity;
    }
    let n = img.pixels().len();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = *cdf.iter().find(|&&c| c > 0).expect("nonempty image");
    let mut map = [0u8; 256];
    for (m, &c) in map.iter_mut().zip(&cdf) {
        let num = c.saturating_sub(cdf_min) as f64;
        *m = to_u8(num / (n - cdf_min) as f64 * 255.0);
    }
    map
}

pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let map = equalization_map(img);
    let mut out = img.clone();
    for v in out.pixels_mut() {
        *v = map[*v as usize];
    }
    out
}

/// Thermal image with the thermal/optical average written into the union
/// of `boxes`.
pub fn build_training_target(
    thermal: &GrayImage,
    optical: &GrayImage,
    boxes: &[RoiBox],
) -> Result<GrayImage> {
    thermal.expect_same_dims(optical)?;
    for b in boxes {
        b.validate(thermal.height(), thermal.width())?;
    }
    let mut out = thermal.clone();
    for b in boxes {
        for r in b.x0..=b.x1 {
            for c in b.y0..=b.y1 {
                out.set(r, c, average(thermal.get(r, c), optical.get(r, c)));
            }
        }
    }
    Ok(out)
}

/// Runs the model on `thermal` in inference mode and returns the 8-bit mask
/// at the thermal image's own extent.
pub fn predict_mask(thermal: &GrayImage, model: &mut Model) -> Result<GrayImage> {
    let cfg = *model.config();
    let unit = thermal.to_unit();
    let input = if thermal.dims() == (cfg.height, cfg.width) {
        unit
    } else {
        resize_bilinear(&unit, cfg.height, cfg.width)?
    };
    let batch = input.reshape(&[1, cfg.height, cfg.width, 1])?;
    let prev = model.mode();
    model.set_mode(Mode::Inference);
    let out = model.forward(&batch.map(|v| v.clamp(0.0, 1.0)));
    model.set_mode(prev);
    let plane = out?.reshape(&[cfg.height, cfg.width])?;
    let plane: Tensor = if thermal.dims() == (cfg.height, cfg.width) {
        plane
    } else {
        resize_bilinear(&plane, thermal.height(), thermal.width())?
    };
    GrayImage::from_unit(&plane)
}

/// Mask prediction, averaging with the thermal input, then equalization.
pub fn full_pipeline(thermal: &GrayImage, model: &mut Model) -> Result<GrayImage> {
    let mask = predict_mask(thermal, model)?;
    Ok(histogram_equalize(&average_fuse(thermal, &mask)?))
}
