use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DROPOUT_RATE: f64 = 0.5;

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; the
/// returned mask holds those per-element factors. Inference is the identity.
pub fn dropout<R: Rng>(
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if mode == Mode::Inference || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = x.map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
    let y = x.zip_map(&mask, |a, m| a * m)?;
    Ok((y, Some(mask)))
}
