use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::annotations::AnnotatedSample;
use crate::error::{Error, Result};
use crate::fusion::{build_training_target, RoiBox};
use crate::image::GrayImage;

/// Smallest crop extent on either axis before resampling.
pub const MIN_CROP: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: GrayImage,
    pub target: GrayImage,
    /// Source box in crop coordinates, before resampling.
    pub crop_box: RoiBox,
    /// Crop window in source-image coordinates: `(row0, col0, rows, cols)`.
    pub window: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct CropSet {
    pub pairs: Vec<TrainingPair>,
    /// One line per skipped box.
    pub warnings: Vec<String>,
}

/// Uniform draw of `(start, len)` with `len ≥ min_len`, `start ≤ lo`,
/// `start + len - 1 ≥ hi` and `start + len ≤ extent`.
fn sample_span(
    lo: usize,
    hi: usize,
    extent: usize,
    min_len: usize,
    rng: &mut impl Rng,
) -> Option<(usize, usize)> {
    let count = |start: usize| {
        let shortest = min_len.max(hi + 1 - start);
        (extent - start + 1).saturating_sub(shortest)
    };
    let total: usize = (0..=lo).map(count).sum();
    if total == 0 {
        return None;
    }
    let mut pick = rng.gen_range(0..total);
    for start in 0..=lo {
        let n = count(start);
        if pick < n {
            return Some((start, min_len.max(hi + 1 - start) + pick));
        }
        pick -= n;
    }
    unreachable!("pick lies below the window total")
}

/// `per_box` random windows around each box of a registered sample. Each
/// window contains its box and is at least [`MIN_CROP`] on both axes; input
/// and target are resampled to `extent`.
pub fn random_crops(
    sample: &AnnotatedSample,
    per_box: usize,
    extent: (usize, usize),
    rng: &mut impl Rng,
) -> Result<CropSet> {
    let optical = sample.optical.as_ref().ok_or_else(|| {
        Error::validation("unregistered data cannot train: sample has no optical image")
    })?;
    sample.validate()?;
    let (h, w) = sample.thermal.dims();
    let mut set = CropSet::default();
    for (i, b) in sample.boxes.iter().enumerate() {
        let target = build_training_target(&sample.thermal, optical, std::slice::from_ref(b))?;
        for _ in 0..per_box {
            let rows = sample_span(b.x0, b.x1, h, MIN_CROP, rng);
            let cols = sample_span(b.y0, b.y1, w, MIN_CROP, rng);
            let (Some((r0, rh)), Some((c0, cw))) = (rows, cols) else {
                let msg = format!(
                    "box {i} skipped: no {MIN_CROP}x{MIN_CROP} window fits the {h}x{w} image"
                );
                log::warn!("{msg}");
                set.warnings.push(msg);
                break;
            };
            let crop = |img: &GrayImage| {
                img.crop(r0, c0, r0 + rh - 1, c0 + cw - 1)?
                    .resize(extent.0, extent.1)
            };
            set.pairs.push(TrainingPair {
                input: crop(&sample.thermal)?,
                target: crop(&target)?,
                crop_box: RoiBox {
                    x0: b.x0 - r0,
                    y0: b.y0 - c0,
                    x1: b.x1 - r0,
                    y1: b.y1 - c0,
                    class: b.class,
                },
                window: (r0, c0, rh, cw),
            });
        }
    }
    Ok(set)
}

/// Crops for many samples in parallel; sample `i` draws from stream `i` of
/// a generator seeded with `seed`, so the result is independent of
/// scheduling.
pub fn crops_for_samples(
    samples: &[AnnotatedSample],
    per_box: usize,
    extent: (usize, usize),
    seed: u64,
) -> Result<CropSet> {
    let sets: Vec<CropSet> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            random_crops(s, per_box, extent, &mut rng)
                .map_err(|e| Error::Validation(format!("sample {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut out = CropSet::default();
    for s in sets {
        out.pairs.extend(s.pairs);
        out.warnings.extend(s.warnings);
    }
    Ok(out)
}
