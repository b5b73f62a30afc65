//! Mini-batch training of the mask network with log-cosh loss and ADAM.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datakit::TrainingPair;
use crate::dwtnet::Model;
use crate::error::{Error, Result};
use crate::nn::{logcosh_loss, AdamConfig, AdamState, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Stacks `[H, W]` unit planes from the selected pairs into `[N, H, W, 1]`
/// input and target batches.
fn stack(pairs: &[&TrainingPair]) -> Result<(Tensor, Tensor)> {
    let (h, w) = pairs[0].input.dims();
    let mut x = Vec::with_capacity(pairs.len() * h * w);
    let mut y = Vec::with_capacity(pairs.len() * h * w);
    for p in pairs {
        if p.input.dims() != (h, w) || p.target.dims() != (h, w) {
            return Err(Error::shape("training pairs differ in extent"));
        }
        x.extend(p.input.to_unit().into_data());
        y.extend(p.target.to_unit().into_data());
    }
    let shape = [pairs.len(), h, w, 1];
    Ok((Tensor::from_vec(&shape, x)?, Tensor::from_vec(&shape, y)?))
}

/// Trains in place and returns the mean training-mode batch loss of every
/// epoch. `on_epoch(epoch, loss)` is called after each epoch with 1-based
/// epoch numbers.
pub fn train(
    model: &mut Model,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::validation("no training pairs"));
    }
    let extent = (model.config().height, model.config().width);
    if let Some(p) = pairs.iter().find(|p| p.input.dims() != extent) {
        return Err(Error::shape(format!(
            "pair extent {:?} does not match model extent {extent:?}",
            p.input.dims()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let prev = model.mode();
    model.set_mode(Mode::Train);
    let mut history = Vec::with_capacity(cfg.epochs);
    let result = (|| {
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let selected: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
                let (x, y) = stack(&selected)?;
                let pred = model.forward(&x)?;
                let (loss, grad) = logcosh_loss(&pred, &y)?;
                let net = model.net_mut();
                net.zero_grads();
                net.backward(&grad)?;
                net.apply_adam(&mut adam)?;
                total += loss;
                batches += 1;
            }
            let mean = total / batches as f64;
            log::info!("epoch {epoch}: loss {mean}");
            on_epoch(epoch, mean);
            history.push(mean);
        }
        Ok(())
    })();
    model.set_mode(prev);
    result.map(|()| history)
}

/// `epoch,loss` CSV with shortest round-trip float formatting.
pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}

pub fn write_loss_csv(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(loss_csv(history).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dwtnet::{build_model, ModelConfig};
    use crate::fusion::RoiBox;
    use crate::image::GrayImage;

    fn pairs(n: usize) -> Vec<TrainingPair> {
        (0..n)
            .map(|i| {
                let input =
                    GrayImage::from_fn(32, 32, |r, c| ((r * 7 + c * 3 + i * 11) % 256) as u8)
                        .unwrap();
                let target =
                    GrayImage::from_fn(32, 32, |r, c| if r < 16 { input.get(r, c) } else { 200 })
                        .unwrap();
                TrainingPair {
                    input,
                    target,
                    crop_box: RoiBox {
                        x0: 16,
                        y0: 0,
                        x1: 31,
                        y1: 31,
                        class: 1,
                    },
                    window: (0, 0, 32, 32),
                }
            })
            .collect()
    }

    #[test]
    fn short_run_is_deterministic_and_descends() {
        let data = pairs(4);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 3,
        };
        let run = || {
            let mut m = build_model(&ModelConfig::square(1, 32, 9)).unwrap();
            let h = train(&mut m, &data, &cfg, |_, _| {}).unwrap();
            assert_eq!(m.mode(), Mode::Inference);
            h
        };
        let a = run();
        assert_eq!(loss_csv(&a), loss_csv(&run()));
        assert!(a.iter().all(|l| l.is_finite() && *l >= 0.0));
        assert!(a[3] < a[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut m = build_model(&ModelConfig::square(1, 32, 0)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &[], &cfg, |_, _| {}).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..cfg
        };
        assert!(train(&mut m, &pairs(1), &bad, |_, _| {}).is_err());
        let mut big = pairs(1);
        big[0].input = GrayImage::filled(64, 64, 0).unwrap();
        assert!(matches!(
            train(&mut m, &big, &cfg, |_, _| {}),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn csv_layout() {
        assert_eq!(loss_csv(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
