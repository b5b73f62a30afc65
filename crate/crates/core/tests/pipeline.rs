use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tofuse::datakit::{random_crops, synth_pairs};
use tofuse::dwtnet::{build_model, ModelConfig};
use tofuse::fusion::{average_fuse, full_pipeline, histogram_equalize, predict_mask};
use tofuse::rof::{compute_rof, RofMetric};
use tofuse::GrayImage;

#[test]
fn pipeline_keeps_input_extent_and_is_deterministic() {
    let mut model = build_model(&ModelConfig::square(1, 32, 5)).unwrap();
    let thermal = GrayImage::from_fn(45, 70, |r, c| ((r * 5 + c * 2) % 256) as u8).unwrap();
    let a = full_pipeline(&thermal, &mut model).unwrap();
    assert_eq!(a.dims(), thermal.dims());
    assert_eq!(full_pipeline(&thermal, &mut model).unwrap(), a);
    let mask = predict_mask(&thermal, &mut model).unwrap();
    assert_eq!(
        a,
        histogram_equalize(&average_fuse(&thermal, &mask).unwrap())
    );
}

#[test]
fn self_mask_leaves_thermal_before_equalization() {
    let thermal = GrayImage::from_fn(9, 13, |r, c| (r * 13 + c) as u8).unwrap();
    assert_eq!(average_fuse(&thermal, &thermal).unwrap(), thermal);
}

#[test]
fn crop_targets_differ_only_inside_the_box() {
    let samples = synth_pairs(6, (160, 150), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in &samples {
        let set = random_crops(s, 2, (128, 128), &mut rng).unwrap();
        for p in &set.pairs {
            let (_, _, rh, cw) = p.window;
            let sr = rh as f64 / 128.0;
            let sc = cw as f64 / 128.0;
            let b = p.crop_box;
            for r in 0..128 {
                for c in 0..128 {
                    // source footprint of the bilinear sample, padded by one pixel
                    let (fr, fc) = ((r as f64 + 0.5) * sr - 0.5, (c as f64 + 0.5) * sc - 0.5);
                    let near = fr + 1.0 >= b.x0 as f64
                        && fr - 1.0 <= b.x1 as f64
                        && fc + 1.0 >= b.y0 as f64
                        && fc - 1.0 <= b.y1 as f64;
                    if !near {
                        assert!(p.input.get(r, c).abs_diff(p.target.get(r, c)) <= 1);
                    }
                }
            }
        }
    }
}

#[test]
fn rof_on_trivial_pairs() {
    let s = &synth_pairs(1, (128, 128), &mut ChaCha8Rng::seed_from_u64(2)).unwrap()[0];
    let b = compute_rof(&s.thermal, &s.thermal, RofMetric::Ssd).unwrap();
    assert_eq!((b.x1, b.y1, b.x2, b.y2), (0, 0, 127, 127));
    assert_eq!(b.dissim, 0.0);
}
