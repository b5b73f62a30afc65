use tofuse::dwtnet::{
    build_model, load_weights, tiling_network, BlockKind, ModelConfig, SUBBAND_ORDER,
};
use tofuse::nn::{Activation, Mode};
use tofuse::wavelet::{tile_layout, untile_layout, DetailBands, SubbandPyramid};
use tofuse::Tensor;

/// Output extents at dwf = 4 for a 128×128 input: spatial sizes as printed
/// in the architecture table, depths equal to the filter argument of each
/// layer (sums for channel concatenations).
fn reference_extents() -> Vec<(&'static str, [usize; 3])> {
    let mut v = vec![
        ("inp", [128, 128, 4]),
        ("d0", [64, 64, 16]),
        ("d1", [32, 32, 64]),
        ("d2", [16, 16, 256]),
        ("d3", [8, 8, 512]),
        ("d4", [4, 4, 1024]),
        ("d5", [8, 8, 512]),
        ("d6", [16, 16, 256]),
        ("d7", [16, 16, 256]),
        ("d8", [32, 32, 64]),
        ("d9", [64, 64, 16]),
        ("d10", [64, 64, 4]),
    ];
    for n in ["ca1", "ch1", "cv1", "cd1"] {
        v.push((n, [64, 64, 1]));
    }
    v.extend([
        ("ll1.0", [64, 64, 4]),
        ("ll1.1", [64, 64, 16]),
        ("ll1.2", [64, 64, 64]),
        ("ll1.3", [64, 64, 128]),
        ("ll1.4", [32, 32, 256]),
        ("ll1.5", [32, 32, 64]),
        ("ll1.6", [32, 32, 16]),
        ("ll1.7", [32, 32, 4]),
    ]);
    for n in ["ca2", "ch2", "cv2", "cd2"] {
        v.push((n, [32, 32, 1]));
    }
    v.extend([
        ("ll2.0", [32, 32, 4]),
        ("ll2.1", [32, 32, 16]),
        ("ll2.2", [32, 32, 64]),
        ("ll2.3", [32, 32, 256]),
        ("ll2.4", [32, 32, 64]),
        ("ll2.5", [32, 32, 16]),
        ("ll2.6", [32, 32, 1]),
        ("hl2", [32, 32, 1]),
        ("lh2", [32, 32, 1]),
        ("hh2", [32, 32, 1]),
        ("hl1", [64, 64, 1]),
        ("lh1", [64, 64, 1]),
        ("hh1", [64, 64, 1]),
        ("ll2_1", [32, 64, 1]),
        ("ll2_2", [32, 64, 1]),
        ("ll1_tiled", [64, 64, 1]),
        ("a", [64, 128, 1]),
        ("b", [64, 128, 1]),
        ("op1", [128, 128, 1]),
        ("op2.0", [128, 128, 16]),
        ("op2.1", [64, 64, 64]),
        ("op2.2", [64, 64, 80]),
        ("op2.3", [32, 32, 256]),
        ("op2.4", [32, 32, 320]),
        ("op2.5", [16, 16, 512]),
        ("op2.6", [16, 16, 768]),
        ("op2.7", [8, 8, 1024]),
        ("op2.8", [8, 8, 1536]),
        ("op2.9", [8, 8, 1024]),
        ("op2.10", [16, 16, 512]),
        ("op2.11", [32, 32, 256]),
        ("op2.12", [64, 64, 64]),
        ("op2.13", [128, 128, 16]),
        ("output", [128, 128, 1]),
    ]);
    v
}

#[test]
fn shape_audit_matches_table() {
    let mut model = build_model(&ModelConfig::default()).unwrap();
    let x = Tensor::from_vec(
        &[1, 128, 128, 1],
        (0..128 * 128).map(|i| (i % 97) as f64 / 96.0).collect(),
    )
    .unwrap();
    let y = model.forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 128, 128, 1]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let audit = model.shape_audit();
    let want = reference_extents();
    let got: Vec<(&str, [usize; 3])> = audit.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    assert_eq!(got, want);
}

#[test]
fn inference_is_deterministic() {
    let mut model = build_model(&ModelConfig::square(1, 64, 4)).unwrap();
    let x = Tensor::full(&[2, 64, 64, 1], 0.3).unwrap();
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(&a.data()[..64 * 64], &a.data()[64 * 64..]);
}

#[test]
fn activation_placement() {
    let model = build_model(&ModelConfig::square(2, 64, 0)).unwrap();
    let mut ll = 0;
    for block in model.blocks() {
        let act = model.block_activation(&block.name);
        match block.kind {
            BlockKind::Ll => {
                ll += 1;
                assert_eq!(act, Some(Activation::Relu), "{}", block.name);
            }
            BlockKind::EncodeSame | BlockKind::EncodeHalf | BlockKind::EncodeDouble => {
                assert_eq!(act, Some(Activation::LeakyRelu), "{}", block.name);
            }
            BlockKind::Output => assert_eq!(act, Some(Activation::Sigmoid)),
            _ => assert_eq!(act, None, "{}", block.name),
        }
        let detail = ["hl2", "lh2", "hh2", "hl1", "lh1", "hh1"];
        if block.parent.as_deref().is_some_and(|p| detail.contains(&p)) {
            assert_eq!(act, Some(Activation::LeakyRelu), "{}", block.name);
        }
    }
    assert_eq!(ll, 11);
}

fn one_hot(e: usize, at: usize) -> Tensor {
    let mut t = Tensor::zeros(&[e, e]).unwrap();
    t.data_mut()[at] = 1.0;
    t
}

#[test]
fn tiling_stage_matches_tile_layout() {
    let q = 4;
    let mut net = tiling_network(q).unwrap();
    for (band, _) in SUBBAND_ORDER.iter().enumerate() {
        let e = if band < 4 { q } else { 2 * q };
        for pos in [0, 1, e + 2, e * e - 1] {
            let planes: Vec<Tensor> = (0..7)
                .map(|i| {
                    let ei = if i < 4 { q } else { 2 * q };
                    if i == band {
                        one_hot(ei, pos)
                    } else {
                        Tensor::zeros(&[ei, ei]).unwrap()
                    }
                })
                .collect();
            let inputs: Vec<Tensor> = planes
                .iter()
                .map(|p| {
                    p.clone()
                        .reshape(&[1, p.shape()[0], p.shape()[1], 1])
                        .unwrap()
                })
                .collect();
            let got = net
                .forward(&inputs)
                .unwrap()
                .reshape(&[4 * q, 4 * q])
                .unwrap();
            let [ll2, hl2, lh2, hh2, hl1, lh1, hh1]: [Tensor; 7] = planes.try_into().unwrap();
            let pyr = SubbandPyramid {
                ll: ll2,
                details: vec![
                    DetailBands {
                        lh: lh1,
                        hl: hl1,
                        hh: hh1,
                    },
                    DetailBands {
                        lh: lh2,
                        hl: hl2,
                        hh: hh2,
                    },
                ],
            };
            let want = tile_layout(&pyr).unwrap();
            assert_eq!(got, want, "band {} position {pos}", SUBBAND_ORDER[band]);
            assert_eq!(untile_layout(&got).unwrap(), pyr);
        }
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = build_model(&ModelConfig::square(1, 32, 11)).unwrap();
    model.set_mode(Mode::Train);
    let x = Tensor::full(&[2, 32, 32, 1], 0.25).unwrap();
    model.forward(&x).unwrap();
    model.set_mode(Mode::Inference);
    let p1 = dir.path().join("a.tofw");
    let p2 = dir.path().join("b.tofw");
    model.save_weights(&p1).unwrap();
    let mut loaded = load_weights(&p1, 32, 32).unwrap();
    assert_eq!(loaded.config().dwf, 1);
    loaded.save_weights(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let y = Tensor::full(&[1, 32, 32, 1], 0.6).unwrap();
    let once = loaded.forward(&y).unwrap();
    let mut again = load_weights(&p2, 32, 32).unwrap();
    assert_eq!(again.forward(&y).unwrap(), once);
}
