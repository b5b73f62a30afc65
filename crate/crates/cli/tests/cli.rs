use std::path::Path;
use std::process::{Command, Output};

use tofuse::datakit::{read_pgm, write_pgm};
use tofuse::GrayImage;

fn tofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tofuse"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(tofuse(&[]).status.code(), Some(1));
    assert_eq!(tofuse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        tofuse(&["fuse", "--thermal", "x.pgm"]).status.code(),
        Some(1)
    );
    assert_eq!(tofuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn fuse_with_itself_is_identity() {
    let d = tempfile::tempdir().unwrap();
    let t = d.path().join("t.pgm");
    let o = d.path().join("o.pgm");
    let img = GrayImage::from_fn(5, 7, |r, c| (r * 30 + c) as u8).unwrap();
    write_pgm(&img, &t).unwrap();
    let out = tofuse(&[
        "fuse",
        "--thermal",
        path(&t),
        "--mask",
        path(&t),
        "--out",
        path(&o),
    ]);
    assert!(out.status.success());
    assert_eq!(read_pgm(&o).unwrap(), img);
    let out = tofuse(&[
        "fuse",
        "--thermal",
        path(&t),
        "--mask",
        path(&t),
        "--out",
        path(&o),
        "--he",
    ]);
    assert!(out.status.success());
    assert_eq!(read_pgm(&o).unwrap().get(4, 6), 255);
}

#[test]
fn rof_block_case_line_and_drawing() {
    let d = tempfile::tempdir().unwrap();
    let t = d.path().join("t.pgm");
    let f = d.path().join("f.pgm");
    let boxed = d.path().join("box.pgm");
    let txt = d.path().join("box.txt");
    write_pgm(&GrayImage::filled(4, 4, 0).unwrap(), &t).unwrap();
    let fused = GrayImage::from_fn(4, 4, |r, c| {
        if (1..=2).contains(&r) && (1..=2).contains(&c) {
            100
        } else {
            0
        }
    })
    .unwrap();
    write_pgm(&fused, &f).unwrap();
    let out = tofuse(&[
        "rof",
        "--thermal",
        path(&t),
        "--fused",
        path(&f),
        "--out",
        path(&txt),
        "--draw",
        path(&boxed),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "1 1 2 2 ssd 40000\n");
    assert_eq!(
        std::fs::read_to_string(&txt).unwrap(),
        "1 1 2 2 ssd 40000\n"
    );
    let drawn = read_pgm(&boxed).unwrap();
    assert_eq!(drawn.pixels().iter().filter(|&&v| v == 255).count(), 4);
    let bad = tofuse(&[
        "rof",
        "--thermal",
        path(&t),
        "--fused",
        path(&f),
        "--metric",
        "psnr",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn metrics_self_comparison() {
    let d = tempfile::tempdir().unwrap();
    let x = d.path().join("x.pgm");
    write_pgm(
        &GrayImage::from_fn(16, 16, |r, c| (r * 9 + c * 4) as u8).unwrap(),
        &x,
    )
    .unwrap();
    let out = tofuse(&["metrics", "--a", path(&x), "--b", path(&x)]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "1.000000 1.000000 0.000000\n");
    let small = d.path().join("s.pgm");
    write_pgm(&GrayImage::filled(4, 4, 1).unwrap(), &small).unwrap();
    assert_eq!(
        tofuse(&["metrics", "--a", path(&small), "--b", path(&small)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn dwt_writes_seven_planes_and_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let input = d.path().join("in.pgm");
    let out_dir = d.path().join("coef");
    write_pgm(
        &GrayImage::from_fn(16, 24, |r, c| (r * 11 + c * 5) as u8).unwrap(),
        &input,
    )
    .unwrap();
    let out = tofuse(&[
        "dwt",
        path(&input),
        "--levels",
        "2",
        "--out",
        path(&out_dir),
        "--inverse",
    ]);
    assert!(out.status.success());
    let bins = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "bin")
        })
        .count();
    assert_eq!(bins, 7);
    let report = stdout(&out);
    let err: f64 = report
        .lines()
        .last()
        .unwrap()
        .strip_prefix("max-abs error ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-9);

    let odd = d.path().join("odd.pgm");
    write_pgm(&GrayImage::filled(5, 3, 0).unwrap(), &odd).unwrap();
    let out = tofuse(&["dwt", path(&odd), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape error"));
}

#[test]
fn train_requires_seed_and_registration() {
    let d = tempfile::tempdir().unwrap();
    let t = d.path().join("t.pgm");
    write_pgm(&GrayImage::filled(128, 128, 30).unwrap(), &t).unwrap();
    let ann = d.path().join("a.json");
    std::fs::write(
        &ann,
        r#"[{"thermal":"t.pgm","optical":null,"boxes":[{"x0":1,"y0":1,"x1":5,"y1":5,"class":3}]}]"#,
    )
    .unwrap();
    let w = d.path().join("w.tofw");
    let log = d.path().join("loss.csv");
    let base = [
        "train",
        path(&ann),
        "--weights",
        path(&w),
        "--loss-log",
        path(&log),
    ];
    assert_eq!(tofuse(&base).status.code(), Some(1));
    let mut args = base.to_vec();
    args.extend(["--seed", "1"]);
    let out = tofuse(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unregistered data cannot train"));
}

#[test]
fn synth_train_infer_round_trip_with_config_file() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nseed = 3\ndwf = 1\nextent = 32\nepochs = 2\nbatch_size = 2\nper_box = 1\nmax_pairs = 4\n").unwrap();
    let out = tofuse(&[
        "synth",
        "--n",
        "2",
        "--config",
        path(&cfg),
        "--out",
        path(&data),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let w = d.path().join("w.tofw");
    let log = d.path().join("loss.csv");
    let ann = data.join("annotations.json");
    let out = tofuse(&[
        "train",
        path(&ann),
        "--config",
        path(&cfg),
        "--epochs",
        "3",
        "--weights",
        path(&w),
        "--loss-log",
        path(&log),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&log).unwrap();
    assert!(csv.starts_with("epoch,loss\n"));
    assert_eq!(csv.lines().count(), 4);

    let mask = d.path().join("mask.pgm");
    let thermal = data.join("thermal_0000.pgm");
    let out = tofuse(&[
        "infer",
        "--config",
        path(&cfg),
        "--weights",
        path(&w),
        "--input",
        path(&thermal),
        "--out",
        path(&mask),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read_pgm(&mask).unwrap().dims(), (128, 128));

    std::fs::write(&cfg, "seed = x\n").unwrap();
    assert_eq!(
        tofuse(&[
            "synth",
            "--n",
            "1",
            "--config",
            path(&cfg),
            "--out",
            path(&data)
        ])
        .status
        .code(),
        Some(1)
    );
}
