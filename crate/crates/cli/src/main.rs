use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tofuse::datakit::{
    crops_for_samples, read_annotations, read_pgm, synth_pairs, write_annotations, write_pgm,
    SampleRecord,
};
use tofuse::dwtnet::{build_model, load_weights, ModelConfig};
use tofuse::fusion::{average_fuse, full_pipeline, histogram_equalize, predict_mask};
use tofuse::image::{to_u8, GrayImage};
use tofuse::metrics::scores;
use tofuse::rof::{compute_rof, draw_box, RofMetric};
use tofuse::train::{train, write_loss_csv, TrainConfig};
use tofuse::wavelet::{dwt2_forward, dwt2_inverse, write_raw_plane};
use tofuse::Tensor;

mod config;

use config::ConfigFile;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser)]
#[command(name = "tofuse", version, about = "Localized thermal-optical fusion")]
struct Cli {
    /// Flat key=value file supplying defaults for numeric options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar wavelet decomposition of a PGM image.
    Dwt(DwtArgs),
    /// Train the mask network on annotated registered pairs.
    Train(TrainArgs),
    /// Predict a mask for a thermal image.
    Infer(InferArgs),
    /// Average a thermal image with a mask, optionally equalizing.
    Fuse(FuseArgs),
    /// Region-of-fusion box between a thermal image and its fused output.
    Rof(RofArgs),
    /// SSIM, cosine similarity and MSE for image pairs.
    Metrics(MetricsArgs),
    /// Generate synthetic registered pairs with annotations.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DwtArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
    /// Reconstruct and report the round-trip error.
    #[arg(long)]
    inverse: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    dwf: Option<usize>,
    /// Model input extent (square, multiple of 32).
    #[arg(long)]
    extent: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    annotations: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Random crops per annotated box.
    #[arg(long)]
    per_box: Option<usize>,
    /// Keep at most this many training pairs.
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    loss_log: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    extent: Option<usize>,
    /// Write the equalized fused image instead of the raw mask.
    #[arg(long)]
    fused: bool,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    thermal: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    he: bool,
}

#[derive(Args)]
struct RofArgs {
    #[arg(long)]
    thermal: PathBuf,
    #[arg(long)]
    fused: PathBuf,
    #[arg(long, default_value = "ssd")]
    metric: String,
    /// Write the box line to this file as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the fused image with the box drawn on it.
    #[arg(long)]
    draw: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, required = true)]
    a: Vec<PathBuf>,
    #[arg(long, required = true)]
    b: Vec<PathBuf>,
    /// Print a column header line first.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<tofuse::Error> for Failure {
    fn from(e: tofuse::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: String) -> Failure {
    Failure::Usage(msg)
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(usage)?,
        None => ConfigFile::default(),
    };
    let threads = match std::env::var("TOFUSE_THREADS") {
        Ok(v) => Some(v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            usage(format!(
                "TOFUSE_THREADS must be a positive integer, got '{v}'"
            ))
        })?),
        Err(_) => cfg.get::<usize>("threads").map_err(usage)?,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Dwt(a) => cmd_dwt(a),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Infer(a) => cmd_infer(a, &cfg),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Rof(a) => cmd_rof(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Min–max stretch of a real plane to 8 bits for viewing.
fn visualize(plane: &Tensor) -> Result<GrayImage, tofuse::Error> {
    let (lo, hi) = (plane.min(), plane.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let [h, w] = [plane.shape()[0], plane.shape()[1]];
    GrayImage::new(
        h,
        w,
        plane
            .data()
            .iter()
            .map(|&v| to_u8((v - lo) / span * 255.0))
            .collect(),
    )
}

fn cmd_dwt(a: DwtArgs) -> CmdResult {
    let img = read_pgm(&a.input)?;
    let pyr = dwt2_forward(&img.to_unit(), a.levels)?;
    create_dir(&a.out)?;
    for (name, plane) in pyr.named_planes() {
        let name = name.to_lowercase();
        let path = a.out.join(format!("{name}.bin"));
        let file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        write_raw_plane(plane, std::io::BufWriter::new(file)).map_err(|e| io_err(&path, e))?;
        write_pgm(&visualize(plane)?, a.out.join(format!("{name}.pgm")))?;
        println!("{}", path.display());
    }
    if a.inverse {
        let back = dwt2_inverse(&pyr)?;
        let err = back.max_abs_diff(&img.to_unit())?;
        write_pgm(
            &GrayImage::from_unit(&back)?,
            a.out.join("reconstructed.pgm"),
        )?;
        println!("max-abs error {err:e}");
    }
    Ok(())
}

fn model_config(m: &ModelArgs, cfg: &ConfigFile, seed: u64) -> Result<ModelConfig, Failure> {
    let dwf = cfg.resolve(m.dwf, "dwf", 4).map_err(usage)?;
    let extent = cfg.resolve(m.extent, "extent", 128).map_err(usage)?;
    let mc = ModelConfig::square(dwf, extent, seed);
    mc.validate().map_err(|e| usage(e.to_string()))?;
    Ok(mc)
}

fn positive(name: &str, v: usize) -> Result<usize, Failure> {
    if v == 0 {
        return Err(usage(format!("{name} must be positive")));
    }
    Ok(v)
}

fn cmd_train(a: TrainArgs, cfg: &ConfigFile) -> CmdResult {
    let seed = match a.seed {
        Some(s) => s,
        None => cfg
            .get("seed")
            .map_err(usage)?
            .ok_or_else(|| usage("train requires --seed (or seed in the config file)".into()))?,
    };
    let mc = model_config(&a.model, cfg, seed)?;
    let tc = TrainConfig {
        epochs: positive(
            "epochs",
            cfg.resolve(a.epochs, "epochs", 200).map_err(usage)?,
        )?,
        batch_size: positive(
            "batch size",
            cfg.resolve(a.batch_size, "batch_size", 8).map_err(usage)?,
        )?,
        learning_rate: cfg.resolve(a.lr, "lr", 1e-3).map_err(usage)?,
        seed,
    };
    if !(tc.learning_rate.is_finite() && tc.learning_rate > 0.0) {
        return Err(usage("learning rate must be positive".into()));
    }
    let per_box = positive(
        "per-box",
        cfg.resolve(a.per_box, "per_box", 10).map_err(usage)?,
    )?;
    let max_pairs = cfg
        .resolve(a.max_pairs, "max_pairs", usize::MAX)
        .map_err(usage)?;

    let samples = read_annotations(&a.annotations)?;
    if let Some(i) = samples.iter().position(|s| !s.is_registered()) {
        return Err(Failure::Data(format!(
            "unregistered data cannot train: record {i} has no optical image"
        )));
    }
    let mut set = crops_for_samples(&samples, per_box, (mc.height, mc.width), seed)?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    set.pairs.truncate(max_pairs);
    if set.pairs.is_empty() {
        return Err(Failure::Data("no training pairs could be built".into()));
    }
    let mut model = build_model(&mc)?;
    eprintln!(
        "training on {} pairs, {} parameters, {} epochs",
        set.pairs.len(),
        model.param_count(),
        tc.epochs
    );
    let history = train(&mut model, &set.pairs, &tc, |e, l| {
        eprintln!("epoch {e} loss {l}")
    })?;
    model.save_weights(&a.weights)?;
    write_loss_csv(&history, &a.loss_log)?;
    Ok(())
}

fn cmd_infer(a: InferArgs, cfg: &ConfigFile) -> CmdResult {
    let extent = cfg.resolve(a.extent, "extent", 128).map_err(usage)?;
    let mut model = load_weights(&a.weights, extent, extent)?;
    let thermal = read_pgm(&a.input)?;
    let out = if a.fused {
        full_pipeline(&thermal, &mut model)?
    } else {
        predict_mask(&thermal, &mut model)?
    };
    write_pgm(&out, &a.out)?;
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> CmdResult {
    let fused = average_fuse(&read_pgm(&a.thermal)?, &read_pgm(&a.mask)?)?;
    let out = if a.he {
        histogram_equalize(&fused)
    } else {
        fused
    };
    write_pgm(&out, &a.out)?;
    Ok(())
}

fn cmd_rof(a: RofArgs) -> CmdResult {
    let metric: RofMetric = a
        .metric
        .parse()
        .map_err(|e: tofuse::Error| usage(e.to_string()))?;
    let thermal = read_pgm(&a.thermal)?;
    let fused = read_pgm(&a.fused)?;
    let b = compute_rof(&thermal, &fused, metric)?;
    println!("{b}");
    if let Some(p) = &a.out {
        std::fs::write(p, format!("{b}\n")).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &a.draw {
        write_pgm(&draw_box(&fused, &b)?, p)?;
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    if a.a.len() != a.b.len() {
        return Err(usage(format!(
            "{} --a images but {} --b images",
            a.a.len(),
            a.b.len()
        )));
    }
    if a.header {
        println!("ssim cossim mse");
    }
    for (pa, pb) in a.a.iter().zip(&a.b) {
        println!("{}", scores(&read_pgm(pa)?, &read_pgm(pb)?)?.to_line());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs, cfg: &ConfigFile) -> CmdResult {
    let seed = match a.seed {
        Some(s) => s,
        None => cfg
            .get("seed")
            .map_err(usage)?
            .ok_or_else(|| usage("synth requires --seed (or seed in the config file)".into()))?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples =
        synth_pairs(a.n, (a.height, a.width), &mut rng).map_err(|e| usage(e.to_string()))?;
    create_dir(&a.out)?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let t = format!("thermal_{i:04}.pgm");
        let o = format!("optical_{i:04}.pgm");
        write_pgm(&s.thermal, a.out.join(&t))?;
        write_pgm(
            s.optical.as_ref().expect("synthetic pairs are registered"),
            a.out.join(&o),
        )?;
        records.push(SampleRecord {
            thermal: t.into(),
            optical: Some(o.into()),
            boxes: s.boxes.clone(),
        });
    }
    write_annotations(&records, a.out.join("annotations.json"))?;
    println!("{}", a.out.join("annotations.json").display());
    Ok(())
}
