use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fastext::bench::{bench_forward, bench_input, MIN_ITERATIONS, MIN_WARMUP};
use fastext::error::{Error, Result};
use fastext::eval::MatchConfig;
use fastext::formats::evaluate_dirs;
use fastext::image::{read_ppm, write_ppm};
use fastext::model::{build_network, count_parameters, NetworkConfig, WeightStore};
use fastext::pipeline::{annotate, detections_to_text, Detector, RunConfig};
use fastext::weight_file;

#[derive(Parser)]
#[command(name = "fastext", version, about = "Multi-scale segment-and-link text detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect words in a PPM image and write one box per line.
    Detect(DetectArgs),
    /// Score a directory of detections against ground truth.
    Eval(EvalArgs),
    /// Time forward passes.
    Bench(BenchArgs),
    /// Print the parameter count for a width multiplier.
    Params(ParamsArgs),
    /// Write deterministic pseudo-random weights.
    GenWeights(GenArgs),
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Detection file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    seg_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    link_thresh: f64,
    #[arg(long, default_value_t = 512)]
    min_side: usize,
    /// Also write a copy of the image with boxes drawn.
    #[arg(long)]
    annotate: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long)]
    det_dir: PathBuf,
    /// Credit per participant of a split or merged match.
    #[arg(long, default_value_t = 1.0)]
    split_credit: f64,
    /// Print the full report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Weight file; seeded random weights for `--alpha` when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f32,
    #[arg(long, default_value_t = 768)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = MIN_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    /// Defaults to 0.75, 1.0 and 2.0.
    #[arg(long)]
    alpha: Vec<f32>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    alpha: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn config_for(alpha: f32) -> Result<NetworkConfig> {
    let config = NetworkConfig::new(alpha);
    config.validate()?;
    Ok(config)
}

fn detect(a: DetectArgs) -> Result<()> {
    let run = RunConfig {
        seg_threshold: a.seg_thresh,
        link_threshold: a.link_thresh,
        min_side: a.min_side,
        ..RunConfig::default()
    };
    run.validate()?;
    let detector = Detector::from_weights(&weight_file::load(&a.weights)?, run)?;
    let image = read_ppm(&a.image)?;
    let words = detector.detect(&image)?;
    let text = detections_to_text(&words);
    match &a.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if let Some(path) = &a.annotate {
        write_ppm(path, &annotate(&image, &words))?;
    }
    eprintln!("{} words", words.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(a.split_credit >= 0.0 && a.split_credit <= 1.0) {
        return Err(Error::InvalidArgument(format!("split credit {} outside [0, 1]", a.split_credit)));
    }
    let config = MatchConfig { split_credit: a.split_credit, ..MatchConfig::default() };
    let report = evaluate_dirs(&a.gt_dir, &a.det_dir, &config)?;
    if a.json {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
        println!("{json}");
        return Ok(());
    }
    for img in &report.images {
        let r = &img.report;
        println!(
            "{}\tP={:.4}\tR={:.4}\tF={:.4}\tgt={}\tdet={}",
            img.stem, r.precision, r.recall, r.f_measure, r.care_gt, r.scored_det
        );
    }
    let t = &report.total;
    println!(
        "corpus\tP={:.4}\tR={:.4}\tF={:.4}\tgt={}\tdet={}\timages={}",
        t.precision,
        t.recall,
        t.f_measure,
        t.care_gt,
        t.scored_det,
        report.images.len()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.iters < MIN_ITERATIONS {
        return Err(Error::InvalidArgument(format!("--iters must be at least {MIN_ITERATIONS}")));
    }
    let store = match &a.weights {
        Some(path) => weight_file::load(path)?,
        None => WeightStore::seeded(&config_for(a.alpha)?, a.seed),
    };
    let network = build_network(&store.config(), &store)?;
    let input = bench_input(a.width, a.height, a.seed)?;
    let stats = bench_forward(&network, &input, a.warmup, a.iters)?;
    println!(
        "alpha={} input={}x{} iters={} median_ms={:.3} p95_ms={:.3} min_ms={:.3}",
        store.alpha(),
        a.width,
        a.height,
        stats.iterations,
        stats.median_ms,
        stats.p95_ms,
        stats.min_ms
    );
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let alphas = if a.alpha.is_empty() { vec![0.75, 1.0, 2.0] } else { a.alpha };
    for alpha in alphas {
        let n = count_parameters(&config_for(alpha)?);
        println!("alpha={alpha} params={n} ({:.2}M)", n as f64 / 1e6);
    }
    Ok(())
}

fn gen_weights(a: GenArgs) -> Result<()> {
    let store = WeightStore::seeded(&config_for(a.alpha)?, a.seed);
    weight_file::save(&a.out, &store)?;
    eprintln!("wrote {} parameters to {}", store.parameter_count(), a.out.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Params(a) => params(a),
        Command::GenWeights(a) => gen_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
