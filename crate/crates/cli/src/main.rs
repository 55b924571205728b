use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saliencyforge::flowio::{flow_to_color, read_flo};
use saliencyforge::imgcore::{load_mask, load_prob_map, save_image, DEFAULT_MASK_THRESHOLD};
use saliencyforge::metrics::{
    evaluate_dirs, gradient_check, weighted_bce, Aggregation, LossConfig, LossFixture, DEFAULT_BETA_SQ,
};
use saliencyforge::pipeline::{load_index, run_dataset, scan_dataset_dir, PipelineConfig};
use saliencyforge::superpix::SlicParams;
use saliencyforge::{GrayMask, ProbMap, SolverConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SKIPPED: u8 = 3;

/// Largest acceptable relative error between analytic and finite-difference
/// gradients in `loss-check`.
const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Largest acceptable difference from a fixture's recorded loss.
const FIXTURE_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "saliencyforge", version, about = "Synthetic video saliency data and saliency metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize frame pairs, masks and optical flow from an image dataset.
    Synth(SynthArgs),
    /// Score saliency predictions against ground-truth masks.
    Eval(EvalArgs),
    /// Render a .flo file as a color-wheel PNG.
    FlowView(FlowViewArgs),
    /// Check the weighted cross-entropy gradient against finite differences.
    LossCheck(LossCheckArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["index", "dataset_dir"])))]
struct SynthArgs {
    /// Index file: JSON array of {id, image, mask} or text rows `id image mask`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Directory with images/ and masks/ subdirectories matched by file stem.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long, env = "SALIENCYFORGE_OUT")]
    out: PathBuf,
    /// Master seed; every random draw derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    frames_per_image: usize,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Fraction of background regions used as motion seeds.
    #[arg(long, default_value_t = 0.1)]
    seed_fraction: f64,
    /// Target superpixel count.
    #[arg(long, default_value_t = 300)]
    superpixels: usize,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 10)]
    slic_iters: usize,
    /// σ of the color similarity exp(-|ΔC|²/σ²).
    #[arg(long, default_value_t = 1.0)]
    color_scale: f64,
    #[arg(long, default_value_t = 1e-10)]
    solver_tol: f64,
    /// CG iteration cap as a multiple of the block size.
    #[arg(long, default_value_t = 10)]
    solver_iter_factor: usize,
    /// Largest block solved by dense Cholesky.
    #[arg(long, default_value_t = 64)]
    dense_threshold: usize,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: u8,
    /// Also write superpixel label maps and boundary overlays.
    #[arg(long)]
    debug_superpixels: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// JSON report path; the PR curve CSV goes next to it with a .csv extension.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "dataset")]
    dataset_id: String,
    /// Average precision/recall per frame instead of pooling counts.
    #[arg(long = "macro")]
    macro_average: bool,
    #[arg(long, default_value_t = DEFAULT_BETA_SQ)]
    beta_sq: f64,
}

#[derive(Args)]
struct FlowViewArgs {
    #[arg(long)]
    flo: PathBuf,
    #[arg(long)]
    png: PathBuf,
    /// Magnitude mapped to full saturation (default: the field's maximum).
    #[arg(long)]
    max_magnitude: Option<f64>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("maps").args(["pred", "gt"]).multiple(true).requires_all(["pred", "gt"])))]
struct LossCheckArgs {
    /// Prediction image (grayscale, value/255).
    #[arg(long, conflicts_with = "fixture")]
    pred: Option<PathBuf>,
    /// Ground-truth mask image.
    #[arg(long, conflicts_with = "fixture")]
    gt: Option<PathBuf>,
    /// JSON fixture {height, width, pred, gt, epsilon?, loss?}.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Seed for the random fixture used when no inputs are given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length of the random fixture.
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = saliencyforge::metrics::DEFAULT_EPSILON)]
    epsilon: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth(args),
        Command::Eval(args) => eval(args),
        Command::FlowView(args) => flow_view(args),
        Command::LossCheck(args) => loss_check(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn print_config<T: serde::Serialize>(value: &T) {
    match serde_json::to_string(value) {
        Ok(text) => println!("config: {text}"),
        Err(e) => eprintln!("warning: cannot print config: {e}"),
    }
}

fn synth(args: SynthArgs) -> saliencyforge::Result<u8> {
    let samples = match (&args.index, &args.dataset_dir) {
        (Some(index), _) => {
            if !index.is_file() {
                eprintln!("error: index file {} does not exist", index.display());
                return Ok(EXIT_USAGE);
            }
            load_index(index)?
        }
        (None, Some(dir)) => scan_dataset_dir(dir)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    let config = PipelineConfig {
        master_seed: args.seed,
        frames_per_image: args.frames_per_image,
        seed_fraction: args.seed_fraction,
        superpixels: SlicParams {
            target_regions: args.superpixels,
            compactness: args.compactness,
            max_iters: args.slic_iters,
        },
        color_scale: args.color_scale,
        solver: SolverConfig {
            tolerance: args.solver_tol,
            max_iter_factor: args.solver_iter_factor,
            dense_threshold: args.dense_threshold,
        },
        mask_threshold: args.mask_threshold,
        thread_count: args.threads.unwrap_or(0),
        output_dir: args.out,
        debug_superpixels: args.debug_superpixels,
    };
    print_config(&config);
    let manifest = run_dataset(&samples, &config)?;
    let t = &manifest.totals;
    println!(
        "synthesized {} pairs from {} samples in {:.2}s: {:.2} frames/s, {:.2} pairs/s",
        t.pairs, t.samples, t.elapsed_seconds, t.frames_per_second, t.pairs_per_second
    );
    for s in &manifest.skipped {
        eprintln!("skipped {}: {}", s.sample_id, s.reason);
    }
    if manifest.samples.is_empty() {
        return Ok(EXIT_FAILURE);
    }
    Ok(if manifest.skipped.is_empty() { 0 } else { EXIT_SKIPPED })
}

fn eval(args: EvalArgs) -> saliencyforge::Result<u8> {
    let aggregation = if args.macro_average {
        Aggregation::Macro
    } else {
        Aggregation::Micro
    };
    print_config(&serde_json::json!({
        "pred_dir": args.pred_dir,
        "gt_dir": args.gt_dir,
        "report": args.report,
        "dataset_id": args.dataset_id,
        "aggregation": aggregation,
        "beta_sq": args.beta_sq,
    }));
    let report = evaluate_dirs(&args.pred_dir, &args.gt_dir, &args.dataset_id, aggregation, args.beta_sq)?;
    report.write_json(&args.report)?;
    let csv = args.report.with_extension("csv");
    report.write_csv(&csv)?;
    println!("frames: {}", report.frames.len());
    println!("mean MAE: {}", report.mean_mae);
    println!(
        "max F-measure: {} at threshold {}",
        report.max_f_measure, report.max_f_threshold
    );
    Ok(0)
}

fn flow_view(args: FlowViewArgs) -> saliencyforge::Result<u8> {
    print_config(&serde_json::json!({
        "flo": args.flo,
        "png": args.png,
        "max_magnitude": args.max_magnitude,
    }));
    let flow = read_flo(&args.flo)?;
    save_image(&flow_to_color(&flow, args.max_magnitude), &args.png)?;
    println!("wrote {} ({}x{})", args.png.display(), flow.width(), flow.height());
    Ok(0)
}

fn random_fixture(seed: u64, size: usize) -> saliencyforge::Result<(ProbMap, GrayMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let gt: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
    Ok((ProbMap::new(size, size, pred)?, GrayMask::new(size, size, gt)?))
}

fn loss_check(args: LossCheckArgs) -> saliencyforge::Result<u8> {
    print_config(&serde_json::json!({
        "pred": args.pred,
        "gt": args.gt,
        "fixture": args.fixture,
        "seed": args.seed,
        "size": args.size,
        "step": args.step,
        "epsilon": args.epsilon,
    }));
    let mut cfg = LossConfig {
        epsilon: args.epsilon,
        ..LossConfig::default()
    };
    let mut expected_loss = None;
    let (pred, gt) = if let Some(path) = &args.fixture {
        let fixture = LossFixture::load(path)?;
        cfg = fixture.config();
        expected_loss = fixture.loss;
        fixture.maps()?
    } else if let (Some(p), Some(g)) = (&args.pred, &args.gt) {
        (load_prob_map(p)?, load_mask(g, DEFAULT_MASK_THRESHOLD)?)
    } else {
        if args.size == 0 {
            eprintln!("error: --size must be positive");
            return Ok(EXIT_USAGE);
        }
        random_fixture(args.seed, args.size)?
    };

    let out = weighted_bce(&pred, &gt, &cfg)?;
    println!("loss: {}", out.loss);
    println!("alpha: {}", out.alpha);
    let check = gradient_check(&pred, &gt, &cfg, args.step)?;
    println!(
        "max relative gradient error: {:e} over {} pixels ({} skipped at clip bounds)",
        check.max_relative_error, check.checked, check.skipped
    );
    let mut ok = check.max_relative_error < GRADIENT_TOLERANCE;
    if let Some(expected) = expected_loss {
        let diff = (out.loss - expected).abs();
        println!("fixture loss: {expected} (difference {diff:e})");
        ok &= diff <= FIXTURE_TOLERANCE;
    }
    Ok(if ok { 0 } else { EXIT_FAILURE })
}
