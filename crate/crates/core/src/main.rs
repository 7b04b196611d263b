use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dhformer::config::{apply_setting, load_train_config, parse_range, render_train_config};
use dhformer::dataset::io::{load_rgb, save_rgb};
use dhformer::dataset::{make_pair, mini_dataset, pair_rng, write_mini_dataset, Dataset, DatasetManifest, HazeRanges, Split};
use dhformer::model::{ModelConfig, Variant};
use dhformer::tensor::Primitive;
use dhformer::trainer::{
    evaluate, evaluate_with, infer_tiled, load_checkpoint, loss_csv, oracle_dehaze, overfit_probe, save_checkpoint,
    train, TrainConfig, DEFAULT_OVERLAP, PROBE_PAIRS, PROBE_STEPS,
};
use dhformer::verify::{ablation_suite, overfit_suite, quick_suites, sha256_hex};
use dhformer::{Error, Result};

const EXIT_VERIFY: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

/// Single-image dehazing with residual learning and transformer attention.
#[derive(Parser)]
#[command(name = "dhformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write hazy PNGs and a CSV of sampled (A, beta) for every manifest entry.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a step,epoch,loss CSV.
    Train(TrainArgs),
    /// Dehaze one PNG or every PNG in a directory.
    Dehaze(DehazeArgs),
    /// Score the manifest's test split and write a metric report.
    Eval(EvalArgs),
    /// Run the property suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Write the bundled 64-pair synthetic dataset and its manifest.
    MiniDataset(MiniArgs),
}

#[derive(Args)]
struct HazeArgs {
    /// Airlight range `lo,hi`.
    #[arg(long, value_name = "LO,HI", default_value = "0.7,1.0")]
    a_range: String,
    /// Scattering coefficient range `lo,hi`.
    #[arg(long, value_name = "LO,HI", default_value = "0.4,1.6")]
    beta_range: String,
    /// Haze sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HazeArgs {
    fn ranges(&self) -> Result<HazeRanges> {
        let r = HazeRanges {
            airlight: parse_range("a-range", &self.a_range)?,
            beta: parse_range("beta-range", &self.beta_range)?,
            ..HazeRanges::default()
        };
        r.validate()?;
        Ok(r)
    }

    fn print(&self, r: &HazeRanges) {
        println!("seed = {}", self.seed);
        println!("a_range = {}, {}", r.airlight.0, r.airlight.1);
        println!("beta_range = {}, {}", r.beta.0, r.beta.1);
        println!("t_min = {}", r.t_min);
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset manifest (TSV: clear, depth, split).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for `<id>.png` and `haze_params.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    haze: HazeArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest; the bundled mini-dataset is used when omitted with --probe.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss CSV path (default: `<out>.loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// full or residual_only.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the overfit probe instead: first 8 train pairs at 16x16, 500 full-batch Adam steps.
    #[arg(long)]
    probe: bool,
}

#[derive(Args)]
struct DehazeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; files keep their names with a `_dehazed` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Overlap between neighbouring tiles in pixels.
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: usize,
    /// Fail with exit 4 unless the checkpoint is this variant.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the exact residual of each synthetic pair instead of a network.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    manifest: PathBuf,
    /// Metric CSV to write.
    #[arg(long)]
    report: PathBuf,
    /// Fail with exit 4 unless the checkpoint is this variant.
    #[arg(long)]
    ablation: Option<String>,
    #[command(flatten)]
    haze: HazeArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Break the backward rule of one primitive (e.g. mul, softmax) to check that verification fails.
    #[arg(long, value_name = "PRIMITIVE")]
    inject_fault: Option<String>,
    /// Also run the overfit probe and the three-seed ablation (several minutes).
    #[arg(long)]
    training: bool,
    /// Directory for the ablation CSVs.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct MiniArgs {
    /// Directory to write `clear/`, `depth/` and `manifest.tsv` into.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Error(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::CheckpointMismatch(_) => EXIT_MISMATCH,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Dehaze(a) => cmd_dehaze(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
        Command::MiniDataset(a) => cmd_mini(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(names)) => {
            eprintln!("verification failed: {names}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    DatasetManifest::load(path)?.read()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let ranges = a.haze.ranges()?;
    println!("resolved config:");
    println!("manifest = {}", a.manifest.display());
    println!("out_dir = {}", a.out_dir.display());
    a.haze.print(&ranges);
    let dataset = load_dataset(&a.manifest)?;
    create_dir(&a.out_dir)?;
    let mut csv = String::from("image,split,airlight,beta\n");
    for (i, s) in dataset.samples.iter().enumerate() {
        let pair = make_pair(&s.clear, &s.depth, &ranges, &mut pair_rng(a.haze.seed, i))?;
        save_rgb(a.out_dir.join(format!("{}.png", s.id)), &pair.hazy)?;
        csv.push_str(&format!("{},{},{},{}\n", s.id, s.split.name(), pair.params.airlight, pair.params.beta));
    }
    write(&a.out_dir.join("haze_params.csv"), csv)?;
    println!("wrote {} hazy images to {}", dataset.samples.len(), a.out_dir.display());
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    let flags = [
        ("ablation", a.ablation.clone()),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
        ("optimizer", a.optimizer.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            apply_setting(&mut cfg, key, &v).map_err(|e| Error::Config(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = resolve_train_config(&a)?;
    let loss_path = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", a.out.display())));
    println!("resolved config:");
    match &a.manifest {
        Some(m) => println!("manifest = {}", m.display()),
        None => println!("manifest = (bundled mini-dataset)"),
    }
    println!("out = {}", a.out.display());
    println!("loss_csv = {}", loss_path.display());
    let dataset = match &a.manifest {
        Some(m) => load_dataset(m)?,
        None if a.probe => mini_dataset(),
        None => return Err(Error::Config("--manifest is required unless --probe is given".into()).into()),
    };
    let model = ModelConfig::default().with_variant(cfg.ablation);
    let (params, history, meta) = if a.probe {
        println!("probe = {PROBE_PAIRS} pairs, {PROBE_STEPS} steps, batch {PROBE_PAIRS}, adam lr 1e-3, no augmentation");
        println!("ablation = {}", cfg.ablation.name());
        println!("seed = {}", cfg.seed);
        let probe = overfit_probe(&dataset, cfg.ablation, cfg.seed)?;
        println!(
            "probe PSNR {:.3} dB vs hazy {:.3} dB",
            probe.report.mean_psnr, probe.hazy_psnr
        );
        let tc = TrainConfig {
            ablation: cfg.ablation,
            ..TrainConfig::overfit(PROBE_STEPS, PROBE_PAIRS, cfg.seed)
        };
        let meta = probe.trained.meta(&model, &tc);
        (probe.trained.params, probe.trained.history, meta)
    } else {
        print!("{}", render_train_config(&cfg));
        let out = train(&dataset, &cfg, &model)?;
        let meta = out.meta(&model, &cfg);
        (out.params, out.history, meta)
    };
    save_checkpoint(&params, &meta, &a.out)?;
    let csv = loss_csv(&history);
    write(&loss_path, &csv)?;
    println!(
        "{} steps, loss {:e} -> {:e}, {} parameters",
        history.len(),
        history.first().map_or(f64::NAN, |r| r.loss),
        history.last().map_or(f64::NAN, |r| r.loss),
        params.census()
    );
    println!("loss csv sha256 {}", sha256_hex(csv.as_bytes()));
    Ok(())
}

fn expect_variant(name: &Option<String>, model: &ModelConfig) -> Result<()> {
    if let Some(n) = name {
        let v = Variant::parse(n)?;
        if v != model.variant {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds the {} variant, {} was requested",
                model.variant.name(),
                v.name()
            )));
        }
    }
    Ok(())
}

fn cmd_dehaze(a: DehazeArgs) -> CmdResult {
    println!("resolved config:");
    println!("checkpoint = {}", a.checkpoint.display());
    println!("input = {}", a.input.display());
    println!("out = {}", a.out.display());
    println!("overlap = {}", a.overlap);
    let ck = load_checkpoint(&a.checkpoint)?;
    expect_variant(&a.ablation, &ck.meta.model)?;
    ck.params.validate(&ck.meta.model)?;
    println!("variant = {}", ck.meta.model.variant.name());
    println!("tile = {}", ck.meta.model.arch.input_size);

    let dir_mode = a.input.is_dir();
    let inputs: Vec<PathBuf> = if dir_mode {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| Error::Io {
                path: a.input.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    create_dir(&a.out)?;
    let mut written = 0;
    for path in &inputs {
        let result = load_rgb(path).and_then(|x| {
            let y = infer_tiled(&x, &ck.params, &ck.meta.model, a.overlap)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = a.out.join(format!("{stem}_dehazed.png"));
            save_rgb(&out, &y)?;
            Ok(out)
        });
        match result {
            Ok(out) => {
                println!("{} -> {}", path.display(), out.display());
                written += 1;
            }
            Err(e) if dir_mode => eprintln!("warning: skipping {}: {e}", path.display()),
            Err(e) => return Err(e.into()),
        }
    }
    if written == 0 {
        return Err(Error::Config(format!("no readable images in {}", a.input.display())).into());
    }
    println!("wrote {written} image(s)");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let ranges = a.haze.ranges()?;
    println!("resolved config:");
    match &a.checkpoint {
        Some(c) => println!("checkpoint = {}", c.display()),
        None => println!("checkpoint = (oracle residual)"),
    }
    println!("manifest = {}", a.manifest.display());
    println!("report = {}", a.report.display());
    a.haze.print(&ranges);
    let dataset = load_dataset(&a.manifest)?;
    let pairs = dataset.pairs(Split::Test, &ranges, a.haze.seed)?;
    let report = match &a.checkpoint {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            expect_variant(&a.ablation, &ck.meta.model)?;
            evaluate(&ck.params, &ck.meta.model, &pairs)?
        }
        None => evaluate_with(&pairs, oracle_dehaze)?,
    };
    let csv = report.to_csv();
    write(&a.report, &csv)?;
    println!("{} test images", report.rows.len());
    println!("image,psnr_db,ssim,fsim");
    if let Some(mean) = csv.lines().find(|l| l.starts_with("mean,")) {
        println!("{mean}");
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let fault = match &a.inject_fault {
        Some(name) => Some(Primitive::parse(name).ok_or_else(|| {
            let names: Vec<&str> = Primitive::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown primitive {name:?}; expected one of {}", names.join(", ")))
        })?),
        None => None,
    };
    println!("resolved config:");
    println!("inject_fault = {}", fault.map_or("none", |p| p.name()));
    println!("training = {}", a.training);
    let mut results = quick_suites(fault);
    if a.training {
        let dataset = mini_dataset();
        results.push(overfit_suite(&dataset).0);
        results.push(ablation_suite(&dataset, a.artifacts.as_deref()).0);
    }
    for r in &results {
        println!("{}", r.line());
    }
    let total: f64 = results.iter().map(|r| r.elapsed.as_secs_f64()).sum();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({})", r.name, r.detail))
        .collect();
    println!("{} of {} suites passed in {total:.2}s", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(failed.join("; ")))
    }
}

fn cmd_mini(a: MiniArgs) -> CmdResult {
    println!("resolved config:");
    println!("out = {}", a.out.display());
    let manifest = write_mini_dataset(&a.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}
