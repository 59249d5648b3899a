//! Command-line entry points: dataset construction, training, evaluation,
//! and the eta sweep, all driven by flat key=value config files. Outputs
//! are written atomically (temp name, then rename) and a fully resolved
//! config echo lands next to every training run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{write_atomic, RunConfig};
use crate::data::{
    build_mnist_dil, build_mnist_rot, gen_synthetic, load_mnist_dir, save_dataset, Dataset,
    DilSpec, Manifest, RotSpec, RotationMode, SplitTag, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{embed_dataset, eta_sweep, eval_invariance, sweep_rows_to_csv, ProbeConfig};
use crate::model::{ModelGraph, ModelVariant};
use crate::trainer::{CsvSink, Trainer};

#[derive(Parser, Debug)]
#[command(name = "invforge", version, about = "Unsupervised adversarial invariance induction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Construct datasets (IDX files plus a sidecar manifest).
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model and write checkpoint, metrics CSV, and config echo.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the test sets of a manifest.
    Eval(EvalArgs),
    /// Train one model per (alpha, beta) pair and tabulate the metrics.
    Sweep(SweepArgs),
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Rotated-digit variant: train/test at the angle set plus held-out
    /// angle pairs never seen in training.
    MnistRot(MnistRotArgs),
    /// Eroded/dilated evaluation copies of the test set, one per kernel.
    MnistDil(MnistDilArgs),
    /// Synthetic two-factor dataset with ground-truth nuisance labels.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct MnistRotArgs {
    /// Directory holding the four standard MNIST IDX files.
    #[arg(long)]
    pub mnist_dir: PathBuf,
    /// Training/evaluation angle set in degrees.
    #[arg(long, default_value = "0,22.5,-22.5,45,-45", allow_hyphen_values = true)]
    pub angles: String,
    /// Held-out |angle| values; each becomes a test set at +-angle.
    #[arg(long, default_value = "55,65", allow_hyphen_values = true)]
    pub holdout_angles: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// "in-plane" or "foreshorten".
    #[arg(long, default_value = "in-plane")]
    pub rotation_mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MnistDilArgs {
    #[arg(long)]
    pub mnist_dir: PathBuf,
    /// Signed kernel sizes (negative erodes).
    #[arg(long, default_value = "-2,2,3,4", allow_hyphen_values = true)]
    pub kernels: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub y_classes: u32,
    #[arg(long, default_value_t = 5)]
    pub z_classes: u32,
    /// Training-set size.
    #[arg(long, default_value_t = 50_000)]
    pub n: usize,
    /// Test-set size.
    #[arg(long, default_value_t = 10_000)]
    pub test_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// "full", "b0", or "b1".
    #[arg(long, default_value = "full")]
    pub model: String,
    /// Run config file (flat key=value).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides data.manifest from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest whose non-train sets are evaluated.
    #[arg(long)]
    pub test_sets: PathBuf,
    /// Also write one embedding CSV per evaluated set.
    #[arg(long)]
    pub export_embeddings: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Semicolon-separated alpha,beta pairs, e.g. "100,0;100,0.1;0,0.1".
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data(DataCommand::MnistRot(args)) => cmd_data_mnist_rot(args),
        Command::Data(DataCommand::MnistDil(args)) => cmd_data_mnist_dil(args),
        Command::Data(DataCommand::Synth(args)) => cmd_data_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>> {
    if text.trim().is_empty() {
        return Ok(vec![]);
    }
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{what}: cannot parse '{v}'")))
        })
        .collect()
}

fn angle_set_name(angle: f32) -> String {
    crate::config::format_f32(angle)
}

fn cmd_data_mnist_rot(args: MnistRotArgs) -> Result<()> {
    let angles: Vec<f32> = parse_list("--angles", &args.angles)?;
    let holdouts: Vec<f32> = parse_list("--holdout-angles", &args.holdout_angles)?;
    let mode = RotationMode::parse(&args.rotation_mode)?;
    let spec = RotSpec { angles: angles.clone(), mode };
    spec.validate()?;
    // Train/eval separation: held-out angles must never appear in the
    // training angle set.
    for &h in &holdouts {
        if angles.iter().any(|&a| a == h || a == -h) {
            return Err(Error::Config(format!(
                "holdout angle {h} overlaps the training angle set"
            )));
        }
    }

    let (train_base, test_base) = load_mnist_dir(&args.mnist_dir)?;
    std::fs::create_dir_all(&args.out)?;

    let mut manifest = Manifest {
        kind: "mnist-rot".into(),
        feature_dim: train_base.feature_dim(),
        num_classes: train_base.num_classes(),
        z_classes: Some(angles.len() as u32),
        angles: Some(angles.clone()),
        kernels: None,
        seed: args.seed,
        sets: BTreeMap::new(),
    };

    let train = build_mnist_rot(&train_base, &spec, args.seed, true)?;
    manifest.sets.insert("train".into(), save_dataset(&args.out, "train", &train)?);

    let theta = build_mnist_rot(&test_base, &spec, args.seed.wrapping_add(1), true)?;
    manifest.sets.insert("theta".into(), save_dataset(&args.out, "theta", &theta)?);

    for (i, &a) in holdouts.iter().enumerate() {
        let holdout_spec = RotSpec { angles: vec![a, -a], mode };
        holdout_spec.validate()?;
        let ds = build_mnist_rot(&test_base, &holdout_spec, args.seed.wrapping_add(2 + i as u64), false)?;
        let name = angle_set_name(a.abs());
        manifest.sets.insert(name.clone(), save_dataset(&args.out, &name, &ds)?);
    }

    manifest.save(&args.out.join("manifest.txt"))?;
    println!("wrote mnist-rot datasets to {}", args.out.display());
    Ok(())
}

fn cmd_data_mnist_dil(args: MnistDilArgs) -> Result<()> {
    let kernels: Vec<i32> = parse_list("--kernels", &args.kernels)?;
    if kernels.is_empty() {
        return Err(Error::Config("--kernels is empty".into()));
    }
    let specs: Vec<DilSpec> = kernels.iter().map(|&kernel| DilSpec { kernel }).collect();
    let (_, test_base) = load_mnist_dir(&args.mnist_dir)?;
    std::fs::create_dir_all(&args.out)?;

    let mut manifest = Manifest {
        kind: "mnist-dil".into(),
        feature_dim: test_base.feature_dim(),
        num_classes: test_base.num_classes(),
        z_classes: None,
        angles: None,
        kernels: Some(kernels.clone()),
        seed: 0,
        sets: BTreeMap::new(),
    };
    for (kernel, ds) in build_mnist_dil(&test_base, &specs)? {
        let name = format!("dil_{kernel}");
        manifest.sets.insert(name.clone(), save_dataset(&args.out, &name, &ds)?);
    }
    manifest.save(&args.out.join("manifest.txt"))?;
    println!("wrote {} mnist-dil evaluation sets to {}", kernels.len(), args.out.display());
    Ok(())
}

fn cmd_data_synth(args: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut train_spec = SyntheticSpec::new(args.y_classes, args.z_classes, args.n, args.seed);
    train_spec.noise = args.noise;
    let train = gen_synthetic(&train_spec)?;

    let mut test_spec = train_spec.clone();
    test_spec.n = args.test_n;
    test_spec.split = SplitTag::Test;
    let test = gen_synthetic(&test_spec)?;

    let mut manifest = Manifest {
        kind: "synth".into(),
        feature_dim: train.feature_dim(),
        num_classes: args.y_classes,
        z_classes: Some(args.z_classes),
        angles: None,
        kernels: None,
        seed: args.seed,
        sets: BTreeMap::new(),
    };
    manifest.sets.insert("train".into(), save_dataset(&args.out, "train", &train)?);
    manifest.sets.insert("test".into(), save_dataset(&args.out, "test", &test)?);
    manifest.save(&args.out.join("manifest.txt"))?;
    println!("wrote synthetic dataset ({} train / {} test) to {}", args.n, args.test_n, args.out.display());
    Ok(())
}

fn load_run_config(path: &Path, data: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(d) = data {
        cfg.data_manifest = Some(d);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_train_set(cfg: &RunConfig) -> Result<(Manifest, PathBuf, Dataset)> {
    let manifest_path = cfg
        .data_manifest
        .clone()
        .ok_or_else(|| Error::Config("data.manifest is required (or pass --data)".into()))?;
    let manifest = Manifest::load(&manifest_path)?;
    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let train = manifest.load_set(&base_dir, &cfg.data_train_set)?;
    Ok((manifest, base_dir, train))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let variant = ModelVariant::parse(&args.model)?;
    let cfg = load_run_config(&args.config, args.data, args.seed)?;
    match variant {
        ModelVariant::B0 => {
            eprintln!("warning: --model b0 ignores train.beta, train.gamma, and train.k")
        }
        ModelVariant::B1 => eprintln!("warning: --model b1 ignores train.gamma and train.k"),
        ModelVariant::Full => {}
    }

    let (_, _, train_set) = load_train_set(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("config.txt"), cfg.to_text().as_bytes())?;

    let arch = cfg.architecture(train_set.feature_dim(), train_set.num_classes() as usize);
    let model = ModelGraph::new(arch, variant, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train_config())?;

    let metrics_tmp = args.out.join("metrics.csv.tmp");
    let metrics_final = args.out.join("metrics.csv");
    let checkpoint_path = args.out.join("checkpoint.ckpt");
    {
        let file = File::create(&metrics_tmp)?;
        let mut sink = CsvSink::new(BufWriter::new(file))?;
        trainer.run(&train_set, &mut sink, Some(&checkpoint_path))?;
    }
    std::fs::rename(&metrics_tmp, &metrics_final)?;
    save_checkpoint(&trainer, &checkpoint_path)?;
    println!("trained {} model: {}", variant.name(), checkpoint_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let trainer = load_checkpoint(&args.checkpoint)?;
    let model = &trainer.model;
    let manifest = Manifest::load(&args.test_sets)?;
    let base_dir = args
        .test_sets
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    // Evaluate every non-train set; z-labeled sets first so the a_z
    // metrics come from the labeled test distribution.
    let mut named: Vec<(String, Dataset)> = Vec::new();
    for name in manifest.set_names() {
        if name.starts_with("train") {
            continue;
        }
        named.push((name.clone(), manifest.load_set(&base_dir, name)?));
    }
    named.sort_by_key(|(name, ds)| (ds.nuisance_labels().is_none(), name.clone()));
    if named.is_empty() {
        return Err(Error::Config("manifest has no evaluation sets".into()));
    }

    let probe = ProbeConfig { seed: trainer.cfg.seed, ..ProbeConfig::default() };
    let sets: Vec<(String, &Dataset)> =
        named.iter().map(|(n, d)| (n.clone(), d)).collect();
    let report = eval_invariance(model, &sets, &probe)?;

    std::fs::create_dir_all(&args.out)?;
    report.save(&args.out.join("report.txt"))?;
    if args.export_embeddings {
        for (name, ds) in &named {
            let emb = embed_dataset(model, ds)?;
            emb.export(&args.out.join(format!("embeddings_{name}.csv")))?;
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_run_config(&args.config, args.data, None)?;
    let grid: Vec<(f32, f32)> = {
        let mut cells = Vec::new();
        for part in args.grid.split(';').filter(|p| !p.trim().is_empty()) {
            let pair: Vec<f32> = parse_list("--grid", part)?;
            if pair.len() != 2 {
                return Err(Error::Config(format!(
                    "--grid cell '{part}' is not an alpha,beta pair"
                )));
            }
            cells.push((pair[0], pair[1]));
        }
        cells
    };
    if grid.is_empty() {
        return Err(Error::Config("--grid is empty".into()));
    }

    let (manifest, base_dir, train_set) = load_train_set(&cfg)?;
    let test_name = manifest
        .set_names()
        .find(|n| !n.starts_with("train"))
        .ok_or_else(|| Error::Config("manifest has no test set".into()))?
        .clone();
    let test_set = manifest.load_set(&base_dir, &test_name)?;

    let arch = cfg.architecture(train_set.feature_dim(), train_set.num_classes() as usize);
    let rows = eta_sweep(
        &train_set,
        &test_set,
        &grid,
        &arch,
        &cfg.train_config(),
        &cfg.probe_config(),
    )?;

    std::fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("sweep.csv"), sweep_rows_to_csv(&rows).as_bytes())?;
    print!("{}", sweep_rows_to_csv(&rows));
    Ok(())
}
