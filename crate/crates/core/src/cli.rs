//! `hmgc` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::config::DataConfig;
use crate::corpus::{build_corpus, render_images, CorpusManifest};
use crate::effnet::{
    apply_compound_scaling, audit_table, check_constraint, estimate_flops, NetworkSpec, ScalingCoefficients,
    DEFAULT_CHANNEL_DIVISOR, DEFAULT_CONSTRAINT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::hmgchead::{joint_decode, probabilities_csv, report_line};
use crate::imagegray::read_pgm;
use crate::model::HmgcModel;
use crate::modelfile::{load_model, save_model};
use crate::taxonomy::TaxonomyTree;
use crate::trainer::{evaluate, load_samples, split_dataset, train, SplitManifest, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LEVEL_FILES: [&str; 3] = ["loop", "system", "fault"];

#[derive(Debug, Parser)]
#[command(name = "hmgc", version, about = "Hierarchical fault diagnosis on grayscale plant snapshots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate labeled runs and write PGM images plus a manifest CSV.
    GenData(GenDataArgs),
    /// Split a corpus, train a model, and write the model file and history.
    Train(TrainArgs),
    /// Per-level accuracy and confusion matrices on a split manifest.
    Eval(EvalArgs),
    /// One report line per image.
    Diagnose(DiagnoseArgs),
    /// Per-stage table, constraint check and FLOPS ratio for scaling coefficients.
    ScaleAudit(ScaleAuditArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Data config (TOML); the desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ticks (seconds) per run.
    #[arg(long)]
    pub duration: Option<u32>,
    /// Comma-separated condition names to keep.
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
    /// Write the manifest only, no images.
    #[arg(long)]
    pub manifest_only: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Config with an optional `[train]` table and `taxonomy` reference.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    /// History CSV; defaults to the model path with extension `history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest CSV of the rows to evaluate (e.g. `split_test.csv`).
    #[arg(long)]
    pub manifest_split: PathBuf,
    /// Config whose taxonomy must match the model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where `confusion_<level>.csv` go; defaults to the model's directory.
    #[arg(long)]
    pub confusion_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write per-level probabilities to this CSV.
    #[arg(long)]
    pub probabilities: Option<PathBuf>,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScaleAuditArgs {
    /// Network spec (TOML); the reference table when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi: f64,
    #[arg(long, default_value_t = DEFAULT_CHANNEL_DIVISOR)]
    pub divisor: usize,
    #[arg(long, default_value_t = DEFAULT_CONSTRAINT_TOLERANCE)]
    pub tolerance: f64,
    /// Write the scaled spec (TOML) here.
    #[arg(long)]
    pub emit_spec: Option<PathBuf>,
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Diagnose(a) => diagnose(a, out),
        Command::ScaleAudit(a) => scale_audit(a, out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|_| Error::Config(format!("cannot read config {}", path.display())))
}

#[derive(Deserialize)]
struct TaxonomyRef {
    taxonomy: Option<String>,
}

/// Taxonomy named by a config's `taxonomy` key, or the default tree.
fn config_taxonomy(path: Option<&Path>) -> Result<TaxonomyTree> {
    let Some(path) = path else {
        return Ok(TaxonomyTree::default_tree());
    };
    let r: TaxonomyRef = toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match r.taxonomy {
        Some(rel) => {
            let tpath = path.parent().unwrap_or(Path::new(".")).join(rel);
            TaxonomyTree::load(&read_text(&tpath)?)
        }
        None => Ok(TaxonomyTree::default_tree()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let (mut cfg, tree) = match &a.config {
        Some(p) => DataConfig::load(p)?,
        None => (DataConfig::desk(), None),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    if let Some(names) = &a.conditions {
        cfg.select_conditions(names)?;
    }
    let setup = cfg.setup(tree.unwrap_or_else(TaxonomyTree::default_tree))?;
    let manifest = build_corpus(
        &setup.profile,
        &setup.tree,
        &setup.signatures,
        &setup.conditions,
        setup.seed,
        setup.duration_s,
    )?;
    ensure_dir(&a.out)?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;
    let images = if a.manifest_only {
        0
    } else {
        render_images(
            &manifest,
            &setup.profile,
            &setup.signatures,
            &setup.conditions,
            &setup.normalization,
            &a.out,
        )?
    };
    say!(out, "records={} images={} manifest={}", manifest.len(), images, manifest_path.display());
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let tree = config_taxonomy(a.config.as_deref())?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let manifest = CorpusManifest::read(&a.manifest)?;
    let root = parent_dir(&a.manifest);
    let split = split_dataset(&manifest, cfg.split_ratios, cfg.seed)?;
    for (name, idx) in split.parts() {
        let path = root.join(format!("split_{name}.csv"));
        SplitManifest::select(&manifest, idx).write(&path)?;
    }
    let load = |idx: &[usize]| load_samples(&SplitManifest::select(&manifest, idx), &root, &tree);
    let (train_set, val_set, test_set) = (load(&split.train)?, load(&split.val)?, load(&split.test)?);
    say!(
        out,
        "split train={} val={} test={} (written to {})",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        root.join("split_*.csv").display()
    );
    let pixels = train_set[0].pixels.len();
    let side = (pixels as f64).sqrt().round() as usize;
    if side * side != pixels {
        return Err(Error::Data(format!("{}: image is not square", train_set[0].image_path)));
    }
    let mut model = HmgcModel::new(cfg.scaled_spec(side)?, tree.level_sizes(), cfg.hidden, cfg.seed)?;
    let mut lines = Vec::new();
    let history = train(&mut model, &tree, &train_set, &val_set, &cfg, |r| {
        lines.push(format!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  acc loop {:.4} system {:.4} fault {:.4}  consistency {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.acc_root, r.acc_system, r.acc_fault, r.consistency_rate
        ));
    })?;
    for l in lines {
        say!(out, "{l}");
    }
    save_model(&a.out_model, &model, &tree)?;
    let history_path = a.history.unwrap_or_else(|| a.out_model.with_extension("history.csv"));
    write_file(&history_path, &history.to_csv()?)?;
    if !test_set.is_empty() {
        let report = evaluate(&mut model, &tree, &test_set, cfg.level_weights)?;
        say!(
            out,
            "test accuracy loop={:.4} system={:.4} fault={:.4}",
            report.accuracy[0],
            report.accuracy[1],
            report.accuracy[2]
        );
    }
    say!(out, "model={} history={}", a.out_model.display(), history_path.display());
    Ok(())
}

fn load_for(model: &Path, config: Option<&Path>) -> Result<(HmgcModel<f32>, TaxonomyTree)> {
    match config {
        Some(c) => {
            let tree = config_taxonomy(Some(c))?;
            load_model(model, Some(&tree))
        }
        None => load_model(model, None),
    }
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (mut model, tree) = load_for(&a.model, a.config.as_deref())?;
    let manifest = CorpusManifest::read(&a.manifest_split)?;
    let samples = load_samples(&manifest, &parent_dir(&a.manifest_split), &tree)?;
    let report = evaluate(&mut model, &tree, &samples, [1.0; 3])?;
    say!(
        out,
        "samples={} accuracy loop={:.4} system={:.4} fault={:.4}",
        samples.len(),
        report.accuracy[0],
        report.accuracy[1],
        report.accuracy[2]
    );
    say!(
        out,
        "mean_confidence={:.4} consistency_rate={:.4}",
        report.mean_confidence,
        report.consistency_rate
    );
    let dir = a.confusion_dir.unwrap_or_else(|| parent_dir(&a.model));
    ensure_dir(&dir)?;
    for (cm, level) in report.confusion.iter().zip(LEVEL_FILES) {
        let path = dir.join(format!("confusion_{level}.csv"));
        write_file(&path, &cm.to_csv()?)?;
        say!(out, "confusion {level} -> {}", path.display());
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs, out: &mut dyn Write) -> Result<()> {
    let (mut model, tree) = load_for(&a.model, a.config.as_deref())?;
    let mut dumps = Vec::new();
    for path in &a.images {
        let image = read_pgm(path)?;
        let pixels = image.to_unit_floats();
        let logits = model.predict(&[pixels.as_slice()])?;
        let pred = joint_decode(&tree, &logits[0])?;
        say!(out, "{}", report_line(&tree, &pred));
        dumps.push((path.display().to_string(), pred));
    }
    if let Some(p) = &a.probabilities {
        write_file(p, &probabilities_csv(&tree, &dumps)?)?;
    }
    Ok(())
}

fn scale_audit(a: ScaleAuditArgs, out: &mut dyn Write) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => NetworkSpec::parse(&read_text(p)?)?,
        None => NetworkSpec::reference(),
    };
    let coeffs = ScalingCoefficients::new(a.alpha, a.beta, a.gamma, a.phi)?;
    let scaled = apply_compound_scaling(&spec, &coeffs, a.divisor)?;
    let base = apply_compound_scaling(&spec, &coeffs.with_phi(0.0), a.divisor)?;
    say!(
        out,
        "coefficients alpha={} beta={} gamma={} phi={}",
        a.alpha,
        a.beta,
        a.gamma,
        a.phi
    );
    let product = coeffs.resource_product();
    if check_constraint(&coeffs, a.tolerance) {
        say!(out, "constraint alpha*beta^2*gamma^2: satisfied ({product:.3})");
    } else {
        say!(
            out,
            "warning: constraint alpha*beta^2*gamma^2 = 2 violated ({product:.3}, tolerance {})",
            a.tolerance
        );
    }
    say!(out, "input resolution {0}x{0}", scaled.input_resolution());
    write!(out, "{}", audit_table(&scaled)?).map_err(|e| Error::io("<stdout>", e))?;
    let ratio = estimate_flops(&scaled)? as f64 / estimate_flops(&base)? as f64;
    say!(out, "FLOPS ratio vs phi=0: {ratio:.4}");
    if let Some(p) = &a.emit_spec {
        write_file(p, &scaled.network.to_document())?;
    }
    Ok(())
}
