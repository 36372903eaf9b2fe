//! Stratified splitting, the optimization loop, and evaluation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_image, CorpusManifest};
use crate::effnet::{apply_compound_scaling, NetworkSpec, ScaledSpec, ScalingCoefficients, DEFAULT_CHANNEL_DIVISOR};
use crate::error::{Error, Result};
use crate::hmgchead::{self, argmax_consistency_rate, hier_loss, joint_decode, HierLogits, HierPrediction};
use crate::imagegray::read_pgm;
use crate::model::HmgcModel;
use crate::taxonomy::{LabelPath, TaxonomyTree};
use crate::tensorcore::{BnMode, ParamId, Tape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to 0 over all steps.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = step as f64 / total_steps.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Training hyperparameters, read from the `[train]` table of a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// SGD momentum; 0 is plain gradient descent.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub level_weights: [f64; 3],
    /// train : val : test.
    pub split_ratios: [u32; 3],
    pub phi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Branch hidden widths; the trunk width when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<[usize; 3]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Constant,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            level_weights: [1.0; 3],
            split_ratios: [8, 1, 1],
            phi: -3.0,
            alpha: 1.2,
            beta: 1.1,
            gamma: 1.15,
            hidden: None,
        }
    }
}

#[derive(Deserialize)]
struct TrainSection {
    #[serde(default)]
    train: TrainConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        let w = self.level_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("level_weights must be >= 0 and not all zero, got {w:?}")));
        }
        for (name, v) in [("momentum", self.momentum), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.split_ratios.iter().sum::<u32>() == 0 {
            return Err(Error::Config("split ratios sum to zero".into()));
        }
        Ok(())
    }

    /// Reads the `[train]` table of a config document; a missing table
    /// gives the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let s: TrainSection = toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        s.train.validate()?;
        Ok(s.train)
    }

    pub fn coefficients(&self) -> Result<ScalingCoefficients> {
        ScalingCoefficients::new(self.alpha, self.beta, self.gamma, self.phi)
    }

    /// Reference table scaled by the configured coefficients and run at the
    /// image side.
    pub fn scaled_spec(&self, input_side: usize) -> Result<ScaledSpec> {
        apply_compound_scaling(&NetworkSpec::reference(), &self.coefficients()?, DEFAULT_CHANNEL_DIVISOR)?
            .with_input_resolution(input_side)
    }
}

/// Manifest row indices per split, each ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn parts(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn select(manifest: &CorpusManifest, idx: &[usize]) -> CorpusManifest {
        CorpusManifest {
            rows: idx.iter().map(|&i| manifest.rows[i].clone()).collect(),
        }
    }
}

/// Splits each (fault, condition) stratum independently: shuffled, then
/// `floor(n·r/Σr)` rows per part with the leftover rows dealt out one at a
/// time starting at train.
pub fn split_dataset(manifest: &CorpusManifest, ratios: [u32; 3], seed: u64) -> Result<SplitManifest> {
    if manifest.is_empty() {
        return Err(Error::Data("cannot split an empty manifest".into()));
    }
    let total: u32 = ratios.iter().sum();
    if total == 0 {
        return Err(Error::Config("split ratios sum to zero".into()));
    }
    let mut strata: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        strata.entry((row.fault_idx, row.condition.as_str())).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for mut rows in strata.into_values() {
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut counts = ratios.map(|r| n * r as usize / total as usize);
        let mut k = 0;
        while counts.iter().sum::<usize>() < n {
            if ratios[k % 3] > 0 {
                counts[k % 3] += 1;
            }
            k += 1;
        }
        let mut it = rows.into_iter();
        for (part, c) in parts.iter_mut().zip(counts) {
            part.extend(it.by_ref().take(c));
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitManifest { train, val, test })
}

/// One decoded image ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub label: LabelPath,
    pub image_path: String,
}

/// Reads every image of `manifest` (paths relative to `root`) and checks
/// labels against `tree`.
pub fn load_samples(manifest: &CorpusManifest, root: &Path, tree: &TaxonomyTree) -> Result<Vec<Sample>> {
    manifest
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let label = row.label();
            if !tree.validate_path(label).unwrap_or(false) {
                return Err(Error::Data(format!(
                    "manifest row {} ({}): label ({}, {}, {}) does not match the taxonomy",
                    i + 1,
                    row.image_path,
                    label.loop_idx,
                    label.system_idx,
                    label.fault_idx
                )));
            }
            let image = read_pgm(resolve_image(root, row))?;
            Ok(Sample {
                pixels: image.to_unit_floats(),
                label,
                image_path: row.image_path.clone(),
            })
        })
        .collect()
}

/// K×K counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Header `true\predicted,<labels…>`, then one row per true class.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        finish_csv(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut counts = Vec::with_capacity(labels.len());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != labels.len() + 1 || rec.get(0) != Some(labels.get(i).map(String::as_str).unwrap_or("")) {
                return Err(Error::Data(format!("confusion CSV row {} does not match the header", i + 1)));
            }
            counts.push(
                rec.iter()
                    .skip(1)
                    .map(|c| c.parse::<u64>().map_err(|e| Error::Data(format!("confusion count '{c}': {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if counts.len() != labels.len() {
            return Err(Error::Data(format!("confusion CSV has {} rows for {} labels", counts.len(), labels.len())));
        }
        Ok(Self { labels, counts })
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-level confusion-matrix labels, root first.
pub fn level_labels(tree: &TaxonomyTree) -> [Vec<String>; 3] {
    let [a, b, c] = tree.level_sizes();
    [
        (0..a).map(|i| tree.loop_name(i).to_string()).collect(),
        (0..b).map(|i| tree.system_name(i).to_string()).collect(),
        (0..c).map(|i| tree.fault_name(i).to_string()).collect(),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Root, system, fault.
    pub accuracy: [f64; 3],
    pub confusion: [ConfusionMatrix; 3],
    pub mean_confidence: f64,
    pub consistency_rate: f64,
    /// Mean weighted hierarchical cross-entropy.
    pub loss: f64,
    pub predictions: Vec<HierPrediction>,
}

fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    -hmgchead::log_softmax(logits)[target]
}

/// Metrics of already-computed logits against true labels.
pub fn metrics_from_logits(
    tree: &TaxonomyTree,
    labels: &[LabelPath],
    logits: &[HierLogits],
    level_weights: [f64; 3],
) -> Result<EvalReport> {
    if labels.is_empty() || labels.len() != logits.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} logit records",
            labels.len(),
            logits.len()
        )));
    }
    let [la, lb, lc] = level_labels(tree);
    let mut confusion = [ConfusionMatrix::new(la), ConfusionMatrix::new(lb), ConfusionMatrix::new(lc)];
    let mut predictions = Vec::with_capacity(labels.len());
    let mut confidence = 0.0;
    let mut loss = 0.0;
    for (label, l) in labels.iter().zip(logits) {
        let pred = joint_decode(tree, l)?;
        confusion[0].record(label.loop_idx, pred.path.loop_idx);
        confusion[1].record(label.system_idx, pred.path.system_idx);
        confusion[2].record(label.fault_idx, pred.path.fault_idx);
        confidence += pred.joint_confidence;
        let targets = [label.loop_idx, label.system_idx, label.fault_idx];
        for ((lv, t), w) in l.levels().iter().zip(targets).zip(level_weights) {
            loss += w * cross_entropy(lv, t);
        }
        predictions.push(pred);
    }
    let n = labels.len() as f64;
    Ok(EvalReport {
        accuracy: [confusion[0].accuracy(), confusion[1].accuracy(), confusion[2].accuracy()],
        consistency_rate: argmax_consistency_rate(tree, logits)?,
        confusion,
        mean_confidence: confidence / n,
        loss: loss / n,
        predictions,
    })
}

const EVAL_BATCH: usize = 128;

/// Eval-mode (running batch-norm statistics) metrics over `samples`.
pub fn evaluate(model: &mut HmgcModel<f32>, tree: &TaxonomyTree, samples: &[Sample], level_weights: [f64; 3]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut logits = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let px: Vec<&[f32]> = chunk.iter().map(|s| s.pixels.as_slice()).collect();
        logits.extend(model.predict(&px)?);
    }
    let labels: Vec<LabelPath> = samples.iter().map(|s| s.label).collect();
    metrics_from_logits(tree, &labels, &logits, level_weights)
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub acc_root: f64,
    pub acc_system: f64,
    pub acc_fault: f64,
    pub consistency_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    /// `epoch,train_loss,val_loss,acc_root,acc_system,acc_fault,consistency_rate`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss", "acc_root", "acc_system", "acc_fault", "consistency_rate"])?;
        }
        finish_csv(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let records = r.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }
}

enum OptimizerState {
    Sgd { velocity: Vec<Vec<f32>> },
    Adam { m: Vec<Vec<f32>>, v: Vec<Vec<f32>>, step: i32 },
}

impl OptimizerState {
    fn new(cfg: &TrainConfig, model: &HmgcModel<f32>) -> Self {
        let zeros = || -> Vec<Vec<f32>> { model.store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect() };
        match cfg.optimizer {
            OptimizerKind::Sgd => Self::Sgd { velocity: zeros() },
            OptimizerKind::Adam => Self::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        }
    }

    /// Applies one update; `grads[i]` belongs to parameter `i`.
    fn step(&mut self, cfg: &TrainConfig, lr: f64, model: &mut HmgcModel<f32>, grads: &[Option<&[f32]>]) {
        let lr = lr as f32;
        match self {
            Self::Sgd { velocity } => {
                let mu = cfg.momentum as f32;
                for (i, (_, p)) in model.store.iter_mut().enumerate() {
                    let Some(g) = grads[i] else { continue };
                    for ((w, v), g) in p.data_mut().iter_mut().zip(velocity[i].iter_mut()).zip(g) {
                        *v = mu * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            Self::Adam { m, v, step } => {
                *step += 1;
                let (b1, b2, eps) = (cfg.beta1 as f32, cfg.beta2 as f32, cfg.epsilon as f32);
                let c1 = 1.0 - b1.powi(*step);
                let c2 = 1.0 - b2.powi(*step);
                for (i, (_, p)) in model.store.iter_mut().enumerate() {
                    let Some(g) = grads[i] else { continue };
                    for (((w, m), v), g) in p.data_mut().iter_mut().zip(m[i].iter_mut()).zip(v[i].iter_mut()).zip(g) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Mean training loss of one batch, then one optimizer step.
fn train_step(
    model: &mut HmgcModel<f32>,
    tree: &TaxonomyTree,
    batch: &[&Sample],
    cfg: &TrainConfig,
    lr: f64,
    opt: &mut OptimizerState,
) -> Result<f64> {
    let px: Vec<&[f32]> = batch.iter().map(|s| s.pixels.as_slice()).collect();
    let labels: Vec<LabelPath> = batch.iter().map(|s| s.label).collect();
    let mut tape = Tape::new();
    let x = tape.leaf(model.input_batch(&px)?, false);
    let (bound, logits) = model.forward(&mut tape, x, BnMode::Train, true)?;
    let loss = hier_loss(&mut tape, tree, logits, &labels, cfg.level_weights)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("hier_loss"));
    }
    let grads = tape.backward(loss)?;
    let per_param: Vec<Option<&[f32]>> = (0..model.store.len())
        .map(|i| grads.get(bound.var(ParamId(i))).map(|t| t.data()))
        .collect();
    opt.step(cfg, lr, model, &per_param);
    Ok(value)
}

/// Minimizes the hierarchical loss over `train` for `cfg.epochs` epochs.
/// After each epoch the model is evaluated on `val` (or on `train` when
/// `val` is empty) and the record is passed to `on_epoch`.
pub fn train(
    model: &mut HmgcModel<f32>,
    tree: &TaxonomyTree,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    for s in train.iter().chain(val) {
        if !tree.validate_path(s.label).unwrap_or(false) {
            return Err(Error::Data(format!("{}: label does not match the taxonomy", s.image_path)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg, model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainingHistory::default();
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let lr = cfg.lr_schedule.rate(cfg.learning_rate, (epoch - 1) * per_epoch + bi, total_steps);
            let loss = train_step(model, tree, &batch, cfg, lr, &mut opt).map_err(|e| match e {
                Error::NonFinite(_) => Error::NanLoss { epoch, batch: bi + 1 },
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let report = evaluate(model, tree, if val.is_empty() { train } else { val }, cfg.level_weights)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss: report.loss,
            acc_root: report.accuracy[0],
            acc_system: report.accuracy[1],
            acc_fault: report.accuracy[2],
            consistency_rate: report.consistency_rate,
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}
