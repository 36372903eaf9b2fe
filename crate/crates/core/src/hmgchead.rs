//! Three granularity branches (loop, system, fault) over shared trunk
//! features, parent → child feature sharing, per-level losses, and
//! tree-consistent joint decoding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::taxonomy::{LabelPath, TaxonomyTree};
use crate::tensorcore::{Bound, Element, ParamId, ParamStore, Tape, Var};

pub const LEVEL_NAMES: [&str; 3] = ["loop", "system", "fault"];

/// Parameters of one granularity level.
#[derive(Clone, Debug)]
pub struct Branch {
    /// Trunk → hidden projection, `[hidden, trunk]`.
    pub proj: ParamId,
    /// Parent hidden → hidden mixing, `[hidden, parent_hidden]`; absent at the root.
    pub mix: Option<ParamId>,
    /// Hidden → logits, `[classes, hidden]` plus bias `[classes]`.
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub levels: [Branch; 3],
    pub trunk_width: usize,
}

/// Tape handles of the three logit matrices, each `[N, level size]`.
#[derive(Clone, Copy, Debug)]
pub struct LogitVars {
    pub root: Var,
    pub parent: Var,
    pub child: Var,
}

impl LogitVars {
    pub fn levels(&self) -> [Var; 3] {
        [self.root, self.parent, self.child]
    }
}

impl BranchParams {
    /// Registers head parameters. `hidden` defaults to the trunk width at
    /// every level.
    pub fn new<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        trunk_width: usize,
        hidden: Option<[usize; 3]>,
        level_sizes: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = hidden.unwrap_or([trunk_width; 3]);
        if trunk_width == 0 || hidden.contains(&0) || level_sizes.contains(&0) {
            return Err(Error::InvalidArgument("head widths must be >= 1".into()));
        }
        let mut make = |level: usize| -> Result<Branch> {
            let name = LEVEL_NAMES[level];
            let h = hidden[level];
            let mix = if level > 0 {
                let hp = hidden[level - 1];
                Some(store.insert_uniform(format!("head.{name}.mix"), &[h, hp], hp, rng)?)
            } else {
                None
            };
            Ok(Branch {
                proj: store.insert_uniform(format!("head.{name}.proj"), &[h, trunk_width], trunk_width, rng)?,
                mix,
                cls_w: store.insert_uniform(format!("head.{name}.cls.weight"), &[level_sizes[level], h], h, rng)?,
                cls_b: store.insert(format!("head.{name}.cls.bias"), crate::tensorcore::Tensor::zeros(&[level_sizes[level]]))?,
                hidden: h,
                classes: level_sizes[level],
            })
        };
        let levels = [make(0)?, make(1)?, make(2)?];
        Ok(Self { levels, trunk_width })
    }

    pub fn hidden_widths(&self) -> [usize; 3] {
        [self.levels[0].hidden, self.levels[1].hidden, self.levels[2].hidden]
    }

    /// `h_root = ReLU(W·t)`, `h_ℓ = ReLU(W_ℓ·t + U_ℓ·h_parent)`,
    /// `logits_ℓ = C_ℓ·h_ℓ + c_ℓ`.
    pub fn forward_heads<E: Element>(&self, tape: &mut Tape<E>, bound: &Bound, trunk: Var) -> Result<LogitVars> {
        let (_, width) = tape.value(trunk).dims2("forward_heads")?;
        if width != self.trunk_width {
            return Err(Error::shape(
                "forward_heads",
                format!("trunk width {width}, head expects {}", self.trunk_width),
            ));
        }
        let mut parent_hidden: Option<Var> = None;
        let mut logits = Vec::with_capacity(3);
        for branch in &self.levels {
            let mut pre = tape.dense(trunk, bound.var(branch.proj), None)?;
            if let (Some(mix), Some(ph)) = (branch.mix, parent_hidden) {
                let shared = tape.dense(ph, bound.var(mix), None)?;
                pre = tape.add(pre, shared)?;
            }
            let h = tape.relu(pre)?;
            logits.push(tape.dense(h, bound.var(branch.cls_w), Some(bound.var(branch.cls_b)))?);
            parent_hidden = Some(h);
        }
        Ok(LogitVars {
            root: logits[0],
            parent: logits[1],
            child: logits[2],
        })
    }
}

/// Weighted sum of the three per-level mean cross-entropies.
pub fn hier_loss<E: Element>(
    tape: &mut Tape<E>,
    tree: &TaxonomyTree,
    logits: LogitVars,
    labels: &[LabelPath],
    level_weights: [f64; 3],
) -> Result<Var> {
    if level_weights.iter().any(|w| w.is_nan() || *w < 0.0) || level_weights.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidArgument(format!(
            "level weights must be >= 0 and not all zero, got {level_weights:?}"
        )));
    }
    for l in labels {
        if !tree.validate_path(*l)? {
            return Err(Error::InvalidPath {
                loop_idx: l.loop_idx,
                system_idx: l.system_idx,
                fault_idx: l.fault_idx,
            });
        }
    }
    let idx: [Vec<usize>; 3] = [
        labels.iter().map(|l| l.loop_idx).collect(),
        labels.iter().map(|l| l.system_idx).collect(),
        labels.iter().map(|l| l.fault_idx).collect(),
    ];
    let mut total: Option<Var> = None;
    for ((var, ids), w) in logits.levels().into_iter().zip(&idx).zip(level_weights) {
        let (ce, _) = tape.softmax_cross_entropy(var, ids)?;
        let term = tape.scale(ce, E::from_f64(w))?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("three levels"))
}

/// Logits of one sample at the three levels.
#[derive(Clone, Debug, PartialEq)]
pub struct HierLogits {
    pub root: Vec<f64>,
    pub parent: Vec<f64>,
    pub child: Vec<f64>,
}

impl HierLogits {
    pub fn levels(&self) -> [&[f64]; 3] {
        [&self.root, &self.parent, &self.child]
    }

    /// Splits batch logit matrices into per-sample records.
    pub fn from_batch<E: Element>(tape: &Tape<E>, logits: LogitVars) -> Vec<HierLogits> {
        let rows = |v: Var| -> Vec<Vec<f64>> {
            let t = tape.value(v);
            let k = t.shape()[1];
            t.data()
                .chunks(k)
                .map(|r| r.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
                .collect()
        };
        let (r, p, c) = (rows(logits.root), rows(logits.parent), rows(logits.child));
        r.into_iter()
            .zip(p)
            .zip(c)
            .map(|((root, parent), child)| HierLogits { root, parent, child })
            .collect()
    }

    fn check(&self, tree: &TaxonomyTree) -> Result<()> {
        let sizes = tree.level_sizes();
        for (level, (v, n)) in self.levels().iter().zip(sizes).enumerate() {
            if v.len() != n {
                return Err(Error::shape(
                    "hier_logits",
                    format!("{} logits for {} {}s", v.len(), n, LEVEL_NAMES[level]),
                ));
            }
        }
        Ok(())
    }
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    log_softmax(v).into_iter().map(f64::exp).collect()
}

/// Sum of per-level log-probabilities along each valid path, ordered as
/// [`TaxonomyTree::enumerate_paths`].
pub fn path_scores(tree: &TaxonomyTree, logits: &HierLogits) -> Result<Vec<(LabelPath, f64)>> {
    logits.check(tree)?;
    let [lr, lp, lc] = [log_softmax(&logits.root), log_softmax(&logits.parent), log_softmax(&logits.child)];
    Ok(tree
        .enumerate_paths()
        .into_iter()
        .map(|p| (p, lr[p.loop_idx] + lp[p.system_idx] + lc[p.fault_idx]))
        .collect())
}

/// Posterior over valid paths: path scores normalized across the tree.
pub fn consistent_posterior(tree: &TaxonomyTree, logits: &HierLogits) -> Result<Vec<(LabelPath, f64)>> {
    let scores = path_scores(tree, logits)?;
    let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|(_, s)| (s - max).exp()).sum();
    Ok(scores.into_iter().map(|(p, s)| (p, (s - max).exp() / z)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierPrediction {
    pub path: LabelPath,
    /// Softmax at each level, root first.
    pub level_probs: [Vec<f64>; 3],
    pub joint_confidence: f64,
}

/// Highest-scoring valid path (ties → lowest fault index) with its
/// posterior mass.
pub fn joint_decode(tree: &TaxonomyTree, logits: &HierLogits) -> Result<HierPrediction> {
    let posterior = consistent_posterior(tree, logits)?;
    let scores = path_scores(tree, logits)?;
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(HierPrediction {
        path: scores[best].0,
        level_probs: [softmax(&logits.root), softmax(&logits.parent), softmax(&logits.child)],
        joint_confidence: posterior[best].1,
    })
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose independent per-level argmaxes already form
/// a valid path. Empty input gives 0.
pub fn argmax_consistency_rate(tree: &TaxonomyTree, batch: &[HierLogits]) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut consistent = 0usize;
    for logits in batch {
        logits.check(tree)?;
        let path = LabelPath::new(argmax(&logits.root), argmax(&logits.parent), argmax(&logits.child));
        if tree.validate_path(path)? {
            consistent += 1;
        }
    }
    Ok(consistent as f64 / batch.len() as f64)
}

/// `loop=<name> system=<name> fault=<name> confidence=<x.xxxx>`
pub fn report_line(tree: &TaxonomyTree, pred: &HierPrediction) -> String {
    format!(
        "loop={} system={} fault={} confidence={:.4}",
        tree.loop_name(pred.path.loop_idx),
        tree.system_name(pred.path.system_idx),
        tree.fault_name(pred.path.fault_idx),
        pred.joint_confidence
    )
}

/// Per-level probability dump: `sample,level,index,name,probability`.
pub fn probabilities_csv(tree: &TaxonomyTree, samples: &[(String, HierPrediction)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "level", "index", "name", "probability"])?;
    for (sample, pred) in samples {
        for (level, probs) in pred.level_probs.iter().enumerate() {
            for (i, p) in probs.iter().enumerate() {
                let name = match level {
                    0 => tree.loop_name(i),
                    1 => tree.system_name(i),
                    _ => tree.fault_name(i),
                };
                w.write_record([sample.as_str(), LEVEL_NAMES[level], &i.to_string(), name, &format!("{p:.6}")])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}
