//! Labeled corpus construction: one record per (fault, condition, tick),
//! the manifest CSV, and rendering records to PGM images.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegray::{self, Normalization};
use crate::plantsim::{self, FaultSignature, OperatingCondition, PlantProfile};
use crate::taxonomy::{LabelPath, TaxonomyTree};

/// One manifest row. Serialized header:
/// `image_path,loop,system,fault,condition,tick,seed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_path: String,
    #[serde(rename = "loop")]
    pub loop_idx: usize,
    #[serde(rename = "system")]
    pub system_idx: usize,
    #[serde(rename = "fault")]
    pub fault_idx: usize,
    pub condition: String,
    pub tick: u32,
    pub seed: u64,
}

impl ManifestRow {
    pub fn label(&self) -> LabelPath {
        LabelPath::new(self.loop_idx, self.system_idx, self.fault_idx)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
}

pub fn image_file_name(fault_idx: usize, condition_idx: usize, tick: u32) -> String {
    format!("images/f{fault_idx:02}_c{condition_idx}_t{tick:05}.pgm")
}

/// Manifest for `|faults| × |conditions| × duration_s` records, ordered by
/// fault, then condition, then tick. No images are produced here.
pub fn build_corpus(
    profile: &PlantProfile,
    tree: &TaxonomyTree,
    signatures: &[FaultSignature],
    conditions: &[OperatingCondition],
    seed: u64,
    duration_s: u32,
) -> Result<CorpusManifest> {
    profile.validate()?;
    if conditions.is_empty() {
        return Err(Error::Config("no operating conditions".into()));
    }
    for c in conditions {
        c.validate()?;
    }
    if duration_s == 0 {
        return Err(Error::InvalidArgument("duration_s must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(tree.num_faults() * conditions.len() * duration_s as usize);
    for fault in 0..tree.num_faults() {
        let sig = signature_for(signatures, fault)?;
        sig.validate(profile.parameter_count())?;
        let path = tree.path_of(fault)?;
        for (ci, cond) in conditions.iter().enumerate() {
            for tick in 0..duration_s {
                rows.push(ManifestRow {
                    image_path: image_file_name(fault, ci, tick),
                    loop_idx: path.loop_idx,
                    system_idx: path.system_idx,
                    fault_idx: fault,
                    condition: cond.name.clone(),
                    tick,
                    seed,
                });
            }
        }
    }
    Ok(CorpusManifest { rows })
}

pub fn signature_for(signatures: &[FaultSignature], fault_idx: usize) -> Result<&FaultSignature> {
    signatures
        .iter()
        .find(|s| s.fault_idx == fault_idx)
        .ok_or_else(|| Error::Config(format!("missing signature for fault {fault_idx}")))
}

/// Simulates every (fault, condition) run referenced by `manifest` and
/// writes each record's image under `root`.
pub fn render_images(
    manifest: &CorpusManifest,
    profile: &PlantProfile,
    signatures: &[FaultSignature],
    conditions: &[OperatingCondition],
    norm: &Normalization,
    root: &Path,
) -> Result<usize> {
    let mut written = 0;
    let mut start = 0;
    while start < manifest.rows.len() {
        let head = &manifest.rows[start];
        let end = start
            + manifest.rows[start..]
                .iter()
                .take_while(|r| r.fault_idx == head.fault_idx && r.condition == head.condition && r.seed == head.seed)
                .count();
        let group = &manifest.rows[start..end];
        let cond = conditions
            .iter()
            .find(|c| c.name == head.condition)
            .ok_or_else(|| Error::Config(format!("unknown condition '{}'", head.condition)))?;
        let sig = signature_for(signatures, head.fault_idx)?;
        let duration = group.iter().map(|r| r.tick).max().unwrap_or(0) + 1;
        let run = plantsim::simulate_run(profile, sig, cond, head.seed, duration)?;
        for row in group {
            let image = imagegray::encode_with(&run[row.tick as usize], norm)?;
            let path = root.join(&row.image_path);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            imagegray::write_pgm(&image, &path)?;
            written += 1;
        }
        start = end;
    }
    Ok(written)
}

impl CorpusManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["image_path", "loop", "system", "fault", "condition", "tick", "seed"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Resolves a manifest row's image path against the manifest's directory.
pub fn resolve_image(manifest_dir: &Path, row: &ManifestRow) -> PathBuf {
    manifest_dir.join(&row.image_path)
}
