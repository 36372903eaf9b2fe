//! Data-generation config document (TOML).
//!
//! ```toml
//! seed = 42
//! duration_s = 75
//! taxonomy = "taxonomy.toml"      # optional, relative to this file
//! normalization = "per-image"     # or "per-parameter"
//!
//! [profile]
//! parameter_count = 256
//! noise_sigma = 0.01
//! nominal_seed = 7
//!
//! [[conditions]]
//! name = "p010"
//! power_fraction = 0.1
//!
//! [signatures]
//! per_fault = 6                   # generated disjoint signatures
//! # [[signatures.explicit]] ...   # or one FaultSignature per fault
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegray::Normalization;
use crate::plantsim::{self, FaultSignature, OperatingCondition, PlantProfile};
use crate::taxonomy::TaxonomyTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub parameter_count: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub nominal_seed: u64,
    /// Explicit nominal values; overrides `nominal_seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureConfig {
    #[serde(default = "default_per_fault")]
    pub per_fault: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explicit: Vec<FaultSignature>,
}

fn default_per_fault() -> usize {
    6
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    #[default]
    PerImage,
    /// Fixed range `[0, 2 × nominal]` per parameter.
    PerParameter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub duration_s: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
    #[serde(default)]
    pub normalization: NormalizationMode,
    pub profile: ProfileConfig,
    pub conditions: Vec<OperatingCondition>,
    pub signatures: SignatureConfig,
}

/// Everything needed to simulate and render a corpus.
#[derive(Clone, Debug)]
pub struct DataSetup {
    pub tree: TaxonomyTree,
    pub profile: PlantProfile,
    pub conditions: Vec<OperatingCondition>,
    pub signatures: Vec<FaultSignature>,
    pub normalization: Normalization,
    pub seed: u64,
    pub duration_s: u32,
}

impl DataConfig {
    /// Desk-scale defaults: 256 parameters, 3 conditions, 75 s per run.
    pub fn desk() -> Self {
        Self {
            seed: 42,
            duration_s: 75,
            taxonomy: None,
            normalization: NormalizationMode::PerImage,
            profile: ProfileConfig {
                parameter_count: 256,
                noise_sigma: 0.01,
                nominal_seed: 7,
                nominal: None,
            },
            conditions: plantsim::default_conditions(),
            signatures: SignatureConfig {
                per_fault: default_per_fault(),
                explicit: Vec::new(),
            },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("data config: {e}")))
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TaxonomyTree>)> {
        let text = fs::read_to_string(path).map_err(|_| Error::Config(format!("cannot read config {}", path.display())))?;
        let cfg = Self::parse(&text)?;
        let tree = match &cfg.taxonomy {
            Some(rel) => {
                let tpath = path.parent().unwrap_or(Path::new(".")).join(rel);
                let doc = fs::read_to_string(&tpath)
                    .map_err(|_| Error::Config(format!("cannot read taxonomy {}", tpath.display())))?;
                Some(TaxonomyTree::load(&doc)?)
            }
            None => None,
        };
        Ok((cfg, tree))
    }

    /// Keeps only the named conditions, in the given order.
    pub fn select_conditions(&mut self, names: &[String]) -> Result<()> {
        let picked = names
            .iter()
            .map(|n| {
                self.conditions
                    .iter()
                    .find(|c| &c.name == n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown condition '{n}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.conditions = picked;
        Ok(())
    }

    pub fn setup(&self, tree: TaxonomyTree) -> Result<DataSetup> {
        let profile = match &self.profile.nominal {
            Some(values) => {
                if values.len() != self.profile.parameter_count {
                    return Err(Error::Config(format!(
                        "{} nominal values for parameter_count {}",
                        values.len(),
                        self.profile.parameter_count
                    )));
                }
                PlantProfile::new(values.clone(), self.profile.noise_sigma)?
            }
            None => PlantProfile::synthetic(self.profile.parameter_count, self.profile.nominal_seed, self.profile.noise_sigma)?,
        };
        for c in &self.conditions {
            c.validate()?;
        }
        let signatures = if self.signatures.explicit.is_empty() {
            plantsim::default_signatures(tree.num_faults(), profile.parameter_count(), self.signatures.per_fault)?
        } else {
            self.signatures.explicit.clone()
        };
        for s in &signatures {
            s.validate(profile.parameter_count())?;
        }
        let normalization = match self.normalization {
            NormalizationMode::PerImage => Normalization::PerImage,
            NormalizationMode::PerParameter => {
                Normalization::PerParameter(profile.nominal.iter().map(|v| (0.0, 2.0 * v.abs())).collect())
            }
        };
        Ok(DataSetup {
            tree,
            profile,
            conditions: self.conditions.clone(),
            signatures,
            normalization,
            seed: self.seed,
            duration_s: self.duration_s,
        })
    }
}
