//! Three-level fault hierarchy: loop → system → fault.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The taxonomy shipped with the crate: 2 loops, 4 systems, 16 faults.
pub const DEFAULT_TAXONOMY: &str = include_str!("../configs/taxonomy.toml");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNode {
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildNode {
    pub name: String,
    pub parent: usize,
}

/// Validated fault hierarchy. Immutable once loaded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyTree {
    loops: Vec<LoopNode>,
    systems: Vec<ChildNode>,
    faults: Vec<ChildNode>,
}

/// Level-local indices of one root-to-leaf path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelPath {
    pub loop_idx: usize,
    pub system_idx: usize,
    pub fault_idx: usize,
}

impl LabelPath {
    pub fn new(loop_idx: usize, system_idx: usize, fault_idx: usize) -> Self {
        Self {
            loop_idx,
            system_idx,
            fault_idx,
        }
    }
}

fn check_unique<'a>(level: &'static str, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(Error::DuplicateName {
                level,
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

fn check_parents(level: &'static str, nodes: &[ChildNode], available: usize) -> Result<()> {
    match nodes.iter().find(|n| n.parent >= available) {
        Some(n) => Err(Error::DanglingParent {
            level,
            name: n.name.clone(),
            parent: n.parent,
            available,
        }),
        None => Ok(()),
    }
}

impl TaxonomyTree {
    pub fn new(loops: Vec<LoopNode>, systems: Vec<ChildNode>, faults: Vec<ChildNode>) -> Result<Self> {
        for (level, len) in [("loops", loops.len()), ("systems", systems.len()), ("faults", faults.len())] {
            if len == 0 {
                return Err(Error::EmptyLevel(level));
            }
        }
        check_unique("loop", loops.iter().map(|n| n.name.as_str()))?;
        check_unique("system", systems.iter().map(|n| n.name.as_str()))?;
        check_unique("fault", faults.iter().map(|n| n.name.as_str()))?;
        check_parents("system", &systems, loops.len())?;
        check_parents("fault", &faults, systems.len())?;
        Ok(Self { loops, systems, faults })
    }

    /// Parses and validates a taxonomy document.
    pub fn load(document: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            #[serde(default)]
            loops: Vec<LoopNode>,
            #[serde(default)]
            systems: Vec<ChildNode>,
            #[serde(default)]
            faults: Vec<ChildNode>,
        }
        let doc: Doc = toml::from_str(document).map_err(|e| Error::Config(format!("taxonomy: {e}")))?;
        Self::new(doc.loops, doc.systems, doc.faults)
    }

    pub fn default_tree() -> Self {
        Self::load(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    /// Hex SHA-256 of the canonical document; identifies the taxonomy a
    /// model was trained against.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_document().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_loops(&self) -> usize {
        self.loops.len()
    }

    pub fn num_systems(&self) -> usize {
        self.systems.len()
    }

    pub fn num_faults(&self) -> usize {
        self.faults.len()
    }

    /// Sizes of the three levels, root first.
    pub fn level_sizes(&self) -> [usize; 3] {
        [self.loops.len(), self.systems.len(), self.faults.len()]
    }

    pub fn loop_name(&self, idx: usize) -> &str {
        &self.loops[idx].name
    }

    pub fn system_name(&self, idx: usize) -> &str {
        &self.systems[idx].name
    }

    pub fn fault_name(&self, idx: usize) -> &str {
        &self.faults[idx].name
    }

    pub fn system_parent(&self, system_idx: usize) -> usize {
        self.systems[system_idx].parent
    }

    pub fn fault_index(&self, name: &str) -> Option<usize> {
        self.faults.iter().position(|f| f.name == name)
    }

    pub fn system_index(&self, name: &str) -> Option<usize> {
        self.systems.iter().position(|s| s.name == name)
    }

    pub fn loop_index(&self, name: &str) -> Option<usize> {
        self.loops.iter().position(|l| l.name == name)
    }

    fn check_range(level: &'static str, index: usize, size: usize) -> Result<()> {
        if index < size {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { level, index, size })
        }
    }

    /// `(system_idx, loop_idx)` of a fault.
    pub fn ancestors(&self, fault_idx: usize) -> Result<(usize, usize)> {
        Self::check_range("fault", fault_idx, self.faults.len())?;
        let system = self.faults[fault_idx].parent;
        Ok((system, self.systems[system].parent))
    }

    /// Full path ending at `fault_idx`.
    pub fn path_of(&self, fault_idx: usize) -> Result<LabelPath> {
        let (system, lp) = self.ancestors(fault_idx)?;
        Ok(LabelPath::new(lp, system, fault_idx))
    }

    /// True iff the path follows the tree's parent links.
    pub fn validate_path(&self, path: LabelPath) -> Result<bool> {
        Self::check_range("loop", path.loop_idx, self.loops.len())?;
        Self::check_range("system", path.system_idx, self.systems.len())?;
        Self::check_range("fault", path.fault_idx, self.faults.len())?;
        Ok(self.faults[path.fault_idx].parent == path.system_idx
            && self.systems[path.system_idx].parent == path.loop_idx)
    }

    /// One path per fault, ordered by fault index.
    pub fn enumerate_paths(&self) -> Vec<LabelPath> {
        (0..self.faults.len())
            .map(|f| self.path_of(f).expect("fault index in range"))
            .collect()
    }
}
