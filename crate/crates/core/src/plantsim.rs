//! Deterministic synthetic plant: per-second parameter vectors under an
//! operating condition with one injected fault signature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingCondition {
    pub name: String,
    pub power_fraction: f64,
}

impl OperatingCondition {
    pub fn new(name: impl Into<String>, power_fraction: f64) -> Result<Self> {
        let c = Self {
            name: name.into(),
            power_fraction,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.power_fraction > 0.0 && self.power_fraction <= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "condition '{}': power fraction {} outside (0, 1]",
                self.name, self.power_fraction
            )))
        }
    }

    /// Multiplier applied to nominal values at this power level.
    pub fn baseline_factor(&self) -> f64 {
        0.2 + 0.8 * self.power_fraction
    }
}

/// Start-up at 10 %, steady state at 50 % and 100 % power.
pub fn default_conditions() -> Vec<OperatingCondition> {
    [("p010", 0.10), ("p050", 0.50), ("p100", 1.00)]
        .into_iter()
        .map(|(n, p)| OperatingCondition::new(n, p).expect("valid default"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantProfile {
    /// Nominal (full-power) value of every parameter.
    pub nominal: Vec<f64>,
    /// Noise standard deviation as a fraction of the baseline value.
    pub noise_sigma: f64,
}

impl PlantProfile {
    pub fn new(nominal: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        let p = Self { nominal, noise_sigma };
        p.validate()?;
        Ok(p)
    }

    /// Nominal values drawn log-uniformly from `[1, 100]`.
    pub fn synthetic(parameter_count: usize, nominal_seed: u64, noise_sigma: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(nominal_seed);
        let exponent = Uniform::new(0.0, 2.0);
        let nominal = (0..parameter_count)
            .map(|_| 10f64.powf(exponent.sample(&mut rng)))
            .collect();
        Self::new(nominal, noise_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal.is_empty() {
            return Err(Error::Config("parameter_count must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.nominal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("nominal values must be finite".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.nominal.len()
    }

    pub fn baseline(&self, condition: &OperatingCondition) -> Vec<f64> {
        let k = condition.baseline_factor();
        self.nominal.iter().map(|v| v * k).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Step,
    Ramp,
    Exponential,
    Oscillation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedParameter {
    pub index: usize,
    pub kind: ResponseKind,
}

fn default_time_constant() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSignature {
    pub fault_idx: usize,
    pub affected: Vec<AffectedParameter>,
    /// Relative size of the response; negative values depress the parameter.
    pub magnitude: f64,
    #[serde(default)]
    pub onset_tick: u32,
    /// Seconds; ramp length, exponential time constant or oscillation period.
    #[serde(default = "default_time_constant")]
    pub time_constant: f64,
}

impl FaultSignature {
    pub fn validate(&self, parameter_count: usize) -> Result<()> {
        if let Some(p) = self.affected.iter().find(|p| p.index >= parameter_count) {
            return Err(Error::Config(format!(
                "fault {} signature index {} out of range ({} parameters)",
                self.fault_idx, p.index, parameter_count
            )));
        }
        if !self.magnitude.is_finite() || !(self.time_constant > 0.0 && self.time_constant.is_finite()) {
            return Err(Error::Config(format!(
                "fault {}: magnitude and time constant must be finite (time constant > 0)",
                self.fault_idx
            )));
        }
        Ok(())
    }

    /// Relative deviation of one affected parameter at `tick`.
    pub fn response(&self, kind: ResponseKind, tick: u32) -> f64 {
        if tick < self.onset_tick {
            return 0.0;
        }
        let elapsed = (tick - self.onset_tick) as f64;
        let m = self.magnitude;
        let tau = self.time_constant;
        match kind {
            ResponseKind::Step => m,
            ResponseKind::Ramp => m * ((elapsed + 1.0) / tau).min(1.0),
            ResponseKind::Exponential => m * (1.0 - (-(elapsed + 1.0) / tau).exp()),
            ResponseKind::Oscillation => m * (std::f64::consts::TAU * elapsed / tau).cos(),
        }
    }
}

/// Disjoint signatures, one per fault: fault `f` perturbs parameters
/// `f, f + F, f + 2F, ...` (up to `per_fault` of them, `F` = fault count).
/// The first affected parameter is always a step so every fault is visible
/// from its onset.
pub fn default_signatures(fault_count: usize, parameter_count: usize, per_fault: usize) -> Result<Vec<FaultSignature>> {
    const KINDS: [ResponseKind; 4] = [
        ResponseKind::Step,
        ResponseKind::Ramp,
        ResponseKind::Exponential,
        ResponseKind::Oscillation,
    ];
    let per = per_fault.min(parameter_count / fault_count.max(1));
    if per == 0 {
        return Err(Error::Config(format!(
            "{parameter_count} parameters cannot hold disjoint signatures for {fault_count} faults"
        )));
    }
    Ok((0..fault_count)
        .map(|f| FaultSignature {
            fault_idx: f,
            affected: (0..per)
                .map(|j| AffectedParameter {
                    index: f + j * fault_count,
                    kind: KINDS[j % KINDS.len()],
                })
                .collect(),
            magnitude: if f % 2 == 0 { 0.5 } else { -0.4 },
            onset_tick: 0,
            time_constant: default_time_constant(),
        })
        .collect())
}

/// Parameter values at one sampled second.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub tick: u32,
    pub values: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Noise stream key for one snapshot; parameter index is the position in
/// the stream.
fn noise_key(seed: u64, fault_idx: usize, condition: &OperatingCondition, tick: u32) -> u64 {
    [fault_idx as u64, condition.power_fraction.to_bits(), tick as u64]
        .into_iter()
        .fold(splitmix64(seed), |h, k| splitmix64(h ^ k))
}

/// One run of `duration_s` one-second snapshots. Pure in its arguments.
pub fn simulate_run(
    profile: &PlantProfile,
    signature: &FaultSignature,
    condition: &OperatingCondition,
    seed: u64,
    duration_s: u32,
) -> Result<Vec<Snapshot>> {
    if duration_s == 0 {
        return Err(Error::InvalidArgument("duration_s must be >= 1".into()));
    }
    profile.validate()?;
    condition.validate()?;
    signature.validate(profile.parameter_count())?;
    let baseline = profile.baseline(condition);
    Ok((0..duration_s)
        .map(|tick| {
            let mut relative = vec![0.0; baseline.len()];
            if profile.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(noise_key(seed, signature.fault_idx, condition, tick));
                for r in relative.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *r = profile.noise_sigma * z;
                }
            }
            for p in &signature.affected {
                relative[p.index] += signature.response(p.kind, tick);
            }
            let values = baseline.iter().zip(&relative).map(|(b, r)| b * (1.0 + r)).collect();
            Snapshot { tick, values }
        })
        .collect())
}
