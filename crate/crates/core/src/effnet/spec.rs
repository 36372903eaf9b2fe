use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::conv_out_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum StageKind {
    /// Plain convolution + batch norm + SiLU.
    Conv,
    /// Inverted-residual block with the given channel expansion factor.
    MbConv { expansion: usize },
}

/// One row of the stage table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub kernel: usize,
    /// Input resolution of the stage (square).
    pub resolution: usize,
    pub channels: usize,
    pub layers: usize,
    /// Stride of the stage's first layer.
    pub stride: usize,
}

impl StageSpec {
    pub fn label(&self) -> String {
        match self.kind {
            StageKind::Conv => format!("Conv{0}x{0}", self.kernel),
            StageKind::MbConv { expansion } => format!("MBConv{expansion}, k{0}x{0}", self.kernel),
        }
    }

    pub fn output_resolution(&self) -> Result<usize> {
        conv_out_extent(self.resolution, self.kernel, self.stride, self.kernel / 2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_resolution: usize,
    pub in_channels: usize,
    /// Outputs of the final dense layer counted by the FLOPS estimate.
    pub classifier_outputs: usize,
    pub stages: Vec<StageSpec>,
}

fn stage(kind: StageKind, kernel: usize, resolution: usize, channels: usize, layers: usize, stride: usize) -> StageSpec {
    StageSpec {
        kind,
        kernel,
        resolution,
        channels,
        layers,
        stride,
    }
}

fn fill_resolutions(input: usize, stages: &mut [StageSpec]) -> Result<()> {
    let mut res = input;
    for s in stages.iter_mut() {
        s.resolution = res;
        res = s.output_resolution()?;
    }
    Ok(())
}

impl NetworkSpec {
    /// The nine-stage reference table at 224×224, one input channel.
    pub fn reference() -> Self {
        use StageKind::*;
        let mb6 = MbConv { expansion: 6 };
        Self {
            input_resolution: 224,
            in_channels: 1,
            classifier_outputs: 16,
            stages: vec![
                stage(Conv, 3, 224, 32, 1, 2),
                stage(MbConv { expansion: 1 }, 3, 112, 16, 1, 1),
                stage(mb6, 3, 112, 24, 2, 2),
                stage(mb6, 5, 56, 40, 2, 2),
                stage(mb6, 3, 28, 80, 3, 2),
                stage(mb6, 5, 14, 112, 3, 1),
                stage(mb6, 5, 14, 192, 4, 2),
                stage(mb6, 3, 7, 320, 1, 1),
                stage(Conv, 1, 7, 1280, 1, 1),
            ],
        }
    }

    /// Same stages fed at a different input resolution.
    pub fn with_input_resolution(mut self, resolution: usize) -> Result<Self> {
        self.input_resolution = resolution;
        fill_resolutions(resolution, &mut self.stages)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("network spec has no stages".into()));
        }
        if self.in_channels == 0 || self.classifier_outputs == 0 {
            return Err(Error::Config("in_channels and classifier_outputs must be >= 1".into()));
        }
        let mut res = self.input_resolution;
        for (i, s) in self.stages.iter().enumerate() {
            if ![1, 3, 5].contains(&s.kernel) || s.layers == 0 || s.channels == 0 || s.stride == 0 {
                return Err(Error::Config(format!("stage {}: invalid kernel/layers/channels/stride", i + 1)));
            }
            if let StageKind::MbConv { expansion: 0 } = s.kind {
                return Err(Error::Config(format!("stage {}: expansion must be >= 1", i + 1)));
            }
            if s.resolution != res {
                return Err(Error::Config(format!(
                    "stage {}: resolution {} inconsistent with stride chain ({res})",
                    i + 1,
                    s.resolution
                )));
            }
            res = s.output_resolution()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi: f64,
}

pub const DEFAULT_CONSTRAINT_TOLERANCE: f64 = 0.1;

impl ScalingCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64, phi: f64) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0 && gamma >= 1.0) || !phi.is_finite() || !(alpha * beta * gamma).is_finite() {
            return Err(Error::Config(format!(
                "scaling coefficients must satisfy alpha, beta, gamma >= 1 (got {alpha}, {beta}, {gamma}, phi {phi})"
            )));
        }
        Ok(Self { alpha, beta, gamma, phi })
    }

    /// Desk-scale "nano" profile: φ = −3 with α = 1.2, β = 1.1, γ = 1.15.
    pub fn nano() -> Self {
        Self::new(1.2, 1.1, 1.15, -3.0).expect("valid")
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 1.0, 0.0).expect("valid")
    }

    pub fn with_phi(self, phi: f64) -> Self {
        Self { phi, ..self }
    }

    /// `α · β² · γ²`.
    pub fn resource_product(&self) -> f64 {
        self.alpha * self.beta * self.beta * self.gamma * self.gamma
    }

    pub fn depth_multiplier(&self) -> f64 {
        self.alpha.powf(self.phi)
    }

    pub fn width_multiplier(&self) -> f64 {
        self.beta.powf(self.phi)
    }

    pub fn resolution_multiplier(&self) -> f64 {
        self.gamma.powf(self.phi)
    }
}

/// True iff `|α·β²·γ² − 2| ≤ tolerance`.
pub fn check_constraint(c: &ScalingCoefficients, tolerance: f64) -> bool {
    (c.resource_product() - 2.0).abs() <= tolerance
}

/// Nearest multiple of `divisor`, ties upward, at least one divisor.
pub fn round_to_divisor(channels: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let units = (channels / d + 0.5).floor().max(1.0);
    units as usize * divisor
}

/// Nearest even integer (ties upward), at least 2.
fn round_even(v: f64) -> usize {
    ((v / 2.0 + 0.5).floor().max(1.0) as usize) * 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledSpec {
    pub network: NetworkSpec,
    pub coefficients: ScalingCoefficients,
    pub channel_divisor: usize,
}

pub const DEFAULT_CHANNEL_DIVISOR: usize = 8;

/// Scales MBConv layer counts by `α^φ`, channels by `β^φ` and the input
/// resolution by `γ^φ`; stage resolutions follow the stride chain. Plain
/// convolution stages (stem, head) are never repeated.
pub fn apply_compound_scaling(spec: &NetworkSpec, c: &ScalingCoefficients, channel_divisor: usize) -> Result<ScaledSpec> {
    if channel_divisor == 0 {
        return Err(Error::Config("channel divisor must be >= 1".into()));
    }
    spec.validate()?;
    let (d, w, r) = (c.depth_multiplier(), c.width_multiplier(), c.resolution_multiplier());
    let mut network = spec.clone();
    for s in network.stages.iter_mut() {
        if let StageKind::MbConv { .. } = s.kind {
            s.layers = ((s.layers as f64 * d).round() as usize).max(1);
        }
        s.channels = round_to_divisor(s.channels as f64 * w, channel_divisor);
    }
    // φ = 0 leaves the resolution untouched, odd or not.
    if c.phi != 0.0 {
        network.input_resolution = round_even(spec.input_resolution as f64 * r);
    }
    fill_resolutions(network.input_resolution, &mut network.stages)?;
    Ok(ScaledSpec {
        network,
        coefficients: *c,
        channel_divisor,
    })
}

impl ScaledSpec {
    /// Unscaled spec taken as-is.
    pub fn unscaled(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            network: spec,
            coefficients: ScalingCoefficients::identity(),
            channel_divisor: 1,
        })
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.network.stages
    }

    pub fn input_resolution(&self) -> usize {
        self.network.input_resolution
    }

    pub fn feature_width(&self) -> usize {
        self.network.stages.last().map(|s| s.channels).unwrap_or(0)
    }

    /// Replaces the input resolution (e.g. with the native image side),
    /// keeping scaled depth and width.
    pub fn with_input_resolution(mut self, resolution: usize) -> Result<Self> {
        self.network = self.network.with_input_resolution(resolution)?;
        Ok(self)
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("scaled spec serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(format!("scaled spec: {e}")))?;
        s.network.validate()?;
        Ok(s)
    }
}
