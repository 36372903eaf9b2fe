use super::spec::{ScaledSpec, StageKind};
use crate::error::Result;
use crate::tensorcore::conv_out_extent;

/// Squeeze-and-excitation bottleneck ratio, relative to block input width.
pub const SE_RATIO: f64 = 0.25;

pub fn se_width(block_in: usize) -> usize {
    ((block_in as f64 * SE_RATIO) as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageFlops {
    pub stage: usize,
    pub macs: u64,
    pub output_resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsBreakdown {
    pub stages: Vec<StageFlops>,
    /// Final dense layer on pooled features.
    pub classifier: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.stages.iter().map(|s| s.macs).sum::<u64>() + self.classifier
    }
}

fn conv_macs(k: usize, cin: usize, cout: usize, out: usize) -> u64 {
    (k * k * cin * cout) as u64 * (out * out) as u64
}

/// Analytic multiply-accumulate count of every layer.
pub fn flops_breakdown(spec: &ScaledSpec) -> Result<FlopsBreakdown> {
    let net = &spec.network;
    let mut channels = net.in_channels;
    let mut res = net.input_resolution;
    let mut stages = Vec::with_capacity(net.stages.len());
    for (i, st) in net.stages.iter().enumerate() {
        let mut macs = 0u64;
        let pad = st.kernel / 2;
        for layer in 0..st.layers {
            let stride = if layer == 0 { st.stride } else { 1 };
            let out = conv_out_extent(res, st.kernel, stride, pad)?;
            match st.kind {
                StageKind::Conv => {
                    macs += conv_macs(st.kernel, channels, st.channels, out);
                }
                StageKind::MbConv { expansion } => {
                    let hidden = channels * expansion;
                    if expansion != 1 {
                        macs += conv_macs(1, channels, hidden, res);
                    }
                    macs += (st.kernel * st.kernel * hidden) as u64 * (out * out) as u64;
                    macs += 2 * (hidden * se_width(channels)) as u64;
                    macs += conv_macs(1, hidden, st.channels, out);
                }
            }
            channels = st.channels;
            res = out;
        }
        stages.push(StageFlops {
            stage: i + 1,
            macs,
            output_resolution: res,
        });
    }
    Ok(FlopsBreakdown {
        stages,
        classifier: (channels * net.classifier_outputs) as u64,
    })
}

pub fn estimate_flops(spec: &ScaledSpec) -> Result<u64> {
    Ok(flops_breakdown(spec)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effnet::spec::{NetworkSpec, StageSpec};

    #[test]
    fn single_pointwise_conv() {
        let net = NetworkSpec {
            input_resolution: 1,
            in_channels: 1,
            classifier_outputs: 1,
            stages: vec![StageSpec {
                kind: StageKind::Conv,
                kernel: 1,
                resolution: 1,
                channels: 1,
                layers: 1,
                stride: 1,
            }],
        };
        let b = flops_breakdown(&ScaledSpec::unscaled(net).unwrap()).unwrap();
        assert_eq!(b.stages[0].macs, 1);
    }

    #[test]
    fn se_width_floor() {
        assert_eq!(se_width(1), 1);
        assert_eq!(se_width(16), 4);
        assert_eq!(se_width(30), 7);
    }
}
