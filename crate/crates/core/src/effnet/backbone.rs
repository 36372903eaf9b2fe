use rand::Rng;

use super::flops::se_width;
use super::spec::{ScaledSpec, StageKind};
use crate::error::{Error, Result};
use crate::tensorcore::{BnMode, Bound, BufferId, Element, ParamId, ParamStore, Tape, Tensor, Var};

/// Smallest input side the backbone accepts.
pub const MIN_RESOLUTION: usize = 8;

/// Convolution (full or depthwise) followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
    pub kernel: usize,
    pub stride: usize,
    pub depthwise: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        depthwise: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (shape, fan_in) = if depthwise {
            if cin != cout {
                return Err(Error::InvalidArgument(format!("{name}: depthwise needs cin == cout")));
            }
            ([cout, 1, kernel, kernel], kernel * kernel)
        } else {
            ([cout, cin, kernel, kernel], cin * kernel * kernel)
        };
        Ok(Self {
            weight: store.insert_he(format!("{name}.weight"), &shape, fan_in, rng)?,
            gamma: store.insert(format!("{name}.bn.gamma"), Tensor::full(&[cout], E::one()))?,
            beta: store.insert(format!("{name}.bn.beta"), Tensor::zeros(&[cout]))?,
            stats: store.insert_buffer(format!("{name}.bn"), cout)?,
            kernel,
            stride,
            depthwise,
        })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bound: &Bound,
        store: &mut ParamStore<E>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let w = bound.var(self.weight);
        let pad = self.kernel / 2;
        let y = if self.depthwise {
            tape.depthwise_conv2d(x, w, self.stride, pad)?
        } else {
            tape.conv2d(x, w, self.stride, pad)?
        };
        tape.batchnorm2d(y, bound.var(self.gamma), bound.var(self.beta), store.buffer_mut(self.stats), mode)
    }
}

/// Channel gating from pooled features through a SiLU bottleneck and a
/// sigmoid.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce_w: ParamId,
    pub reduce_b: ParamId,
    pub expand_w: ParamId,
    pub expand_b: ParamId,
    pub channels: usize,
}

impl SqueezeExcite {
    pub fn new<E: Element, R: Rng>(store: &mut ParamStore<E>, name: &str, channels: usize, reduced: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            reduce_w: store.insert_uniform(format!("{name}.reduce.weight"), &[reduced, channels], channels, rng)?,
            reduce_b: store.insert(format!("{name}.reduce.bias"), Tensor::zeros(&[reduced]))?,
            expand_w: store.insert_uniform(format!("{name}.expand.weight"), &[channels, reduced], reduced, rng)?,
            expand_b: store.insert(format!("{name}.expand.bias"), Tensor::zeros(&[channels]))?,
            channels,
        })
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, bound: &Bound, x: Var) -> Result<Var> {
        let n = tape.value(x).shape()[0];
        let pooled = tape.global_avg_pool(x)?;
        let flat = tape.reshape(pooled, &[n, self.channels])?;
        let r = tape.dense(flat, bound.var(self.reduce_w), Some(bound.var(self.reduce_b)))?;
        let r = tape.silu(r)?;
        let e = tape.dense(r, bound.var(self.expand_w), Some(bound.var(self.expand_b)))?;
        let gate = tape.sigmoid(e)?;
        let gate = tape.reshape(gate, &[n, self.channels, 1, 1])?;
        tape.mul(x, gate)
    }
}

/// Inverted residual: expand (1×1) → depthwise k×k → SE → project (1×1),
/// with an identity skip when stride is 1 and widths match.
#[derive(Clone, Debug)]
pub struct MbConvBlock {
    pub expand: Option<ConvBn>,
    pub depthwise: ConvBn,
    pub se: SqueezeExcite,
    pub project: ConvBn,
    pub skip: bool,
}

impl MbConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element, R: Rng>(
        store: &mut ParamStore<E>,
        name: &str,
        cin: usize,
        cout: usize,
        expansion: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = cin * expansion;
        let expand = if expansion != 1 {
            Some(ConvBn::new(store, &format!("{name}.expand"), cin, hidden, 1, 1, false, rng)?)
        } else {
            None
        };
        Ok(Self {
            expand,
            depthwise: ConvBn::new(store, &format!("{name}.depthwise"), hidden, hidden, kernel, stride, true, rng)?,
            se: SqueezeExcite::new(store, &format!("{name}.se"), hidden, se_width(cin), rng)?,
            project: ConvBn::new(store, &format!("{name}.project"), hidden, cout, 1, 1, false, rng)?,
            skip: stride == 1 && cin == cout,
        })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bound: &Bound,
        store: &mut ParamStore<E>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let mut h = x;
        if let Some(expand) = &self.expand {
            h = expand.forward(tape, bound, store, h, mode)?;
            h = tape.silu(h)?;
        }
        h = self.depthwise.forward(tape, bound, store, h, mode)?;
        h = tape.silu(h)?;
        h = self.se.forward(tape, bound, h)?;
        h = self.project.forward(tape, bound, store, h, mode)?;
        if self.skip {
            h = tape.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(ConvBn),
    MbConv(MbConvBlock),
}

/// Stage sequence ending in global average pooling.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub layers: Vec<Layer>,
    pub in_channels: usize,
    pub feature_width: usize,
}

/// Registers every backbone parameter in `store` and returns the layer
/// structure that references them.
pub fn build_backbone<E: Element, R: Rng>(spec: &ScaledSpec, store: &mut ParamStore<E>, rng: &mut R) -> Result<Backbone> {
    let net = &spec.network;
    net.validate()?;
    if net.input_resolution < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "input resolution {} below minimum {MIN_RESOLUTION} for the stride chain",
            net.input_resolution
        )));
    }
    let mut layers = Vec::new();
    let mut channels = net.in_channels;
    for (si, st) in net.stages.iter().enumerate() {
        for li in 0..st.layers {
            let name = format!("backbone.stage{}.layer{}", si + 1, li);
            let stride = if li == 0 { st.stride } else { 1 };
            layers.push(match st.kind {
                StageKind::Conv => Layer::Conv(ConvBn::new(store, &name, channels, st.channels, st.kernel, stride, false, rng)?),
                StageKind::MbConv { expansion } => Layer::MbConv(MbConvBlock::new(
                    store,
                    &name,
                    channels,
                    st.channels,
                    expansion,
                    st.kernel,
                    stride,
                    rng,
                )?),
            });
            channels = st.channels;
        }
    }
    Ok(Backbone {
        layers,
        in_channels: net.in_channels,
        feature_width: channels,
    })
}

impl Backbone {
    /// `[N, in_channels, H, W]` → trunk features `[N, feature_width]`.
    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        bound: &Bound,
        store: &mut ParamStore<E>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let (n, c, _, _) = tape.value(x).dims4("backbone")?;
        if c != self.in_channels {
            return Err(Error::shape("backbone", format!("expected {} input channels, got {c}", self.in_channels)));
        }
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(conv) => {
                    let y = conv.forward(tape, bound, store, h, mode)?;
                    tape.silu(y)?
                }
                Layer::MbConv(block) => block.forward(tape, bound, store, h, mode)?,
            };
        }
        let pooled = tape.global_avg_pool(h)?;
        tape.reshape(pooled, &[n, self.feature_width])
    }
}
