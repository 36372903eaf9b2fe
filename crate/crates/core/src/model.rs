//! Backbone + hierarchical head sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::effnet::{build_backbone, Backbone, ScaledSpec};
use crate::error::{Error, Result};
use crate::hmgchead::{BranchParams, HierLogits, LogitVars};
use crate::tensorcore::{BnMode, Bound, Element, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct HmgcModel<E: Element = f32> {
    pub spec: ScaledSpec,
    pub backbone: Backbone,
    pub head: BranchParams,
    pub store: ParamStore<E>,
    pub level_sizes: [usize; 3],
}

impl<E: Element> HmgcModel<E> {
    /// Seeded initialization. `hidden` of `None` uses the trunk width at
    /// every level.
    pub fn new(spec: ScaledSpec, level_sizes: [usize; 3], hidden: Option<[usize; 3]>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = build_backbone(&spec, &mut store, &mut rng)?;
        let head = BranchParams::new(&mut store, backbone.feature_width, hidden, level_sizes, &mut rng)?;
        Ok(Self {
            spec,
            backbone,
            head,
            store,
            level_sizes,
        })
    }

    pub fn input_side(&self) -> usize {
        self.spec.input_resolution()
    }

    pub fn hidden_widths(&self) -> [usize; 3] {
        self.head.hidden_widths()
    }

    /// Stacks per-image unit-range pixels into `[N, 1, side, side]`.
    pub fn input_batch(&self, images: &[&[f32]]) -> Result<Tensor<E>> {
        let side = self.input_side();
        let per = side * side;
        let mut data = Vec::with_capacity(images.len() * per);
        for (i, px) in images.iter().enumerate() {
            if px.len() != per {
                return Err(Error::shape(
                    "input_batch",
                    format!("image {i} has {} pixels, model expects {side}x{side}", px.len()),
                ));
            }
            data.extend(px.iter().map(|&p| E::from_f64(p as f64)));
        }
        Tensor::new(vec![images.len(), self.backbone.in_channels, side, side], data)
    }

    /// Binds all parameters and records the full forward pass.
    pub fn forward(&mut self, tape: &mut Tape<E>, x: Var, mode: BnMode, requires_grad: bool) -> Result<(Bound, LogitVars)> {
        let bound = self.store.bind(tape, requires_grad);
        let features = self.backbone.forward(tape, &bound, &mut self.store, x, mode)?;
        let logits = self.head.forward_heads(tape, &bound, features)?;
        Ok((bound, logits))
    }

    /// Eval-mode logits for a batch of images.
    pub fn predict(&mut self, images: &[&[f32]]) -> Result<Vec<HierLogits>> {
        let mut tape = Tape::new();
        let x = tape.leaf(self.input_batch(images)?, false);
        let (_, logits) = self.forward(&mut tape, x, BnMode::Eval, false)?;
        Ok(HierLogits::from_batch(&tape, logits))
    }
}
