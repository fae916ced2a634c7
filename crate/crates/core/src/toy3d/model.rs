//! Dense toy detector: optional position-aware block followed by three
//! per-location heads (class heatmap, 2D box, 3D box).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::{RenderedFrame, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::graph::{DiffGraph, Var};
use crate::params::ParamSet;
use crate::posenc::PositionalEncoding;
use crate::rrcs::{block_var_scaled, AttentionMode, BlockConfig, BlockParams, BlockVars, ScanDirection};
use crate::tensor::Tensor;

/// Heatmap logits, one per class.
pub const CLS_OUT: usize = NUM_CLASSES;
/// Centre offset `(du, dv)` and size `(w, h)`.
pub const BOX2D_OUT: usize = 4;
/// Depth, `(h, w, l)` and `(sin yaw, cos yaw)`.
pub const BOX3D_OUT: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Heads directly on the appearance features.
    Baseline,
    /// Normalised `(u, v)` pixel coordinates appended to the input.
    Coordconv,
    /// Column attention and bottom-up scan.
    Yolobu,
    CcaOnly,
    RrcsOnly,
    /// One query for the whole map instead of one per column.
    GlobalAttention,
    /// Column attention with the scan running from the top row down.
    UpBottom,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::Coordconv,
        Variant::Yolobu,
        Variant::CcaOnly,
        Variant::RrcsOnly,
        Variant::GlobalAttention,
        Variant::UpBottom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Coordconv => "coordconv",
            Variant::Yolobu => "yolobu",
            Variant::CcaOnly => "cca_only",
            Variant::RrcsOnly => "rrcs_only",
            Variant::GlobalAttention => "global_attention",
            Variant::UpBottom => "up_bottom",
        }
    }

    /// Block stages, or `None` for variants without a block.
    pub fn block(self) -> Option<BlockConfig> {
        let (attention, scan) = match self {
            Variant::Baseline | Variant::Coordconv => return None,
            Variant::Yolobu => (Some(AttentionMode::Column), Some(ScanDirection::BottomUp)),
            Variant::CcaOnly => (Some(AttentionMode::Column), None),
            Variant::RrcsOnly => (None, Some(ScanDirection::BottomUp)),
            Variant::GlobalAttention => (Some(AttentionMode::Global), Some(ScanDirection::BottomUp)),
            Variant::UpBottom => (Some(AttentionMode::Column), Some(ScanDirection::UpBottom)),
        };
        Some(BlockConfig { attention, scan })
    }

    fn coord_channels(self) -> usize {
        if self == Variant::Coordconv {
            2
        } else {
            0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Two 1×1 layers with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(cin: usize, hidden: usize, cout: usize, rng: &mut R) -> Self {
        let b1 = 1.0 / (cin as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        Self {
            w1: Tensor::uniform(&[cin, hidden], -b1, b1, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::uniform(&[hidden, cout], -b2, b2, rng),
            b2: Tensor::zeros(&[cout]),
        }
    }

    pub fn outputs(&self) -> usize {
        self.w2.shape()[1]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn register(&self, g: &mut DiffGraph) -> [Var; 4] {
        [self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()].map(|t| g.param(t))
    }
}

fn mlp_var(g: &mut DiffGraph, v: &[Var; 4], x: Var) -> Result<Var> {
    let h = g.channel_linear(x, v[0], v[1])?;
    let h = g.relu(h);
    g.channel_linear(h, v[2], v[3])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyHeads {
    pub cls: Mlp,
    pub box2d: Mlp,
    pub box3d: Mlp,
}

impl ToyHeads {
    pub fn init<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cls = Mlp::init(channels, hidden, CLS_OUT, rng);
        // Start the heatmap near the background rate so early focal-loss
        // gradients are not dominated by negatives.
        cls.b2 = Tensor::full(&[CLS_OUT], -4.0);
        Self {
            cls,
            box2d: Mlp::init(channels, hidden, BOX2D_OUT, rng),
            box3d: Mlp::init(channels, hidden, BOX3D_OUT, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub height: usize,
    pub width: usize,
    /// Appearance channels before any coordinate channels are appended.
    pub channels: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub variant: Variant,
    pub shape: ModelShape,
    pub block: Option<BlockParams>,
    pub heads: ToyHeads,
    pe: Option<PositionalEncoding>,
}

/// Tape handles for every parameter of a [`ToyModel`].
pub struct ModelVars {
    block: Option<BlockVars>,
    heads: [[Var; 4]; 3],
}

impl ModelVars {
    /// Handles in the same order as [`ToyModel::tensors_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(b) = &self.block {
            out.extend([b.encoder.w1, b.encoder.b1, b.encoder.w2, b.encoder.b2, b.queries, b.phi_weight, b.phi_bias]);
        }
        out.extend(self.heads.iter().flatten());
        out
    }
}

/// Head outputs for one frame.
pub struct Outputs {
    /// `HW × CLS_OUT` logits.
    pub cls: Var,
    /// `K × BOX2D_OUT` at the requested cells.
    pub box2d: Option<Var>,
    /// `K × BOX3D_OUT` at the requested cells.
    pub box3d: Option<Var>,
}

impl ToyModel {
    pub fn init<R: Rng + ?Sized>(variant: Variant, shape: ModelShape, rng: &mut R) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 || shape.hidden == 0 {
            return Err(Error::Config(format!("invalid model shape {shape:?}")));
        }
        let c = shape.channels + variant.coord_channels();
        let (block, pe) = match variant.block() {
            Some(cfg) => {
                let mode = cfg.attention.unwrap_or(AttentionMode::Column);
                let params = BlockParams::init(shape.width, c, mode, rng);
                (Some(params), Some(PositionalEncoding::new(shape.height, c)?))
            }
            None => (None, None),
        };
        let heads = ToyHeads::init(c, shape.hidden, rng);
        Ok(Self { variant, shape, block, heads, pe })
    }

    /// Channels seen by the heads.
    pub fn feature_channels(&self) -> usize {
        self.shape.channels + self.variant.coord_channels()
    }

    /// Every learnable tensor in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(b) = &mut self.block {
            let e = &mut b.encoder;
            out.extend([&mut e.w1, &mut e.b1, &mut e.w2, &mut e.b2]);
            out.push(b.queries.tensor_mut());
            out.extend([&mut b.phi.weight, &mut b.phi.bias]);
        }
        let h = &mut self.heads;
        out.extend(h.cls.tensors_mut());
        out.extend(h.box2d.tensors_mut());
        out.extend(h.box3d.tensors_mut());
        out
    }

    pub fn param_set(&self) -> ParamSet {
        let mut clone = self.clone();
        let names = self.param_names();
        let mut set = ParamSet::new();
        for (name, t) in names.into_iter().zip(clone.tensors_mut()) {
            set.push(name, t.clone());
        }
        set
    }

    /// Overwrites the parameters from `set`, which must match this model's
    /// names and shapes.
    pub fn load_params(&mut self, set: &ParamSet) -> Result<()> {
        let names = self.param_names();
        if set.len() != names.len() {
            return Err(Error::contract(format!("expected {} tensors, got {}", names.len(), set.len())));
        }
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            let src = set.get(name).ok_or_else(|| Error::contract(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::shape("load_params", t.shape(), src.shape()));
            }
            *t = src.clone();
        }
        Ok(())
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        if self.block.is_some() {
            for n in ["key.w1", "key.b1", "key.w2", "key.b2", "queries", "phi.weight", "phi.bias"] {
                names.push(format!("block.{n}"));
            }
        }
        for head in ["cls", "box2d", "box3d"] {
            for n in ["w1", "b1", "w2", "b2"] {
                names.push(format!("{head}.{n}"));
            }
        }
        names
    }

    pub fn register(&self, g: &mut DiffGraph) -> ModelVars {
        ModelVars {
            block: self.block.as_ref().map(|b| BlockVars::params(g, b)),
            heads: [self.heads.cls.register(g), self.heads.box2d.register(g), self.heads.box3d.register(g)],
        }
    }

    /// Network input for a frame: its features, plus normalised pixel
    /// coordinates for the coordinate variant.
    pub fn input(&self, frame: &RenderedFrame) -> Result<Tensor> {
        let (h, w, c) = frame.features.dims();
        if (h, w, c) != (self.shape.height, self.shape.width, self.shape.channels) {
            return Err(Error::shape("ToyModel::input", &[h, w, c], &[self.shape.height, self.shape.width, self.shape.channels]));
        }
        if self.variant != Variant::Coordconv {
            return Ok(frame.features.tensor().clone());
        }
        let mut data = Vec::with_capacity(h * w * (c + 2));
        for i in 0..h {
            for j in 0..w {
                data.extend_from_slice(frame.features.pixel(i, j));
                data.push((j as f64 + 0.5) / w as f64);
                data.push((i as f64 + 0.5) / h as f64);
            }
        }
        Tensor::new(&[h, w, c + 2], data)
    }

    /// Constant factor on the attention weights. Softmax weights average 1/H
    /// per column (1/HW globally), which would leave the re-weighted map that
    /// much smaller than the backbone; the factor restores unit mean weight.
    pub fn weight_gain(&self, cfg: BlockConfig) -> f64 {
        match cfg.attention {
            Some(AttentionMode::Column) => self.shape.height as f64,
            Some(AttentionMode::Global) => (self.shape.height * self.shape.width) as f64,
            None => 1.0,
        }
    }

    /// Runs the network. Regression heads are evaluated only at `cells`
    /// (flat `row·W + col` indices).
    pub fn forward(&self, g: &mut DiffGraph, vars: &ModelVars, input: Tensor, cells: &[usize]) -> Result<Outputs> {
        let x = g.constant(input);
        let features = match (self.variant.block(), &vars.block, &self.pe) {
            (Some(cfg), Some(bv), Some(pe)) => block_var_scaled(g, x, pe, bv, cfg, self.weight_gain(cfg))?,
            _ => x,
        };
        let (h, w, c) = (self.shape.height, self.shape.width, self.feature_channels());
        let flat = g.reshape(features, &[h * w, c])?;
        let cls = mlp_var(g, &vars.heads[0], flat)?;
        if cells.is_empty() {
            return Ok(Outputs { cls, box2d: None, box3d: None });
        }
        let picked = g.gather_rows(flat, cells)?;
        let box2d = mlp_var(g, &vars.heads[1], picked)?;
        let box3d = mlp_var(g, &vars.heads[2], picked)?;
        Ok(Outputs { cls, box2d: Some(box2d), box3d: Some(box3d) })
    }
}
