//! Mini-batch SGD on the toy objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::{center_cells, frame_loss};
use super::model::{ModelShape, ToyModel, Variant};
use super::scene::{RenderedFrame, SceneConfig};
use crate::error::{Error, Result};
use crate::graph::DiffGraph;
use crate::tensor::Tensor;

const SHUFFLE_SALT: u64 = 0x0073_6875_6666_6c65;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 0.05, batch_size: 4, hidden: 32, clip_norm: Some(5.0) }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size and hidden must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Mean frame loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Freshly initialised model for frames rendered under `scene`.
pub fn init_model(variant: Variant, scene: &SceneConfig, hidden: usize, seed: u64) -> Result<ToyModel> {
    let shape = ModelShape { height: scene.height, width: scene.width, channels: scene.channels, hidden };
    ToyModel::init(variant, shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Loss and parameter gradients for one frame.
pub fn frame_gradients(model: &ToyModel, frame: &RenderedFrame) -> Result<(f64, Vec<Tensor>)> {
    let mut g = DiffGraph::new();
    let vars = model.register(&mut g);
    let (cells, _) = center_cells(frame);
    let out = model.forward(&mut g, &vars, model.input(frame)?, &cells)?;
    let loss = frame_loss(&mut g, &out, frame)?;
    let value = g.value(loss.total).item();
    let grads = g.backward(loss.total)?;
    let all = vars.all();
    let tensors: Vec<Tensor> = all.iter().map(|&v| grads.get_or_zeros(v, g.value(v))).collect();
    Ok((value, tensors))
}

/// Trains `variant` on `dataset`. Initialisation and frame order depend only
/// on `seed`. A non-finite loss aborts with [`Error::Divergence`].
pub fn train_toy(variant: Variant, dataset: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = init_model(variant, &dataset.config, cfg.hidden, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let (loss, grads) = frame_gradients(&model, &dataset.frames[i])?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1, step, value: loss });
                }
                total += loss;
                match &mut acc {
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                    None => acc = Some(grads),
                }
            }
            let Some(mut grads) = acc else { continue };
            let mut scale = cfg.lr / batch.len() as f64;
            if let Some(max) = cfg.clip_norm {
                let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt() / batch.len() as f64;
                if norm > max {
                    scale *= max / norm;
                }
            }
            for (p, g) in model.tensors_mut().into_iter().zip(&mut grads) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= scale * gv;
                }
            }
            step += 1;
        }
        let mean = if dataset.is_empty() { 0.0 } else { total / dataset.len() as f64 };
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}
