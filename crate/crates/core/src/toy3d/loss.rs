//! Training objective: focal heatmap loss plus L1 regression on 2D and 3D box
//! encodings, summed with unit weights.

use super::camera::CameraModel;
use super::model::{Outputs, BOX2D_OUT, BOX3D_OUT, CLS_OUT};
use super::scene::{Box2D, RenderedFrame, SceneObject};
use crate::error::Result;
use crate::graph::{DiffGraph, Var};
use crate::metrics::Box3D;
use crate::tensor::Tensor;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Depth and 2D sizes are regressed divided by these (powers of two, so
/// encoding and decoding are exact).
pub const DEPTH_SCALE: f64 = 4.0;
pub const SIZE2D_SCALE: f64 = 8.0;

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss summed over all logits and divided by `normalizer`.
/// `targets` holds 0 or 1 per logit.
pub fn focal_loss_var(g: &mut DiffGraph, logits: Var, targets: &Tensor, normalizer: f64) -> Result<Var> {
    let x = g.value(logits);
    x.expect_same_shape(targets, "focal_loss")?;
    let (a, gamma) = (FOCAL_ALPHA, FOCAL_GAMMA);
    let mut total = 0.0;
    for (&xi, &t) in x.data().iter().zip(targets.data()) {
        let p = sigmoid(xi);
        total += if t > 0.5 {
            a * (1.0 - p).powf(gamma) * softplus(-xi)
        } else {
            (1.0 - a) * p.powf(gamma) * softplus(xi)
        };
    }
    let targets = targets.clone();
    Ok(g.custom(
        Tensor::scalar(total / normalizer),
        &[logits],
        Box::new(move |args| {
            let k = args.grad.item() / normalizer;
            let x = args.inputs[0];
            let d = Tensor::from_fn(x.shape(), |i| {
                let xi = x.data()[i];
                let p = sigmoid(xi);
                let v = if targets.data()[i] > 0.5 {
                    // log p = −softplus(−x)
                    a * (1.0 - p).powf(gamma) * (-gamma * p * softplus(-xi) - (1.0 - p))
                } else {
                    // log(1 − p) = −softplus(x)
                    (1.0 - a) * p.powf(gamma) * (p + gamma * (1.0 - p) * softplus(xi))
                };
                k * v
            });
            vec![Some(d)]
        }),
    ))
}

/// Sum of absolute differences divided by `normalizer`.
pub fn l1_loss_var(g: &mut DiffGraph, pred: Var, target: &Tensor, normalizer: f64) -> Result<Var> {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    let a = g.abs(d);
    let s = g.sum(a);
    Ok(g.scale(s, 1.0 / normalizer))
}

/// Cells holding object centres, with the index of each object.
pub fn center_cells(frame: &RenderedFrame) -> (Vec<usize>, Vec<usize>) {
    let w = frame.width();
    (0..frame.objects.len())
        .filter_map(|i| frame.center_cell(i).map(|(r, c)| (r * w + c, i)))
        .unzip()
}

/// Binary heatmap targets, `HW × CLS_OUT`.
pub fn heatmap_targets(frame: &RenderedFrame) -> Tensor {
    let (h, w) = (frame.height(), frame.width());
    let mut t = Tensor::zeros(&[h * w, CLS_OUT]);
    let (cells, objs) = center_cells(frame);
    for (cell, i) in cells.into_iter().zip(objs) {
        t.data_mut()[cell * CLS_OUT + frame.objects[i].class.id()] = 1.0;
    }
    t
}

pub fn encode_box2d(b: &Box2D, row: usize, col: usize) -> [f64; BOX2D_OUT] {
    [
        b.u - (col as f64 + 0.5),
        b.v - (row as f64 + 0.5),
        b.w / SIZE2D_SCALE,
        b.h / SIZE2D_SCALE,
    ]
}

pub fn encode_box3d(o: &SceneObject) -> [f64; BOX3D_OUT] {
    [o.z / DEPTH_SCALE, o.h, o.w, o.l, o.yaw.sin(), o.yaw.cos()]
}

/// Decoded regression output at one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedBox {
    pub box2d: Box2D,
    pub depth: f64,
    /// `(h, w, l)`.
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl DecodedBox {
    pub fn decode(row: usize, col: usize, r2: &[f64], r3: &[f64]) -> Self {
        let box2d = Box2D {
            u: col as f64 + 0.5 + r2[0],
            v: row as f64 + 0.5 + r2[1],
            w: r2[2] * SIZE2D_SCALE,
            h: r2[3] * SIZE2D_SCALE,
        };
        Self {
            box2d,
            depth: r3[0] * DEPTH_SCALE,
            dims: [r3[1], r3[2], r3[3]],
            yaw: r3[4].atan2(r3[5]),
        }
    }

    /// 3D box standing on the ground under the camera model. Non-positive
    /// predicted depths or sizes are clamped to a small positive value.
    pub fn box3d(&self, camera: &CameraModel) -> Box3D {
        let z = self.depth.max(1e-3);
        let dims = self.dims.map(|d| d.max(1e-3));
        Box3D {
            center: [camera.lateral(self.box2d.u, z), camera.camera_height - dims[0] / 2.0, z],
            dims,
            yaw: self.yaw,
        }
    }
}

/// Per-branch losses of one frame.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub cls: Var,
    pub box2d: Option<Var>,
    pub box3d: Option<Var>,
}

/// `L = L_cls + L_2D + L_3D`. The heatmap loss is normalised by the number of
/// objects (at least one); regression losses sum over components and average
/// over objects.
pub fn frame_loss(g: &mut DiffGraph, out: &Outputs, frame: &RenderedFrame) -> Result<LossParts> {
    let (cells, objs) = center_cells(frame);
    let n = objs.len().max(1) as f64;
    let cls = focal_loss_var(g, out.cls, &heatmap_targets(frame), n)?;
    let (Some(p2), Some(p3)) = (out.box2d, out.box3d) else {
        return Ok(LossParts { total: cls, cls, box2d: None, box3d: None });
    };
    let w = frame.width();
    let mut t2 = Vec::with_capacity(objs.len() * BOX2D_OUT);
    let mut t3 = Vec::with_capacity(objs.len() * BOX3D_OUT);
    for (&cell, &i) in cells.iter().zip(&objs) {
        t2.extend(encode_box2d(&frame.boxes2d[i], cell / w, cell % w));
        t3.extend(encode_box3d(&frame.objects[i]));
    }
    let l2 = l1_loss_var(g, p2, &Tensor::new(&[objs.len(), BOX2D_OUT], t2)?, n)?;
    let l3 = l1_loss_var(g, p3, &Tensor::new(&[objs.len(), BOX3D_OUT], t3)?, n)?;
    let s = g.add(cls, l2)?;
    let total = g.add(s, l3)?;
    Ok(LossParts { total, cls, box2d: Some(l2), box3d: Some(l3) })
}
