//! Evaluation of dense predictions against rendered ground truth.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::{center_cells, encode_box2d, encode_box3d, sigmoid, DecodedBox};
use super::model::{ToyModel, BOX2D_OUT, BOX3D_OUT, CLS_OUT};
use super::scene::{ObjectClass, RenderedFrame};
use crate::error::{Error, Result};
use crate::graph::DiffGraph;
use crate::metrics::{ap_r40, bev_iou, Box3D, Detection, EvalRecord, GroundTruth};
use crate::tensor::Tensor;

/// Heatmap peaks below this score are not reported.
pub const SCORE_THRESHOLD: f64 = 0.05;
pub const MAX_DETECTIONS: usize = 20;
pub const TOY_IOU: f64 = 0.5;

/// Per-cell outputs for one frame, all `HW × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutput {
    /// Class probabilities.
    pub heat: Tensor,
    pub box2d: Tensor,
    pub box3d: Tensor,
}

pub trait Predictor {
    fn predict(&self, frame: &RenderedFrame) -> Result<DenseOutput>;
}

impl Predictor for ToyModel {
    fn predict(&self, frame: &RenderedFrame) -> Result<DenseOutput> {
        let mut g = DiffGraph::new();
        let vars = self.register(&mut g);
        let cells: Vec<usize> = (0..frame.height() * frame.width()).collect();
        let out = self.forward(&mut g, &vars, self.input(frame)?, &cells)?;
        let heat = g.value(out.cls).map(sigmoid);
        let pick = |v: Option<_>| g.value(v.expect("regression outputs requested")).clone();
        Ok(DenseOutput { heat, box2d: pick(out.box2d), box3d: pick(out.box3d) })
    }
}

/// Predicts the ground truth exactly: centre cells get probability one and the
/// true box encodings.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, frame: &RenderedFrame) -> Result<DenseOutput> {
        let n = frame.height() * frame.width();
        let mut heat = Tensor::zeros(&[n, CLS_OUT]);
        let mut box2d = Tensor::zeros(&[n, BOX2D_OUT]);
        let mut box3d = Tensor::zeros(&[n, BOX3D_OUT]);
        let w = frame.width();
        let (cells, objs) = center_cells(frame);
        for (cell, i) in cells.into_iter().zip(objs) {
            let o = &frame.objects[i];
            heat.data_mut()[cell * CLS_OUT + o.class.id()] = 1.0;
            let e2 = encode_box2d(&frame.boxes2d[i], cell / w, cell % w);
            box2d.data_mut()[cell * BOX2D_OUT..(cell + 1) * BOX2D_OUT].copy_from_slice(&e2);
            box3d.data_mut()[cell * BOX3D_OUT..(cell + 1) * BOX3D_OUT].copy_from_slice(&encode_box3d(o));
        }
        Ok(DenseOutput { heat, box2d, box3d })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDetection {
    pub frame: usize,
    pub class: ObjectClass,
    pub confidence: f64,
    pub box3d: Box3D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ObjectClass,
    pub n_objects: usize,
    pub depth_mae: f64,
    pub dims_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub n_frames: usize,
    pub n_objects: usize,
    pub per_class: Vec<ClassReport>,
    pub depth_mae: Option<f64>,
    pub dims_mae: Option<f64>,
    /// Objects that belong to a same-looking, same-depth pair.
    pub n_ambiguous: usize,
    pub ambiguous_depth_mae: Option<f64>,
    /// Mean over classes of BEV AP at [`TOY_IOU`], for classes present.
    pub toy_ap: Option<f64>,
    pub detections: Vec<ToyDetection>,
}

/// Local maxima of each class heatmap over a 3×3 window, highest first.
pub fn extract_detections(frame: &RenderedFrame, out: &DenseOutput, frame_index: usize) -> Vec<ToyDetection> {
    let (h, w) = (frame.height(), frame.width());
    let heat = out.heat.data();
    let mut found = Vec::new();
    for k in 0..CLS_OUT {
        for r in 0..h {
            for c in 0..w {
                let s = heat[(r * w + c) * CLS_OUT + k];
                if s < SCORE_THRESHOLD {
                    continue;
                }
                let peak = (r.saturating_sub(1)..=(r + 1).min(h - 1))
                    .flat_map(|rr| (c.saturating_sub(1)..=(c + 1).min(w - 1)).map(move |cc| (rr, cc)))
                    .all(|(rr, cc)| {
                        let o = heat[(rr * w + cc) * CLS_OUT + k];
                        // Plateaus keep their first cell in scan order.
                        o < s || (o == s && (rr, cc) >= (r, c))
                    });
                if !peak {
                    continue;
                }
                let cell = r * w + c;
                let d = DecodedBox::decode(
                    r,
                    c,
                    &out.box2d.data()[cell * BOX2D_OUT..(cell + 1) * BOX2D_OUT],
                    &out.box3d.data()[cell * BOX3D_OUT..(cell + 1) * BOX3D_OUT],
                );
                found.push(ToyDetection {
                    frame: frame_index,
                    class: ObjectClass::from_id(k).expect("class index"),
                    confidence: s,
                    box3d: d.box3d(&frame.camera),
                });
            }
        }
    }
    found.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    found.truncate(MAX_DETECTIONS);
    found
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores `predictor` on `dataset`. Depth and size errors are read at each
/// object's centre cell; detections come from heatmap peaks.
pub fn eval_toy<P: Predictor + ?Sized>(predictor: &P, dataset: &Dataset) -> Result<ToyReport> {
    let mut report = ToyReport { n_frames: dataset.len(), ..ToyReport::default() };
    let mut depth_err = vec![Vec::new(); CLS_OUT];
    let mut dims_err = vec![Vec::new(); CLS_OUT];
    let mut amb_err = Vec::new();
    let mut records = Vec::with_capacity(dataset.len());
    for (fi, frame) in dataset.frames.iter().enumerate() {
        let out = predictor.predict(frame)?;
        let w = frame.width();
        let (cells, objs) = center_cells(frame);
        let ambiguous = frame.ambiguous_members();
        for (cell, i) in cells.into_iter().zip(objs) {
            let o = &frame.objects[i];
            let d = DecodedBox::decode(
                cell / w,
                cell % w,
                &out.box2d.data()[cell * BOX2D_OUT..(cell + 1) * BOX2D_OUT],
                &out.box3d.data()[cell * BOX3D_OUT..(cell + 1) * BOX3D_OUT],
            );
            let de = (d.depth - o.z).abs();
            let dims = [o.h, o.w, o.l];
            let me = d.dims.iter().zip(dims).map(|(p, t)| (p - t).abs()).sum::<f64>() / 3.0;
            depth_err[o.class.id()].push(de);
            dims_err[o.class.id()].push(me);
            if ambiguous.contains(&i) {
                amb_err.push(de);
            }
        }
        let dets = extract_detections(frame, &out, fi);
        records.push(EvalRecord {
            gts: frame
                .objects
                .iter()
                .map(|o| GroundTruth { box3d: o.box3d(&frame.camera), class_id: o.class.id(), ignore: false })
                .collect(),
            detections: dets
                .iter()
                .map(|d| Detection { box3d: d.box3d, class_id: d.class.id(), confidence: d.confidence })
                .collect(),
        });
        report.detections.extend(dets);
    }
    for class in ObjectClass::ALL {
        let k = class.id();
        if let (Some(dm), Some(sm)) = (mean(&depth_err[k]), mean(&dims_err[k])) {
            report.per_class.push(ClassReport { class, n_objects: depth_err[k].len(), depth_mae: dm, dims_mae: sm });
        }
    }
    let all_depth: Vec<f64> = depth_err.concat();
    report.n_objects = all_depth.len();
    report.depth_mae = mean(&all_depth);
    report.dims_mae = mean(&dims_err.concat());
    report.n_ambiguous = amb_err.len();
    report.ambiguous_depth_mae = mean(&amb_err);
    let mut aps = Vec::new();
    for class in ObjectClass::ALL {
        let per: Vec<EvalRecord> = records.iter().map(|r| r.for_class(class.id())).collect();
        match ap_r40(&per, bev_iou, TOY_IOU) {
            Ok(ap) => aps.push(ap),
            Err(Error::NoGroundTruth) => {}
            Err(e) => return Err(e),
        }
    }
    report.toy_ap = mean(&aps);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy3d::scene::SceneConfig;
    use crate::toy3d::train::init_model;
    use crate::toy3d::Variant;

    fn val() -> Dataset {
        let config = SceneConfig { objects: (2, 3), ..SceneConfig::default() };
        Dataset::train_val(&config, 0, 12, 5, 1).unwrap().1
    }

    #[test]
    fn oracle_scores_perfectly() {
        let ds = val();
        let r = eval_toy(&OraclePredictor, &ds).unwrap();
        assert_eq!(r.depth_mae, Some(0.0));
        assert_eq!(r.dims_mae, Some(0.0));
        assert!(r.n_ambiguous > 0);
        assert_eq!(r.ambiguous_depth_mae, Some(0.0));
        assert_eq!(r.toy_ap, Some(1.0));
        assert_eq!(r.detections.len(), r.n_objects);
    }

    #[test]
    fn empty_dataset_gives_empty_report() {
        let r = eval_toy(&OraclePredictor, &Dataset::empty(SceneConfig::default())).unwrap();
        assert_eq!(r.n_frames, 0);
        assert_eq!(r.depth_mae, None);
        assert_eq!(r.toy_ap, None);
        assert!(r.detections.is_empty());
    }

    #[test]
    fn model_evaluation_is_deterministic() {
        let ds = val();
        let m = init_model(Variant::Yolobu, &ds.config, 8, 1).unwrap();
        let a = eval_toy(&m, &ds).unwrap();
        let b = eval_toy(&m, &ds).unwrap();
        assert_eq!(a, b);
        assert!(a.depth_mae.unwrap() > 0.0);
        assert!(a.detections.iter().all(|d| (0.0..=1.0).contains(&d.confidence)));
    }
}
