use serde::{Deserialize, Serialize};

use super::ap::{ap_r40, Detection, EvalRecord, GroundTruth};
use super::geometry::{bev_iou, iou_3d};
use super::kitti::KittiLabel;
use crate::error::Error;

/// Difficulty level filter on 2D box height, occlusion and truncation.
/// Default cutoffs follow the KITTI devkit; a JSON file can override them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    pub name: String,
    pub min_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl Difficulty {
    pub fn kitti_levels() -> Vec<Difficulty> {
        let level = |name: &str, min_height, max_occlusion, max_truncation| Difficulty {
            name: name.into(),
            min_height,
            max_occlusion,
            max_truncation,
        };
        vec![
            level("easy", 40.0, 0, 0.15),
            level("moderate", 25.0, 1, 0.30),
            level("hard", 25.0, 2, 0.50),
        ]
    }

    pub fn admits(&self, label: &KittiLabel) -> bool {
        label.bbox_height() >= self.min_height
            && label.occluded <= self.max_occlusion
            && label.truncated <= self.max_truncation
    }
}

/// IoU threshold used for a KITTI class name: 0.7 for cars, 0.5 otherwise.
pub fn default_iou_threshold(class: &str) -> f64 {
    if class.eq_ignore_ascii_case("car") {
        0.7
    } else {
        0.5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class: String,
    pub difficulty: String,
    /// `None` when the level has no ground truth.
    pub ap_3d: Option<f64>,
    pub ap_bev: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
}

/// Evaluates paired per-frame ground-truth / prediction label lists for one
/// class. Ground truth of that class outside a difficulty level is ignored
/// at that level; other classes are dropped. Predictions without a score
/// count as confidence 1.
pub fn evaluate_frames(
    frames: &[(Vec<KittiLabel>, Vec<KittiLabel>)],
    class: &str,
    iou_threshold: f64,
    levels: &[Difficulty],
) -> Vec<EvalReport> {
    levels
        .iter()
        .map(|level| {
            let records: Vec<EvalRecord> = frames
                .iter()
                .map(|(gt, pred)| EvalRecord {
                    gts: gt
                        .iter()
                        .filter(|l| l.kind == class)
                        .map(|l| GroundTruth {
                            box3d: l.to_box3d(),
                            class_id: 0,
                            ignore: !level.admits(l),
                        })
                        .collect(),
                    detections: pred
                        .iter()
                        .filter(|l| l.kind == class)
                        .map(|l| Detection {
                            box3d: l.to_box3d(),
                            class_id: 0,
                            confidence: l.score.unwrap_or(1.0),
                        })
                        .collect(),
                })
                .collect();
            let n_gt = records.iter().flat_map(|r| &r.gts).filter(|g| !g.ignore).count();
            let n_det = records.iter().map(|r| r.detections.len()).sum();
            let ap = |f: fn(&_, &_) -> f64| match ap_r40(&records, f, iou_threshold) {
                Ok(v) => Some(v),
                Err(Error::NoGroundTruth) => None,
                Err(e) => unreachable!("{e}"),
            };
            EvalReport {
                class: class.to_string(),
                difficulty: level.name.clone(),
                ap_3d: ap(iou_3d),
                ap_bev: ap(bev_iou),
                n_gt,
                n_det,
            }
        })
        .collect()
}
