use serde::{Deserialize, Serialize};

use super::geometry::Box3D;
use crate::error::{Error, Result};

pub const RECALL_POINTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub box3d: Box3D,
    pub class_id: usize,
    /// Ignored boxes (e.g. outside the difficulty level) neither count towards
    /// recall nor turn a detection matched to them into a false positive.
    pub ignore: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub box3d: Box3D,
    pub class_id: usize,
    /// Score in `[0, 1]`.
    pub confidence: f64,
}

/// Ground truth and detections of one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub gts: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
}

impl EvalRecord {
    /// Keeps only the boxes of `class_id`.
    pub fn for_class(&self, class_id: usize) -> EvalRecord {
        EvalRecord {
            gts: self.gts.iter().filter(|g| g.class_id == class_id).copied().collect(),
            detections: self
                .detections
                .iter()
                .filter(|d| d.class_id == class_id)
                .copied()
                .collect(),
        }
    }
}

enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Average precision sampled at recall `1/40, 2/40, …, 1`, each point taking
/// the best precision reached at that recall or beyond.
///
/// Detections are matched greedily across all frames in decreasing confidence
/// (ties broken by frame, then detection index); each detection takes the
/// unmatched ground truth of its frame with the highest IoU at or above
/// `threshold`. Precision/recall points are taken at every distinct
/// confidence, i.e. at each possible score cutoff.
///
/// Returns [`Error::NoGroundTruth`] when no non-ignored ground truth exists.
pub fn ap_r40<F>(records: &[EvalRecord], iou: F, threshold: f64) -> Result<f64>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let n_gt = records
        .iter()
        .flat_map(|r| &r.gts)
        .filter(|g| !g.ignore)
        .count();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }

    let mut order: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(f, r)| (0..r.detections.len()).map(move |d| (f, d)))
        .collect();
    let conf = |&(f, d): &(usize, usize)| records[f].detections[d].confidence;
    order.sort_by(|a, b| conf(b).total_cmp(&conf(a)).then(a.cmp(b)));

    let mut matched: Vec<Vec<bool>> = records.iter().map(|r| vec![false; r.gts.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve: Vec<(usize, usize)> = Vec::new();
    for (k, &(f, d)) in order.iter().enumerate() {
        let det = &records[f].detections[d];
        match assign(&records[f], &mut matched[f], det, &iou, threshold) {
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
            Outcome::Ignored => {}
        }
        let cutoff_ends = order.get(k + 1).is_none_or(|next| conf(next) != det.confidence);
        if cutoff_ends && tp + fp > 0 {
            curve.push((tp, tp + fp));
        }
    }

    let points: Vec<(f64, f64)> = curve
        .iter()
        .map(|&(tp, n)| (tp as f64 / n_gt as f64, tp as f64 / n as f64))
        .collect();
    Ok(interpolate_r40(&points))
}

fn assign<F>(record: &EvalRecord, matched: &mut [bool], det: &Detection, iou: &F, threshold: f64) -> Outcome
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for (g, gt) in record.gts.iter().enumerate() {
        if matched[g] {
            continue;
        }
        let v = iou(&det.box3d, &gt.box3d);
        if v >= threshold && best.is_none_or(|(_, b)| v > b) {
            best = Some((g, v));
        }
    }
    match best {
        Some((g, _)) => {
            matched[g] = true;
            if record.gts[g].ignore {
                Outcome::Ignored
            } else {
                Outcome::TruePositive
            }
        }
        None => Outcome::FalsePositive,
    }
}

/// `(recall, precision)` points → mean over the 40 recall levels of the
/// maximum precision at recall ≥ level (0 when unreached).
fn interpolate_r40(points: &[(f64, f64)]) -> f64 {
    let total: f64 = (1..=RECALL_POINTS)
        .map(|k| {
            let level = k as f64 / RECALL_POINTS as f64;
            points
                .iter()
                .filter(|(r, _)| *r >= level)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    total / RECALL_POINTS as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::geometry::bev_iou;

    fn bx(x: f64) -> Box3D {
        Box3D::new([x, 0.0, 10.0], [1.5, 1.6, 4.0], 0.0)
    }

    fn gt(x: f64) -> GroundTruth {
        GroundTruth { box3d: bx(x), class_id: 0, ignore: false }
    }

    fn det(x: f64, confidence: f64) -> Detection {
        Detection { box3d: bx(x), class_id: 0, confidence }
    }

    #[test]
    fn single_match_is_perfect() {
        let r = EvalRecord { gts: vec![gt(0.0)], detections: vec![det(0.05, 0.9)] };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn no_detections_is_zero() {
        let r = EvalRecord { gts: vec![gt(0.0), gt(5.0)], detections: vec![] };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let r = EvalRecord { gts: vec![], detections: vec![det(0.0, 0.5)] };
        assert!(matches!(ap_r40(&[r], bev_iou, 0.7), Err(Error::NoGroundTruth)));
        let r = EvalRecord {
            gts: vec![GroundTruth { ignore: true, ..gt(0.0) }],
            detections: vec![],
        };
        assert!(matches!(ap_r40(&[r], bev_iou, 0.7), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn half_recall_at_full_precision() {
        let r = EvalRecord { gts: vec![gt(0.0), gt(10.0)], detections: vec![det(0.0, 0.9)] };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 0.5);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        // second detection on the same object, lower confidence
        let r = EvalRecord { gts: vec![gt(0.0)], detections: vec![det(0.0, 0.9), det(0.01, 0.8)] };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 1.0);
        let r = EvalRecord { gts: vec![gt(0.0)], detections: vec![det(0.0, 0.8), det(30.0, 0.9)] };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 0.5);
    }

    #[test]
    fn matched_to_ignored_gt_is_not_a_false_positive() {
        let r = EvalRecord {
            gts: vec![gt(0.0), GroundTruth { ignore: true, ..gt(20.0) }],
            detections: vec![det(20.0, 0.95), det(0.0, 0.9)],
        };
        assert_eq!(ap_r40(&[r], bev_iou, 0.7).unwrap(), 1.0);
    }
}
