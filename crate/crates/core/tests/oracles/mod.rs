//! Slow, independent reference implementations used by the integration and
//! acceptance tests.
#![allow(dead_code)]

use bottomup::metrics::{Box3D, Detection, EvalRecord, GroundTruth, RECALL_POINTS};
use bottomup::rrcs::ScanDirection;
use bottomup::{FeatureMap, Tensor};
use rand::Rng;

// ---------------------------------------------------------------- scans

/// Per-column running sum written as plain loops.
pub fn naive_cumsum(fm: &FeatureMap, dir: ScanDirection) -> FeatureMap {
    let (h, w, c) = fm.dims();
    let mut out = FeatureMap::zeros(h, w, c);
    for j in 0..w {
        for k in 0..c {
            let mut acc = 0.0;
            let rows: Vec<usize> = match dir {
                ScanDirection::BottomUp => (0..h).collect(),
                ScanDirection::UpBottom => (0..h).rev().collect(),
            };
            for i in rows {
                acc += fm.pixel(i, j)[k];
                out.pixel_mut(i, j)[k] = acc;
            }
        }
    }
    out
}

pub fn random_map<R: Rng>(rng: &mut R, max_dim: usize) -> FeatureMap {
    let h = rng.random_range(1..=max_dim);
    let w = rng.random_range(1..=max_dim);
    let c = 2 * rng.random_range(1..=max_dim / 2);
    FeatureMap::new(Tensor::uniform(&[h, w, c], -3.0, 3.0, rng)).unwrap()
}

// ---------------------------------------------------------------- IoU

/// Whether `(x, z)` lies in the footprint. The footprint is the
/// `l × w` rectangle rotated by `yaw` about the vertical axis, length along +x
/// at zero yaw: local coordinates are `R(−yaw)` applied to the offset.
fn in_footprint(b: &Box3D, x: f64, z: f64) -> bool {
    let (dx, dz) = (x - b.center[0], z - b.center[2]);
    let (s, c) = b.yaw.sin_cos();
    let along = c * dx - s * dz;
    let across = s * dx + c * dz;
    along.abs() <= 0.5 * b.dims[2] && across.abs() <= 0.5 * b.dims[1]
}

fn in_box(b: &Box3D, x: f64, y: f64, z: f64) -> bool {
    (y - b.center[1]).abs() <= 0.5 * b.dims[0] && in_footprint(b, x, z)
}

/// Axis-aligned bounds `[x0, x1, y0, y1, z0, z1]` covering both boxes.
fn bounds(a: &Box3D, b: &Box3D) -> [f64; 6] {
    let mut r = [f64::MAX, f64::MIN, f64::MAX, f64::MIN, f64::MAX, f64::MIN];
    for bx in [a, b] {
        let reach = 0.5 * (bx.dims[1].powi(2) + bx.dims[2].powi(2)).sqrt();
        r[0] = r[0].min(bx.center[0] - reach);
        r[1] = r[1].max(bx.center[0] + reach);
        r[2] = r[2].min(bx.center[1] - 0.5 * bx.dims[0]);
        r[3] = r[3].max(bx.center[1] + 0.5 * bx.dims[0]);
        r[4] = r[4].min(bx.center[2] - reach);
        r[5] = r[5].max(bx.center[2] + reach);
    }
    r
}

/// Monte-Carlo BEV IoU from `n` uniform samples over the joint bounding box.
pub fn mc_bev_iou<R: Rng>(a: &Box3D, b: &Box3D, n: usize, rng: &mut R) -> f64 {
    let r = bounds(a, b);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n {
        let x = rng.random_range(r[0]..r[1]);
        let z = rng.random_range(r[4]..r[5]);
        let (ia, ib) = (in_footprint(a, x, z), in_footprint(b, x, z));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

pub fn mc_iou_3d<R: Rng>(a: &Box3D, b: &Box3D, n: usize, rng: &mut R) -> f64 {
    let r = bounds(a, b);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n {
        let x = rng.random_range(r[0]..r[1]);
        let y = rng.random_range(r[2]..r[3]);
        let z = rng.random_range(r[4]..r[5]);
        let (ia, ib) = (in_box(a, x, y, z), in_box(b, x, y, z));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// A box and a perturbed copy, so that most pairs overlap partially.
pub fn random_box_pair<R: Rng>(rng: &mut R) -> (Box3D, Box3D) {
    let a = Box3D::new(
        [rng.random_range(-5.0..5.0), rng.random_range(0.5..2.0), rng.random_range(5.0..40.0)],
        [rng.random_range(1.0..2.5), rng.random_range(1.0..2.5), rng.random_range(2.0..6.0)],
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let b = Box3D::new(
        [
            a.center[0] + rng.random_range(-2.0..2.0),
            a.center[1] + rng.random_range(-0.8..0.8),
            a.center[2] + rng.random_range(-2.0..2.0),
        ],
        [rng.random_range(1.0..2.5), rng.random_range(1.0..2.5), rng.random_range(2.0..6.0)],
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    (a, b)
}

// ---------------------------------------------------------------- AP

/// AP over 40 recall levels by enumerating every score cutoff: for each
/// distinct confidence, the detections at or above it are matched from
/// scratch and the resulting precision/recall point is recorded.
pub fn brute_force_ap<F>(records: &[EvalRecord], iou: F, threshold: f64) -> Option<f64>
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let n_gt = records.iter().flat_map(|r| &r.gts).filter(|g| !g.ignore).count();
    if n_gt == 0 {
        return None;
    }
    let mut cutoffs: Vec<f64> = records.iter().flat_map(|r| &r.detections).map(|d| d.confidence).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();

    let mut points: Vec<(f64, f64)> = Vec::new();
    for &t in &cutoffs {
        // (confidence, frame, index) of kept detections, best first.
        let mut kept: Vec<(f64, usize, usize)> = Vec::new();
        for (f, r) in records.iter().enumerate() {
            for (d, det) in r.detections.iter().enumerate() {
                if det.confidence >= t {
                    kept.push((det.confidence, f, d));
                }
            }
        }
        kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken: Vec<Vec<bool>> = records.iter().map(|r| vec![false; r.gts.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        for &(_, f, d) in &kept {
            let det = &records[f].detections[d];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in records[f].gts.iter().enumerate() {
                let v = iou(&det.box3d, &gt.box3d);
                if !taken[f][g] && v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[f][g] = true;
                    if !records[f].gts[g].ignore {
                        tp += 1;
                    }
                }
                None => fp += 1,
            }
        }
        if tp + fp > 0 {
            points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }

    let mut total = 0.0;
    for k in 1..=RECALL_POINTS {
        let level = k as f64 / RECALL_POINTS as f64;
        let mut best = 0.0f64;
        for &(r, p) in &points {
            if r >= level && p > best {
                best = p;
            }
        }
        total += best;
    }
    Some(total / RECALL_POINTS as f64)
}

fn bx(x: f64) -> Box3D {
    Box3D::new([x, 1.0, 20.0], [1.5, 1.6, 4.0], 0.0)
}

fn gt(x: f64) -> GroundTruth {
    GroundTruth { box3d: bx(x), class_id: 0, ignore: false }
}

fn ignored(x: f64) -> GroundTruth {
    GroundTruth { ignore: true, ..gt(x) }
}

fn det(x: f64, confidence: f64) -> Detection {
    Detection { box3d: bx(x), class_id: 0, confidence }
}

fn frame(gts: Vec<GroundTruth>, detections: Vec<Detection>) -> EvalRecord {
    EvalRecord { gts, detections }
}

/// Hand-built evaluation cases: `(name, frames, IoU threshold)`. Boxes sit
/// on one row spaced 10 m apart, so a detection overlaps at most one object;
/// small x offsets give partial overlaps.
pub fn ap_fixtures() -> Vec<(&'static str, Vec<EvalRecord>, f64)> {
    vec![
        ("perfect", vec![frame(vec![gt(0.0), gt(10.0)], vec![det(0.0, 0.9), det(10.0, 0.8)])], 0.7),
        ("half recall", vec![frame(vec![gt(0.0), gt(10.0)], vec![det(0.0, 0.9)])], 0.7),
        (
            "false positive first",
            vec![frame(vec![gt(0.0)], vec![det(30.0, 0.95), det(0.0, 0.5)])],
            0.7,
        ),
        (
            "duplicate detections",
            vec![frame(vec![gt(0.0), gt(10.0)], vec![det(0.0, 0.9), det(0.1, 0.85), det(10.0, 0.3)])],
            0.7,
        ),
        (
            "tied scores",
            vec![
                frame(vec![gt(0.0), gt(10.0)], vec![det(0.0, 0.6), det(40.0, 0.6)]),
                frame(vec![gt(0.0)], vec![det(0.0, 0.6), det(20.0, 0.2)]),
            ],
            0.7,
        ),
        (
            "ignored ground truth",
            vec![frame(vec![gt(0.0), ignored(10.0)], vec![det(10.0, 0.9), det(0.0, 0.8), det(50.0, 0.7)])],
            0.7,
        ),
        (
            "threshold boundary",
            // 0.8 m shift of a 4 m box: BEV IoU 3.2/4.8 = 2/3, passes 0.5 only.
            vec![frame(vec![gt(0.0), gt(10.0)], vec![det(0.8, 0.9), det(10.0, 0.4)])],
            0.7,
        ),
        (
            "threshold boundary loose",
            vec![frame(vec![gt(0.0), gt(10.0)], vec![det(0.8, 0.9), det(10.0, 0.4)])],
            0.5,
        ),
        (
            "three frames interleaved",
            vec![
                frame(vec![gt(0.0), gt(10.0), gt(20.0)], vec![det(0.0, 0.91), det(25.0, 0.77), det(20.0, 0.33)]),
                frame(vec![gt(0.0)], vec![det(0.0, 0.52), det(30.0, 0.88)]),
                frame(vec![], vec![det(0.0, 0.64)]),
            ],
            0.7,
        ),
        (
            "many false positives",
            vec![frame(
                vec![gt(0.0), gt(10.0), gt(20.0), gt(30.0)],
                (0..12)
                    .map(|k| det(if k % 3 == 0 { 10.0 * (k / 3) as f64 } else { 100.0 + k as f64 * 10.0 }, 1.0 - 0.05 * k as f64))
                    .collect(),
            )],
            0.7,
        ),
    ]
}

// ---------------------------------------------------------------- KITTI

/// Label lines in devkit format, a mix of ground truth (15 fields) and
/// predictions (16 fields, with score).
pub const KITTI_FIXTURES: &[&str] = &[
    "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59",
    "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01",
    "Van 0.32 1 2.07 0.00 191.85 203.74 374.00 2.43 1.91 5.13 -7.27 1.75 9.81 1.45",
    "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10",
    "Cyclist 0.00 3 1.85 1121.90 150.55 1240.00 374.00 1.72 0.50 1.95 4.71 1.53 7.04 2.43",
    "Car 0.00 0 1.55 614.24 181.78 727.31 284.77 1.57 1.73 4.15 1.00 1.75 13.22 1.62 0.93",
    "Car 0.15 2 -1.57 100.50 150.25 180.75 200.00 1.50 1.60 3.90 -8.00 1.70 40.00 -1.78 0.4231",
];
