//! Detection evaluation: rotated-box IoU, AP over 40 recall points and the
//! KITTI label format.

mod ap;
mod geometry;
mod kitti;
mod report;

pub use ap::{ap_r40, Detection, EvalRecord, GroundTruth, RECALL_POINTS};
pub use geometry::{bev_corners, bev_intersection_area, bev_iou, clip_convex, iou_3d, polygon_area, Box3D};
pub use kitti::{parse_kitti_file, parse_kitti_label, KittiLabel};
pub use report::{default_iou_threshold, evaluate_frames, Difficulty, EvalReport};
