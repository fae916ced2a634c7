use std::path::{Path, PathBuf};

use bottomup::metrics::{default_iou_threshold, evaluate_frames, parse_kitti_file, Difficulty, EvalReport, KittiLabel};
use serde::Serialize;

use crate::args::EvalArgs;
use crate::{write_artifact, CliError, CliResult};

pub const REPORT_FILE: &str = "eval.json";
pub const DEFAULT_CLASS: &str = "Car";

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub class: String,
    pub iou: f64,
    pub n_frames: usize,
    pub reports: Vec<EvalReport>,
}

fn read_labels(path: &Path) -> CliResult<Vec<KittiLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_kitti_file(&text).map_err(|(line, e)| CliError::Usage(format!("{}:{line}: {e}", path.display())))
}

fn label_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs ground truth with predictions. Two files form one frame; two
/// directories pair files by name, a missing prediction file meaning no
/// detections.
pub fn load_frames(gt: &Path, pred: &Path) -> CliResult<Vec<(Vec<KittiLabel>, Vec<KittiLabel>)>> {
    match (gt.is_dir(), pred.is_dir()) {
        (false, false) => Ok(vec![(read_labels(gt)?, read_labels(pred)?)]),
        (true, true) => label_files(gt)?
            .into_iter()
            .map(|g| {
                let p = pred.join(g.file_name().expect("listed files have names"));
                let preds = if p.exists() { read_labels(&p)? } else { Vec::new() };
                Ok((read_labels(&g)?, preds))
            })
            .collect(),
        _ => Err(CliError::Usage(
            "--labels-gt and --labels-pred must both be files or both be directories".into(),
        )),
    }
}

pub fn evaluate(a: EvalArgs) -> CliResult<EvalOutput> {
    let gt = a.labels_gt.ok_or_else(|| CliError::Usage("--labels-gt is required".into()))?;
    let pred = a.labels_pred.ok_or_else(|| CliError::Usage("--labels-pred is required".into()))?;
    let class = a.class.unwrap_or_else(|| DEFAULT_CLASS.to_string());
    let iou = a.iou.unwrap_or_else(|| default_iou_threshold(&class));
    if !(iou > 0.0 && iou <= 1.0) {
        return Err(CliError::Usage(format!("--iou must be in (0, 1], got {iou}")));
    }
    let frames = load_frames(&gt, &pred)?;
    let reports = evaluate_frames(&frames, &class, iou, &Difficulty::kitti_levels());
    Ok(EvalOutput { class, iou, n_frames: frames.len(), reports })
}

pub fn run(a: EvalArgs, out: &Path) -> CliResult<()> {
    let result = evaluate(a)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into());
    println!("{} @ IoU {} over {} frames", result.class, result.iou, result.n_frames);
    for r in &result.reports {
        println!(
            "{:<9} AP3D {:>6}  APBEV {:>6}  gt {:>4}  det {:>4}",
            r.difficulty,
            fmt(r.ap_3d),
            fmt(r.ap_bev),
            r.n_gt,
            r.n_det
        );
    }
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::Failure(e.to_string()))?;
    let path = write_artifact(out, REPORT_FILE, &(json + "\n"))?;
    println!("-> {}", path.display());
    Ok(())
}
