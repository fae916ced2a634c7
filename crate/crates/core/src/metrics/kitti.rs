//! KITTI object label lines: 15 whitespace-separated fields, 16 with a score.
//!
//! `type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]`

use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::Box3D;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in metres.
    pub dims: [f64; 3],
    /// Bottom-centre `(x, y, z)` in camera coordinates, metres.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

const FIELD_NAMES: [&str; 16] = [
    "type", "truncated", "occluded", "alpha", "left", "top", "right", "bottom", "h", "w", "l", "x", "y", "z",
    "rotation_y", "score",
];

fn number(fields: &[&str], idx: usize) -> Result<f64> {
    fields[idx].parse::<f64>().map_err(|e| Error::Parse {
        field: idx,
        message: format!("{} = {:?}: {e}", FIELD_NAMES[idx], fields[idx]),
    })
}

fn bad(field: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        field,
        message: message.into(),
    }
}

/// Parses one label line. Field indices in errors are 0-based; a wrong field
/// count is reported at the index of the count (15 or 16 expected).
pub fn parse_kitti_label(line: &str) -> Result<KittiLabel> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(bad(fields.len(), format!("expected 15 or 16 fields, found {}", fields.len())));
    }
    let kind = fields[0].to_string();
    let dont_care = kind == "DontCare";
    let truncated = number(&fields, 1)?;
    if !(dont_care || (0.0..=1.0).contains(&truncated)) {
        return Err(bad(1, format!("truncated {truncated} outside [0, 1]")));
    }
    let occluded: i32 = fields[2]
        .parse()
        .map_err(|e| bad(2, format!("occluded = {:?}: {e}", fields[2])))?;
    if !(dont_care || (0..=3).contains(&occluded)) {
        return Err(bad(2, format!("occluded {occluded} outside 0..=3")));
    }
    let mut v = [0.0; 16];
    for (idx, slot) in v.iter_mut().enumerate().take(15).skip(3) {
        *slot = number(&fields, idx)?;
    }
    let bbox = [v[4], v[5], v[6], v[7]];
    if bbox[2] <= bbox[0] {
        return Err(bad(6, "bbox right must exceed left"));
    }
    if bbox[3] <= bbox[1] {
        return Err(bad(7, "bbox bottom must exceed top"));
    }
    let score = if fields.len() == 16 { Some(number(&fields, 15)?) } else { None };
    Ok(KittiLabel {
        kind,
        truncated,
        occluded,
        alpha: v[3],
        bbox,
        dims: [v[8], v[9], v[10]],
        location: [v[11], v[12], v[13]],
        rotation_y: v[14],
        score,
    })
}

/// Parses a whole label file, skipping blank lines. Errors carry the 1-based line number.
pub fn parse_kitti_file(text: &str) -> std::result::Result<Vec<KittiLabel>, (usize, Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_kitti_label(l).map_err(|e| (i + 1, e)))
        .collect()
}

impl KittiLabel {
    pub fn to_box3d(&self) -> Box3D {
        let [h, w, l] = self.dims;
        let [x, y, z] = self.location;
        Box3D::new([x, y - 0.5 * h, z], [h, w, l], self.rotation_y)
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

/// Two decimals when that is exact (the devkit's own precision), otherwise
/// the shortest representation that parses back to the same value.
fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let two = format!("{v:.2}");
    if two.parse::<f64>().is_ok_and(|p| p.to_bits() == v.to_bits()) {
        f.write_str(&two)
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for KittiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.kind)?;
        write_num(f, self.truncated)?;
        write!(f, " {}", self.occluded)?;
        let alpha = [self.alpha];
        let rest = alpha
            .iter()
            .chain(&self.bbox)
            .chain(&self.dims)
            .chain(&self.location)
            .chain(std::iter::once(&self.rotation_y))
            .chain(self.score.as_ref());
        for &v in rest {
            f.write_str(" ")?;
            write_num(f, v)?;
        }
        Ok(())
    }
}
