use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Oriented 3D box in camera coordinates (x right, y down, z forward).
/// `center` is the geometric centre; `dims` is `(h, w, l)`; `yaw` rotates
/// about the vertical axis, with the length axis along +x at `yaw = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

type Point = [f64; 2];

const DEDUP_EPS: f64 = 1e-12;

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self { center, dims, yaw }
    }

    pub fn height(&self) -> f64 {
        self.dims[0]
    }

    pub fn bev_area(&self) -> f64 {
        self.dims[1] * self.dims[2]
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn is_degenerate(&self) -> bool {
        !(self.dims.iter().all(|&d| d > 0.0 && d.is_finite()))
    }

    /// Vertical extent `[top, bottom]` along y.
    fn vertical_range(&self) -> (f64, f64) {
        let half = 0.5 * self.dims[0];
        (self.center[1] - half, self.center[1] + half)
    }

    fn total_cmp(&self, other: &Box3D) -> Ordering {
        let a = self.center.iter().chain(&self.dims).chain(std::iter::once(&self.yaw));
        let b = other.center.iter().chain(&other.dims).chain(std::iter::once(&other.yaw));
        a.zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Ground-plane footprint as `(x, z)` corners in counter-clockwise order.
pub fn bev_corners(b: &Box3D) -> [Point; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (0.5 * b.dims[2], 0.5 * b.dims[1]);
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    let mut pts = local.map(|[x, z]| [b.center[0] + c * x + s * z, b.center[2] - s * x + c * z]);
    if signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    pts
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Shoelace area (unsigned).
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(poly).abs()
}

/// Sutherland–Hodgman: clips `subject` against the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.len() < 3 {
            return Vec::new();
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        out = clip_half_plane(&out, a, b);
        dedup(&mut out);
    }
    if out.len() < 3 {
        Vec::new()
    } else {
        out
    }
}

/// Keeps the part of `poly` on the left of the directed edge `a → b`.
fn clip_half_plane(poly: &[Point], a: Point, b: Point) -> Vec<Point> {
    let side = |p: Point| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (s, e) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ds, de) = (side(s), side(e));
        let (s_in, e_in) = (ds >= 0.0, de >= 0.0);
        if s_in != e_in {
            let t = ds / (ds - de);
            out.push([s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]);
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

fn dedup(poly: &mut Vec<Point>) {
    let close = |p: &Point, q: &Point| (p[0] - q[0]).abs() <= DEDUP_EPS && (p[1] - q[1]).abs() <= DEDUP_EPS;
    poly.dedup_by(|p, q| close(p, q));
    while poly.len() > 1 && close(&poly[0], &poly[poly.len() - 1]) {
        poly.pop();
    }
}

/// Area of the overlap of two footprints. Argument order does not affect the
/// result bitwise: the pair is put into a canonical order first.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let (first, second) = if a.total_cmp(b).is_le() { (a, b) } else { (b, a) };
    polygon_area(&clip_convex(&bev_corners(first), &bev_corners(second)))
}

/// Bird's-eye-view IoU of the yaw-rotated footprints. Degenerate boxes give 0.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint overlap times vertical overlap over the union of volumes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    let (at, ab) = a.vertical_range();
    let (bt, bb) = b.vertical_range();
    let overlap = (ab.min(bb) - at.max(bt)).max(0.0);
    if overlap == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn unit(x: f64, z: f64, yaw: f64) -> Box3D {
        Box3D::new([x, 0.0, z], [1.0, 1.0, 1.0], yaw)
    }

    #[test]
    fn identical_boxes() {
        let b = Box3D::new([1.0, 2.0, 10.0], [1.5, 1.6, 3.9], 0.3);
        assert!((bev_iou(&b, &b) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_offset_squares() {
        let iou = bev_iou(&unit(0.0, 0.0, 0.0), &unit(0.5, 0.0, 0.0));
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn square_against_rotated_square() {
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let want = inter / (2.0 - inter);
        let got = bev_iou(&unit(0.0, 0.0, 0.0), &unit(0.0, 0.0, FRAC_PI_4));
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn disjoint_heights() {
        let a = Box3D::new([0.0, 0.0, 0.0], [1.0, 2.0, 2.0], 0.0);
        let b = Box3D::new([0.0, 5.0, 0.0], [1.0, 2.0, 2.0], 0.0);
        assert!(bev_iou(&a, &b) > 0.99);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn degenerate_is_zero() {
        let a = unit(0.0, 0.0, 0.0);
        let b = Box3D::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0], 0.0);
        assert_eq!(bev_iou(&a, &b), 0.0);
        assert_eq!(iou_3d(&b, &a), 0.0);
    }

    #[test]
    fn contained_box() {
        let big = Box3D::new([0.0, 0.0, 0.0], [2.0, 4.0, 4.0], 0.2);
        let small = Box3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 1.1);
        assert!((bev_iou(&big, &small) - 1.0 / 16.0).abs() < 1e-12);
        assert!((iou_3d(&big, &small) - 1.0 / 32.0).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (-3.0f64..3.0, -1.0f64..1.0, -3.0f64..3.0, 0.3f64..3.0, 0.3f64..3.0, 0.3f64..4.0, -3.2f64..3.2)
            .prop_map(|(x, y, z, h, w, l, yaw)| Box3D::new([x, y, z], [h, w, l], yaw))
    }

    proptest! {
        #[test]
        fn symmetric_exactly(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(bev_iou(&a, &b).to_bits(), bev_iou(&b, &a).to_bits());
            prop_assert_eq!(iou_3d(&a, &b).to_bits(), iou_3d(&b, &a).to_bits());
        }

        #[test]
        fn invariant_under_common_rotation(a in arb_box(), b in arb_box(), theta in -3.2f64..3.2) {
            let rot = |bx: &Box3D| {
                let (s, c) = theta.sin_cos();
                let [x, y, z] = bx.center;
                // rotating the frame by θ about y: yaw advances by θ
                Box3D::new([c * x + s * z, y, -s * x + c * z], bx.dims, bx.yaw + theta)
            };
            prop_assert!((bev_iou(&a, &b) - bev_iou(&rot(&a), &rot(&b))).abs() < 1e-9);
        }

        #[test]
        fn invariant_under_scaling(a in arb_box(), b in arb_box(), s in 0.1f64..10.0) {
            let sc = |bx: &Box3D| Box3D::new(bx.center.map(|v| v * s), bx.dims.map(|v| v * s), bx.yaw);
            prop_assert!((bev_iou(&a, &b) - bev_iou(&sc(&a), &sc(&b))).abs() < 1e-9);
            prop_assert!((iou_3d(&a, &b) - iou_3d(&sc(&a), &sc(&b))).abs() < 1e-9);
        }

        #[test]
        fn in_unit_interval(a in arb_box(), b in arb_box()) {
            let v = bev_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
