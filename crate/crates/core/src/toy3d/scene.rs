//! Procedural street scenes rendered into appearance feature grids.
//!
//! Every pixel gets a feature vector describing what it shows: road below the
//! horizon, sky or clutter above it, or an object. Object appearance depends on
//! class and heading only, never on physical size, so two objects of the same
//! class and heading at the same depth look identical and differ only in the
//! extent of their 2D footprint.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::metrics::Box3D;
use crate::tensor::Tensor;

pub const CH_GROUND: usize = 0;
pub const CH_SKY: usize = 1;
pub const CH_OBJECT: usize = 2;
/// One-hot class, [`NUM_CLASSES`] channels.
pub const CH_CLASS: usize = 3;
/// `sin(yaw)`, `cos(yaw)`.
pub const CH_YAW: usize = 5;
/// Per-class surface pattern, [`PATTERN_LEN`] channels.
pub const CH_PATTERN: usize = 7;
pub const PATTERN_LEN: usize = 4;
/// Texture noise on road, sky and clutter from here to the last channel.
pub const CH_NOISE: usize = 11;
pub const MIN_CHANNELS: usize = 12;
pub const NUM_CLASSES: usize = 2;

const NOISE_SALT: u64 = 0x6e6f_6973_655f_7478;
const PLACEMENT_TRIES: usize = 64;
/// Minimum gap in pixels between the column spans of two objects.
const COLUMN_GAP: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Van,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [ObjectClass::Car, ObjectClass::Van];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Van => "Van",
        }
    }

    /// `(min, max)` for height, width and length in metres.
    pub fn dim_ranges(self) -> [(f64, f64); 3] {
        match self {
            ObjectClass::Car => [(1.3, 1.9), (1.5, 1.9), (3.4, 4.6)],
            ObjectClass::Van => [(1.8, 2.4), (1.8, 2.1), (4.4, 5.4)],
        }
    }

    fn pattern(self) -> [f64; PATTERN_LEN] {
        match self {
            ObjectClass::Car => [0.8, -0.4, 0.3, 0.6],
            ObjectClass::Van => [-0.5, 0.7, 0.9, -0.2],
        }
    }
}

/// A box standing on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Lateral offset in metres, positive to the right.
    pub x: f64,
    /// Depth in metres.
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub class: ObjectClass,
}

impl SceneObject {
    pub fn validate(&self) -> Result<()> {
        let ok = self.z > 0.0 && self.h > 0.0 && self.w > 0.0 && self.l > 0.0;
        if !ok || ![self.x, self.z, self.h, self.w, self.l, self.yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("invalid scene object {self:?}")));
        }
        Ok(())
    }

    /// Metric width of the footprint as seen across the image.
    pub fn lateral_extent(&self) -> f64 {
        self.l * self.yaw.cos().abs() + self.w * self.yaw.sin().abs()
    }

    /// 3D box in camera coordinates (y down, ground at `y = camera_height`).
    pub fn box3d(&self, camera: &CameraModel) -> Box3D {
        Box3D {
            center: [self.x, camera.camera_height - self.h / 2.0, self.z],
            dims: [self.h, self.w, self.l],
            yaw: self.yaw,
        }
    }

    pub fn project(&self, camera: &CameraModel) -> Box2D {
        let bottom = camera.contact_row(self.z);
        let h = camera.pixels(self.h, self.z);
        Box2D {
            u: camera.column(self.x, self.z),
            v: bottom + h / 2.0,
            w: camera.pixels(self.lateral_extent(), self.z),
            h,
        }
    }
}

/// Image box: centre `(u, v)` in bottom-origin pixels plus width and height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn left(&self) -> f64 {
        self.u - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.u + self.w / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.v - self.h / 2.0
    }
    pub fn top(&self) -> f64 {
        self.v + self.h / 2.0
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.left() >= 0.0 && self.bottom() >= 0.0 && self.right() <= width as f64 && self.top() <= height as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub camera: CameraModel,
    /// Inclusive object count range.
    pub objects: (usize, usize),
    /// Depth range in metres, `lo < hi`.
    pub depth: (f64, f64),
    /// Probability that a frame with at least two objects contains a pair of
    /// same-looking objects at equal depth with different sizes.
    pub ambiguous_prob: f64,
    pub noise_std: f64,
    /// Upper bound on the fraction of the band above the horizon covered by
    /// clutter in any column.
    pub clutter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 48,
            channels: 16,
            camera: CameraModel { focal_length: 40.0, u0: 24.0, v0: 20.0, camera_height: 2.0 },
            objects: (1, 3),
            depth: (6.0, 30.0),
            ambiguous_prob: 0.5,
            noise_std: 0.1,
            clutter: 0.8,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return err(format!("empty image grid {}x{}", self.height, self.width));
        }
        if self.channels < MIN_CHANNELS {
            return err(format!("need at least {MIN_CHANNELS} channels, got {}", self.channels));
        }
        self.camera.validate()?;
        let (lo, hi) = self.objects;
        if lo == 0 || lo > hi {
            return err(format!("object count range {lo}..={hi} is empty or inverted"));
        }
        let (zlo, zhi) = self.depth;
        if !(zlo > 0.0 && zlo < zhi && zhi.is_finite()) {
            return err(format!("depth range {zlo}..{zhi} is empty or inverted"));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_prob) {
            return err(format!("ambiguous_prob {} outside [0, 1]", self.ambiguous_prob));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return err(format!("noise_std {} must be non-negative", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return err(format!("clutter {} outside [0, 1]", self.clutter));
        }
        Ok(())
    }
}

/// A rendered frame with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub seed: u64,
    pub camera: CameraModel,
    pub objects: Vec<SceneObject>,
    pub boxes2d: Vec<Box2D>,
    pub truncated: Vec<bool>,
    pub features: FeatureMap,
    /// Object index with the largest coverage of each pixel, row-major.
    owners: Vec<Option<usize>>,
}

impl RenderedFrame {
    pub fn height(&self) -> usize {
        self.features.height()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    pub fn owner(&self, row: usize, col: usize) -> Option<usize> {
        self.owners[row * self.width() + col]
    }

    /// Cell holding the centre of object `i`'s 2D box, if inside the image.
    pub fn center_cell(&self, i: usize) -> Option<(usize, usize)> {
        let b = &self.boxes2d[i];
        let (r, c) = (b.v.floor(), b.u.floor());
        (r >= 0.0 && c >= 0.0 && (r as usize) < self.height() && (c as usize) < self.width())
            .then_some((r as usize, c as usize))
    }

    /// Depth of the road at a pixel not covered by any object.
    pub fn ground_depth(&self, row: usize, col: usize) -> Option<f64> {
        if self.owner(row, col).is_some() {
            return None;
        }
        self.camera.ground_depth(row as f64 + 0.5)
    }

    /// Index pairs of objects with equal class, heading and depth but
    /// different dimensions.
    pub fn ambiguous_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.objects.len() {
            for j in i + 1..self.objects.len() {
                let (a, b) = (&self.objects[i], &self.objects[j]);
                if a.class == b.class && a.yaw == b.yaw && a.z == b.z && (a.h, a.w, a.l) != (b.h, b.w, b.l) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Objects belonging to at least one ambiguous pair.
    pub fn ambiguous_members(&self) -> Vec<usize> {
        let mut m: Vec<usize> = self.ambiguous_pairs().into_iter().flat_map(|(a, b)| [a, b]).collect();
        m.sort_unstable();
        m.dedup();
        m
    }
}

/// Appearance vector of an object.
pub fn object_appearance(class: ObjectClass, yaw: f64, channels: usize) -> Vec<f64> {
    let mut f = vec![0.0; channels];
    f[CH_OBJECT] = 1.0;
    f[CH_CLASS + class.id()] = 1.0;
    f[CH_YAW] = yaw.sin();
    f[CH_YAW + 1] = yaw.cos();
    f[CH_PATTERN..CH_PATTERN + PATTERN_LEN].copy_from_slice(&class.pattern());
    f
}

/// Overlap of `[a, a + 1)` with `[lo, hi)`.
fn overlap(a: f64, lo: f64, hi: f64) -> f64 {
    ((a + 1.0).min(hi) - a.max(lo)).max(0.0)
}

/// Renders `objects` over a background drawn from `seed`. Coverage is
/// anti-aliased: a partially covered pixel blends object and background.
pub fn render(objects: &[SceneObject], camera: &CameraModel, config: &SceneConfig, seed: u64) -> Result<RenderedFrame> {
    config.validate()?;
    camera.validate()?;
    for o in objects {
        o.validate()?;
    }
    let (h, w, c) = (config.height, config.width, config.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SALT);
    let horizon = camera.v0.clamp(0.0, h as f64);
    let band = h as f64 - horizon;
    let clutter: Vec<f64> = (0..w).map(|_| rng.random::<f64>() * config.clutter * band).collect();
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let px = &mut data[(i * w + j) * c..(i * w + j + 1) * c];
            let ground = overlap(i as f64, 0.0, horizon);
            let clutter_cov = overlap(i as f64, horizon, horizon + clutter[j]);
            px[CH_GROUND] = ground;
            px[CH_SKY] = 1.0 - ground - clutter_cov;
            for v in &mut px[CH_NOISE..] {
                *v = noise.sample(&mut rng);
            }
            // Clutter has no indicator channel: it shows up as stronger texture.
            for v in &mut px[CH_NOISE..] {
                *v *= 1.0 + 4.0 * clutter_cov;
            }
        }
    }
    let boxes2d: Vec<Box2D> = objects.iter().map(|o| o.project(camera)).collect();
    let truncated = boxes2d.iter().map(|b| !b.inside(w, h)).collect();
    let mut owners = vec![None; h * w];
    let mut best = vec![0.0f64; h * w];
    let mut order: Vec<usize> = (0..objects.len()).collect();
    // Far to near, so nearer objects are painted last.
    order.sort_by(|&a, &b| objects[b].z.total_cmp(&objects[a].z).then(a.cmp(&b)));
    for idx in order {
        let (o, b) = (&objects[idx], &boxes2d[idx]);
        let look = object_appearance(o.class, o.yaw, c);
        let rows = (b.bottom().floor().max(0.0) as usize)..(b.top().ceil().clamp(0.0, h as f64) as usize);
        let cols = (b.left().floor().max(0.0) as usize)..(b.right().ceil().clamp(0.0, w as f64) as usize);
        for i in rows {
            let cv = overlap(i as f64, b.bottom(), b.top());
            for j in cols.clone() {
                let cov = cv * overlap(j as f64, b.left(), b.right());
                if cov <= 0.0 {
                    continue;
                }
                let px = &mut data[(i * w + j) * c..(i * w + j + 1) * c];
                for (v, a) in px.iter_mut().zip(&look) {
                    *v = cov * a + (1.0 - cov) * *v;
                }
                if cov > best[i * w + j] {
                    best[i * w + j] = cov;
                    owners[i * w + j] = Some(idx);
                }
            }
        }
    }
    let features = FeatureMap::new(Tensor::new(&[h, w, c], data)?)?;
    Ok(RenderedFrame {
        seed,
        camera: *camera,
        objects: objects.to_vec(),
        boxes2d,
        truncated,
        features,
        owners,
    })
}

fn sample_dims(class: ObjectClass, rng: &mut ChaCha8Rng) -> [f64; 3] {
    class.dim_ranges().map(|(lo, hi)| rng.random_range(lo..hi))
}

/// Headings near driving direction, either away from or towards the camera.
fn sample_yaw(rng: &mut ChaCha8Rng) -> f64 {
    let base = if rng.random::<bool>() { PI / 2.0 } else { -PI / 2.0 };
    base + rng.random_range(-0.5..0.5)
}

/// Column span `[left, right)` of an object placed with centre column `u`.
fn span(o: &SceneObject, camera: &CameraModel) -> (f64, f64) {
    let b = o.project(camera);
    (b.left() - COLUMN_GAP, b.right() + COLUMN_GAP)
}

fn fits(spans: &[(f64, f64)], s: (f64, f64)) -> bool {
    spans.iter().all(|&(l, r)| s.1 <= l || s.0 >= r)
}

/// Picks a centre column so the object is fully inside the image and clear of
/// earlier objects. Returns `None` if no free slot was found.
fn place(o: &mut SceneObject, camera: &CameraModel, width: usize, spans: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
    let half = camera.pixels(o.lateral_extent(), o.z) / 2.0;
    let (lo, hi) = (half, width as f64 - half);
    if lo >= hi {
        return None;
    }
    for _ in 0..PLACEMENT_TRIES {
        o.x = camera.lateral(rng.random_range(lo..hi), o.z);
        let s = span(o, camera);
        if fits(spans, s) {
            return Some(s);
        }
    }
    None
}

/// Samples and renders one frame. Deterministic in `seed`.
pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<RenderedFrame> {
    config.validate()?;
    let cam = config.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(config.objects.0..=config.objects.1);
    let pair = n >= 2 && rng.random::<f64>() < config.ambiguous_prob;
    let mut objects = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(n);
    if pair {
        let class = ObjectClass::ALL[rng.random_range(0..NUM_CLASSES)];
        let z = rng.random_range(config.depth.0..config.depth.1);
        let yaw = sample_yaw(&mut rng);
        let first = sample_dims(class, &mut rng);
        let (hlo, hhi) = class.dim_ranges()[0];
        // Heights at least a quarter of the class range apart.
        let mut second = sample_dims(class, &mut rng);
        while (second[0] - first[0]).abs() < 0.25 * (hhi - hlo) {
            second[0] = rng.random_range(hlo..hhi);
        }
        let mut placed = Vec::new();
        for [h, w, l] in [first, second] {
            let mut o = SceneObject { x: 0.0, z, h, w, l, yaw, class };
            if let Some(s) = place(&mut o, &cam, config.width, &spans, &mut rng) {
                spans.push(s);
                placed.push(o);
            }
        }
        // A pair only counts when both members fit.
        if placed.len() == 2 {
            objects.extend(placed);
        } else {
            spans.clear();
        }
    }
    while objects.len() < n {
        let class = ObjectClass::ALL[rng.random_range(0..NUM_CLASSES)];
        let z = rng.random_range(config.depth.0..config.depth.1);
        let yaw = sample_yaw(&mut rng);
        let [h, w, l] = sample_dims(class, &mut rng);
        let mut o = SceneObject { x: 0.0, z, h, w, l, yaw, class };
        match place(&mut o, &cam, config.width, &spans, &mut rng) {
            Some(s) => {
                spans.push(s);
                objects.push(o);
            }
            None => break,
        }
    }
    render(&objects, &cam, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SceneConfig {
        SceneConfig::default()
    }

    #[test]
    fn same_seed_same_frame() {
        let a = generate_scene(7, &cfg()).unwrap();
        let b = generate_scene(7, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(8, &cfg()).unwrap());
    }

    #[test]
    fn object_bottom_edge_is_contact_row() {
        for seed in 0..50 {
            let f = generate_scene(seed, &cfg()).unwrap();
            for (o, b) in f.objects.iter().zip(&f.boxes2d) {
                let contact = f.camera.contact_row(o.z);
                assert!((b.bottom() - contact).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ground_depth_nondecreasing_upward() {
        for seed in 0..20 {
            let f = generate_scene(seed, &cfg()).unwrap();
            for col in 0..f.width() {
                let d: Vec<f64> = (0..f.height()).filter_map(|r| f.ground_depth(r, col)).collect();
                assert!(d.windows(2).all(|p| p[0] <= p[1]));
            }
        }
    }

    #[test]
    fn boxes_inside_or_truncated() {
        for seed in 0..100 {
            let f = generate_scene(seed, &cfg()).unwrap();
            for (b, t) in f.boxes2d.iter().zip(&f.truncated) {
                assert!(b.inside(f.width(), f.height()) || *t);
            }
        }
    }

    #[test]
    fn objects_occupy_disjoint_columns() {
        for seed in 0..100 {
            let f = generate_scene(seed, &cfg()).unwrap();
            let n = f.boxes2d.len();
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (&f.boxes2d[i], &f.boxes2d[j]);
                    assert!(a.right() <= b.left() || b.right() <= a.left());
                }
            }
        }
    }

    #[test]
    fn pairs_appear_at_roughly_the_configured_rate() {
        let config = SceneConfig { objects: (2, 3), ambiguous_prob: 0.5, ..cfg() };
        let hits = (0..400).filter(|&s| !generate_scene(s, &config).unwrap().ambiguous_pairs().is_empty()).count();
        assert!((120..=280).contains(&hits), "{hits}");
        let never = SceneConfig { ambiguous_prob: 0.0, ..config };
        assert!((0..100).all(|s| generate_scene(s, &never).unwrap().ambiguous_pairs().is_empty()));
    }

    #[test]
    fn resized_object_looks_the_same_at_the_same_depth() {
        let config = cfg();
        let cam = config.camera;
        let a = SceneObject { x: 0.0, z: 12.0, h: 1.4, w: 1.7, l: 4.0, yaw: PI / 2.0, class: ObjectClass::Car };
        let b = SceneObject { h: 1.8, ..a };
        let fa = render(&[a], &cam, &config, 3).unwrap();
        let fb = render(&[b], &cam, &config, 3).unwrap();
        let (ra, ca) = fa.center_cell(0).unwrap();
        let (rb, cb) = fb.center_cell(0).unwrap();
        // Fully covered centre pixels carry nothing but the appearance vector.
        assert_eq!(fa.features.pixel(ra, ca), fb.features.pixel(rb, cb));
        assert_eq!(fa.objects[0].z, fb.objects[0].z);
        let ratio = fb.boxes2d[0].h / fa.boxes2d[0].h;
        assert!((ratio - b.h / a.h).abs() < 1e-12);
        assert_ne!(fa.boxes2d[0].h, fb.boxes2d[0].h);
    }

    #[test]
    fn generated_pairs_look_identical() {
        let config = SceneConfig { objects: (2, 2), ambiguous_prob: 1.0, ..cfg() };
        let mut seen = 0;
        for seed in 0..50 {
            let f = generate_scene(seed, &config).unwrap();
            for (i, j) in f.ambiguous_pairs() {
                let (ri, ci) = f.center_cell(i).unwrap();
                let (rj, cj) = f.center_cell(j).unwrap();
                let (pi, pj) = (f.features.pixel(ri, ci), f.features.pixel(rj, cj));
                if pi[CH_OBJECT] == 1.0 && pj[CH_OBJECT] == 1.0 {
                    seen += 1;
                    assert_eq!(pi, pj);
                }
                assert_ne!(f.boxes2d[i].h, f.boxes2d[j].h);
                let want = f.objects[j].h / f.objects[i].h;
                assert!((f.boxes2d[j].h / f.boxes2d[i].h - want).abs() < 1e-12);
            }
        }
        assert!(seen > 40, "{seen}");
    }

    #[test]
    fn anti_aliased_coverage_sums() {
        let config = cfg();
        let o = SceneObject { x: 0.3, z: 9.0, h: 1.5, w: 1.7, l: 4.0, yaw: PI / 2.0 + 0.2, class: ObjectClass::Van };
        let f = render(&[o], &config.camera, &config, 0).unwrap();
        let total: f64 = (0..f.height())
            .flat_map(|i| (0..f.width()).map(move |j| (i, j)))
            .map(|(i, j)| f.features.pixel(i, j)[CH_OBJECT])
            .sum();
        let b = f.boxes2d[0];
        assert!((total - b.w * b.h).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SceneConfig { objects: (3, 2), ..cfg() },
            SceneConfig { objects: (0, 2), ..cfg() },
            SceneConfig { depth: (10.0, 5.0), ..cfg() },
            SceneConfig { depth: (0.0, 5.0), ..cfg() },
            SceneConfig { depth: (5.0, 5.0), ..cfg() },
            SceneConfig { ambiguous_prob: 1.5, ..cfg() },
            SceneConfig { channels: 4, ..cfg() },
            SceneConfig { width: 0, ..cfg() },
        ];
        for c in bad {
            assert!(matches!(generate_scene(0, &c), Err(Error::Config(_))), "{c:?}");
        }
    }
}
