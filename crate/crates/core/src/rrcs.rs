//! Row-based reverse cumulative sum and the full position-aware block.
//!
//! With row 0 at the bottom of the image, the bottom-up scan gives each pixel
//! the running sum of the (attention-weighted) pixels at or below it in its
//! column. The running sum is divided by the 1-based scan position, projected
//! by a 1×1 convolution and added back onto the backbone feature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cca::{self, AttentionWeights, ColumnQueries, KeyEncoder, KeyEncoderVars};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::graph::{DiffGraph, Var};
use crate::ops;
use crate::posenc::PositionalEncoding;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanDirection {
    /// Accumulate from the bottom row upward.
    BottomUp,
    /// Accumulate from the top row downward.
    UpBottom,
}

impl ScanDirection {
    /// 1-based position of `row` along the scan.
    pub fn position(self, row: usize, height: usize) -> usize {
        match self {
            ScanDirection::BottomUp => row + 1,
            ScanDirection::UpBottom => height - row,
        }
    }

    fn rows(self, height: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            ScanDirection::BottomUp => Box::new(0..height),
            ScanDirection::UpBottom => Box::new((0..height).rev()),
        }
    }

    fn reversed(self) -> Self {
        match self {
            ScanDirection::BottomUp => ScanDirection::UpBottom,
            ScanDirection::UpBottom => ScanDirection::BottomUp,
        }
    }
}

/// 1×1 convolution `φ` applied to the normalised scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Projection {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[channels, channels], -bound, bound, rng),
            bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[channels, channels]),
            bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            weight: Tensor::identity(channels),
            bias: Tensor::zeros(&[channels]),
        }
    }

    pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let c = x.channels();
        if self.weight.shape() != [c, c] || self.bias.shape() != [c] {
            return Err(Error::shape("projection", x.tensor().shape(), self.weight.shape()));
        }
        FeatureMap::new(ops::channel_linear(x.tensor(), &self.weight, &self.bias)?)
    }
}

/// Running column sum along `dir`; `out[i] = Σ in[k]` over the rows `k`
/// scanned up to and including `i`.
pub fn vertical_cumsum(features: &FeatureMap, dir: ScanDirection) -> FeatureMap {
    FeatureMap::new(cumsum_rows(features.tensor(), dir)).expect("rank 3")
}

/// Divides every row by its 1-based position along the scan.
pub fn normalize_rows(scanned: &FeatureMap, dir: ScanDirection) -> FeatureMap {
    FeatureMap::new(scale_rows(scanned.tensor(), dir)).expect("rank 3")
}

/// `F_p = F_b + φ(F̂_r)`.
pub fn fuse(backbone: &FeatureMap, scan: &FeatureMap, phi: &Projection) -> Result<FeatureMap> {
    backbone.expect_same_dims(scan, "fuse")?;
    let projected = phi.apply(scan)?;
    FeatureMap::new(backbone.tensor().add(projected.tensor())?)
}

pub(crate) fn cumsum_rows(x: &Tensor, dir: ScanDirection) -> Tensor {
    let (h, w, c) = x.dims3();
    let stride = w * c;
    let src = x.data();
    let mut out = vec![0.0; h * stride];
    let mut running = vec![0.0; stride];
    for i in dir.rows(h) {
        let row = &src[i * stride..(i + 1) * stride];
        for (acc, v) in running.iter_mut().zip(row) {
            *acc += v;
        }
        out[i * stride..(i + 1) * stride].copy_from_slice(&running);
    }
    Tensor::from_parts(vec![h, w, c], out)
}

pub(crate) fn scale_rows(x: &Tensor, dir: ScanDirection) -> Tensor {
    let (h, w, c) = x.dims3();
    let stride = w * c;
    let mut out = x.data().to_vec();
    for (i, row) in out.chunks_mut(stride).enumerate() {
        let n = dir.position(i, h) as f64;
        for v in row {
            *v /= n;
        }
    }
    Tensor::from_parts(vec![h, w, c], out)
}

pub fn vertical_cumsum_var(g: &mut DiffGraph, x: Var, dir: ScanDirection) -> Result<Var> {
    g.value(x).expect_rank(3, "vertical_cumsum")?;
    let value = cumsum_rows(g.value(x), dir);
    // The adjoint of an inclusive scan is the inclusive scan in the other direction.
    Ok(g.custom(value, &[x], Box::new(move |args| vec![Some(cumsum_rows(args.grad, dir.reversed()))])))
}

pub fn normalize_rows_var(g: &mut DiffGraph, x: Var, dir: ScanDirection) -> Result<Var> {
    g.value(x).expect_rank(3, "normalize_rows")?;
    let value = scale_rows(g.value(x), dir);
    Ok(g.custom(value, &[x], Box::new(move |args| vec![Some(scale_rows(args.grad, dir))])))
}

/// How the block forms attention weights before the scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// One query per column, softmax within each column.
    Column,
    /// One query for the whole map, softmax over all pixels.
    Global,
}

/// Learnable tensors of the block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub encoder: KeyEncoder,
    /// `W×C` for column attention, `1×C` for global attention.
    pub queries: ColumnQueries,
    pub phi: Projection,
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(width: usize, channels: usize, mode: AttentionMode, rng: &mut R) -> Self {
        let encoder = KeyEncoder::init(channels, rng);
        let rows = match mode {
            AttentionMode::Column => width,
            AttentionMode::Global => 1,
        };
        let queries = ColumnQueries::init(rows, channels, rng);
        let phi = Projection::init(channels, rng);
        Self { encoder, queries, phi }
    }
}

/// Attention weights the block would use for `backbone`.
pub fn block_attention(
    backbone: &FeatureMap,
    pe: &PositionalEncoding,
    params: &BlockParams,
    mode: AttentionMode,
) -> Result<AttentionWeights> {
    let keys = cca::encode_keys(backbone, pe, &params.encoder)?;
    match mode {
        AttentionMode::Column => cca::column_attention(&keys, &params.queries),
        AttentionMode::Global => {
            let q = params.queries.tensor();
            let c = q.shape()[1];
            if q.shape()[0] != 1 {
                return Err(Error::shape("global_attention", q.shape(), &[1, c]));
            }
            cca::global_attention(&keys, &q.reshape(&[c])?)
        }
    }
}

/// Scan, normalise and fuse with externally supplied attention weights.
pub fn block_with_weights(
    backbone: &FeatureMap,
    weights: &AttentionWeights,
    phi: &Projection,
    dir: ScanDirection,
) -> Result<FeatureMap> {
    let reweighted = cca::apply_weights(backbone, weights)?;
    let scan = normalize_rows(&vertical_cumsum(&reweighted, dir), dir);
    fuse(backbone, &scan, phi)
}

/// Full position-aware block with column attention and a bottom-up scan:
/// `F_p = F_b + φ(norm(scan(W ⊙ F_b)))`.
pub fn yolobu_block(backbone: &FeatureMap, pe: &PositionalEncoding, params: &BlockParams) -> Result<FeatureMap> {
    let weights = block_attention(backbone, pe, params, AttentionMode::Column)?;
    block_with_weights(backbone, &weights, &params.phi, ScanDirection::BottomUp)
}

/// Tape handles for [`BlockParams`].
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub encoder: KeyEncoderVars,
    pub queries: Var,
    pub phi_weight: Var,
    pub phi_bias: Var,
}

impl BlockVars {
    pub fn params(g: &mut DiffGraph, p: &BlockParams) -> Self {
        Self {
            encoder: KeyEncoderVars::params(g, &p.encoder),
            queries: g.param(p.queries.tensor().clone()),
            phi_weight: g.param(p.phi.weight.clone()),
            phi_bias: g.param(p.phi.bias.clone()),
        }
    }
}

/// Which stages of the block are active. Turning attention off feeds the raw
/// backbone into the scan; turning the scan off projects the re-weighted map
/// directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub attention: Option<AttentionMode>,
    pub scan: Option<ScanDirection>,
}

impl BlockConfig {
    pub const FULL: BlockConfig = BlockConfig {
        attention: Some(AttentionMode::Column),
        scan: Some(ScanDirection::BottomUp),
    };
}

/// Tape version of the block under `config`.
pub fn block_var(
    g: &mut DiffGraph,
    backbone: Var,
    pe: &PositionalEncoding,
    vars: &BlockVars,
    config: BlockConfig,
) -> Result<Var> {
    block_var_scaled(g, backbone, pe, vars, config, 1.0)
}

/// [`block_var`] with the attention weights multiplied by a constant
/// `weight_gain` before re-weighting.
pub fn block_var_scaled(
    g: &mut DiffGraph,
    backbone: Var,
    pe: &PositionalEncoding,
    vars: &BlockVars,
    config: BlockConfig,
    weight_gain: f64,
) -> Result<Var> {
    let mut x = backbone;
    if let Some(mode) = config.attention {
        let keys = cca::encode_keys_var(g, backbone, pe, &vars.encoder)?;
        let weights = match mode {
            AttentionMode::Column => cca::column_attention_var(g, keys, vars.queries)?,
            AttentionMode::Global => {
                let c = g.value(vars.queries).numel();
                let q = g.reshape(vars.queries, &[c])?;
                cca::global_attention_var(g, keys, q)?
            }
        };
        let weights = if weight_gain == 1.0 { weights } else { g.scale(weights, weight_gain) };
        x = cca::apply_weights_var(g, backbone, weights)?;
    }
    if let Some(dir) = config.scan {
        let scanned = vertical_cumsum_var(g, x, dir)?;
        x = normalize_rows_var(g, scanned, dir)?;
    }
    let projected = g.channel_linear(x, vars.phi_weight, vars.phi_bias)?;
    g.add(backbone, projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check_many;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(Tensor::uniform(&[h, w, c], -2.0, 2.0, &mut rng)).unwrap()
    }

    /// O(H²) reference: re-sum every prefix from scratch.
    fn naive_scan(x: &FeatureMap) -> FeatureMap {
        let (h, w, c) = x.dims();
        let mut out = FeatureMap::zeros(h, w, c);
        for j in 0..w {
            for i in 0..h {
                for ch in 0..c {
                    let mut s = 0.0;
                    for k in 0..=i {
                        s += x.pixel(k, j)[ch];
                    }
                    out.pixel_mut(i, j)[ch] = s;
                }
            }
        }
        out
    }

    fn column(values: &[f64]) -> FeatureMap {
        FeatureMap::new(Tensor::new(&[values.len(), 1, 1], values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn bottom_up_example() {
        let out = vertical_cumsum(&column(&[1.0, 2.0, 3.0]), ScanDirection::BottomUp);
        assert_eq!(out.tensor().data(), &[1.0, 3.0, 6.0]);
        let norm = normalize_rows(&out, ScanDirection::BottomUp);
        assert_eq!(norm.tensor().data(), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn zeros_stay_zero() {
        let out = vertical_cumsum(&FeatureMap::zeros(4, 3, 2), ScanDirection::BottomUp);
        assert!(out.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_scan_bitwise() {
        let x = random_map(6, 4, 3, 1);
        assert_eq!(vertical_cumsum(&x, ScanDirection::BottomUp), naive_scan(&x));
    }

    #[test]
    fn up_bottom_is_reversed_bottom_up() {
        let x = random_map(7, 3, 2, 2);
        let direct = vertical_cumsum(&x, ScanDirection::UpBottom);
        let via = vertical_cumsum(&x.flip_rows(), ScanDirection::BottomUp).flip_rows();
        assert_eq!(direct, via);
        let direct = normalize_rows(&direct, ScanDirection::UpBottom);
        let via = normalize_rows(&via.flip_rows(), ScanDirection::BottomUp).flip_rows();
        assert_eq!(direct, via);
    }

    #[test]
    fn ones_normalise_to_ones() {
        let x = FeatureMap::new(Tensor::ones(&[9, 2, 3])).unwrap();
        for dir in [ScanDirection::BottomUp, ScanDirection::UpBottom] {
            let n = normalize_rows(&vertical_cumsum(&x, dir), dir);
            assert_eq!(&n, &x);
        }
    }

    #[test]
    fn normalised_scan_bounded_by_input_max() {
        let x = random_map(30, 3, 2, 3);
        let bound = x.tensor().max_abs();
        let n = normalize_rows(&vertical_cumsum(&x, ScanDirection::BottomUp), ScanDirection::BottomUp);
        assert!(n.tensor().max_abs() <= bound + 1e-12);
    }

    #[test]
    fn fuse_cases() {
        let fb = random_map(3, 2, 4, 4);
        let scan = random_map(3, 2, 4, 5);
        assert_eq!(fuse(&fb, &scan, &Projection::zeros(4)).unwrap(), fb);
        assert_eq!(fuse(&fb, &FeatureMap::zeros(3, 2, 4), &Projection::identity(4)).unwrap(), fb);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = Projection::init(4, &mut rng);
        let fp = fuse(&fb, &scan, &phi).unwrap();
        let diff = fp.tensor().sub(fb.tensor()).unwrap();
        let proj = phi.apply(&scan).unwrap();
        for (d, p) in diff.data().iter().zip(proj.tensor().data()) {
            assert!((d - p).abs() < 1e-12);
        }
        assert!(fuse(&fb, &FeatureMap::zeros(2, 2, 4), &phi).is_err());
        assert!(fuse(&fb, &scan, &Projection::zeros(3)).is_err());
    }

    #[test]
    fn zero_projection_block_is_identity() {
        let fb = random_map(5, 4, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = BlockParams::init(4, 6, AttentionMode::Column, &mut rng);
        params.phi = Projection::zeros(6);
        let pe = PositionalEncoding::new(5, 6).unwrap();
        assert_eq!(yolobu_block(&fb, &pe, &params).unwrap(), fb);
    }

    #[test]
    fn top_row_reaches_lower_rows_only_through_attention() {
        let (h, w, c) = (6, 4, 4);
        let fb = random_map(h, w, c, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = BlockParams::init(w, c, AttentionMode::Column, &mut rng);
        let pe = PositionalEncoding::new(h, c).unwrap();
        let mut bumped = fb.clone();
        for v in bumped.pixel_mut(h - 1, 2) {
            *v += 1.5;
        }
        // attention frozen at the unperturbed weights: rows below are untouched
        let frozen = block_attention(&fb, &pe, &params, AttentionMode::Column).unwrap();
        let a = block_with_weights(&fb, &frozen, &params.phi, ScanDirection::BottomUp).unwrap();
        let b = block_with_weights(&bumped, &frozen, &params.phi, ScanDirection::BottomUp).unwrap();
        for i in 0..h - 1 {
            for j in 0..w {
                assert_eq!(a.pixel(i, j), b.pixel(i, j));
            }
        }
        // live attention: the column's softmax renormalises, other columns are untouched
        let a = yolobu_block(&fb, &pe, &params).unwrap();
        let b = yolobu_block(&bumped, &pe, &params).unwrap();
        assert!((0..h - 1).any(|i| a.pixel(i, 2) != b.pixel(i, 2)));
        for i in 0..h {
            for j in [0, 1, 3] {
                assert_eq!(a.pixel(i, j), b.pixel(i, j));
            }
        }
    }

    #[test]
    fn eager_and_tape_blocks_agree() {
        let fb = random_map(5, 3, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = BlockParams::init(3, 4, AttentionMode::Column, &mut rng);
        let pe = PositionalEncoding::new(5, 4).unwrap();
        let eager = yolobu_block(&fb, &pe, &params).unwrap();
        let mut g = DiffGraph::new();
        let x = g.constant(fb.tensor().clone());
        let vars = BlockVars::params(&mut g, &params);
        let out = block_var(&mut g, x, &pe, &vars, BlockConfig::FULL).unwrap();
        for (a, b) in g.value(out).data().iter().zip(eager.tensor().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_gradients() {
        for dir in [ScanDirection::BottomUp, ScanDirection::UpBottom] {
            let x = random_map(5, 3, 2, 13).into_tensor();
            let probe = random_map(5, 3, 2, 14).into_tensor();
            let rep = finite_diff_check_many(
                |g, v| {
                    let s = vertical_cumsum_var(g, v[0], dir)?;
                    let n = normalize_rows_var(g, s, dir)?;
                    let p = g.constant(probe.clone());
                    let m = g.mul(n, p)?;
                    Ok(g.sum(m))
                },
                &[x],
                1e-5,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        }
    }

    proptest! {
        #[test]
        fn scan_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let x = random_map(6, 3, 2, seed);
            let y = random_map(6, 3, 2, seed.wrapping_add(1));
            let combo = FeatureMap::new(x.tensor().scale(a).add(&y.tensor().scale(b)).unwrap()).unwrap();
            let lhs = vertical_cumsum(&combo, ScanDirection::BottomUp);
            let rhs = vertical_cumsum(&x, ScanDirection::BottomUp).tensor().scale(a)
                .add(&vertical_cumsum(&y, ScanDirection::BottomUp).tensor().scale(b)).unwrap();
            for (l, r) in lhs.tensor().data().iter().zip(rhs.data()) {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }

        #[test]
        fn zeroing_rows_above_leaves_lower_rows(seed in any::<u64>(), cut in 0usize..6) {
            let x = random_map(6, 3, 2, seed);
            let mut z = x.clone();
            for i in cut + 1..6 {
                for j in 0..3 {
                    z.pixel_mut(i, j).fill(0.0);
                }
            }
            let dir = ScanDirection::BottomUp;
            let a = normalize_rows(&vertical_cumsum(&x, dir), dir);
            let b = normalize_rows(&vertical_cumsum(&z, dir), dir);
            for i in 0..=cut {
                for j in 0..3 {
                    prop_assert_eq!(a.pixel(i, j), b.pixel(i, j));
                }
            }
        }
    }
}
