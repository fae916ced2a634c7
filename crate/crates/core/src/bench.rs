//! Complexity harness: column attention against a full `(HW)²` attention
//! reference, with runtime multiply-accumulate counting and wall-clock scaling.
//!
//! Timed runs are single-threaded.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cca::cca_cost_model;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Column attention weights plus channel re-weighting.
    Cca,
    /// Global self-attention over all `H·W` pixels.
    Quadratic,
}

impl Kernel {
    pub fn cost_model(self, h: usize, w: usize, c: usize) -> u64 {
        match self {
            Kernel::Cca => cca_cost_model(h, w, c),
            Kernel::Quadratic => quadratic_cost_model(h, w, c),
        }
    }
}

/// `(HW)²·C` for the logits plus `(HW)²·C` for the weighted value sum.
pub fn quadratic_cost_model(h: usize, w: usize, c: usize) -> u64 {
    let n = (h * w) as u64;
    2 * n * n * c as u64
}

/// Column attention followed by re-weighting, counting multiply-accumulates
/// into `macs`. Output is the re-weighted `H×W×C` map.
pub fn counted_cca(keys: &Tensor, queries: &Tensor, features: &Tensor, macs: &mut u64) -> Tensor {
    let (h, w, c) = keys.dims3();
    let mut scratch = CcaScratch::new(h, w, c);
    *macs += cca_into(keys.data(), queries.data(), features.data(), (h, w, c), &mut scratch);
    Tensor::from_parts(vec![h, w, c], scratch.out)
}

struct CcaScratch {
    weights: Vec<f64>,
    col: Vec<f64>,
    out: Vec<f64>,
}

impl CcaScratch {
    fn new(h: usize, w: usize, c: usize) -> Self {
        Self { weights: vec![0.0; h * w], col: vec![0.0; h], out: vec![0.0; h * w * c] }
    }
}

fn cca_into(k: &[f64], q: &[f64], f: &[f64], (h, w, c): (usize, usize, usize), s: &mut CcaScratch) -> u64 {
    let mut macs = 0;
    // Logits in storage order, then one softmax per column.
    for (p, (kp, slot)) in k.chunks(c).zip(s.weights.iter_mut()).enumerate() {
        let j = p % w;
        *slot = ops::dot(kp, &q[j * c..(j + 1) * c]);
        macs += c as u64;
    }
    for j in 0..w {
        for i in 0..h {
            s.col[i] = s.weights[i * w + j];
        }
        ops::softmax_in_place(&mut s.col);
        for i in 0..h {
            s.weights[i * w + j] = s.col[i];
        }
    }
    for ((o, x), &wt) in s.out.chunks_mut(c).zip(f.chunks(c)).zip(&s.weights) {
        for (a, b) in o.iter_mut().zip(x) {
            *a = b * wt;
        }
        macs += c as u64;
    }
    macs
}

const TILE: usize = 16;

/// Global self-attention: every pixel attends to every pixel with logits
/// `⟨k_p, k_q⟩` and returns `Σ_q softmax_q · v_q`. Pixels are processed in
/// tiles so each key and value row is read once per tile.
pub fn counted_quadratic(keys: &Tensor, values: &Tensor, macs: &mut u64) -> Tensor {
    let (h, w, c) = keys.dims3();
    let mut out = vec![0.0; h * w * c];
    *macs += quadratic_into(keys.data(), values.data(), c, &mut out);
    Tensor::from_parts(vec![h, w, c], out)
}

fn quadratic_into(k: &[f64], v: &[f64], c: usize, out: &mut [f64]) -> u64 {
    out.fill(0.0);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { quadratic_avx2(k, v, c, out) };
        }
    }
    quadratic_generic(k, v, c, out)
}

// Same code, compiled with wider vectors. Accumulation order is explicit, so
// results are identical to the generic path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn quadratic_avx2(k: &[f64], v: &[f64], c: usize, out: &mut [f64]) -> u64 {
    quadratic_generic(k, v, c, out)
}

#[inline(always)]
fn quadratic_generic(k: &[f64], v: &[f64], c: usize, out: &mut [f64]) -> u64 {
    let n = k.len() / c;
    let mut macs = 0u64;
    let mut logits = vec![0.0; TILE * n];
    for start in (0..n).step_by(TILE) {
        let rows = TILE.min(n - start);
        for q in 0..n {
            let kq = &k[q * c..(q + 1) * c];
            for r in 0..rows {
                let p = start + r;
                logits[r * n + q] = dot8(&k[p * c..(p + 1) * c], kq);
            }
            macs += (rows * c) as u64;
        }
        for r in 0..rows {
            ops::softmax_in_place(&mut logits[r * n..(r + 1) * n]);
        }
        for q in 0..n {
            let vq = &v[q * c..(q + 1) * c];
            for r in 0..rows {
                let s = logits[r * n + q];
                let p = start + r;
                for (o, x) in out[p * c..(p + 1) * c].iter_mut().zip(vq) {
                    *o += s * x;
                }
            }
            macs += (rows * c) as u64;
        }
    }
    macs
}

/// Dot product with eight independent accumulators in a fixed order.
#[inline(always)]
fn dot8(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

const MIN_SAMPLE_NS: u64 = 20_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub kernel: Kernel,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub op_count: u64,
    pub median_ns: u64,
    pub mean_ns: u64,
}

/// Times `kernel` on each size: one discarded warm-up run, then `reps` timed
/// runs, reporting the median. Inputs are drawn from `seed`.
pub fn run_scaling(kernel: Kernel, sizes: &[(usize, usize, usize)], reps: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    if sizes.is_empty() {
        return Err(Error::contract("run_scaling needs at least one size"));
    }
    if reps < 3 {
        return Err(Error::contract(format!("run_scaling needs reps >= 3, got {reps}")));
    }
    sizes
        .iter()
        .map(|&(h, w, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keys = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
            let values = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
            let queries = Tensor::uniform(&[w, c], -1.0, 1.0, &mut rng);
            // Output buffers are allocated once per size so page faults stay out
            // of the timings.
            let mut scratch = CcaScratch::new(h, w, c);
            let mut out = vec![0.0; h * w * c];
            let mut run = |macs: &mut u64| match kernel {
                Kernel::Cca => {
                    *macs += cca_into(keys.data(), queries.data(), values.data(), (h, w, c), &mut scratch);
                    std::hint::black_box(scratch.out[0]);
                }
                Kernel::Quadratic => {
                    *macs += quadratic_into(keys.data(), values.data(), c, &mut out);
                    std::hint::black_box(out[0]);
                }
            };
            // The warm-up run also counts operations and sizes the samples: fast
            // kernels are repeated so one sample lasts at least MIN_SAMPLE_NS.
            let mut op_count = 0;
            let t0 = Instant::now();
            run(&mut op_count);
            let once = t0.elapsed().as_nanos().max(1) as u64;
            let inner = MIN_SAMPLE_NS.div_ceil(once).max(1);
            let mut times: Vec<u64> = (0..reps)
                .map(|_| {
                    let t0 = Instant::now();
                    for _ in 0..inner {
                        run(&mut 0);
                    }
                    t0.elapsed().as_nanos() as u64 / inner
                })
                .collect();
            let mean_ns = times.iter().sum::<u64>() / reps as u64;
            times.sort_unstable();
            let median_ns = times[reps / 2];
            Ok(ScalingRow { kernel, h, w, c, op_count, median_ns, mean_ns })
        })
        .collect()
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::contract(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|&(n, t)| !(n > 0.0 && t > 0.0)) {
        return Err(Error::contract("slope fit needs positive sizes and times"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("slope fit needs at least two distinct sizes"));
    }
    Ok(sxy / sxx)
}

/// Slope of median time against `H·W`.
pub fn scaling_slope(rows: &[ScalingRow]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.h * r.w) as f64, r.median_ns as f64)).collect();
    fit_slope(&pts)
}

pub fn to_csv(rows: &[ScalingRow]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| Error::contract(e.to_string()))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::{apply_weights, column_attention, ColumnQueries};
    use crate::feature::FeatureMap;

    #[test]
    fn counted_cca_matches_library_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let keys = Tensor::uniform(&[7, 5, 6], -1.0, 1.0, &mut rng);
        let q = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng);
        let f = Tensor::uniform(&[7, 5, 6], -1.0, 1.0, &mut rng);
        let mut macs = 0;
        let got = counted_cca(&keys, &q, &f, &mut macs);
        let w = column_attention(&FeatureMap::new(keys).unwrap(), &ColumnQueries::new(q).unwrap()).unwrap();
        let want = apply_weights(&FeatureMap::new(f).unwrap(), &w).unwrap();
        assert_eq!(&got, want.tensor());
        assert_eq!(macs, cca_cost_model(7, 5, 6));
    }

    /// Untiled reference for the quadratic kernel.
    fn naive_global_attention(keys: &Tensor, values: &Tensor) -> Vec<f64> {
        let (h, w, c) = keys.dims3();
        let n = h * w;
        let mut out = vec![0.0; n * c];
        for p in 0..n {
            let mut l: Vec<f64> = (0..n)
                .map(|q| (0..c).map(|i| keys.data()[p * c + i] * keys.data()[q * c + i]).sum())
                .collect();
            ops::softmax_in_place(&mut l);
            for q in 0..n {
                for i in 0..c {
                    out[p * c + i] += l[q] * values.data()[q * c + i];
                }
            }
        }
        out
    }

    #[test]
    fn quadratic_matches_naive_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys = Tensor::uniform(&[5, 7, 6], -1.0, 1.0, &mut rng);
        let vals = Tensor::uniform(&[5, 7, 6], -1.0, 1.0, &mut rng);
        let mut macs = 0;
        let got = counted_quadratic(&keys, &vals, &mut macs);
        for (a, b) in got.data().iter().zip(naive_global_attention(&keys, &vals)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(macs, quadratic_cost_model(5, 7, 6));
    }

    #[test]
    fn runtime_counts_equal_cost_models() {
        for &(h, w, c) in &[(2, 3, 4), (4, 3, 4), (4, 6, 4), (4, 6, 8), (17, 3, 5)] {
            for kernel in [Kernel::Cca, Kernel::Quadratic] {
                let rows = run_scaling(kernel, &[(h, w, c)], 3, 0).unwrap();
                assert_eq!(rows[0].op_count, kernel.cost_model(h, w, c));
            }
        }
        assert_eq!(cca_cost_model(64, 96, 64), 2 * cca_cost_model(32, 96, 64));
        assert_eq!(quadratic_cost_model(64, 96, 64), 4 * quadratic_cost_model(32, 96, 64));
    }

    #[test]
    fn exact_power_laws() {
        let lin: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 40.0].iter().map(|&n| (n, 3.0 * n)).collect();
        assert!((fit_slope(&lin).unwrap() - 1.0).abs() < 1e-9);
        let quad: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 40.0].iter().map(|&n| (n, 0.5 * n * n)).collect();
        assert!((fit_slope(&quad).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn slope_preconditions() {
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]).is_err());
        assert!(run_scaling(Kernel::Cca, &[], 3, 0).is_err());
        assert!(run_scaling(Kernel::Cca, &[(2, 2, 2)], 2, 0).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = run_scaling(Kernel::Cca, &[(2, 2, 2), (4, 2, 2)], 3, 0).unwrap();
        let text = to_csv(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "kernel,h,w,c,op_count,median_ns,mean_ns");
        assert!(lines.next().unwrap().starts_with("cca,2,2,2,16,"));
    }
}
