//! Finite-difference checks over every differentiable tape operation and the
//! composed block, at several map sizes and random draws.
//!
//! Each op's output is contracted with a fixed random tensor before checking,
//! so ops whose plain sum is constant (softmax) are still fully exercised.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cca::{self, KeyEncoder, KeyEncoderVars};
use crate::error::{Error, Result};
use crate::gradcheck::finite_diff_check_many;
use crate::graph::{DiffGraph, Var};
use crate::posenc::{self, PositionalEncoding};
use crate::rrcs::{self, AttentionMode, BlockConfig, BlockParams, BlockVars, ScanDirection};
use crate::tensor::Tensor;
use crate::toy3d::loss::{focal_loss_var, l1_loss_var};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TRIALS: usize = 20;

/// Map size `H×W×C`, written `6x5x4` on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSize {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl MapSize {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    /// Every op in the suite needs a non-empty map and an even channel count
    /// for the positional encoding.
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::Config(format!("size {self} has a zero dimension")));
        }
        if !self.c.is_multiple_of(2) {
            return Err(Error::Config(format!("size {self} needs an even channel count")));
        }
        Ok(())
    }
}

impl fmt::Display for MapSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

impl FromStr for MapSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        let bad = || Error::Config(format!("size {s:?} is not of the form HxWxC"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut dims = [0usize; 3];
        for (d, p) in dims.iter_mut().zip(&parts) {
            *d = p.trim().parse().map_err(|_| bad())?;
        }
        let size = MapSize::new(dims[0], dims[1], dims[2]);
        size.validate()?;
        Ok(size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub sizes: Vec<MapSize>,
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            sizes: vec![MapSize::new(6, 5, 4), MapSize::new(3, 2, 2), MapSize::new(1, 1, 2)],
            trials: DEFAULT_TRIALS,
            seed: 0,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpResult {
    pub op: String,
    pub size: MapSize,
    pub trials: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub results: Vec<OpResult>,
    pub max_rel_error: f64,
    /// Wall-clock seconds; not deterministic.
    #[serde(skip)]
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.results.iter().all(|r| r.max_rel_error < tol)
    }

    pub fn failures(&self, tol: f64) -> impl Iterator<Item = &OpResult> {
        self.results.iter().filter(move |r| !(r.max_rel_error < tol))
    }
}

/// One check: builds its inputs from the rng and returns the scalar it
/// differentiates.
struct Case {
    name: &'static str,
    inputs: fn(MapSize, &mut ChaCha8Rng) -> Vec<Tensor>,
    eval: fn(&mut DiffGraph, &[Var], &Aux) -> Result<Var>,
}

/// Constants shared by the inputs of one trial.
struct Aux {
    size: MapSize,
    pe: PositionalEncoding,
    /// Seeds the contraction tensors.
    seed: u64,
    rows: Vec<usize>,
    targets: Tensor,
    /// At least 0.5 away from every L1 input, clear of the kink.
    l1_targets: Tensor,
}

impl Aux {
    /// Contracts `out` with a random tensor of the same shape.
    fn contract(&self, g: &mut DiffGraph, out: Var) -> Result<Var> {
        let shape = g.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_c0de);
        let r = g.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut rng));
        let prod = g.mul(out, r)?;
        Ok(g.sum(prod))
    }
}

fn map(s: MapSize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[s.h, s.w, s.c], -2.0, 2.0, rng)
}

fn square(s: MapSize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[s.c, s.c], -1.0, 1.0, rng)
}

fn bias(s: MapSize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[s.c], -1.0, 1.0, rng)
}

fn queries(s: MapSize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[s.w, s.c], -1.0, 1.0, rng)
}

fn block_inputs(s: MapSize, rng: &mut ChaCha8Rng, mode: AttentionMode) -> Vec<Tensor> {
    let p = BlockParams::init(s.w, s.c, mode, rng);
    vec![
        map(s, rng),
        p.encoder.w1,
        p.encoder.b1,
        p.encoder.w2,
        p.encoder.b2,
        p.queries.tensor().clone(),
        // Larger than the default init so the block's residual branch is
        // not negligible next to the skip connection.
        p.phi.weight.scale(2.0),
        Tensor::uniform(&[s.c], -0.5, 0.5, rng),
    ]
}

fn block_eval(g: &mut DiffGraph, v: &[Var], aux: &Aux, config: BlockConfig) -> Result<Var> {
    let vars = BlockVars {
        encoder: KeyEncoderVars { w1: v[1], b1: v[2], w2: v[3], b2: v[4] },
        queries: v[5],
        phi_weight: v[6],
        phi_bias: v[7],
    };
    let out = rrcs::block_var(g, v[0], &aux.pe, &vars, config)?;
    aux.contract(g, out)
}

fn flat(s: MapSize) -> [usize; 2] {
    [s.h * s.w, s.c]
}

const BOTTOM_UP: BlockConfig = BlockConfig::FULL;

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "add",
            inputs: |s, r| vec![map(s, r), map(s, r)],
            eval: |g, v, a| {
                let o = g.add(v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "sub",
            inputs: |s, r| vec![map(s, r), map(s, r)],
            eval: |g, v, a| {
                let o = g.sub(v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "mul",
            inputs: |s, r| vec![map(s, r), map(s, r)],
            eval: |g, v, a| {
                let o = g.mul(v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "scale",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = g.scale(v[0], -1.75);
                a.contract(g, o)
            },
        },
        Case {
            name: "relu",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = g.relu(v[0]);
                a.contract(g, o)
            },
        },
        Case {
            name: "abs",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = g.abs(v[0]);
                a.contract(g, o)
            },
        },
        Case {
            name: "matmul",
            inputs: |s, r| {
                vec![
                    Tensor::uniform(&flat(s), -1.0, 1.0, r),
                    Tensor::uniform(&[s.c, s.w], -1.0, 1.0, r),
                ]
            },
            eval: |g, v, a| {
                let o = g.matmul(v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "add_bias",
            inputs: |s, r| vec![Tensor::uniform(&flat(s), -1.0, 1.0, r), bias(s, r)],
            eval: |g, v, a| {
                let o = g.add_bias(v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "channel_linear",
            inputs: |s, r| vec![map(s, r), square(s, r), bias(s, r)],
            eval: |g, v, a| {
                let o = g.channel_linear(v[0], v[1], v[2])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "softmax",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = g.softmax(v[0]);
                a.contract(g, o)
            },
        },
        Case {
            name: "reshape",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = g.reshape(v[0], &flat(a.size))?;
                a.contract(g, o)
            },
        },
        Case {
            name: "gather_rows",
            inputs: |s, r| vec![Tensor::uniform(&flat(s), -1.0, 1.0, r)],
            eval: |g, v, a| {
                let o = g.gather_rows(v[0], &a.rows)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "element",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let n = g.value(v[0]).numel();
                Ok(g.element(v[0], a.rows[0] % n))
            },
        },
        Case {
            name: "sum",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, _| Ok(g.sum(v[0])),
        },
        Case {
            name: "mean",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, _| Ok(g.mean(v[0])),
        },
        Case {
            name: "sum_squares",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, _| Ok(g.sum_squares(v[0])),
        },
        Case {
            name: "add_encoding",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = posenc::add_encoding_var(g, v[0], &a.pe)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "encode_keys",
            inputs: |s, r| {
                let e = KeyEncoder::init(s.c, r);
                vec![map(s, r), e.w1, e.b1, e.w2, e.b2]
            },
            eval: |g, v, a| {
                let enc = KeyEncoderVars { w1: v[1], b1: v[2], w2: v[3], b2: v[4] };
                let o = cca::encode_keys_var(g, v[0], &a.pe, &enc)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "column_logits",
            inputs: |s, r| vec![map(s, r), queries(s, r)],
            eval: |g, v, a| {
                let o = cca::column_logits_var(g, v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "softmax_columns",
            inputs: |s, r| vec![Tensor::uniform(&[s.h, s.w], -3.0, 3.0, r)],
            eval: |g, v, a| {
                let o = cca::softmax_columns_var(g, v[0])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "column_attention",
            inputs: |s, r| vec![map(s, r), queries(s, r)],
            eval: |g, v, a| {
                let o = cca::column_attention_var(g, v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "global_logits",
            inputs: |s, r| vec![map(s, r), bias(s, r)],
            eval: |g, v, a| {
                let o = cca::global_logits_var(g, v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "global_attention",
            inputs: |s, r| vec![map(s, r), bias(s, r)],
            eval: |g, v, a| {
                let o = cca::global_attention_var(g, v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "apply_weights",
            inputs: |s, r| vec![map(s, r), Tensor::uniform(&[s.h, s.w], 0.0, 1.0, r)],
            eval: |g, v, a| {
                let o = cca::apply_weights_var(g, v[0], v[1])?;
                a.contract(g, o)
            },
        },
        Case {
            name: "vertical_cumsum_bottom_up",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = rrcs::vertical_cumsum_var(g, v[0], ScanDirection::BottomUp)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "vertical_cumsum_up_bottom",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = rrcs::vertical_cumsum_var(g, v[0], ScanDirection::UpBottom)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "normalize_rows_bottom_up",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = rrcs::normalize_rows_var(g, v[0], ScanDirection::BottomUp)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "normalize_rows_up_bottom",
            inputs: |s, r| vec![map(s, r)],
            eval: |g, v, a| {
                let o = rrcs::normalize_rows_var(g, v[0], ScanDirection::UpBottom)?;
                a.contract(g, o)
            },
        },
        Case {
            name: "focal_loss",
            inputs: |s, r| vec![Tensor::uniform(&[s.h * s.w, s.c], -4.0, 4.0, r)],
            eval: |g, v, a| focal_loss_var(g, v[0], &a.targets, 3.0),
        },
        Case {
            name: "l1_loss",
            inputs: |s, r| vec![Tensor::uniform(&[s.h * s.w, s.c], -1.0, 1.0, r)],
            eval: |g, v, a| l1_loss_var(g, v[0], &a.l1_targets, 2.0),
        },
        Case {
            name: "block",
            inputs: |s, r| block_inputs(s, r, AttentionMode::Column),
            eval: |g, v, a| block_eval(g, v, a, BOTTOM_UP),
        },
        Case {
            name: "block_up_bottom",
            inputs: |s, r| block_inputs(s, r, AttentionMode::Column),
            eval: |g, v, a| {
                let config = BlockConfig { scan: Some(ScanDirection::UpBottom), ..BOTTOM_UP };
                block_eval(g, v, a, config)
            },
        },
        Case {
            name: "block_global",
            inputs: |s, r| block_inputs(s, r, AttentionMode::Global),
            eval: |g, v, a| {
                let config = BlockConfig { attention: Some(AttentionMode::Global), ..BOTTOM_UP };
                block_eval(g, v, a, config)
            },
        },
        Case {
            name: "block_no_scan",
            inputs: |s, r| block_inputs(s, r, AttentionMode::Column),
            eval: |g, v, a| block_eval(g, v, a, BlockConfig { scan: None, ..BOTTOM_UP }),
        },
        Case {
            name: "block_no_attention",
            inputs: |s, r| block_inputs(s, r, AttentionMode::Column),
            eval: |g, v, a| block_eval(g, v, a, BlockConfig { attention: None, ..BOTTOM_UP }),
        },
    ]
}

/// Names of the checked operations, in report order.
pub fn op_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every case at every size for `config.trials` random draws and keeps
/// the worst relative error per (op, size).
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    if config.sizes.is_empty() {
        return Err(Error::Config("gradient suite needs at least one size".into()));
    }
    if config.trials == 0 {
        return Err(Error::Config("gradient suite needs at least one trial".into()));
    }
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", config.step)));
    }
    for s in &config.sizes {
        s.validate()?;
    }
    let start = Instant::now();
    let mut results = Vec::new();
    for (si, &size) in config.sizes.iter().enumerate() {
        let pe = PositionalEncoding::new(size.h, size.c)?;
        for (ci, case) in cases().iter().enumerate() {
            let mut worst: f64 = 0.0;
            for trial in 0..config.trials {
                let seed = config
                    .seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(((si as u64) << 40) | ((ci as u64) << 20) | trial as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = (case.inputs)(size, &mut rng);
                let n = size.h * size.w;
                let aux = Aux {
                    size,
                    pe: pe.clone(),
                    seed,
                    rows: (0..n + 2).map(|_| rng.random_range(0..n)).collect(),
                    targets: Tensor::from_fn(&[n, size.c], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }),
                    l1_targets: Tensor::from_fn(&[n, size.c], |_| {
                        let t = rng.random_range(1.5..2.5);
                        if rng.random::<bool>() { t } else { -t }
                    }),
                };
                let report = finite_diff_check_many(|g, v| (case.eval)(g, v, &aux), &inputs, config.step)?;
                // NaN must count as a failure.
                worst = if report.max_rel_error.is_nan() { f64::NAN } else { worst.max(report.max_rel_error) };
            }
            results.push(OpResult { op: case.name.to_string(), size, trials: config.trials, max_rel_error: worst });
        }
    }
    let max_rel_error = results.iter().map(|r| r.max_rel_error).fold(0.0, |a: f64, b| if b.is_nan() { b } else { a.max(b) });
    Ok(SuiteReport {
        seed: config.seed,
        trials: config.trials,
        step: config.step,
        results,
        max_rel_error,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
