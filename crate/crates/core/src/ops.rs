//! Forward kernels shared by the eager API and the tape.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Ok(Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n)))
}

/// `a[m×k] · b[k×n]`, i-k-j loop order so the inner loop streams rows of `b`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ[k×m]ᵀ · b` where `a` is stored as `[m×k]`: returns `[k×n]` from `a[m×k]`, `b[m×n]`.
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m×n] · bᵀ` where `b` is stored as `[k×n]`: returns `[m×k]`.
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over every element of `x`, with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.data().to_vec();
    softmax_in_place(&mut out);
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Vector-Jacobian product of softmax: `s ⊙ (g − ⟨g, s⟩)`.
pub(crate) fn softmax_vjp(s: &[f64], g: &[f64]) -> Vec<f64> {
    let inner = dot(s, g);
    s.iter().zip(g).map(|(&si, &gi)| si * (gi - inner)).collect()
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Adds `bias[n]` to every row of `x[m×n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = *x.shape().last().unwrap_or(&0);
    if bias.rank() != 1 || bias.shape()[0] != n {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// 1×1 convolution: `x[..×Cin] · weight[Cin×Cout] + bias[Cout]` at every location.
pub fn channel_linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let cin = *x.shape().last().unwrap_or(&0);
    if weight.rank() != 2 || weight.shape()[0] != cin {
        return Err(Error::shape("channel_linear", x.shape(), weight.shape()));
    }
    let cout = weight.shape()[1];
    let rows = x.numel() / cin;
    let mixed = Tensor::from_parts(vec![rows, cout], matmul_raw(x.data(), weight.data(), rows, cin, cout));
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    add_bias(&mixed, bias)?.reshape(&shape)
}
