//! Sine-cosine encoding of row position, counted from the bottom image row.

use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::graph::{DiffGraph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    height: usize,
    channels: usize,
    table: Tensor,
}

impl PositionalEncoding {
    /// `table[i][2k] = sin(i / 10000^(2k/C))`, `table[i][2k+1] = cos(…)`,
    /// with `i` the row index from the bottom.
    pub fn new(height: usize, channels: usize) -> Result<Self> {
        if height == 0 {
            return Err(Error::contract("positional encoding needs at least one row"));
        }
        if channels == 0 || !channels.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "positional encoding needs an even, positive channel count, got {channels}"
            )));
        }
        let mut table = Tensor::zeros(&[height, channels]);
        for i in 0..height {
            for k in 0..channels / 2 {
                let freq = 10000f64.powf(2.0 * k as f64 / channels as f64);
                let angle = i as f64 / freq;
                table.set(&[i, 2 * k], angle.sin());
                table.set(&[i, 2 * k + 1], angle.cos());
            }
        }
        Ok(Self {
            height,
            channels,
            table,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    /// The table repeated across `width` columns, shaped `H×W×C`.
    pub fn broadcast(&self, width: usize) -> Tensor {
        let (h, c) = (self.height, self.channels);
        let mut out = Vec::with_capacity(h * width * c);
        for row in self.table.data().chunks(c) {
            for _ in 0..width {
                out.extend_from_slice(row);
            }
        }
        Tensor::from_parts(vec![h, width, c], out)
    }

    fn check(&self, h: usize, c: usize) -> Result<()> {
        if h != self.height || c != self.channels {
            return Err(Error::shape("add_encoding", &[h, c], &[self.height, self.channels]));
        }
        Ok(())
    }
}

/// Adds the encoding to every column: `out[i][j][c] = F[i][j][c] + P[i][c]`.
pub fn add_encoding(features: &FeatureMap, pe: &PositionalEncoding) -> Result<FeatureMap> {
    let (h, w, c) = features.dims();
    pe.check(h, c)?;
    let sum = features.tensor().add(&pe.broadcast(w))?;
    FeatureMap::new(sum)
}

/// Tape version of [`add_encoding`]; the encoding enters as a constant.
pub fn add_encoding_var(g: &mut DiffGraph, features: Var, pe: &PositionalEncoding) -> Result<Var> {
    let t = g.value(features);
    t.expect_rank(3, "add_encoding")?;
    let (h, w, c) = t.dims3();
    pe.check(h, c)?;
    let p = g.constant(pe.broadcast(w));
    g.add(features, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bottom_row_is_sin_zero_cos_one() {
        let pe = PositionalEncoding::new(5, 8).unwrap();
        for k in 0..4 {
            assert_eq!(pe.table().get(&[0, 2 * k]), 0.0);
            assert_eq!(pe.table().get(&[0, 2 * k + 1]), 1.0);
        }
    }

    #[test]
    fn closed_form_value() {
        let pe = PositionalEncoding::new(4, 2).unwrap();
        assert!((pe.table().get(&[2, 0]) - 2f64.sin()).abs() < 1e-15);
        assert!((pe.table().get(&[2, 0]) - 0.9093).abs() < 1e-4);
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(PositionalEncoding::new(4, 3).is_err());
        assert!(PositionalEncoding::new(0, 2).is_err());
    }

    #[test]
    fn zero_map_gets_replicated_table() {
        let pe = PositionalEncoding::new(3, 4).unwrap();
        let out = add_encoding(&FeatureMap::zeros(3, 5, 4), &pe).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                for c in 0..4 {
                    assert_eq!(out.pixel(i, j)[c], pe.table().get(&[i, c]));
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let pe = PositionalEncoding::new(3, 4).unwrap();
        assert!(add_encoding(&FeatureMap::zeros(4, 2, 4), &pe).is_err());
        assert!(add_encoding(&FeatureMap::zeros(3, 2, 2), &pe).is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_deterministic(h in 1usize..40, half_c in 1usize..12) {
            let a = PositionalEncoding::new(h, 2 * half_c).unwrap();
            let b = PositionalEncoding::new(h, 2 * half_c).unwrap();
            prop_assert!(a.table().data().iter().zip(b.table().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert!(a.table().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn offset_is_constant_across_columns(seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fm = FeatureMap::new(Tensor::uniform(&[5, 3, 4], -2.0, 2.0, &mut rng)).unwrap();
            let pe = PositionalEncoding::new(5, 4).unwrap();
            let out = add_encoding(&fm, &pe).unwrap();
            let diff = out.tensor().sub(fm.tensor()).unwrap();
            for i in 0..5 {
                for c in 0..4 {
                    let d0 = diff.get(&[i, 0, c]);
                    prop_assert!((diff.get(&[i, 2, c]) - d0).abs() < 1e-12);
                    prop_assert!((diff.get(&[i, 1, c]) - d0).abs() < 1e-12);
                }
            }
            // subtracting the table recovers the input exactly
            let back = out.tensor().sub(&pe.broadcast(3)).unwrap();
            for (x, y) in back.data().iter().zip(fm.tensor().data()) {
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON);
            }
        }
    }
}
