use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `H×W×C` feature map. Row 0 is the **bottom** image row; row indices grow
/// upward, so the image origin sits at the bottom-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    data: Tensor,
}

impl FeatureMap {
    /// Wraps a rank-3 tensor already laid out bottom row first.
    pub fn new(data: Tensor) -> Result<Self> {
        data.expect_rank(3, "FeatureMap")?;
        Ok(Self { data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            data: Tensor::zeros(&[h, w, c]),
        }
    }

    /// Converts from conventional image order (row 0 at the top).
    pub fn from_top_origin(data: Tensor) -> Result<Self> {
        Ok(Self::new(data)?.flip_rows())
    }

    /// Same map in top-origin row order.
    pub fn to_top_origin(&self) -> Tensor {
        self.flip_rows().data
    }

    pub fn flip_rows(&self) -> Self {
        let (h, w, c) = self.dims();
        let stride = w * c;
        let mut out = Vec::with_capacity(h * stride);
        for i in (0..h).rev() {
            out.extend_from_slice(&self.data.data()[i * stride..(i + 1) * stride]);
        }
        Self {
            data: Tensor::from_parts(vec![h, w, c], out),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dims3()
    }

    pub fn height(&self) -> usize {
        self.dims().0
    }

    pub fn width(&self) -> usize {
        self.dims().1
    }

    pub fn channels(&self) -> usize {
        self.dims().2
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let (_, w, c) = self.dims();
        let off = (row * w + col) * c;
        &self.data.data()[off..off + c]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let (_, w, c) = self.dims();
        let off = (row * w + col) * c;
        &mut self.data.data_mut()[off..off + c]
    }

    pub(crate) fn expect_same_dims(&self, other: &FeatureMap, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, self.data.shape(), other.data.shape()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_origin_round_trip() {
        let t = Tensor::from_fn(&[3, 2, 1], |i| i as f64);
        let fm = FeatureMap::from_top_origin(t.clone()).unwrap();
        // top image row becomes the last stored row
        assert_eq!(fm.pixel(2, 0), &[0.0]);
        assert_eq!(fm.pixel(0, 1), &[5.0]);
        assert_eq!(fm.to_top_origin(), t);
    }

    #[test]
    fn rejects_wrong_rank() {
        assert!(FeatureMap::new(Tensor::zeros(&[2, 2])).is_err());
    }
}
