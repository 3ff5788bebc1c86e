//! Dense row-major f32 tensors. This is deliberately minimal: contiguous
//! storage, shape metadata, and a couple of pure reorganization helpers.
//! Anything that moves data as part of an instrumented execution path lives
//! in [`crate::kernels`] so the traffic gets counted.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: f32) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major strides (in elements). A rank-0 tensor has no strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for d in (0..self.shape.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    /// Element access by multi-index; intended for tests and small fixups,
    /// not inner loops.
    pub fn at(&self, idx: &[usize]) -> f32 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        let mut off = 0usize;
        for (d, &j) in idx.iter().enumerate() {
            debug_assert!(j < self.shape[d]);
            off += j * strides[d];
        }
        self.data[off]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    /// Free: no data movement (row-major contiguous throughout).
    pub fn with_shape(mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Pure axis permutation: output dimension `d` is input dimension
    /// `axes[d]`, i.e. `out.shape[d] == self.shape[axes[d]]`. Returns a new
    /// contiguous tensor. The counted version used inside execution paths is
    /// [`crate::kernels::permute`].
    pub fn permuted(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.shape.len();
        if axes.len() != rank {
            return Err(Error::InvalidPermutation(format!(
                "axes {:?} vs rank {}",
                axes, rank
            )));
        }
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::InvalidPermutation(format!(
                    "axes {:?} is not a permutation of 0..{}",
                    axes, rank
                )));
            }
            seen[a] = true;
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let mut out = Tensor::zeros(&out_shape);
        if rank == 0 {
            out.data[0] = self.data[0];
            return Ok(out);
        }
        let src_strides = self.strides();
        // Walk the destination linearly (contiguous writes), gathering from
        // the source through the permuted strides.
        let gather_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut idx = vec![0usize; rank];
        let total = out.data.len();
        let mut src_off = 0usize;
        for dst_off in 0..total {
            out.data[dst_off] = self.data[src_off];
            // Increment the multi-index odometer-style.
            for d in (0..rank).rev() {
                idx[d] += 1;
                src_off += gather_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                src_off -= idx[d] * gather_strides[d];
                idx[d] = 0;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
    }
}

/// Max elementwise |a - b| scaled by the reference's largest magnitude.
/// Robust near zero: the denominator is floored at 1e-30.
pub fn max_rel_err(a: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(a.shape(), reference.shape(), "max_rel_err shape mismatch");
    let scale = (reference.max_abs() as f64).max(1e-30);
    let mut worst = 0.0f64;
    for (&x, &y) in a.data().iter().zip(reference.data()) {
        let d = (x as f64 - y as f64).abs();
        if d > worst {
            worst = d;
        }
    }
    worst / scale
}

/// Relative Frobenius distance ||a - b||_F / ||b||_F, accumulated in f64.
pub fn rel_fro_err(a: &Tensor, reference: &Tensor) -> f64 {
    assert_eq!(a.shape(), reference.shape(), "rel_fro_err shape mismatch");
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&x, &y) in a.data().iter().zip(reference.data()) {
        let d = x as f64 - y as f64;
        num += d * d;
        den += (y as f64) * (y as f64);
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn strides_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn permute_2d_transpose() {
        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = t.permuted(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn permute_3d_shape_and_contents() {
        // (2,3,4) permuted by (2,0,1) -> shape (4,2,3); contents follow the
        // index map out[c,a,b] == in[a,b,c].
        let data: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let t = Tensor::from_vec(&[2, 3, 4], data).unwrap();
        let p = t.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.at(&[c, a, b]), t.at(&[a, b, c]));
                }
            }
        }
    }

    #[test]
    fn permute_rejects_bad_axes() {
        let t = Tensor::zeros(&[2, 3]);
        assert!(t.permuted(&[0, 0]).is_err());
        assert!(t.permuted(&[0, 2]).is_err());
        assert!(t.permuted(&[0]).is_err());
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let data: Vec<f32> = (0..120).map(|v| (v as f32).sin()).collect();
        let t = Tensor::from_vec(&[4, 5, 6], data).unwrap();
        let p = t.permuted(&[2, 0, 1]).unwrap();
        // Inverse of (2,0,1) is (1,2,0).
        let back = p.permuted(&[1, 2, 0]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn permute_preserves_multiset() {
        let data: Vec<f32> = (0..24).map(|v| v as f32 * 0.5).collect();
        let t = Tensor::from_vec(&[2, 3, 4], data).unwrap();
        let p = t.permuted(&[1, 2, 0]).unwrap();
        let mut a = t.data().to_vec();
        let mut b = p.data().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn reshape_is_metadata_only() {
        let t = Tensor::from_vec(&[2, 6], (0..12).map(|v| v as f32).collect()).unwrap();
        let r = t.clone().with_shape(&[3, 4]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.with_shape(&[5, 5]).is_err());
    }

    #[test]
    fn error_metrics() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0, 2.002]).unwrap();
        assert!(max_rel_err(&b, &a) - 0.001 < 1e-6);
        assert!(rel_fro_err(&a, &a) == 0.0);
    }
}
