//! Dense square tensors: every mode has the same extent `n`.
//!
//! Storage is a flat row-major buffer (last index fastest). Multi-indices and
//! modes are 0-based throughout the Rust API; a multi-index entry `i` addresses
//! the age component `x_i`.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor order must be at least 1")]
    ZeroOrder,
    #[error("tensor dimension must be at least 1")]
    ZeroDim,
    #[error("tensor with order {order} and dim {dim} overflows addressable memory")]
    TooLarge { order: usize, dim: usize },
    #[error("data length {got} does not match n^order = {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("multi-index has {got} entries but the tensor has order {order}")]
    IndexArity { order: usize, got: usize },
    #[error("index {index} out of range in mode {mode} (extent {dim})")]
    IndexOutOfRange { mode: usize, index: usize, dim: usize },
    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("matrix is {rows}x{cols}, expected {dim}x{dim}")]
    MatrixShape { rows: usize, cols: usize, dim: usize },
    #[error("non-finite value in tensor data")]
    NonFinite,
    #[error("tensor shapes differ: ({0}, {1}) vs ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// Number of entries `dim^order`, or `None` on overflow.
pub fn entry_count(order: usize, dim: usize) -> Option<usize> {
    let order = u32::try_from(order).ok()?;
    dim.checked_pow(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self, TensorError> {
        Self::filled(order, dim, 0.0)
    }

    pub fn filled(order: usize, dim: usize, value: f64) -> Result<Self, TensorError> {
        let len = checked_len(order, dim)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite);
        }
        Ok(Self {
            order,
            dim,
            data: vec![value; len],
        })
    }

    pub fn from_vec(order: usize, dim: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        let len = checked_len(order, dim)?;
        if data.len() != len {
            return Err(TensorError::LengthMismatch {
                expected: len,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { order, dim, data })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.order {
            return Err(TensorError::IndexArity {
                order: self.order,
                got: index.len(),
            });
        }
        let mut off = 0usize;
        for (mode, &i) in index.iter().enumerate() {
            if i >= self.dim {
                return Err(TensorError::IndexOutOfRange {
                    mode,
                    index: i,
                    dim: self.dim,
                });
            }
            off = off * self.dim + i;
        }
        Ok(off)
    }

    /// Inverse of [`offset`](Self::offset).
    pub fn multi_index(&self, offset: usize) -> Vec<usize> {
        unravel(offset, self.order, self.dim)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64, TensorError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<(), TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite);
        }
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &DenseTensor) -> Result<DenseTensor, TensorError> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + alpha * b).collect();
        Ok(DenseTensor {
            order: self.order,
            dim: self.dim,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            order: self.order,
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<(), TensorError> {
        if self.order != other.order || self.dim != other.dim {
            return Err(TensorError::ShapeMismatch(self.order, self.dim, other.order, other.dim));
        }
        Ok(())
    }

    /// The j-mode product `Y = X ×_j A` with a square `n×n` matrix:
    /// `Y[.., i, ..] = Σ_p A[i, p] X[.., p, ..]` where `i`, `p` sit in mode `j`.
    pub fn mode_product(&self, a: &DMatrix<f64>, mode: usize) -> Result<DenseTensor, TensorError> {
        if mode >= self.order {
            return Err(TensorError::ModeOutOfRange {
                mode,
                order: self.order,
            });
        }
        let n = self.dim;
        if a.nrows() != n || a.ncols() != n {
            return Err(TensorError::MatrixShape {
                rows: a.nrows(),
                cols: a.ncols(),
                dim: n,
            });
        }
        // Mode `mode` has stride n^(order-1-mode); everything to its left is
        // an independent outer block.
        let inner = n.pow((self.order - 1 - mode) as u32);
        let outer = self.data.len() / (n * inner);
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..n {
                let dst = base + i * inner;
                for p in 0..n {
                    let w = a[(i, p)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = base + p * inner;
                    for t in 0..inner {
                        out[dst + t] += w * self.data[src + t];
                    }
                }
            }
        }
        Ok(DenseTensor {
            order: self.order,
            dim: n,
            data: out,
        })
    }

    /// Applies a reset map along every mode: for a vector this is the row
    /// product `v·A`, for a matrix `Aᵀ·V·A`, and in general
    /// `Y[k] = Σ_p X[p] Π_j A[p_j, k_j]`.
    ///
    /// Each mode is contracted with `Aᵀ` under the [`mode_product`](Self::mode_product)
    /// convention. Mode products along distinct modes commute, so the order
    /// of application is irrelevant.
    pub fn reset_contraction(&self, a: &DMatrix<f64>) -> Result<DenseTensor, TensorError> {
        let at = a.transpose();
        let mut out = self.mode_product(&at, 0)?;
        for mode in 1..self.order {
            out = out.mode_product(&at, mode)?;
        }
        Ok(out)
    }
}

fn checked_len(order: usize, dim: usize) -> Result<usize, TensorError> {
    if order == 0 {
        return Err(TensorError::ZeroOrder);
    }
    if dim == 0 {
        return Err(TensorError::ZeroDim);
    }
    entry_count(order, dim).ok_or(TensorError::TooLarge { order, dim })
}

/// Row-major unravel of a flat offset.
pub fn unravel(mut offset: usize, order: usize, dim: usize) -> Vec<usize> {
    let mut idx = vec![0; order];
    for slot in idx.iter_mut().rev() {
        *slot = offset % dim;
        offset /= dim;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(order: usize, dim: usize) -> DenseTensor {
        let len = dim.pow(order as u32);
        DenseTensor::from_vec(order, dim, (1..=len).map(|v| v as f64).collect()).unwrap()
    }

    // Independent brute-force j-mode product over explicit multi-indices.
    fn brute_mode_product(t: &DenseTensor, a: &DMatrix<f64>, mode: usize) -> DenseTensor {
        let mut out = DenseTensor::zeros(t.order(), t.dim()).unwrap();
        for off in 0..t.len() {
            let k = unravel(off, t.order(), t.dim());
            let mut acc = 0.0;
            for p in 0..t.dim() {
                let mut kp = k.clone();
                kp[mode] = p;
                acc += a[(k[mode], p)] * t.get(&kp).unwrap();
            }
            out.set(&k, acc).unwrap();
        }
        out
    }

    #[test]
    fn vector_indexing() {
        let t = DenseTensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        // second element, 0-based index 1
        assert_eq!(t.get(&[1]).unwrap(), 2.0);
        let z = DenseTensor::zeros(2, 4).unwrap();
        assert_eq!(z.get(&[3, 2]).unwrap(), 0.0);
    }

    #[test]
    fn third_order_offset_matches_brute_force() {
        let t = seq(3, 2);
        // (2,1,2) in 1-based notation; offset by hand: 1*4 + 0*2 + 1 = 5 -> value 6
        assert_eq!(t.as_slice()[5], 6.0);
        assert_eq!(t.get(&[1, 0, 1]).unwrap(), 6.0);
    }

    #[test]
    fn index_errors_name_the_mode() {
        let t = seq(3, 2);
        match t.get(&[0, 2, 0]) {
            Err(TensorError::IndexOutOfRange { mode, .. }) => assert_eq!(mode, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(t.get(&[0, 0]), Err(TensorError::IndexArity { .. })));
    }

    #[test]
    fn construction_errors() {
        assert_eq!(DenseTensor::zeros(0, 3), Err(TensorError::ZeroOrder));
        assert!(matches!(
            DenseTensor::from_vec(2, 2, vec![1.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert_eq!(
            DenseTensor::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite)
        );
        assert!(matches!(
            DenseTensor::zeros(64, 1 << 20),
            Err(TensorError::TooLarge { .. })
        ));
    }

    #[test]
    fn mode_product_small_example() {
        let t = DenseTensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let y = t.mode_product(&a, 0).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(y, brute_mode_product(&t, &a, 0));
    }

    #[test]
    fn mode_product_identity_and_zero() {
        let t = seq(3, 3);
        for mode in 0..3 {
            assert_eq!(t.mode_product(&DMatrix::identity(3, 3), mode).unwrap(), t);
            let z = t.mode_product(&DMatrix::zeros(3, 3), mode).unwrap();
            assert!(z.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mode_product_errors() {
        let t = seq(2, 3);
        assert!(matches!(
            t.mode_product(&DMatrix::identity(3, 3), 2),
            Err(TensorError::ModeOutOfRange { .. })
        ));
        assert!(matches!(
            t.mode_product(&DMatrix::identity(2, 2), 0),
            Err(TensorError::MatrixShape { .. })
        ));
    }

    #[test]
    fn reset_contraction_vector_is_row_product() {
        let v = DenseTensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        // x' = [0, x0, x2]
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let y = v.reset_contraction(&a).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 1.0, 3.0]);
        assert_eq!(v.reset_contraction(&DMatrix::identity(3, 3)).unwrap(), v);
    }

    #[test]
    fn reset_contraction_matrix_brute_force() {
        let t = seq(2, 3);
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let y = t.reset_contraction(&a).unwrap();
        for k0 in 0..3 {
            for k1 in 0..3 {
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        acc += a[(p, k0)] * t.get(&[p, q]).unwrap() * a[(q, k1)];
                    }
                }
                assert_eq!(y.get(&[k0, k1]).unwrap(), acc);
            }
        }
    }

    fn tensor_strategy(order: usize, dim: usize) -> impl Strategy<Value = DenseTensor> {
        prop::collection::vec(-5.0f64..5.0, dim.pow(order as u32))
            .prop_map(move |d| DenseTensor::from_vec(order, dim, d).unwrap())
    }

    fn matrix_strategy(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-2.0f64..2.0, dim * dim).prop_map(move |d| DMatrix::from_row_slice(dim, dim, &d))
    }

    proptest! {
        #[test]
        fn distinct_modes_commute(t in tensor_strategy(3, 3), a in matrix_strategy(3), b in matrix_strategy(3)) {
            let ab = t.mode_product(&a, 0).unwrap().mode_product(&b, 1).unwrap();
            let ba = t.mode_product(&b, 1).unwrap().mode_product(&a, 0).unwrap();
            prop_assert!(ab.max_abs_diff(&ba).unwrap() <= 1e-12);
        }

        #[test]
        fn mode_product_matches_brute_force(t in tensor_strategy(3, 2), a in matrix_strategy(2), mode in 0usize..3) {
            let fast = t.mode_product(&a, mode).unwrap();
            let slow = brute_mode_product(&t, &a, mode);
            prop_assert!(fast.max_abs_diff(&slow).unwrap() <= 1e-12);
        }

        #[test]
        fn order_two_contraction_is_at_t_a(t in tensor_strategy(2, 4), a in matrix_strategy(4)) {
            let y = t.reset_contraction(&a).unwrap();
            let m = DMatrix::from_row_slice(4, 4, t.as_slice());
            let expect = a.transpose() * m * &a;
            let e = DenseTensor::from_vec(2, 4, expect.transpose().as_slice().to_vec()).unwrap();
            prop_assert!(y.max_abs_diff(&e).unwrap() <= 1e-12);
        }

        #[test]
        fn get_set_round_trip(order in 1usize..4, dim in 1usize..4, v in -10.0f64..10.0, seed in 0usize..1000) {
            let mut t = DenseTensor::zeros(order, dim).unwrap();
            let off = seed % t.len();
            let idx = t.multi_index(off);
            t.set(&idx, v).unwrap();
            prop_assert_eq!(t.get(&idx).unwrap(), v);
            prop_assert_eq!(t.offset(&idx).unwrap(), off);
        }
    }
}
