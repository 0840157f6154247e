//! Dense row-major tensors. Layout conventions: images are NCHW, matrices
//! are (rows, cols), sequences are (time, batch, features).

use super::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub dims: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![S::ZERO; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "dims {dims:?} do not match {} elements",
            data.len()
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The four NCHW extents; panics unless the tensor is 4-D.
    pub fn nchw(&self) -> [usize; 4] {
        let [n, c, h, w] = self.dims[..] else {
            panic!("expected 4-D tensor, got {:?}", self.dims)
        };
        [n, c, h, w]
    }

    pub fn rows_cols(&self) -> [usize; 2] {
        let [r, c] = self.dims[..] else {
            panic!("expected 2-D tensor, got {:?}", self.dims)
        };
        [r, c]
    }

    /// Element-wise conversion to another scalar type (via f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}
