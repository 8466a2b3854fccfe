//! Minimal dense tensor engine.
//!
//! Only the layer kinds needed by the two detection networks are provided:
//! valid 2-D convolution, 2×2 max pooling, leaky ReLU, pairwise maxout,
//! fully connected layers, a two-way softmax, binary cross entropy and
//! inverted dropout. Every op is a pure function of its inputs (plus an
//! explicit RNG for dropout) and has a matching backward pass.

mod activation;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use activation::{
    leaky_relu, leaky_relu_backward, maxout_pairs, maxout_pairs_backward, softmax2,
    softmax2_backward, MaxoutIndices,
};
pub use conv::{conv2d_backward, conv2d_backward_cols, conv2d_forward, conv2d_forward_cols, Im2Col};
pub use dense::{fully_connected_backward, fully_connected_forward};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use loss::bce_loss;
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndices};

use crate::error::{Error, Result};

/// Scalar type used for all network weights and activations.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || expected != data.len() {
            return Err(Error::invalid(
                "Tensor::new",
                format!("shape {shape:?} does not describe {} elements", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: Real) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<Real>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::invalid(
                op,
                format!("expected rank {rank}, got shape {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

/// Gradients produced by a layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_input: Tensor,
    pub d_params: Vec<Tensor>,
}

/// `c = a · b + beta · c` over row/column strided views.
///
/// # Safety contract
/// Callers pass slices whose lengths cover every strided access; this is
/// checked with debug assertions on the extreme index.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    (rsa, csa): (usize, usize),
    b: &[Real],
    (rsb, csb): (usize, usize),
    beta: Real,
    c: &mut [Real],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        #[cfg(not(feature = "f32"))]
        let f = matrixmultiply::dgemm;
        #[cfg(feature = "f32")]
        let f = matrixmultiply::sgemm;
        f(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
