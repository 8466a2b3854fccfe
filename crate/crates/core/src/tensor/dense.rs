use super::{gemm, LayerGrad, Tensor};
use crate::error::{Error, Result};

/// `out = weights · input + bias` for `weights: [m, n]`.
pub fn fully_connected_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    weights.expect_rank("fully_connected", 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::shape("fully_connected (input)", &[n], input.shape()));
    }
    if bias.shape() != [m] {
        return Err(Error::shape("fully_connected (bias)", &[m], bias.shape()));
    }
    let mut out = bias.data().to_vec();
    gemm(m, n, 1, weights.data(), (n, 1), input.data(), (1, 1), 1.0, &mut out, (1, 1));
    Ok(Tensor::from_vec(out))
}

/// `d_params` is `[d_weights, d_bias]`; `d_weights = d_output ⊗ input`.
/// The input gradient keeps the input's shape.
pub fn fully_connected_backward(
    input: &Tensor,
    weights: &Tensor,
    d_output: &Tensor,
) -> Result<LayerGrad> {
    weights.expect_rank("fully_connected_backward", 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::shape("fully_connected_backward (input)", &[n], input.shape()));
    }
    if d_output.len() != m {
        return Err(Error::shape("fully_connected_backward (d_output)", &[m], d_output.shape()));
    }
    let x = input.data();
    let g = d_output.data();
    let mut d_w = Vec::with_capacity(m * n);
    for &gi in g {
        d_w.extend(x.iter().map(|&xj| gi * xj));
    }
    let mut d_x = vec![0.0; n];
    gemm(1, m, n, g, (m, 1), weights.data(), (n, 1), 0.0, &mut d_x, (n, 1));
    Ok(LayerGrad {
        d_input: Tensor {
            shape: input.shape.clone(),
            data: d_x,
        },
        d_params: vec![
            Tensor {
                shape: vec![m, n],
                data: d_w,
            },
            Tensor::from_vec(g.to_vec()),
        ],
    })
}
