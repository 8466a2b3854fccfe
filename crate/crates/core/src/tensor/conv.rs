use super::{gemm, LayerGrad, Real, Tensor};
use crate::error::{Error, Result};

/// Unrolled receptive fields of a valid, stride-1 convolution.
///
/// Row `c·kh·kw + u·kw + v`, column `i·out_w + j` holds
/// `input[c, i + u, j + v]`. Kept from the forward pass so the backward
/// pass does not rebuild it.
#[derive(Debug, Clone)]
pub struct Im2Col {
    input_shape: [usize; 3],
    kernel: [usize; 2],
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Im2Col {
    fn build(input: &Tensor, kh: usize, kw: usize) -> Self {
        let [c_in, h, w] = [input.shape[0], input.shape[1], input.shape[2]];
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let rows = c_in * kh * kw;
        let cols = oh * ow;
        let mut data = vec![0.0; rows * cols];
        let src = input.data();
        for c in 0..c_in {
            for u in 0..kh {
                for v in 0..kw {
                    let r = (c * kh + u) * kw + v;
                    let dst = &mut data[r * cols..(r + 1) * cols];
                    for i in 0..oh {
                        let s = (c * h + i + u) * w + v;
                        dst[i * ow..(i + 1) * ow].copy_from_slice(&src[s..s + ow]);
                    }
                }
            }
        }
        Self {
            input_shape: [c_in, h, w],
            kernel: [kh, kw],
            rows,
            cols,
            data,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }
}

fn check_conv_shapes(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<()> {
    input.expect_rank("conv2d", 3)?;
    kernels.expect_rank("conv2d", 4)?;
    let (ks, is) = (kernels.shape(), input.shape());
    if ks[1] != is[0] {
        return Err(Error::shape("conv2d (input channels)", &[ks[1]], &[is[0]]));
    }
    if ks[2] > is[1] || ks[3] > is[2] {
        return Err(Error::shape("conv2d (kernel larger than input)", is, ks));
    }
    if bias.shape() != [ks[0]] {
        return Err(Error::shape("conv2d (bias)", &[ks[0]], bias.shape()));
    }
    Ok(())
}

/// Valid stride-1 convolution (cross-correlation):
/// `out[o,i,j] = bias[o] + Σ input[c,i+u,j+v]·kernels[o,c,u,v]`.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    conv2d_forward_cols(input, kernels, bias).map(|(out, _)| out)
}

/// [`conv2d_forward`] that also returns the unrolled input for reuse in
/// [`conv2d_backward_cols`].
pub fn conv2d_forward_cols(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Im2Col)> {
    check_conv_shapes(input, kernels, bias)?;
    let ks = kernels.shape();
    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
    let cols = Im2Col::build(input, kh, kw);
    let (oh, ow) = (input.shape[1] - kh + 1, input.shape[2] - kw + 1);
    let mut out = Vec::with_capacity(c_out * cols.cols);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, cols.cols));
    }
    gemm(
        c_out,
        cols.rows,
        cols.cols,
        kernels.data(),
        (cols.rows, 1),
        &cols.data,
        (cols.cols, 1),
        1.0,
        &mut out,
        (cols.cols, 1),
    );
    Ok((
        Tensor {
            shape: vec![c_out, oh, ow],
            data: out,
        },
        cols,
    ))
}

/// Gradients of a convolution with respect to input, kernels and bias.
/// `d_params` is `[d_kernels, d_bias]`.
pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, d_output: &Tensor) -> Result<LayerGrad> {
    input.expect_rank("conv2d_backward", 3)?;
    kernels.expect_rank("conv2d_backward", 4)?;
    let ks = kernels.shape();
    let zero_bias = Tensor::zeros(&[ks[0]]);
    check_conv_shapes(input, kernels, &zero_bias)?;
    let cols = Im2Col::build(input, ks[2], ks[3]);
    let (d_input, d_kernels, d_bias) = conv2d_backward_cols(&cols, kernels, d_output, true)?;
    Ok(LayerGrad {
        d_input: d_input.expect("input gradient requested"),
        d_params: vec![d_kernels, d_bias],
    })
}

/// Backward pass from a cached [`Im2Col`]. The input gradient is skipped
/// when `need_input_grad` is false (first layer of a network).
pub fn conv2d_backward_cols(
    cols: &Im2Col,
    kernels: &Tensor,
    d_output: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let [c_in, h, w] = cols.input_shape;
    let [kh, kw] = cols.kernel;
    let c_out = kernels.shape()[0];
    if kernels.shape() != [c_out, c_in, kh, kw] {
        return Err(Error::shape(
            "conv2d_backward (kernels)",
            &[c_out, c_in, kh, kw],
            kernels.shape(),
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if d_output.shape() != [c_out, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward (d_output)",
            &[c_out, oh, ow],
            d_output.shape(),
        ));
    }
    let p = cols.cols;
    let dout = d_output.data();

    let d_bias: Vec<Real> = dout.chunks_exact(p).map(|row| row.iter().sum()).collect();

    // d_kernels = d_out (c_out × p) · colsᵀ (p × rows)
    let mut d_kernels = vec![0.0; c_out * cols.rows];
    gemm(
        c_out,
        p,
        cols.rows,
        dout,
        (p, 1),
        &cols.data,
        (1, p),
        0.0,
        &mut d_kernels,
        (cols.rows, 1),
    );

    let d_input = if need_input_grad {
        // d_cols = kernelsᵀ (rows × c_out) · d_out (c_out × p)
        let mut d_cols = vec![0.0; cols.rows * p];
        gemm(
            cols.rows,
            c_out,
            p,
            kernels.data(),
            (1, cols.rows),
            dout,
            (p, 1),
            0.0,
            &mut d_cols,
            (p, 1),
        );
        let mut d_in = vec![0.0; c_in * h * w];
        for c in 0..c_in {
            for u in 0..kh {
                for v in 0..kw {
                    let r = (c * kh + u) * kw + v;
                    let src = &d_cols[r * p..(r + 1) * p];
                    for i in 0..oh {
                        let base = (c * h + i + u) * w + v;
                        let dst = &mut d_in[base..base + ow];
                        for (d, s) in dst.iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        Some(Tensor {
            shape: vec![c_in, h, w],
            data: d_in,
        })
    } else {
        None
    };

    Ok((
        d_input,
        Tensor {
            shape: kernels.shape().to_vec(),
            data: d_kernels,
        },
        Tensor {
            shape: vec![c_out],
            data: d_bias,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_windows() {
        let input = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&input, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn first_layer_shape_of_basic_network() {
        let input = Tensor::zeros(&[3, 101, 101]);
        let k = Tensor::zeros(&[16, 3, 6, 6]);
        let out = conv2d_forward(&input, &k, &Tensor::zeros(&[16])).unwrap();
        assert_eq!(out.shape(), &[16, 96, 96]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let input = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[1, 3, 2, 2]);
        let err = conv2d_forward(&input, &k, &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        let k = Tensor::zeros(&[1, 2, 6, 6]);
        assert!(conv2d_forward(&input, &k, &Tensor::zeros(&[1])).is_err());
        let k = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(conv2d_forward(&input, &k, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let input = Tensor::filled(&[2, 4, 4], 0.3);
        let k = Tensor::filled(&[3, 2, 2, 2], -0.7);
        let g = conv2d_backward(&input, &k, &Tensor::zeros(&[3, 3, 3])).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn bias_gradient_is_channel_sum() {
        let input = Tensor::filled(&[1, 4, 4], 1.0);
        let k = Tensor::filled(&[2, 1, 2, 2], 1.0);
        let d_out = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as Real).collect()).unwrap();
        let g = conv2d_backward(&input, &k, &d_out).unwrap();
        assert_eq!(g.d_params[1].data(), &[36.0, 117.0]);
    }

    #[test]
    fn stale_d_output_is_rejected() {
        let input = Tensor::zeros(&[1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv2d_backward(&input, &k, &Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
