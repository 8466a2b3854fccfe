use super::{LayerGrad, Tensor};
use crate::error::{Error, Result};

/// Argmax positions recorded by [`maxpool2_forward`], as flat indices into
/// the forward input.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max pooling with stride 2. A trailing odd row or column is dropped.
/// Ties resolve to the first element of the window in row-major order.
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    input.expect_rank("maxpool2", 3)?;
    let [c, h, w] = [input.shape[0], input.shape[1], input.shape[2]];
    if h < 2 || w < 2 {
        return Err(Error::invalid(
            "maxpool2",
            format!("spatial size {h}x{w} is smaller than the 2x2 window"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            let top = (ch * h + 2 * i) * w;
            let bottom = top + w;
            for j in 0..ow {
                let window = [top + 2 * j, top + 2 * j + 1, bottom + 2 * j, bottom + 2 * j + 1];
                let mut best = window[0];
                for &idx in &window[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    let output_shape = vec![c, oh, ow];
    Ok((
        Tensor {
            shape: output_shape.clone(),
            data: out,
        },
        PoolIndices {
            input_shape: input.shape.clone(),
            output_shape,
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the position that won the forward max.
pub fn maxpool2_backward(indices: &PoolIndices, d_output: &Tensor) -> Result<LayerGrad> {
    if d_output.shape() != indices.output_shape.as_slice() {
        return Err(Error::shape(
            "maxpool2_backward",
            &indices.output_shape,
            d_output.shape(),
        ));
    }
    let mut d_input = Tensor::zeros(&indices.input_shape);
    let dst = d_input.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(d_output.data()) {
        dst[idx] += g;
    }
    Ok(LayerGrad {
        d_input,
        d_params: Vec::new(),
    })
}
