use super::{LayerGrad, Real, Tensor};
use crate::error::{Error, Result};

/// `f(x) = x` for `x ≥ 0`, `slope · x` otherwise.
pub fn leaky_relu(input: &Tensor, slope: Real) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect();
    Tensor {
        shape: input.shape.clone(),
        data,
    }
}

/// The subgradient at exactly zero is 1.
pub fn leaky_relu_backward(input: &Tensor, slope: Real, d_output: &Tensor) -> Result<LayerGrad> {
    if input.shape() != d_output.shape() {
        return Err(Error::shape("leaky_relu_backward", input.shape(), d_output.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect();
    Ok(LayerGrad {
        d_input: Tensor {
            shape: input.shape.clone(),
            data,
        },
        d_params: Vec::new(),
    })
}

/// Which element of each pair won in [`maxout_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaxoutIndices {
    input_len: usize,
    winners: Vec<usize>,
}

/// `out[i] = max(in[2i], in[2i+1])`; ties pick the lower index.
pub fn maxout_pairs(input: &Tensor) -> Result<(Tensor, MaxoutIndices)> {
    let n = input.len();
    if n % 2 != 0 {
        return Err(Error::invalid("maxout_pairs", format!("odd input length {n}")));
    }
    let src = input.data();
    let mut out = Vec::with_capacity(n / 2);
    let mut winners = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let w = if src[2 * i + 1] > src[2 * i] { 2 * i + 1 } else { 2 * i };
        out.push(src[w]);
        winners.push(w);
    }
    Ok((
        Tensor::from_vec(out),
        MaxoutIndices {
            input_len: n,
            winners,
        },
    ))
}

pub fn maxout_pairs_backward(indices: &MaxoutIndices, d_output: &Tensor) -> Result<LayerGrad> {
    if d_output.len() != indices.winners.len() {
        return Err(Error::shape(
            "maxout_pairs_backward",
            &[indices.winners.len()],
            d_output.shape(),
        ));
    }
    let mut d_in = vec![0.0; indices.input_len];
    for (&w, &g) in indices.winners.iter().zip(d_output.data()) {
        d_in[w] = g;
    }
    Ok(LayerGrad {
        d_input: Tensor::from_vec(d_in),
        d_params: Vec::new(),
    })
}

/// Two-way softmax with max subtraction.
pub fn softmax2(logits: &Tensor) -> Result<Tensor> {
    if logits.len() != 2 {
        return Err(Error::shape("softmax2", &[2], logits.shape()));
    }
    let z = logits.data();
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    Ok(Tensor::from_vec(vec![e0 / s, e1 / s]))
}

/// Backward through the softmax given its output `probs`:
/// `dz_i = p_i (dp_i − Σ_j dp_j p_j)`.
pub fn softmax2_backward(probs: &Tensor, d_probs: &Tensor) -> Result<LayerGrad> {
    if probs.len() != 2 || d_probs.len() != 2 {
        return Err(Error::shape("softmax2_backward", &[2], d_probs.shape()));
    }
    let p = probs.data();
    let g = d_probs.data();
    let dot = p[0] * g[0] + p[1] * g[1];
    Ok(LayerGrad {
        d_input: Tensor::from_vec(vec![p[0] * (g[0] - dot), p[1] * (g[1] - dot)]),
        d_params: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_branches() {
        let x = Tensor::from_vec(vec![5.0, -1.0, 0.0]);
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y.data()[0], 5.0);
        assert!((y.data()[1] + 0.01).abs() < 1e-15);
        assert_eq!(y.data()[2], 0.0);
        let g = leaky_relu_backward(&x, 0.01, &Tensor::filled(&[3], 1.0)).unwrap();
        assert_eq!(g.d_input.data()[2], 1.0);
        assert!((g.d_input.data()[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn maxout_pairs_and_ties() {
        let (y, idx) = maxout_pairs(&Tensor::from_vec(vec![1.0, 3.0, 2.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        let g = maxout_pairs_backward(&idx, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.d_input.data(), &[0.0, 1.0, 1.0, 0.0]);

        let (_, idx) = maxout_pairs(&Tensor::filled(&[4], 2.0)).unwrap();
        let g = maxout_pairs_backward(&idx, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(g.d_input.data(), &[1.0, 0.0, 1.0, 0.0]);

        assert!(maxout_pairs(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax2(&Tensor::from_vec(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax2(&Tensor::from_vec(vec![1000.0, 0.0])).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-300);
    }
}
