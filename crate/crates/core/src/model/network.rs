use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, NetworkSpec, MA_CLASS};
use crate::error::{Error, Result};
use crate::tensor::{self, DropoutMask, Im2Col, MaxoutIndices, PoolIndices, Real, Tensor};

/// Learnable tensors, one list per layer (`[weights, bias]` for conv and
/// fully connected layers, empty otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Vec<Tensor>>);

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        Ok(Params(
            spec.param_shapes()?
                .into_iter()
                .map(|layer| layer.iter().map(|s| Tensor::zeros(s)).collect())
                .collect(),
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Params(
            self.0
                .iter()
                .map(|layer| layer.iter().map(|t| Tensor::zeros(t.shape())).collect())
                .collect(),
        )
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.0.iter_mut().flatten()
    }

    pub fn count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Same layout as `other`.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape()))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: Real) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }
}

/// He initialisation: weights ~ N(0, sqrt(2 / fan_in)), biases zero.
/// Deterministic for a given seed.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Params> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(spec)?;
    for layer in params.0.iter_mut() {
        let Some(weights) = layer.first_mut() else {
            continue;
        };
        let fan_in: usize = weights.shape()[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        for w in weights.data_mut() {
            *w = normal.sample(&mut rng) as Real;
        }
    }
    Ok(params)
}

/// Forward mode. Training mode applies dropout with the given RNG.
pub enum Mode<'a> {
    Train(&'a mut dyn rand::RngCore),
    Infer,
}

enum Cache {
    Conv(Im2Col),
    Pool(PoolIndices),
    Leaky(Tensor),
    Dropout(Option<DropoutMask>),
    Fc(Tensor),
    Maxout(MaxoutIndices),
    Softmax(Tensor),
}

/// Cached intermediate values of one forward pass.
pub struct Trace {
    caches: Vec<Cache>,
    shapes: Vec<Vec<usize>>,
    output: Tensor,
}

impl Trace {
    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Softmax output `[p_non_ma, p_ma]`.
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn check_params(spec: &NetworkSpec, params: &Params) -> Result<()> {
    let shapes = spec.param_shapes()?;
    let ok = shapes.len() == params.0.len()
        && shapes
            .iter()
            .zip(&params.0)
            .all(|(s, p)| s.len() == p.len() && s.iter().zip(p).all(|(a, b)| a.as_slice() == b.shape()));
    if ok {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!(
            "parameters do not match network `{}`",
            spec.name()
        )))
    }
}

fn run(
    spec: &NetworkSpec,
    params: &Params,
    input: &Tensor,
    mut mode: Mode<'_>,
    keep: bool,
) -> Result<(Vec<Cache>, Vec<Vec<usize>>, Tensor)> {
    if input.shape() != spec.input_shape() {
        return Err(Error::shape("network input", &spec.input_shape(), input.shape()));
    }
    let mut caches = Vec::with_capacity(if keep { spec.layers().len() } else { 0 });
    let mut shapes = Vec::with_capacity(if keep { spec.layers().len() } else { 0 });
    let mut x = input.clone();
    for (layer, p) in spec.layers().iter().zip(&params.0) {
        let (y, cache) = match *layer {
            LayerSpec::Conv { .. } => {
                let (y, cols) = tensor::conv2d_forward_cols(&x, &p[0], &p[1])?;
                (y, Cache::Conv(cols))
            }
            LayerSpec::MaxPool2 => {
                let (y, idx) = tensor::maxpool2_forward(&x)?;
                (y, Cache::Pool(idx))
            }
            LayerSpec::LeakyRelu { slope } => {
                let y = tensor::leaky_relu(&x, slope as Real);
                (y, Cache::Leaky(if keep { x } else { Tensor::zeros(&[1]) }))
            }
            LayerSpec::Dropout { p: rate } => match &mut mode {
                Mode::Train(rng) => {
                    let (y, mask) = tensor::dropout(&x, rate as Real, *rng, true)?;
                    (y, Cache::Dropout(mask))
                }
                Mode::Infer => (x, Cache::Dropout(None)),
            },
            LayerSpec::FullyConnected { .. } => {
                let y = tensor::fully_connected_forward(&x, &p[0], &p[1])?;
                (y, Cache::Fc(if keep { x } else { Tensor::zeros(&[1]) }))
            }
            LayerSpec::Maxout => {
                let (y, idx) = tensor::maxout_pairs(&x)?;
                (y, Cache::Maxout(idx))
            }
            LayerSpec::Softmax => {
                let y = tensor::softmax2(&x)?;
                (y.clone(), Cache::Softmax(y))
            }
        };
        if keep {
            caches.push(cache);
            shapes.push(y.shape().to_vec());
        }
        x = y;
    }
    Ok((caches, shapes, x))
}

/// Forward pass keeping everything the backward pass needs.
pub fn forward(spec: &NetworkSpec, params: &Params, input: &Tensor, mode: Mode<'_>) -> Result<Trace> {
    check_params(spec, params)?;
    let (caches, shapes, output) = run(spec, params, input, mode, true)?;
    Ok(Trace { caches, shapes, output })
}

/// Inference-mode forward pass returning the MA-class probability.
pub fn predict(spec: &NetworkSpec, params: &Params, input: &Tensor) -> Result<Real> {
    let (_, _, out) = run(spec, params, input, Mode::Infer, false)?;
    Ok(out.data()[MA_CLASS])
}

/// Backpropagate `d_output` (gradient w.r.t. the softmax output) through a
/// recorded trace. Returns parameter gradients in the layout of `params`.
pub fn backward(spec: &NetworkSpec, params: &Params, trace: &Trace, d_output: &Tensor) -> Result<Params> {
    let mut grads = params.zeros_like();
    let mut g = d_output.clone();
    let n = spec.layers().len();
    for i in (0..n).rev() {
        let layer = &spec.layers()[i];
        let p = &params.0[i];
        g = match (layer, &trace.caches[i]) {
            (LayerSpec::Conv { .. }, Cache::Conv(cols)) => {
                let (d_in, d_k, d_b) = tensor::conv2d_backward_cols(cols, &p[0], &g, i > 0)?;
                grads.0[i] = vec![d_k, d_b];
                match d_in {
                    Some(d) => d,
                    None => break,
                }
            }
            (LayerSpec::MaxPool2, Cache::Pool(idx)) => tensor::maxpool2_backward(idx, &g)?.d_input,
            (LayerSpec::LeakyRelu { slope }, Cache::Leaky(x)) => {
                tensor::leaky_relu_backward(x, *slope as Real, &g)?.d_input
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout(mask)) => {
                tensor::dropout_backward(mask.as_ref(), &g)?.d_input
            }
            (LayerSpec::FullyConnected { .. }, Cache::Fc(x)) => {
                let lg = tensor::fully_connected_backward(x, &p[0], &g)?;
                grads.0[i] = lg.d_params;
                lg.d_input
            }
            (LayerSpec::Maxout, Cache::Maxout(idx)) => tensor::maxout_pairs_backward(idx, &g)?.d_input,
            (LayerSpec::Softmax, Cache::Softmax(probs)) => tensor::softmax2_backward(probs, &g)?.d_input,
            _ => unreachable!("trace recorded by the same spec"),
        };
    }
    Ok(grads)
}

/// Per-sample loss and parameter gradient for the binary cross entropy on
/// the MA-class probability. `label` is 1 for MA, 0 otherwise. A
/// non-finite output yields a NaN loss with zero gradients so the caller
/// can report divergence.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    params: &Params,
    input: &Tensor,
    label: u8,
    mode: Mode<'_>,
) -> Result<(Real, Real, Params)> {
    let trace = forward(spec, params, input, mode)?;
    let p = trace.output().data()[MA_CLASS];
    if !p.is_finite() {
        return Ok((Real::NAN, p, params.zeros_like()));
    }
    let (loss, d_p) = tensor::bce_loss(p, Real::from(label))?;
    let mut d_out = Tensor::zeros(&[2]);
    d_out.data_mut()[MA_CLASS] = d_p;
    let grads = backward(spec, params, &trace, &d_out)?;
    Ok((loss, p, grads))
}

/// Draw a fresh RNG for dropout from a base seed and two counters.
pub fn sample_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(b);
    rng
}
