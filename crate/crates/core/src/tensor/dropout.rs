use rand::Rng;

use super::{LayerGrad, Real, Tensor};
use crate::error::{Error, Result};

/// Per-element scale applied in a training-mode dropout pass: `0` for
/// dropped units, `1/(1−p)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<Real>);

/// Inverted dropout. In inference mode, or when `p == 0`, the input is
/// returned unchanged and no mask is produced.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    p: Real,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid("dropout", format!("probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<Real> = (0..input.len())
        .map(|_| if (rng.random::<f64>() as Real) < p { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((
        Tensor {
            shape: input.shape.clone(),
            data,
        },
        Some(DropoutMask(mask)),
    ))
}

pub fn dropout_backward(mask: Option<&DropoutMask>, d_output: &Tensor) -> Result<LayerGrad> {
    let d_input = match mask {
        None => d_output.clone(),
        Some(DropoutMask(m)) => {
            if m.len() != d_output.len() {
                return Err(Error::shape("dropout_backward", &[m.len()], d_output.shape()));
            }
            Tensor {
                shape: d_output.shape.clone(),
                data: d_output.data().iter().zip(m).map(|(g, s)| g * s).collect(),
            }
        }
    };
    Ok(LayerGrad {
        d_input,
        d_params: Vec::new(),
    })
}
