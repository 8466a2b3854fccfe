//! Compare analytic convolution and network gradients with central finite
//! differences.

use macnn::model::{init_params, loss_and_grad, LayerSpec, Mode, NetworkSpec};
use macnn::tensor::{conv2d_backward, conv2d_forward, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff < 1e-10 {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

fn main() -> macnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random(&[2, 7, 7], &mut rng);
    let kernels = random(&[3, 2, 3, 3], &mut rng);
    let bias = random(&[3], &mut rng);
    let weights = random(&[3, 5, 5], &mut rng);

    // Scalar objective: weighted sum of the convolution output.
    let objective = |k: &Tensor| -> f64 {
        let out = conv2d_forward(&input, k, &bias).unwrap();
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let grad = conv2d_backward(&input, &kernels, &weights)?;
    let mut worst: f64 = 0.0;
    for i in 0..kernels.len() {
        let mut plus = kernels.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = kernels.clone();
        minus.data_mut()[i] -= EPS;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
        worst = worst.max(rel_err(numeric, grad.d_params[0].data()[i]));
    }
    println!("conv kernel gradient: worst relative error {worst:.2e}");

    // A narrow network with the basic architecture's layer kinds. At full
    // size, central differences straddle too many activation kinks to be a
    // clean check.
    use LayerSpec::*;
    let spec = NetworkSpec::new(
        "small",
        [3, 21, 21],
        vec![
            Conv { out_channels: 4, kernel: 4 },
            LeakyRelu { slope: 0.01 },
            MaxPool2,
            Conv { out_channels: 4, kernel: 3 },
            LeakyRelu { slope: 0.01 },
            MaxPool2,
            FullyConnected { out: 8 },
            Maxout,
            FullyConnected { out: 2 },
            Softmax,
        ],
    )?;
    let params = init_params(&spec, 5)?;
    let [c, h, w] = spec.input_shape();
    let patch = random(&[c, h, w], &mut rng);
    let (_, _, g) = loss_and_grad(&spec, &params, &patch, 1, Mode::Infer)?;
    let loss = |p: &macnn::model::Params| loss_and_grad(&spec, p, &patch, 1, Mode::Infer).unwrap().0;
    let (mut worst, mut worst_abs, mut largest): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (layer, tensors) in params.0.iter().enumerate() {
        for (t, tensor) in tensors.iter().enumerate() {
            for i in 0..tensor.len() {
                let mut plus = params.clone();
                plus.0[layer][t].data_mut()[i] += EPS;
                let mut minus = params.clone();
                minus.0[layer][t].data_mut()[i] -= EPS;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
                let analytic = g.0[layer][t].data()[i];
                worst = worst.max(rel_err(numeric, analytic));
                worst_abs = worst_abs.max((numeric - analytic).abs());
                largest = largest.max(analytic.abs());
            }
        }
    }
    println!(
        "small network, every parameter: largest gradient {largest:.3}, worst absolute gap {worst_abs:.2e}, worst relative error {worst:.2e}"
    );
    Ok(())
}
