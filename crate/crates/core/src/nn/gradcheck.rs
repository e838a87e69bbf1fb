//! Central-difference gradient checking for `f64` graphs.

use super::{Tensor, Var};
use crate::rng;

/// Worst relative L2 error, over all inputs, between backprop gradients of
/// `mean((f(x) + r)²)` and central differences with step `h`. The random
/// readout `r` (seeded) makes every output element contribute.
pub fn relative_error(seed: u64, inputs: &[Tensor<f64>], h: f64, f: impl Fn(&[Var<f64>]) -> Var<f64>) -> f64 {
    let mut r = rng::stream(seed, 99);
    let probe_shape = {
        let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::constant).collect();
        f(&vars).shape().to_vec()
    };
    let readout = rng::normal_tensor::<f64>(&mut r, &probe_shape);
    let loss = |vars: &[Var<f64>]| -> Var<f64> {
        let y = f(vars);
        let zero = Var::constant(Tensor::zeros(y.shape()));
        y.add(&Var::constant(readout.clone())).mse_loss(&zero)
    };
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    loss(&vars).backward();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = vars[i].grad().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let num: Vec<f64> = (0..input.len())
            .map(|j| {
                let eval = |delta: f64| {
                    let mut moved = inputs.to_vec();
                    moved[i].data_mut()[j] += delta;
                    let consts: Vec<Var<f64>> = moved.into_iter().map(Var::constant).collect();
                    loss(&consts).value().item()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        let diff = analytic.data().iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt() + num.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    worst
}
