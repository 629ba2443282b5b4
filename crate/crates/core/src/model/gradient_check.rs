//! Finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::{Architecture, InputShape, LayerSpec, ModelWeights, Network};
use crate::dataset::Dataset;

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
const FLOOR: f64 = 1e-5;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Max relative error between backprop and central differences of the mean
/// batch loss, at seeded random weights.
pub fn gradient_check(arch: &Architecture, batch: &Dataset, seed: u64) -> f64 {
    let net = Network::new(arch).expect("valid architecture");
    let w = net.init_weights(seed);
    gradient_check_at(&net, &w, batch)
}

pub fn gradient_check_at(net: &Network, w: &ModelWeights, batch: &Dataset) -> f64 {
    let (_, analytic) = net.loss_and_gradient(w, batch);
    let mut probe = w.clone();
    let mut worst: f64 = 0.0;
    for t in 0..w.tensors().len() {
        for j in 0..w.tensors()[t].values.len() {
            let orig = w.tensors()[t].values[j];
            probe.tensors_mut()[t].values[j] = orig + STEP;
            let up = net.loss(&probe, batch);
            probe.tensors_mut()[t].values[j] = orig - STEP;
            let down = net.loss(&probe, batch);
            probe.tensors_mut()[t].values[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_error(analytic.tensors()[t].values[j], numeric));
        }
    }
    worst
}

/// Checks one layer in isolation under the loss `sum(c * y)` with random
/// `c`, covering both the input gradient and any parameter gradients.
pub fn layer_gradient_check(spec: LayerSpec, input: InputShape, seed: u64) -> f64 {
    let arch = Architecture {
        input,
        hidden: vec![spec],
        classes: 1,
    };
    let net = Network::new(&arch).expect("layer fits input");
    let layer = net.layers[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = net.init_weights(seed);
    let x: Vec<f64> = (0..layer.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..layer.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let objective = |w: &ModelWeights, x: &[f64]| -> f64 {
        let mut y = vec![0.0; layer.output_len()];
        let mut am = vec![0; layer.output_len()];
        layer.forward(w, x, &mut y, &mut am);
        y.iter().zip(&c).map(|(a, b)| a * b).sum()
    };

    let mut y = vec![0.0; layer.output_len()];
    let mut am = vec![0; layer.output_len()];
    layer.forward(&w, &x, &mut y, &mut am);
    let mut grads = w.zeros_like();
    let mut dx = vec![0.0; layer.input_len()];
    layer.backward(&w, &x, &c, &am, &mut grads, Some(&mut dx));

    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + STEP;
        let up = objective(&w, &xp);
        xp[i] = x[i] - STEP;
        let down = objective(&w, &xp);
        xp[i] = x[i];
        worst = worst.max(rel_error(dx[i], (up - down) / (2.0 * STEP)));
    }
    // Only the layer's own tensors; the output layer's are not involved.
    let own = match layer {
        Layer::Dense { weight, bias, .. } | Layer::Conv { weight, bias, .. } => vec![weight, bias],
        _ => Vec::new(),
    };
    let mut probe = w.clone();
    for t in own {
        for j in 0..w.tensors()[t].values.len() {
            let orig = w.tensors()[t].values[j];
            probe.tensors_mut()[t].values[j] = orig + STEP;
            let up = objective(&probe, &x);
            probe.tensors_mut()[t].values[j] = orig - STEP;
            let down = objective(&probe, &x);
            probe.tensors_mut()[t].values[j] = orig;
            worst = worst.max(rel_error(grads.tensors()[t].values[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}
