#![allow(dead_code)]

use adml_core::model::{forward, init_params, MlpParams};
use adml_core::numerics::streams;
use adml_core::{LabeledPoint, SeededRng};

/// He-initialised parameters with small random biases, so ReLU patterns vary.
pub fn random_params(dims: &[usize], seed: u64) -> MlpParams {
    let mut p = init_params(dims, SeededRng::new(seed, streams::INIT)).unwrap();
    let mut rng = SeededRng::new(seed, 1000);
    for b in p.biases_mut() {
        for v in b.iter_mut() {
            *v = rng.uniform(-0.3, 0.3);
        }
    }
    p
}

pub fn random_input(k: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..k).map(|_| rng.uniform(0.05, 0.95)).collect()
}

pub fn random_point(k: usize, label: u32, rng: &mut SeededRng) -> LabeledPoint {
    LabeledPoint::new(random_input(k, rng), label)
}

/// Whether every hidden pre-activation at `x` is at least `margin` from the kink.
pub fn smooth_at(params: &MlpParams, x: &[f64], margin: f64) -> bool {
    match forward(params, x) {
        Ok(t) => {
            let hidden = t.pre_activations.len() - 1;
            t.pre_activations[..hidden].iter().flatten().all(|z| z.abs() > margin)
        }
        Err(_) => false,
    }
}

/// Norm-wise relative error.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}
