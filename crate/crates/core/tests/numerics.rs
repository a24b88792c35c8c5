mod common;

use adml_core::model::{adam_step, embed, init_params, AdamState, MlpParams};
use adml_core::numerics::{lp_norm, project_ball, streams};
use adml_core::{BallSpec, Norm, SeededRng};
use common::*;
use proptest::prelude::*;

/// Textbook ADAM over a flat parameter vector, decay applied before the step.
fn reference_adam(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, lr: f64, wd: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for i in 0..theta.len() {
        theta[i] -= lr * wd * theta[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / (1.0 - b1.powi(t));
        let vh = v[i] / (1.0 - b2.powi(t));
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

fn flat(p: &MlpParams) -> Vec<f64> {
    p.tensors().flat_map(|t| t.iter().copied()).collect()
}

fn unflat(like: &MlpParams, values: &[f64]) -> MlpParams {
    let mut p = like.clone();
    let mut it = values.iter();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = *it.next().unwrap();
        }
    }
    p
}

#[test]
fn adam_matches_reference() {
    let mut params = random_params(&[3, 4, 2], 1);
    let mut state = AdamState::new(&params, 0.01, 0.05);
    let mut theta = flat(&params);
    let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
    let mut rng = SeededRng::new(1, 60);
    for t in 1..=25 {
        let g: Vec<f64> = (0..theta.len()).map(|_| rng.normal()).collect();
        let grads = unflat(&params, &g);
        state.apply(&mut params, &grads).unwrap();
        reference_adam(&mut theta, &mut m, &mut v, &g, t, 0.01, 0.05);
        for (a, b) in flat(&params).iter().zip(&theta) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    assert_eq!(state.step, 25);
}

#[test]
fn adam_is_deterministic_and_pure() {
    let params = random_params(&[3, 4, 2], 2);
    let grads = random_params(&[3, 4, 2], 3);
    let state = AdamState::new(&params, 1e-3, 0.0);
    let a = adam_step(&params, &grads, &state).unwrap();
    let b = adam_step(&params, &grads, &state).unwrap();
    assert_eq!(a, b);
    assert_eq!(state.step, 0);
    let zero = adam_step(&params, &params.zeros_like(), &state).unwrap();
    assert_eq!(zero.0, params);
    let mut bad = grads.clone();
    bad.biases_mut()[0][0] = f64::NAN;
    assert_eq!(adam_step(&params, &bad, &state).unwrap_err(), adml_core::Error::Diverged);
}

#[test]
fn init_is_reproducible_and_he_scaled() {
    let a = init_params(&[400, 300, 2], SeededRng::new(5, streams::INIT)).unwrap();
    assert_eq!(a, init_params(&[400, 300, 2], SeededRng::new(5, streams::INIT)).unwrap());
    let w = a.weights()[0].data();
    let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
    assert!((var - 2.0 / 400.0).abs() < 0.05 * 2.0 / 400.0, "{var}");
    assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
}

#[test]
fn embeddings_are_unit_vectors() {
    let mut rng = SeededRng::new(6, 61);
    for seed in 0..50 {
        let p = random_params(&[5, 7, 3], seed);
        let e = embed(&p, &random_input(5, &mut rng)).unwrap();
        assert!((lp_norm(&e, Norm::L2).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let a: Vec<u64> = {
        let mut r = SeededRng::new(3, streams::DATA).substream(4);
        (0..100).map(|_| r.next_u64()).collect()
    };
    let mut r = SeededRng::new(3, streams::DATA).substream(4);
    assert!(a.iter().all(|&v| v == r.next_u64()));
    let mut other = SeededRng::new(3, streams::DATA).substream(5);
    let b: Vec<u64> = (0..100).map(|_| other.next_u64()).collect();
    assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    let mut c = SeededRng::new(3, streams::ATTACK_INIT).substream(4);
    assert_ne!(a[0], c.next_u64());
}

#[test]
fn uniform_draws_have_expected_moments() {
    let mut r = SeededRng::new(9, 62);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| r.next_f64()).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 5.0 * (1.0 / 12.0f64 / n as f64).sqrt());
    let zs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
    let zm = zs.iter().sum::<f64>() / n as f64;
    let zv = zs.iter().map(|z| (z - zm) * (z - zm)).sum::<f64>() / n as f64;
    assert!(zm.abs() < 5.0 / (n as f64).sqrt());
    assert!((zv - 1.0).abs() < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ball_projection_contract(seed in any::<u64>(), l2 in any::<bool>(), eps in 0.0f64..3.0) {
        let mut r = SeededRng::new(seed, 63);
        let k = 1 + r.below(16);
        let norm = if l2 { Norm::L2 } else { Norm::Linf };
        let ball = BallSpec::new(norm, eps, vec![0.0; k]).unwrap();
        let d: Vec<f64> = (0..k).map(|_| 4.0 * r.normal()).collect();
        let p = project_ball(&d, &ball).unwrap();
        prop_assert!(ball.contains_offset(&p));
        prop_assert_eq!(project_ball(&p, &ball).unwrap(), p.clone());
        if ball.contains_offset(&d) {
            prop_assert_eq!(p, d);
        }
    }

    #[test]
    fn below_stays_in_range(seed in any::<u64>(), n in 1usize..1000) {
        let mut r = SeededRng::new(seed, 64);
        for _ in 0..20 {
            prop_assert!(r.below(n) < n);
        }
    }
}
