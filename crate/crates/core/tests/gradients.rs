mod common;

use adml_core::losses::{
    embed_distance, grad_distance, group_loss, loss_grad_component, Component, Group, LossConfig, Pair, Triplet, Which,
};
use adml_core::model::{embed, forward, vjp_input, vjp_params, MlpParams};
use adml_core::numerics::dot;
use adml_core::SeededRng;
use common::*;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn flat(p: &MlpParams) -> Vec<f64> {
    p.tensors().flat_map(|t| t.iter().copied()).collect()
}

fn with_param(p: &MlpParams, idx: usize, value: f64) -> MlpParams {
    let mut q = p.clone();
    let mut seen = 0;
    for t in q.tensors_mut() {
        if idx < seen + t.len() {
            t[idx - seen] = value;
            break;
        }
        seen += t.len();
    }
    q
}

#[test]
fn vjp_input_matches_finite_differences() {
    let mut rng = SeededRng::new(11, 0);
    let mut checked = 0;
    for case in 0..400 {
        let params = random_params(&[6, 9, 7, 3], case);
        let x = random_input(6, &mut rng);
        if !smooth_at(&params, &x, 1e-3) {
            continue;
        }
        let u: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = vjp_input(&params, &forward(&params, &x).unwrap(), &u).unwrap();
        let fd = numeric_grad(|y| dot(&embed(&params, y).unwrap(), &u), &x, H);
        assert!(rel_err(&g, &fd) < TOL, "case {case}: {}", rel_err(&g, &fd));
        checked += 1;
        if checked == 30 {
            break;
        }
    }
    assert_eq!(checked, 30);
}

#[test]
fn vjp_params_matches_finite_differences() {
    let mut rng = SeededRng::new(12, 0);
    let mut checked = 0;
    for case in 0..400 {
        let params = random_params(&[4, 5, 3], case);
        let x = random_input(4, &mut rng);
        if !smooth_at(&params, &x, 1e-3) {
            continue;
        }
        let u: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g = flat(&vjp_params(&params, &forward(&params, &x).unwrap(), &u).unwrap());
        let theta = flat(&params);
        let fd = numeric_grad(
            |t| {
                let idx = t.iter().zip(&theta).position(|(a, b)| a != b);
                let q = match idx {
                    Some(i) => with_param(&params, i, t[i]),
                    None => params.clone(),
                };
                dot(&embed(&q, &x).unwrap(), &u)
            },
            &theta,
            H,
        );
        assert!(rel_err(&g, &fd) < TOL, "case {case}: {}", rel_err(&g, &fd));
        checked += 1;
        if checked == 20 {
            break;
        }
    }
    assert_eq!(checked, 20);
}

#[test]
fn grad_distance_matches_and_is_symmetric() {
    let mut rng = SeededRng::new(13, 0);
    let mut checked = 0;
    for case in 0..400 {
        let params = random_params(&[5, 8, 2], case);
        let (a, b) = (random_input(5, &mut rng), random_input(5, &mut rng));
        if !smooth_at(&params, &a, 1e-3) || !smooth_at(&params, &b, 1e-3) {
            continue;
        }
        if embed_distance(&params, &a, &b).unwrap() < 1e-3 {
            continue;
        }
        let g = grad_distance(&params, &a, &b, Which::First).unwrap();
        let fd = numeric_grad(|y| embed_distance(&params, y, &b).unwrap(), &a, H);
        assert!(rel_err(&g, &fd) < TOL);
        let swapped = grad_distance(&params, &b, &a, Which::Second).unwrap();
        assert!(rel_err(&g, &swapped) < 1e-14);
        checked += 1;
        if checked == 30 {
            break;
        }
    }
    assert_eq!(checked, 30);
}

#[test]
fn loss_grad_component_matches_finite_differences() {
    let mut rng = SeededRng::new(14, 0);
    let contrastive = LossConfig::contrastive();
    let triplet = LossConfig::triplet();
    let mut checked = 0;
    for case in 0..2000 {
        let params = random_params(&[5, 8, 3], case);
        let pts: Vec<_> = (0..3).map(|_| random_input(5, &mut rng)).collect();
        if pts.iter().any(|x| !smooth_at(&params, x, 1e-3)) {
            continue;
        }
        let e: Vec<_> = pts.iter().map(|x| embed(&params, x).unwrap()).collect();
        let d = |i: usize, j: usize| e[i].iter().zip(&e[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d(0, 1) < 1e-3 || d(0, 2) < 1e-3 {
            continue;
        }
        let (group, cfg, comps): (Group, LossConfig, Vec<Component>) = match case % 3 {
            0 => (
                Group::Pair(Pair::new(
                    adml_core::LabeledPoint::new(pts[0].clone(), 0),
                    adml_core::LabeledPoint::new(pts[1].clone(), 0),
                )),
                contrastive,
                vec![Component::Anchor, Component::Other],
            ),
            1 => {
                if (contrastive.margin_alpha - d(0, 1)).abs() < 1e-3 {
                    continue;
                }
                (
                    Group::Pair(Pair::new(
                        adml_core::LabeledPoint::new(pts[0].clone(), 0),
                        adml_core::LabeledPoint::new(pts[1].clone(), 1),
                    )),
                    contrastive,
                    vec![Component::Anchor, Component::Other],
                )
            }
            _ => {
                let gap = d(0, 1) - d(0, 2) + triplet.margin_alpha;
                if gap.abs() < 1e-3 {
                    continue;
                }
                (
                    Group::Triplet(
                        Triplet::new(
                            adml_core::LabeledPoint::new(pts[0].clone(), 0),
                            adml_core::LabeledPoint::new(pts[1].clone(), 0),
                            adml_core::LabeledPoint::new(pts[2].clone(), 1),
                        )
                        .unwrap(),
                    ),
                    triplet,
                    vec![Component::Anchor, Component::Positive, Component::Negative],
                )
            }
        };
        for c in comps {
            let slot = group.slot(c).unwrap();
            let g = loss_grad_component(&params, &cfg, &group, c).unwrap();
            let fd = numeric_grad(
                |y| group_loss(&params, &cfg, &group.with_input(slot, y.to_vec())).unwrap(),
                &group.member(slot).x,
                H,
            );
            assert!(rel_err(&g, &fd) < TOL, "case {case} {c:?}: {}", rel_err(&g, &fd));
        }
        checked += 1;
        if checked == 45 {
            break;
        }
    }
    assert_eq!(checked, 45);
}

#[test]
fn margin_shift_leaves_active_gradient_unchanged() {
    let params = random_params(&[4, 6, 2], 5);
    let mut rng = SeededRng::new(15, 0);
    let a = adml_core::LabeledPoint::new(random_input(4, &mut rng), 0);
    let b = adml_core::LabeledPoint::new(random_input(4, &mut rng), 1);
    let group = Group::Pair(Pair::new(a, b));
    let cfg = LossConfig {
        margin_alpha: 3.0,
        ..LossConfig::contrastive()
    };
    let wider = LossConfig {
        margin_alpha: 5.0,
        ..cfg
    };
    assert_eq!(
        loss_grad_component(&params, &cfg, &group, Component::Other).unwrap(),
        loss_grad_component(&params, &wider, &group, Component::Other).unwrap()
    );
}
