mod common;

use adml_core::attacks::{AttackConfig, PerturbTarget};
use adml_core::losses::{Group, LossConfig};
use adml_core::model::{init_params, AdamState, MlpParams};
use adml_core::numerics::streams;
use adml_core::synth::{generate_mixture, GaussianMixtureConfig};
use adml_core::training::{
    adversarial_train_step_f2, adversarial_train_step_f3, build_groups, build_pairs, build_triplets, natural_train_step,
    spc_batch_sampler, train, train_step, Formulation, ModelConfig, NegativeStrategy, TrainConfig,
};
use adml_core::{Dataset, LabeledPoint, Norm, SeededRng, Sequential};

fn mixture(k: usize, n: usize, seed: u64) -> Dataset {
    let cfg = GaussianMixtureConfig {
        n_train: n,
        n_test: 2,
        ..GaussianMixtureConfig::appendix(k, seed)
    };
    generate_mixture(&cfg).unwrap().0
}

fn small_cfg(formulation: Formulation) -> TrainConfig {
    TrainConfig {
        formulation,
        batch_size: 4,
        epochs: 2,
        model: ModelConfig {
            hidden: vec![8],
            embedding_dim: 2,
        },
        master_seed: 11,
        attack: AttackConfig::pgd(Norm::Linf, 0.05),
        ..TrainConfig::default()
    }
}

/// Runs `steps` optimiser steps with the shared sampling discipline.
fn trajectory(ds: &Dataset, cfg: &TrainConfig, steps: u64) -> MlpParams {
    let mut params = init_params(&cfg.model.layer_dims(ds.input_dim()), SeededRng::new(cfg.master_seed, streams::INIT)).unwrap();
    let mut state = AdamState::new(&params, cfg.lr, cfg.weight_decay);
    for s in 0..steps {
        let mut rng = SeededRng::new(cfg.master_seed, streams::SAMPLING).substream(s);
        let batch = spc_batch_sampler(ds, cfg.batch_size, 2, &mut rng).unwrap();
        let groups = build_groups(&batch, cfg, &params, &mut rng).unwrap();
        train_step(&mut params, &mut state, &batch, &groups, cfg, s, &Sequential).unwrap();
    }
    params
}

#[test]
fn degenerate_adversarial_settings_reproduce_natural() {
    let ds = mixture(8, 40, 1);
    let natural = trajectory(&ds, &small_cfg(Formulation::Natural), 30);
    let rate0 = TrainConfig {
        attack_rate: 0.0,
        ..small_cfg(Formulation::F2)
    };
    assert_eq!(trajectory(&ds, &rate0, 30), natural);
    let eps0 = TrainConfig {
        attack: AttackConfig::pgd(Norm::Linf, 0.0),
        ..small_cfg(Formulation::F2)
    };
    assert_eq!(trajectory(&ds, &eps0, 30), natural);
    let lambda0 = TrainConfig {
        lambda_reg: 0.0,
        ..small_cfg(Formulation::F3)
    };
    assert_eq!(trajectory(&ds, &lambda0, 30), natural);
    let robust = TrainConfig {
        attack_rate: 1.0,
        ..small_cfg(Formulation::F2)
    };
    assert_ne!(trajectory(&ds, &robust, 30), natural);
}

#[test]
fn wrapper_steps_check_formulation() {
    let ds = mixture(8, 40, 2);
    let cfg = small_cfg(Formulation::Natural);
    let mut params = init_params(&cfg.model.layer_dims(8), SeededRng::new(0, streams::INIT)).unwrap();
    let mut state = AdamState::new(&params, cfg.lr, 0.0);
    let mut rng = SeededRng::new(0, streams::SAMPLING);
    let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
    let groups = build_groups(&batch, &cfg, &params, &mut rng).unwrap();
    assert!(natural_train_step(&mut params, &mut state, &groups, &cfg).is_ok());
    assert!(adversarial_train_step_f2(&mut params, &mut state, &groups, &cfg).is_err());
    assert!(adversarial_train_step_f3(&mut params, &mut state, &batch, &groups, &cfg).is_err());
}

#[test]
fn gamma_frequency_matches_rate() {
    let ds = mixture(6, 60, 3);
    for rate in [0.25, 0.5, 0.75] {
        let cfg = TrainConfig {
            attack_rate: rate,
            perturb_target: PerturbTarget::Anchor,
            ..small_cfg(Formulation::F2)
        };
        let mut params = init_params(&cfg.model.layer_dims(6), SeededRng::new(0, streams::INIT)).unwrap();
        let mut state = AdamState::new(&params, cfg.lr, 0.0);
        let (mut eligible, mut perturbed) = (0usize, 0usize);
        for s in 0..150 {
            let mut rng = SeededRng::new(cfg.master_seed, streams::SAMPLING).substream(s);
            let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
            let groups = build_groups(&batch, &cfg, &params, &mut rng).unwrap();
            let out = train_step(&mut params, &mut state, &batch, &groups, &cfg, s, &Sequential).unwrap();
            eligible += out.eligible;
            perturbed += out.perturbed;
        }
        assert!(eligible >= 1000);
        let n = eligible as f64;
        let sd = (n * rate * (1.0 - rate)).sqrt();
        assert!((perturbed as f64 - n * rate).abs() <= 3.0 * sd, "rate {rate}: {perturbed} of {eligible}");
    }
}

#[test]
fn positive_target_only_touches_same_label_pairs() {
    let ds = mixture(6, 60, 4);
    let cfg = small_cfg(Formulation::F2);
    let params = init_params(&cfg.model.layer_dims(6), SeededRng::new(0, streams::INIT)).unwrap();
    let mut rng = SeededRng::new(0, streams::SAMPLING);
    let mut eligible_total = 0;
    for s in 0..20 {
        let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
        let groups = build_groups(&batch, &cfg, &params, &mut rng).unwrap();
        let mut p = params.clone();
        let mut state = AdamState::new(&p, cfg.lr, 0.0);
        let out = train_step(&mut p, &mut state, &batch, &groups, &cfg, s, &Sequential).unwrap();
        let same = groups
            .iter()
            .filter(|g| matches!(g, Group::Pair(p) if p.same_label()))
            .count();
        assert_eq!(out.eligible, same);
        assert_eq!(out.perturbed, same);
        eligible_total += out.eligible;
    }
    assert_eq!(eligible_total, 20 * 4);
}

#[test]
fn inner_max_isolation_in_training_groups() {
    use adml_core::attacks::inner_max;
    let ds = mixture(6, 60, 5);
    let cfg = TrainConfig {
        loss: LossConfig::triplet(),
        ..small_cfg(Formulation::F2)
    };
    let params = init_params(&cfg.model.layer_dims(6), SeededRng::new(0, streams::INIT)).unwrap();
    let mut rng = SeededRng::new(0, streams::SAMPLING);
    for _ in 0..20 {
        let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
        for g in build_groups(&batch, &cfg, &params, &mut rng).unwrap() {
            let target = cfg.perturb_target.component(&g);
            let out = inner_max(&params, &cfg.loss, &g, target, &cfg.attack, &mut rng).unwrap();
            let slot = g.slot(target).unwrap();
            for s in (0..3).filter(|&s| s != slot) {
                assert_eq!(out.member(s), g.member(s));
            }
        }
    }
}

#[test]
fn sampler_class_frequencies_are_uniform() {
    let pts: Vec<LabeledPoint> = (0..50).map(|i| LabeledPoint::new(vec![i as f64 / 50.0], (i % 5) as u32)).collect();
    let ds = Dataset::new(pts).unwrap();
    let mut counts = [0usize; 5];
    let mut rng = SeededRng::new(7, streams::SAMPLING);
    let batches = 1000;
    for _ in 0..batches {
        let b = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
        assert_eq!(b[0].label, b[1].label);
        assert_eq!(b[2].label, b[3].label);
        assert_ne!(b[0].label, b[2].label);
        assert_ne!(b[0].x, b[1].x);
        counts[b[0].label as usize] += 1;
        counts[b[2].label as usize] += 1;
    }
    // Each batch picks 2 of 5 classes: inclusion probability 2/5.
    let p = 0.4;
    let sd = (batches as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - batches as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
    }
    let single = Dataset::new(vec![LabeledPoint::new(vec![0.0], 0), LabeledPoint::new(vec![1.0], 0)]).unwrap();
    assert!(spc_batch_sampler(&single, 4, 2, &mut rng).is_err());
}

#[test]
fn uniform_negatives_are_uniform() {
    let batch: Vec<LabeledPoint> = (0..6).map(|i| LabeledPoint::new(vec![i as f64], (i / 2) as u32)).collect();
    let mut rng = SeededRng::new(8, 0);
    let mut counts = [0usize; 6];
    let draws = 1000;
    for _ in 0..draws {
        let pairs = build_pairs(&batch, &mut rng).unwrap();
        assert_eq!(pairs.len(), 12);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(p.same_label(), i % 2 == 0);
        }
        counts[pairs[1].other.x[0] as usize] += 1;
    }
    // Point 0 draws its negative from points 2..6.
    assert_eq!(counts[0] + counts[1], 0);
    let sd = (draws as f64 * 0.25 * 0.75).sqrt();
    for &c in &counts[2..] {
        assert!((c as f64 - draws as f64 * 0.25).abs() <= 3.0 * sd, "{counts:?}");
    }
    let triplets = build_triplets(&batch, NegativeStrategy::Uniform, &MlpParams::zeros(&[1, 2]).unwrap(), &mut rng).unwrap();
    assert_eq!(triplets.len(), 6);
}

#[test]
fn distance_weighting_prefers_mid_range() {
    // One anchor pair, and negatives clustered near, mid and far in embedding space.
    let params = MlpParams::new(
        vec![2, 2],
        vec![adml_core::Matrix::identity(2)],
        vec![vec![0.0, 0.0]],
    )
    .unwrap();
    let angle = |t: f64| vec![t.cos(), t.sin()];
    let mut batch = vec![LabeledPoint::new(angle(0.0), 0), LabeledPoint::new(angle(0.01), 0)];
    let thetas = [0.2, 0.21, 0.22, 0.23, 0.24, 0.25, 1.5, 3.0, 3.01, 3.02, 3.03, 3.04, 3.05, 3.06];
    for (i, t) in thetas.iter().enumerate() {
        batch.push(LabeledPoint::new(angle(*t), 1 + (i / 2) as u32));
    }
    let count_mid = |strategy| {
        let mut rng = SeededRng::new(9, 0);
        (0..2000)
            .filter(|_| {
                let t = build_triplets(&batch, strategy, &params, &mut rng).unwrap();
                t[0].negative().x == angle(1.5)
            })
            .count()
    };
    let (dw, uni) = (count_mid(NegativeStrategy::DistanceWeighted), count_mid(NegativeStrategy::Uniform));
    assert!(dw > uni);
}

#[test]
fn natural_loss_decreases_on_separable_toy() {
    let ds = mixture(4, 80, 12);
    let cfg = TrainConfig {
        lr: 1e-2,
        ..small_cfg(Formulation::Natural)
    };
    let mut params = init_params(&cfg.model.layer_dims(4), SeededRng::new(1, streams::INIT)).unwrap();
    let mut state = AdamState::new(&params, cfg.lr, 0.0);
    let mut losses = Vec::new();
    for s in 0..50 {
        let mut rng = SeededRng::new(1, streams::SAMPLING).substream(s);
        let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
        let groups = build_groups(&batch, &cfg, &params, &mut rng).unwrap();
        losses.push(natural_train_step(&mut params, &mut state, &groups, &cfg).unwrap());
    }
    let head: f64 = losses[..10].iter().sum();
    let tail: f64 = losses[40..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn inactive_hinges_leave_params_unchanged() {
    let params = MlpParams::new(vec![2, 2], vec![adml_core::Matrix::identity(2)], vec![vec![0.0, 0.0]]).unwrap();
    let batch = vec![
        LabeledPoint::new(vec![1.0, 0.0], 0),
        LabeledPoint::new(vec![1.0, 0.0], 0),
        LabeledPoint::new(vec![0.0, 1.0], 1),
        LabeledPoint::new(vec![0.0, 1.0], 1),
    ];
    let cfg = TrainConfig {
        loss: LossConfig {
            margin_alpha: 1.0,
            ..LossConfig::contrastive()
        },
        ..small_cfg(Formulation::Natural)
    };
    let mut rng = SeededRng::new(0, 0);
    let groups = build_groups(&batch, &cfg, &params, &mut rng).unwrap();
    let mut p = params.clone();
    let mut state = AdamState::new(&p, cfg.lr, 0.0);
    let loss = natural_train_step(&mut p, &mut state, &groups, &cfg).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(p, params);
}

#[test]
fn f3_regulariser_vanishes_for_constant_model() {
    // Zero first layer: every input maps to the same embedding.
    let mut params = init_params(&[4, 3, 2], SeededRng::new(0, streams::INIT)).unwrap();
    params.weights_mut()[0].data_mut().iter_mut().for_each(|w| *w = 0.0);
    params.biases_mut()[0] = vec![0.5, 0.2, 0.1];
    let ds = mixture(4, 20, 13);
    let f3 = TrainConfig {
        lambda_reg: 1.0,
        ..small_cfg(Formulation::F3)
    };
    let nat = small_cfg(Formulation::Natural);
    let mut rng = SeededRng::new(0, streams::SAMPLING);
    let batch = spc_batch_sampler(&ds, 4, 2, &mut rng).unwrap();
    let groups = build_groups(&batch, &nat, &params, &mut rng).unwrap();
    let (mut a, mut b) = (params.clone(), params.clone());
    let mut sa = AdamState::new(&a, nat.lr, 0.0);
    let mut sb = sa.clone();
    let la = train_step(&mut a, &mut sa, &batch, &groups, &nat, 0, &Sequential).unwrap().loss;
    let lb = train_step(&mut b, &mut sb, &batch, &groups, &f3, 0, &Sequential).unwrap().loss;
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn train_is_deterministic() {
    let ds = mixture(8, 40, 14);
    for f in [Formulation::Natural, Formulation::F2, Formulation::F3] {
        let cfg = TrainConfig {
            lambda_reg: 0.5,
            ..small_cfg(f)
        };
        let a = train(&ds, &cfg, &Sequential).unwrap();
        let b = train(&ds, &cfg, &Sequential).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn early_stopping_reports_validation_curves() {
    let ds = mixture(8, 80, 15);
    let cfg = TrainConfig {
        epochs: 4,
        early_stopping: adml_core::training::EarlyStopping {
            enabled: true,
            patience: 1,
            holdout_fraction: 0.2,
        },
        ..small_cfg(Formulation::F2)
    };
    let out = train(&ds, &cfg, &Sequential).unwrap();
    let r = &out.report;
    assert_eq!(r.val_adversarial_r1.len(), r.epoch_losses.len());
    let best = r.best_epoch.unwrap();
    assert!(r.val_adversarial_r1.iter().all(|&v| v <= r.val_adversarial_r1[best]));
}
