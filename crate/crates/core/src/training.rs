//! SPC-2 batch sampling, pair and triplet construction, and natural or
//! adversarial training with early stopping.

use alloc::vec;
use alloc::vec::Vec;

use crate::attacks::{embedding_shift_attack, inner_max, AttackConfig, PerturbTarget};
use crate::data::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::evaluation::{benign_metrics, robust_metrics, EvalOptions};
use crate::exec::Executor;
use crate::losses::{loss_and_embedding_grads_with, Group, GroupShape, LossConfig, LossKind, Pair, Singular, Triplet, DIST_FLOOR};
use crate::model::{embed, forward, init_params, vjp_params_into, AdamState, MlpParams};
use crate::numerics::{l2_distance, streams, Norm, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    Natural,
    /// Inner maximisation inside the sum, one component per group.
    F2,
    /// Natural loss plus a penalty on the worst-case embedding shift.
    F3,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Natural => "natural",
            Formulation::F2 => "f2",
            Formulation::F3 => "f3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeStrategy {
    Uniform,
    DistanceWeighted,
}

/// Cap on a distance-weighted negative's probability, as a multiple of uniform.
pub const DISTANCE_WEIGHT_CAP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub enabled: bool,
    pub patience: usize,
    pub holdout_fraction: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            enabled: false,
            patience: 5,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            embedding_dim: 2,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub formulation: Formulation,
    pub attack: AttackConfig,
    pub attack_rate: f64,
    pub perturb_target: PerturbTarget,
    pub lambda_reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub samples_per_class: usize,
    pub negative_strategy: NegativeStrategy,
    pub lr: f64,
    pub weight_decay: f64,
    pub early_stopping: EarlyStopping,
    pub model: ModelConfig,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::contrastive(),
            formulation: Formulation::Natural,
            attack: AttackConfig::pgd(Norm::Linf, 0.01),
            attack_rate: 1.0,
            perturb_target: PerturbTarget::Positive,
            lambda_reg: 0.0,
            epochs: 25,
            batch_size: 32,
            samples_per_class: 2,
            negative_strategy: NegativeStrategy::Uniform,
            lr: 1e-3,
            weight_decay: 0.0,
            early_stopping: EarlyStopping::default(),
            model: ModelConfig::default(),
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.attack.validate()?;
        if !(0.0..=1.0).contains(&self.attack_rate) {
            return Err(Error::invalid("attack_rate must lie in [0, 1]"));
        }
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::invalid("lambda_reg must be ≥ 0"));
        }
        if self.samples_per_class != 2 {
            return Err(Error::invalid("samples_per_class must be 2"));
        }
        if self.batch_size == 0 || self.batch_size % self.samples_per_class != 0 {
            return Err(Error::invalid("batch_size must be a positive multiple of samples_per_class"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be > 0"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight_decay must be ≥ 0"));
        }
        let es = &self.early_stopping;
        if es.enabled && (!(es.holdout_fraction > 0.0 && es.holdout_fraction < 1.0) || es.patience == 0) {
            return Err(Error::invalid("early stopping needs 0 < holdout_fraction < 1 and patience ≥ 1"));
        }
        if self.model.embedding_dim == 0 || self.model.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer widths must be ≥ 1"));
        }
        Ok(())
    }
}

/// `batch_size / spc` distinct classes, `spc` distinct members each, laid
/// out class by class.
pub fn spc_batch_sampler(dataset: &Dataset, batch_size: usize, spc: usize, rng: &mut SeededRng) -> Result<Vec<LabeledPoint>> {
    if spc == 0 || batch_size == 0 || batch_size % spc != 0 {
        return Err(Error::invalid("batch_size must be a positive multiple of spc"));
    }
    let n_classes = batch_size / spc;
    let mut classes: Vec<Vec<usize>> = dataset
        .class_members()
        .into_values()
        .filter(|m| m.len() >= spc)
        .collect();
    if classes.len() < n_classes {
        return Err(Error::insufficient(alloc::format!(
            "batch needs {n_classes} classes with ≥ {spc} members, dataset has {}",
            classes.len()
        )));
    }
    rng.shuffle(&mut classes);
    let mut batch = Vec::with_capacity(batch_size);
    for members in classes.iter_mut().take(n_classes) {
        rng.shuffle(members);
        batch.extend(members[..spc].iter().map(|&i| dataset.points()[i].clone()));
    }
    Ok(batch)
}

fn check_spc2(batch: &[LabeledPoint]) -> Result<()> {
    if batch.is_empty() || batch.len() % 2 != 0 || batch.chunks(2).any(|c| c[0].label != c[1].label) {
        return Err(Error::invalid("expected an SPC-2 batch of same-label blocks of two"));
    }
    Ok(())
}

fn other_class(batch: &[LabeledPoint], i: usize) -> Result<Vec<usize>> {
    let c: Vec<usize> = (0..batch.len()).filter(|&j| batch[j].label != batch[i].label).collect();
    if c.is_empty() {
        return Err(Error::DegenerateClasses);
    }
    Ok(c)
}

/// For each point: a positive pair with its class partner, then a negative
/// pair with a uniformly drawn different-class member.
pub fn build_pairs(batch: &[LabeledPoint], rng: &mut SeededRng) -> Result<Vec<Pair>> {
    check_spc2(batch)?;
    let mut pairs = Vec::with_capacity(2 * batch.len());
    for i in 0..batch.len() {
        let candidates = other_class(batch, i)?;
        let j = candidates[rng.below(candidates.len())];
        pairs.push(Pair::new(batch[i].clone(), batch[i ^ 1].clone()));
        pairs.push(Pair::new(batch[i].clone(), batch[j].clone()));
    }
    Ok(pairs)
}

/// Negative-sampling probabilities proportional to the inverse of a Gaussian
/// kernel density estimate over the candidate distances, capped at
/// [`DISTANCE_WEIGHT_CAP`] times uniform.
pub fn distance_weights(distances: &[f64]) -> Vec<f64> {
    let m = distances.len();
    let uniform = vec![1.0 / m as f64; m];
    if m < 2 {
        return uniform;
    }
    let mean = distances.iter().sum::<f64>() / m as f64;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m as f64;
    let sd = libm::sqrt(var);
    if sd < 1e-12 {
        return uniform;
    }
    let h = 1.06 * sd * libm::pow(m as f64, -0.2);
    let inv: Vec<f64> = distances
        .iter()
        .map(|&d| {
            let q: f64 = distances
                .iter()
                .map(|&l| {
                    let u = (d - l) / h;
                    libm::exp(-0.5 * u * u)
                })
                .sum();
            1.0 / q
        })
        .collect();
    let total: f64 = inv.iter().sum();
    let cap = DISTANCE_WEIGHT_CAP / m as f64;
    let clipped: Vec<f64> = inv.iter().map(|w| (w / total).min(cap)).collect();
    let total: f64 = clipped.iter().sum();
    clipped.iter().map(|w| w / total).collect()
}

fn draw_weighted(weights: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// One triplet per point: the point, its class partner and a negative.
pub fn build_triplets(
    batch: &[LabeledPoint],
    strategy: NegativeStrategy,
    params: &MlpParams,
    rng: &mut SeededRng,
) -> Result<Vec<Triplet>> {
    check_spc2(batch)?;
    let emb = match strategy {
        NegativeStrategy::Uniform => Vec::new(),
        NegativeStrategy::DistanceWeighted => batch.iter().map(|p| embed(params, &p.x)).collect::<Result<Vec<_>>>()?,
    };
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let candidates = other_class(batch, i)?;
        let pick = match strategy {
            NegativeStrategy::Uniform => rng.below(candidates.len()),
            NegativeStrategy::DistanceWeighted => {
                let d: Vec<f64> = candidates.iter().map(|&j| l2_distance(&emb[i], &emb[j])).collect();
                draw_weighted(&distance_weights(&d), rng)
            }
        };
        out.push(Triplet::new(batch[i].clone(), batch[i ^ 1].clone(), batch[candidates[pick]].clone())?);
    }
    Ok(out)
}

/// Training groups of the configured loss for one batch.
pub fn build_groups(batch: &[LabeledPoint], cfg: &TrainConfig, params: &MlpParams, rng: &mut SeededRng) -> Result<Vec<Group>> {
    Ok(match cfg.loss.kind {
        LossKind::Contrastive => build_pairs(batch, rng)?.into_iter().map(Group::Pair).collect(),
        LossKind::Triplet => build_triplets(batch, cfg.negative_strategy, params, rng)?
            .into_iter()
            .map(Group::Triplet)
            .collect(),
    })
}

/// Whether `target` may be perturbed in `group`: pairs only perturb their
/// second member when it plays the targeted role.
fn eligible(group: &Group, target: PerturbTarget) -> bool {
    match (group, target) {
        (Group::Pair(p), PerturbTarget::Positive) => p.same_label(),
        (Group::Pair(p), PerturbTarget::Negative) => !p.same_label(),
        _ => true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Groups eligible for perturbation under the configured target.
    pub eligible: usize,
    /// Groups actually replaced by the inner maximisation.
    pub perturbed: usize,
}

/// Loss and parameter gradient of one group; collapsed distances contribute
/// a zero subgradient.
fn group_grad(params: &MlpParams, cfg: &LossConfig, group: &Group) -> Result<(f64, MlpParams)> {
    let traces = group
        .members()
        .into_iter()
        .map(|m| forward(params, &m.x))
        .collect::<Result<Vec<_>>>()?;
    let emb: Vec<&[f64]> = traces.iter().map(|t| t.embedding.as_slice()).collect();
    let shape = GroupShape::of(group);
    let (loss, cot) = loss_and_embedding_grads_with(cfg, shape, &emb, &vec![true; shape.arity()], Singular::Zero)?;
    let mut grads = params.zeros_like();
    for (t, u) in traces.iter().zip(&cot) {
        if let Some(u) = u {
            vjp_params_into(params, t, u, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

/// `d(f(z*), f(x))` and its parameter gradient with `z*` held fixed.
fn shift_grad(params: &MlpParams, x: &[f64], z: &[f64]) -> Result<(f64, MlpParams)> {
    let tx = forward(params, x)?;
    let tz = forward(params, z)?;
    let d = l2_distance(&tz.embedding, &tx.embedding);
    let mut grads = params.zeros_like();
    if d < DIST_FLOOR {
        return Ok((d, grads));
    }
    let u: Vec<f64> = tz.embedding.iter().zip(&tx.embedding).map(|(a, b)| (a - b) / d).collect();
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    vjp_params_into(params, &tz, &u, &mut grads)?;
    vjp_params_into(params, &tx, &neg, &mut grads)?;
    Ok((d, grads))
}

/// One optimiser step under the configured formulation. `step` keys every
/// random draw made inside the step; per-group results are reduced in group
/// order so the update does not depend on the executor.
pub fn train_step<E: Executor>(
    params: &mut MlpParams,
    state: &mut AdamState,
    batch: &[LabeledPoint],
    groups: &[Group],
    cfg: &TrainConfig,
    step: u64,
    exec: &E,
) -> Result<StepOutcome> {
    if groups.is_empty() {
        return Err(Error::insufficient("no training groups"));
    }
    let seed = cfg.master_seed;
    let gamma_base = SeededRng::new(seed, streams::GAMMA).substream(step);
    let attack_base = SeededRng::new(seed, streams::ATTACK_INIT).substream(step);
    let current: &MlpParams = params;
    let per_group = exec.map(groups.len(), |g| -> Result<(f64, MlpParams, bool, bool)> {
        let group = &groups[g];
        let mut chosen = None;
        let is_eligible = eligible(group, cfg.perturb_target);
        if cfg.formulation == Formulation::F2 {
            let hit = gamma_base.substream(g as u64).bernoulli(cfg.attack_rate);
            if hit && is_eligible {
                let mut rng = attack_base.substream(g as u64);
                let target = cfg.perturb_target.component(group);
                // A loss that is flat around the target leaves the group as is.
                chosen = match inner_max(current, &cfg.loss, group, target, &cfg.attack, &mut rng) {
                    Err(Error::AttackDegenerate) => None,
                    other => Some(other?),
                };
            }
        }
        let perturbed = chosen.is_some();
        let (loss, grads) = group_grad(current, &cfg.loss, chosen.as_ref().unwrap_or(group))?;
        Ok((loss, grads, is_eligible, perturbed))
    });
    let scale = 1.0 / groups.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    let mut outcome = StepOutcome {
        loss: 0.0,
        eligible: 0,
        perturbed: 0,
    };
    for r in per_group {
        let (l, g, e, p) = r?;
        loss += l;
        total.add_scaled(scale, &g);
        outcome.eligible += e as usize;
        outcome.perturbed += p as usize;
    }
    loss *= scale;
    if cfg.formulation == Formulation::F3 && cfg.lambda_reg > 0.0 {
        let shift_base = attack_base.substream(u64::MAX);
        let per_point = exec.map(batch.len(), |b| -> Result<(f64, MlpParams)> {
            let mut rng = shift_base.substream(b as u64);
            // A map that is constant around x has no shift to maximise.
            let z = match embedding_shift_attack(current, &batch[b].x, &cfg.attack, &mut rng) {
                Err(Error::AttackDegenerate) => batch[b].x.clone(),
                other => other?,
            };
            shift_grad(current, &batch[b].x, &z)
        });
        let reg_scale = cfg.lambda_reg / batch.len() as f64;
        for r in per_point {
            let (d, g) = r?;
            loss += reg_scale * d;
            total.add_scaled(reg_scale, &g);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Diverged);
    }
    state.apply(params, &total)?;
    outcome.loss = loss;
    Ok(outcome)
}

fn step_with(
    params: &mut MlpParams,
    state: &mut AdamState,
    batch: &[LabeledPoint],
    groups: &[Group],
    cfg: &TrainConfig,
    step: u64,
    formulation: Formulation,
) -> Result<f64> {
    if cfg.formulation != formulation {
        return Err(Error::invalid(alloc::format!(
            "config formulation is {}, step expects {}",
            cfg.formulation.name(),
            formulation.name()
        )));
    }
    Ok(train_step(params, state, batch, groups, cfg, step, &crate::Sequential)?.loss)
}

pub fn natural_train_step(params: &mut MlpParams, state: &mut AdamState, groups: &[Group], cfg: &TrainConfig) -> Result<f64> {
    step_with(params, state, &[], groups, cfg, state.step, Formulation::Natural)
}

pub fn adversarial_train_step_f2(params: &mut MlpParams, state: &mut AdamState, groups: &[Group], cfg: &TrainConfig) -> Result<f64> {
    step_with(params, state, &[], groups, cfg, state.step, Formulation::F2)
}

pub fn adversarial_train_step_f3(
    params: &mut MlpParams,
    state: &mut AdamState,
    batch: &[LabeledPoint],
    groups: &[Group],
    cfg: &TrainConfig,
) -> Result<f64> {
    step_with(params, state, batch, groups, cfg, state.step, Formulation::F3)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Filled only when early stopping is enabled.
    pub val_benign_r1: Vec<f64>,
    pub val_adversarial_r1: Vec<f64>,
    /// Zero-based epoch of the returned parameters, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub steps: u64,
    pub groups_eligible: u64,
    pub groups_perturbed: u64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epoch_losses.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub optimizer: AdamState,
    pub report: TrainReport,
}

/// Splits off the early-stopping holdout: `(train, validation)`.
pub fn holdout_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    let n_val = ((n as f64 * fraction) as usize).max(2);
    if n_val + 2 > n {
        return Err(Error::insufficient("dataset too small for the holdout split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, streams::HOLDOUT).shuffle(&mut idx);
    let (val, train) = idx.split_at(n_val);
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&val)?))
}

/// Full training run. With early stopping the parameters of the epoch with
/// the best adversarial validation R@1 (R+FGSM at the training ball) are
/// returned.
pub fn train<E: Executor>(dataset: &Dataset, cfg: &TrainConfig, exec: &E) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = if cfg.early_stopping.enabled {
        let (t, v) = holdout_split(dataset, cfg.early_stopping.holdout_fraction, cfg.master_seed)?;
        (t, Some(v))
    } else {
        (dataset.clone(), None)
    };
    let mut params = init_params(&cfg.model.layer_dims(dataset.input_dim()), SeededRng::new(cfg.master_seed, streams::INIT))?;
    let mut state = AdamState::new(&params, cfg.lr, cfg.weight_decay);
    let mut report = TrainReport::default();
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let sampling = SeededRng::new(cfg.master_seed, streams::SAMPLING);
    let val_attack = AttackConfig::rfgsm(cfg.attack.norm, cfg.attack.epsilon);
    let mut best: Option<(f64, MlpParams, AdamState)> = None;
    let mut since_best = 0usize;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let mut rng = sampling.substream(report.steps);
            let batch = spc_batch_sampler(&train_set, cfg.batch_size, cfg.samples_per_class, &mut rng)?;
            let groups = build_groups(&batch, cfg, &params, &mut rng)?;
            let out = train_step(&mut params, &mut state, &batch, &groups, cfg, report.steps, exec)?;
            epoch_loss += out.loss;
            report.steps += 1;
            report.groups_eligible += out.eligible as u64;
            report.groups_perturbed += out.perturbed as u64;
        }
        report.epoch_losses.push(epoch_loss / steps_per_epoch as f64);
        match &val_set {
            None => report.best_epoch = Some(epoch),
            Some(val) => {
                let opts = EvalOptions::new(cfg.master_seed);
                let benign = benign_metrics(&params, val, &opts)?.r_at_1;
                let adv = robust_metrics(&params, val, &val_attack, &opts, exec)?.r_at_1;
                report.val_benign_r1.push(benign);
                report.val_adversarial_r1.push(adv);
                if best.as_ref().map_or(true, |(b, _, _)| adv > *b) {
                    best = Some((adv, params.clone(), state.clone()));
                    report.best_epoch = Some(epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.early_stopping.patience {
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, p, s)) = best {
        params = p;
        state = s;
    }
    Ok(TrainOutcome {
        params,
        optimizer: state,
        report,
    })
}
