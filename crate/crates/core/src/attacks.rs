//! Perturbation generators over lp balls intersected with the unit box:
//! FGSM, R+FGSM, PGD and a clipped CW variant, plus the tuple component
//! operator, the test-time attack and the embedding-shift attack.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::evaluation::{predict_label_embedded, AnchorSet};
use crate::losses::{loss_and_embedding_grads, Component, Group, GroupShape, LossConfig, DIST_FLOOR};
use crate::model::{embed, forward, vjp_input, MlpParams};
use crate::numerics::{l2_distance, l2_norm, project_offset, streams, Norm, SeededRng};

/// Jitter radius used to step off a distance singularity.
pub const SINGULARITY_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackMethod {
    Fgsm,
    Rfgsm,
    Pgd,
    Cw,
}

impl AttackMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Rfgsm => "rfgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Cw => "cw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub norm: Norm,
    pub epsilon: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub random_init: bool,
    pub cw_lambda: f64,
    pub cw_lr: f64,
}

pub const PGD_ITERATIONS: usize = 5;
pub const CW_ITERATIONS: usize = 50;
pub const RFGSM_STEP_FRACTION: f64 = 0.25;

impl AttackConfig {
    fn base(method: AttackMethod, norm: Norm, epsilon: f64) -> Self {
        Self {
            method,
            norm,
            epsilon,
            iterations: 1,
            step_size: epsilon,
            random_init: false,
            cw_lambda: 0.1,
            cw_lr: 0.01,
        }
    }

    /// One signed step of size ε.
    pub fn fgsm(norm: Norm, epsilon: f64) -> Self {
        Self::base(AttackMethod::Fgsm, norm, epsilon)
    }

    /// Uniform start in the ball, one step of size ε/4.
    pub fn rfgsm(norm: Norm, epsilon: f64) -> Self {
        Self {
            step_size: epsilon * RFGSM_STEP_FRACTION,
            random_init: true,
            ..Self::base(AttackMethod::Rfgsm, norm, epsilon)
        }
    }

    /// Five steps of size 2ε/5 from a random start.
    pub fn pgd(norm: Norm, epsilon: f64) -> Self {
        Self::pgd_with(norm, epsilon, PGD_ITERATIONS)
    }

    pub fn pgd_with(norm: Norm, epsilon: f64, iterations: usize) -> Self {
        Self {
            iterations,
            step_size: 2.0 * epsilon / iterations.max(1) as f64,
            random_init: true,
            ..Self::base(AttackMethod::Pgd, norm, epsilon)
        }
    }

    pub fn cw(norm: Norm, epsilon: f64) -> Self {
        Self {
            iterations: CW_ITERATIONS,
            ..Self::base(AttackMethod::Cw, norm, epsilon)
        }
    }

    /// Default configuration of `method`.
    pub fn of(method: AttackMethod, norm: Norm, epsilon: f64) -> Self {
        match method {
            AttackMethod::Fgsm => Self::fgsm(norm, epsilon),
            AttackMethod::Rfgsm => Self::rfgsm(norm, epsilon),
            AttackMethod::Pgd => Self::pgd(norm, epsilon),
            AttackMethod::Cw => Self::cw(norm, epsilon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be ≥ 0"));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid("step_size must be ≥ 0"));
        }
        if matches!(self.method, AttackMethod::Pgd | AttackMethod::Cw) && self.iterations == 0 {
            return Err(Error::invalid("iterations must be ≥ 1"));
        }
        if self.method == AttackMethod::Cw
            && (!(self.cw_lambda >= 0.0) || !(self.cw_lr > 0.0) || !self.cw_lambda.is_finite() || !self.cw_lr.is_finite())
        {
            return Err(Error::invalid("cw_lambda must be ≥ 0 and cw_lr > 0"));
        }
        Ok(())
    }
}

/// Which member of a training group an attack replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbTarget {
    Anchor,
    /// The positive of a triplet, or the second member of a pair.
    Positive,
    Negative,
}

impl PerturbTarget {
    /// The group component this target addresses. For pairs both `Positive`
    /// and `Negative` address the second member.
    pub fn component(&self, group: &Group) -> Component {
        match (self, group) {
            (PerturbTarget::Anchor, _) => Component::Anchor,
            (_, Group::Pair(_)) => Component::Other,
            (PerturbTarget::Positive, Group::Triplet(_)) => Component::Positive,
            (PerturbTarget::Negative, Group::Triplet(_)) => Component::Negative,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbTarget::Anchor => "anchor",
            PerturbTarget::Positive => "positive",
            PerturbTarget::Negative => "negative",
        }
    }
}

/// A differentiable function of one input vector that an attack ascends.
pub trait Objective {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(x)?.0)
    }
}

/// Group loss as a function of one member's input.
pub struct GroupObjective<'a> {
    params: &'a MlpParams,
    cfg: LossConfig,
    shape: GroupShape,
    slot: usize,
    fixed: Vec<Vec<f64>>,
}

impl<'a> GroupObjective<'a> {
    pub fn new(params: &'a MlpParams, cfg: &LossConfig, group: &Group, target: Component) -> Result<Self> {
        let slot = group.slot(target)?;
        let fixed = group
            .members()
            .iter()
            .enumerate()
            .map(|(i, m)| if i == slot { Ok(Vec::new()) } else { embed(params, &m.x) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            cfg: *cfg,
            shape: GroupShape::of(group),
            slot,
            fixed,
        })
    }
}

impl Objective for GroupObjective<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = forward(self.params, x)?;
        let emb: Vec<&[f64]> = (0..self.fixed.len())
            .map(|i| if i == self.slot { trace.embedding.as_slice() } else { self.fixed[i].as_slice() })
            .collect();
        let mut wanted = vec![false; emb.len()];
        wanted[self.slot] = true;
        let (loss, grads) = loss_and_embedding_grads(&self.cfg, self.shape, &emb, &wanted)?;
        let g = match &grads[self.slot] {
            Some(u) => vjp_input(self.params, &trace, u)?,
            None => vec![0.0; x.len()],
        };
        Ok((loss, g))
    }
}

/// `sign · d(f(x), target)`.
pub struct DistanceObjective<'a> {
    params: &'a MlpParams,
    target: Vec<f64>,
    sign: f64,
}

impl<'a> DistanceObjective<'a> {
    /// Ascending this pushes `f(x)` away from `target`.
    pub fn away_from(params: &'a MlpParams, target: Vec<f64>) -> Self {
        Self { params, target, sign: 1.0 }
    }

    /// Ascending this pulls `f(x)` towards `target`.
    pub fn towards(params: &'a MlpParams, target: Vec<f64>) -> Self {
        Self { params, target, sign: -1.0 }
    }
}

impl Objective for DistanceObjective<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = forward(self.params, x)?;
        let d = l2_distance(&trace.embedding, &self.target);
        if d < DIST_FLOOR {
            return Err(Error::DistanceSingularity);
        }
        let u: Vec<f64> = trace
            .embedding
            .iter()
            .zip(&self.target)
            .map(|(e, t)| self.sign * (e - t) / d)
            .collect();
        Ok((self.sign * d, vjp_input(self.params, &trace, &u)?))
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Projects `x` onto `B_p(center, ε) ∩ [0,1]^k`.
pub fn project_feasible(x: &[f64], center: &[f64], norm: Norm, epsilon: f64) -> Result<Vec<f64>> {
    let delta: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
    let delta = project_offset(&delta, norm, epsilon)?;
    let mut out: Vec<f64> = center.iter().zip(&delta).map(|(c, d)| c + d).collect();
    clamp_unit(&mut out);
    Ok(out)
}

/// A uniform draw from the origin-centred ball.
pub fn random_offset(k: usize, norm: Norm, epsilon: f64, rng: &mut SeededRng) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..k).map(|_| rng.uniform(-epsilon, epsilon)).collect(),
        Norm::L2 => {
            let mut dir: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
            let n = l2_norm(&dir);
            if n == 0.0 {
                return vec![0.0; k];
            }
            let r = epsilon * libm::pow(rng.next_f64(), 1.0 / k as f64);
            for v in dir.iter_mut() {
                *v *= r / n;
            }
            dir
        }
    }
}

/// Unit ascent direction: the sign vector for Linf, the normalised gradient for L2.
fn ascent_direction(g: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Linf => g
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
            .collect(),
        Norm::L2 => {
            let n = l2_norm(g);
            if n == 0.0 {
                vec![0.0; g.len()]
            } else {
                g.iter().map(|v| v / n).collect()
            }
        }
    }
}

/// Gradient at `x`, retried once at a jittered point on a singularity.
/// A second singularity makes the attack degenerate.
fn grad_with_retry<O: Objective + ?Sized>(obj: &O, x: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
    match obj.value_and_grad(x) {
        Err(Error::DistanceSingularity) => {
            let mut jittered: Vec<f64> = x
                .iter()
                .map(|v| v + rng.uniform(-SINGULARITY_JITTER, SINGULARITY_JITTER))
                .collect();
            clamp_unit(&mut jittered);
            match obj.value_and_grad(&jittered) {
                Err(Error::DistanceSingularity) => Err(Error::AttackDegenerate),
                other => Ok(other?.1),
            }
        }
        other => Ok(other?.1),
    }
}

/// Runs `attack` against `obj` starting from `center`, which must lie in
/// `[0,1]^k`. The result always lies in `B_p(center, ε) ∩ [0,1]^k`.
pub fn run_attack<O: Objective + ?Sized>(
    obj: &O,
    center: &[f64],
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    attack.validate()?;
    if center.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("attack center lies outside [0,1]^k"));
    }
    let (norm, eps) = (attack.norm, attack.epsilon);
    if eps == 0.0 {
        return Ok(center.to_vec());
    }
    let k = center.len();
    let random_start = |rng: &mut SeededRng| -> Result<Vec<f64>> {
        let off = random_offset(k, norm, eps, rng);
        let x: Vec<f64> = center.iter().zip(&off).map(|(c, d)| c + d).collect();
        project_feasible(&x, center, norm, eps)
    };
    let step = |x: &[f64], dir: &[f64]| -> Result<Vec<f64>> {
        let moved: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + attack.step_size * d).collect();
        project_feasible(&moved, center, norm, eps)
    };
    match attack.method {
        AttackMethod::Fgsm | AttackMethod::Rfgsm => {
            let start = if attack.method == AttackMethod::Rfgsm || attack.random_init {
                random_start(rng)?
            } else {
                center.to_vec()
            };
            let g = grad_with_retry(obj, &start, rng)?;
            step(&start, &ascent_direction(&g, norm))
        }
        AttackMethod::Pgd => {
            let mut x = if attack.random_init { random_start(rng)? } else { center.to_vec() };
            let mut progressed = false;
            for _ in 0..attack.iterations {
                match obj.value_and_grad(&x) {
                    Ok((_, g)) => {
                        x = step(&x, &ascent_direction(&g, norm))?;
                        progressed = true;
                    }
                    Err(Error::DistanceSingularity) => x = random_start(rng)?,
                    Err(e) => return Err(e),
                }
            }
            if progressed {
                Ok(x)
            } else {
                Err(Error::AttackDegenerate)
            }
        }
        AttackMethod::Cw => cw(obj, center, attack, rng, random_start),
    }
}

/// ADAM ascent on the loss with the `λ|δ|²` penalty applied through its
/// proximal map, projected and clamped after every step.
fn cw<O: Objective + ?Sized>(
    obj: &O,
    center: &[f64],
    attack: &AttackConfig,
    rng: &mut SeededRng,
    random_start: impl Fn(&mut SeededRng) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS_HAT: f64 = 1e-8;
    let k = center.len();
    let mut x = if attack.random_init { random_start(rng)? } else { center.to_vec() };
    let mut m = vec![0.0; k];
    let mut v = vec![0.0; k];
    let shrink = 1.0 / (1.0 + 2.0 * attack.cw_lr * attack.cw_lambda);
    let mut progressed = false;
    let mut t = 0i32;
    for _ in 0..attack.iterations {
        let g = match obj.value_and_grad(&x) {
            Ok((_, g)) => g,
            Err(Error::DistanceSingularity) => {
                x = random_start(rng)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        progressed = true;
        t += 1;
        let bc1 = 1.0 - libm::pow(B1, t as f64);
        let bc2 = 1.0 - libm::pow(B2, t as f64);
        let mut next = Vec::with_capacity(k);
        for i in 0..k {
            m[i] = B1 * m[i] + (1.0 - B1) * g[i];
            v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
            let delta = x[i] - center[i] + attack.cw_lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + EPS_HAT);
            next.push(center[i] + delta * shrink);
        }
        x = project_feasible(&next, center, attack.norm, attack.epsilon)?;
    }
    if progressed {
        Ok(x)
    } else {
        Err(Error::AttackDegenerate)
    }
}

pub fn fgsm_perturb(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    expect_method(attack, AttackMethod::Fgsm)?;
    perturb_component(params, cfg, group, target, attack, rng)
}

pub fn rfgsm_perturb(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    expect_method(attack, AttackMethod::Rfgsm)?;
    perturb_component(params, cfg, group, target, attack, rng)
}

pub fn pgd_perturb(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    expect_method(attack, AttackMethod::Pgd)?;
    perturb_component(params, cfg, group, target, attack, rng)
}

pub fn cw_perturb(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    expect_method(attack, AttackMethod::Cw)?;
    perturb_component(params, cfg, group, target, attack, rng)
}

fn expect_method(attack: &AttackConfig, method: AttackMethod) -> Result<()> {
    if attack.method == method {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!(
            "expected a {} config, got {}",
            method.name(),
            attack.method.name()
        )))
    }
}

/// The perturbed input of one group member under the configured method.
pub fn perturb_component(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let obj = GroupObjective::new(params, cfg, group, target)?;
    let slot = group.slot(target)?;
    run_attack(&obj, &group.member(slot).x, attack, rng)
}

/// `max(r, ε, θ)`: the group with only component `target` replaced by an
/// approximate loss maximiser over its ball.
pub fn inner_max(
    params: &MlpParams,
    cfg: &LossConfig,
    group: &Group,
    target: Component,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Group> {
    let slot = group.slot(target)?;
    if attack.epsilon == 0.0 {
        attack.validate()?;
        return Ok(group.clone());
    }
    let x = perturb_component(params, cfg, group, target, attack, rng)?;
    Ok(group.with_input(slot, x))
}

/// Nearest anchor with `label`, skipping `exclude`; ties go to the lower index.
fn nearest_with_label(anchors: &AnchorSet, z: &[f64], label: u32, exclude: Option<usize>) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, a) in anchors.embeddings().iter().enumerate() {
        if Some(i) == exclude || anchors.label(i) != label {
            continue;
        }
        let d = l2_distance(a, z);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
        .ok_or_else(|| Error::insufficient(alloc::format!("no anchor with label {label}")))
}

/// Untargeted test-time attack: pushes `z` away from its nearest same-label
/// anchor. Whether the predicted label actually flips is left to
/// [`attack_success`].
pub fn test_time_attack(
    params: &MlpParams,
    z: &crate::LabeledPoint,
    anchors: &AnchorSet,
    exclude: Option<usize>,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let ez = embed(params, &z.x)?;
    let a = nearest_with_label(anchors, &ez, z.label, exclude)?;
    if attack.epsilon == 0.0 {
        attack.validate()?;
        return Ok(z.x.clone());
    }
    let obj = DistanceObjective::away_from(params, anchors.embeddings()[a].clone());
    run_attack(&obj, &z.x, attack, rng)
}

/// Targeted variant: pulls `z` towards its nearest anchor labelled `target`.
pub fn targeted_attack(
    params: &MlpParams,
    z: &[f64],
    anchors: &AnchorSet,
    target: u32,
    exclude: Option<usize>,
    attack: &AttackConfig,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let ez = embed(params, z)?;
    let a = nearest_with_label(anchors, &ez, target, exclude)?;
    let obj = DistanceObjective::towards(params, anchors.embeddings()[a].clone());
    run_attack(&obj, z, attack, rng)
}

/// Whether the nearest-anchor prediction of the perturbed input differs from
/// that of the original. Both predictions draw ties from the same stream,
/// keyed by `seed` and `index`.
pub fn attack_success(
    params: &MlpParams,
    z: &[f64],
    z_adv: &[f64],
    anchors: &AnchorSet,
    exclude: Option<usize>,
    seed: u64,
    index: usize,
) -> Result<bool> {
    if !anchors.is_current(params) {
        return Err(Error::invalid("anchor embeddings are stale for these params"));
    }
    attack_success_with(anchors, &embed(params, z)?, &embed(params, z_adv)?, exclude, seed, index)
}

/// [`attack_success`] on already embedded inputs.
pub fn attack_success_with(
    anchors: &AnchorSet,
    z_embedding: &[f64],
    adv_embedding: &[f64],
    exclude: Option<usize>,
    seed: u64,
    index: usize,
) -> Result<bool> {
    let rng = SeededRng::new(seed, streams::TIE_BREAK).substream(index as u64);
    let before = predict_label_embedded(anchors, z_embedding, exclude, &mut rng.clone())?;
    let after = predict_label_embedded(anchors, adv_embedding, exclude, &mut rng.clone())?;
    Ok(before != after)
}

/// Whether a targeted attack reached its label.
pub fn targeted_success(anchors: &AnchorSet, adv_embedding: &[f64], target: u32, exclude: Option<usize>, seed: u64, index: usize) -> Result<bool> {
    let mut rng = SeededRng::new(seed, streams::TIE_BREAK).substream(index as u64);
    Ok(predict_label_embedded(anchors, adv_embedding, exclude, &mut rng)? == target)
}

/// Maximises the embedding shift `d(f(z), f(x))` over the ball around `x`.
pub fn embedding_shift_attack(params: &MlpParams, x: &[f64], attack: &AttackConfig, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if attack.epsilon == 0.0 {
        attack.validate()?;
        return Ok(x.to_vec());
    }
    let obj = DistanceObjective::away_from(params, embed(params, x)?);
    run_attack(&obj, x, attack, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledPoint;
    use crate::losses::Pair;
    use crate::numerics::Matrix;

    struct Linear(Vec<f64>);

    impl Objective for Linear {
        fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((x.iter().zip(&self.0).map(|(a, b)| a * b).sum(), self.0.clone()))
        }
    }

    #[test]
    fn fgsm_sign_rule() {
        let obj = Linear(vec![0.3, -0.2]);
        let mut rng = SeededRng::new(0, 0);
        let x = run_attack(&obj, &[0.5, 0.5], &AttackConfig::fgsm(Norm::Linf, 0.01), &mut rng).unwrap();
        assert!((x[0] - 0.51).abs() < 1e-15 && (x[1] - 0.49).abs() < 1e-15);
        let zero = Linear(vec![0.0, 0.0]);
        let x = run_attack(&zero, &[0.5, 0.5], &AttackConfig::fgsm(Norm::Linf, 0.01), &mut rng).unwrap();
        assert_eq!(x, vec![0.5, 0.5]);
    }

    #[test]
    fn rfgsm_zero_step_is_random_point() {
        let obj = Linear(vec![1.0, 1.0]);
        let mut cfg = AttackConfig::rfgsm(Norm::Linf, 0.1);
        cfg.step_size = 0.0;
        let mut rng = SeededRng::new(3, 0);
        let x = run_attack(&obj, &[0.5, 0.5], &cfg, &mut rng).unwrap();
        assert!(x != vec![0.5, 0.5]);
        assert!(x.iter().all(|v| (v - 0.5).abs() <= 0.1));
    }

    #[test]
    fn single_step_pgd_matches_fgsm_direction() {
        let obj = Linear(vec![0.3, -0.2, 0.0]);
        let mut cfg = AttackConfig::pgd_with(Norm::Linf, 0.05, 1);
        cfg.random_init = false;
        let mut rng = SeededRng::new(0, 0);
        let x = run_attack(&obj, &[0.5, 0.5, 0.5], &cfg, &mut rng).unwrap();
        // step 2ε clipped back to ε: same as FGSM
        assert_eq!(x, vec![0.55, 0.45, 0.5]);
    }

    #[test]
    fn cw_heavy_penalty_stays_home() {
        let obj = Linear(vec![1.0; 16]);
        let mut cfg = AttackConfig::cw(Norm::L2, 0.5);
        cfg.cw_lambda = 1e6;
        let mut rng = SeededRng::new(0, 0);
        let center = vec![0.5; 16];
        let x = run_attack(&obj, &center, &cfg, &mut rng).unwrap();
        assert!(l2_distance(&x, &center) < 1e-3);
    }

    #[test]
    fn domain_clamp_and_center_check() {
        let obj = Linear(vec![1.0, -1.0]);
        let mut rng = SeededRng::new(0, 0);
        let x = run_attack(&obj, &[0.995, 0.0], &AttackConfig::fgsm(Norm::Linf, 0.01), &mut rng).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
        assert!(run_attack(&obj, &[1.5, 0.0], &AttackConfig::fgsm(Norm::Linf, 0.01), &mut rng).is_err());
    }

    #[test]
    fn inner_max_isolation() {
        let params = MlpParams::new(vec![2, 2], vec![Matrix::identity(2)], vec![vec![0.0, 0.0]]).unwrap();
        let g = Group::Pair(Pair::new(
            LabeledPoint::new(vec![0.9, 0.1], 0),
            LabeledPoint::new(vec![0.8, 0.3], 0),
        ));
        let mut rng = SeededRng::new(0, 0);
        let cfg = LossConfig::contrastive();
        let out = inner_max(&params, &cfg, &g, Component::Other, &AttackConfig::pgd(Norm::Linf, 0.05), &mut rng).unwrap();
        assert_eq!(out.member(0), g.member(0));
        assert_ne!(out.member(1), g.member(1));
        let same = inner_max(&params, &cfg, &g, Component::Other, &AttackConfig::pgd(Norm::Linf, 0.0), &mut rng).unwrap();
        assert_eq!(same, g);
    }
}
