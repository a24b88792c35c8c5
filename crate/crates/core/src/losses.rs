//! Embedding distance, contrastive and triplet losses, their dataset-level
//! surrogates and exact input gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::model::{embed, forward, vjp_input, MlpParams};
use crate::numerics::l2_distance;

/// Below this embedding distance the gradient of `d` is undefined.
pub const DIST_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Contrastive,
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub margin_alpha: f64,
    /// Contrastive only: `[α - d]₊` for different-label pairs when set,
    /// the unbounded `α - d` otherwise.
    pub hinge_negative: bool,
}

impl LossConfig {
    pub fn contrastive() -> Self {
        Self {
            kind: LossKind::Contrastive,
            margin_alpha: 1.0,
            hinge_negative: true,
        }
    }

    pub fn triplet() -> Self {
        Self {
            kind: LossKind::Triplet,
            margin_alpha: 0.2,
            hinge_negative: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin_alpha > 0.0) || !self.margin_alpha.is_finite() {
            return Err(Error::invalid("margin_alpha must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub anchor: LabeledPoint,
    pub other: LabeledPoint,
}

impl Pair {
    pub fn new(anchor: LabeledPoint, other: LabeledPoint) -> Self {
        Self { anchor, other }
    }

    pub fn same_label(&self) -> bool {
        self.anchor.label == self.other.label
    }
}

/// Anchor, same-label positive, different-label negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    anchor: LabeledPoint,
    positive: LabeledPoint,
    negative: LabeledPoint,
}

impl Triplet {
    pub fn new(anchor: LabeledPoint, positive: LabeledPoint, negative: LabeledPoint) -> Result<Self> {
        if positive.label != anchor.label || negative.label == anchor.label {
            return Err(Error::invalid(
                "triplet needs label(positive) = label(anchor) ≠ label(negative)",
            ));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }

    pub fn anchor(&self) -> &LabeledPoint {
        &self.anchor
    }

    pub fn positive(&self) -> &LabeledPoint {
        &self.positive
    }

    pub fn negative(&self) -> &LabeledPoint {
        &self.negative
    }
}

/// A training tuple of either arity.
#[derive(Debug, Clone, PartialEq)]
pub enum Group {
    Pair(Pair),
    Triplet(Triplet),
}

/// A position inside a [`Group`]. Pairs use `Anchor` and `Other`; triplets
/// use `Anchor`, `Positive` and `Negative`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Anchor,
    Positive,
    Negative,
    Other,
}

impl Group {
    pub fn arity(&self) -> usize {
        match self {
            Group::Pair(_) => 2,
            Group::Triplet(_) => 3,
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Group::Pair(_) => LossKind::Contrastive,
            Group::Triplet(_) => LossKind::Triplet,
        }
    }

    /// Slot index of a component: 0 = anchor, 1 = other/positive, 2 = negative.
    pub fn slot(&self, c: Component) -> Result<usize> {
        match (self, c) {
            (_, Component::Anchor) => Ok(0),
            (Group::Pair(_), Component::Other) => Ok(1),
            (Group::Triplet(_), Component::Positive) => Ok(1),
            (Group::Triplet(_), Component::Negative) => Ok(2),
            _ => Err(Error::invalid(alloc::format!(
                "component {c:?} is not valid for a group of arity {}",
                self.arity()
            ))),
        }
    }

    pub fn members(&self) -> Vec<&LabeledPoint> {
        match self {
            Group::Pair(p) => vec![&p.anchor, &p.other],
            Group::Triplet(t) => vec![&t.anchor, &t.positive, &t.negative],
        }
    }

    pub fn member(&self, slot: usize) -> &LabeledPoint {
        self.members()[slot]
    }

    /// Copy with the input of `slot` replaced; labels are untouched.
    pub fn with_input(&self, slot: usize, x: Vec<f64>) -> Self {
        let mut g = self.clone();
        let target = match (&mut g, slot) {
            (Group::Pair(p), 0) => &mut p.anchor,
            (Group::Pair(p), 1) => &mut p.other,
            (Group::Triplet(t), 0) => &mut t.anchor,
            (Group::Triplet(t), 1) => &mut t.positive,
            (Group::Triplet(t), 2) => &mut t.negative,
            _ => panic!("slot {slot} out of range"),
        };
        target.x = x;
        g
    }
}

/// The shape of a group's loss, independent of the actual inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupShape {
    /// Contrastive pair; `same` is label equality.
    Pair { same: bool },
    Triplet,
}

impl GroupShape {
    pub fn of(group: &Group) -> Self {
        match group {
            Group::Pair(p) => GroupShape::Pair { same: p.same_label() },
            Group::Triplet(_) => GroupShape::Triplet,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            GroupShape::Pair { .. } => 2,
            GroupShape::Triplet => 3,
        }
    }
}

fn ensure_kind(cfg: &LossConfig, shape: GroupShape) -> Result<()> {
    cfg.validate()?;
    match (cfg.kind, shape) {
        (LossKind::Contrastive, GroupShape::Pair { .. }) | (LossKind::Triplet, GroupShape::Triplet) => Ok(()),
        _ => Err(Error::invalid("loss kind does not match group arity")),
    }
}

/// `(e_a - e_b) / |e_a - e_b|`, erroring under the distance floor.
fn unit_difference(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = l2_distance(a, b);
    if d < DIST_FLOOR {
        return Err(Error::DistanceSingularity);
    }
    Ok((d, a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()))
}

/// Loss value of a group from its member embeddings.
pub fn loss_from_embeddings(cfg: &LossConfig, shape: GroupShape, emb: &[&[f64]]) -> Result<f64> {
    ensure_kind(cfg, shape)?;
    if emb.len() != shape.arity() {
        return Err(Error::shape("embedding count does not match group arity"));
    }
    Ok(match shape {
        GroupShape::Pair { same } => {
            let d = l2_distance(emb[0], emb[1]);
            if same {
                d
            } else if cfg.hinge_negative {
                (cfg.margin_alpha - d).max(0.0)
            } else {
                cfg.margin_alpha - d
            }
        }
        GroupShape::Triplet => {
            let dp = l2_distance(emb[0], emb[1]);
            let dn = l2_distance(emb[0], emb[2]);
            (dp - dn + cfg.margin_alpha).max(0.0)
        }
    })
}

/// What a gradient does when a distance term is below [`DIST_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Singular {
    /// Fail with [`Error::DistanceSingularity`].
    Error,
    /// Use the zero subgradient for that term.
    Zero,
}

fn unit_or(a: &[f64], b: &[f64], policy: Singular) -> Result<Vec<f64>> {
    match (unit_difference(a, b), policy) {
        (Err(Error::DistanceSingularity), Singular::Zero) => Ok(vec![0.0; a.len()]),
        (r, _) => Ok(r?.1),
    }
}

/// Loss value and its gradient with respect to each member embedding
/// (`None` where the gradient is zero). The hinge counts as inactive at
/// exactly zero.
pub fn loss_and_embedding_grads(
    cfg: &LossConfig,
    shape: GroupShape,
    emb: &[&[f64]],
    wanted: &[bool],
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    loss_and_embedding_grads_with(cfg, shape, emb, wanted, Singular::Error)
}

/// [`loss_and_embedding_grads`] with an explicit singularity policy.
pub fn loss_and_embedding_grads_with(
    cfg: &LossConfig,
    shape: GroupShape,
    emb: &[&[f64]],
    wanted: &[bool],
    policy: Singular,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let loss = loss_from_embeddings(cfg, shape, emb)?;
    let n = shape.arity();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
    match shape {
        GroupShape::Pair { same } => {
            let active = same || !cfg.hinge_negative || cfg.margin_alpha - l2_distance(emb[0], emb[1]) > 0.0;
            if active && (wanted[0] || wanted[1]) {
                let sign = if same { 1.0 } else { -1.0 };
                let u = unit_or(emb[0], emb[1], policy)?;
                if wanted[0] {
                    grads[0] = Some(u.iter().map(|v| sign * v).collect());
                }
                if wanted[1] {
                    grads[1] = Some(u.iter().map(|v| -sign * v).collect());
                }
            }
        }
        GroupShape::Triplet => {
            if loss > 0.0 {
                let need_ap = wanted[0] || wanted[1];
                let need_an = wanted[0] || wanted[2];
                let ap = if need_ap { Some(unit_or(emb[0], emb[1], policy)?) } else { None };
                let an = if need_an { Some(unit_or(emb[0], emb[2], policy)?) } else { None };
                if wanted[0] {
                    let (ap, an) = (ap.as_ref().unwrap(), an.as_ref().unwrap());
                    grads[0] = Some(ap.iter().zip(an).map(|(p, q)| p - q).collect());
                }
                if wanted[1] {
                    grads[1] = Some(ap.as_ref().unwrap().iter().map(|v| -v).collect());
                }
                if wanted[2] {
                    grads[2] = an.clone();
                }
            }
        }
    }
    Ok((loss, grads))
}

/// `d_θ(x1, x2) = |f(x1) - f(x2)|₂`, in `[0, 2]`.
pub fn embed_distance(params: &MlpParams, x1: &[f64], x2: &[f64]) -> Result<f64> {
    Ok(l2_distance(&embed(params, x1)?, &embed(params, x2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    First,
    Second,
}

/// Gradient of `d_θ(x1, x2)` with respect to one argument.
pub fn grad_distance(params: &MlpParams, x1: &[f64], x2: &[f64], wrt: Which) -> Result<Vec<f64>> {
    let t1 = forward(params, x1)?;
    let t2 = forward(params, x2)?;
    let (moving, fixed) = match wrt {
        Which::First => (&t1, &t2),
        Which::Second => (&t2, &t1),
    };
    let (_, u) = unit_difference(&moving.embedding, &fixed.embedding)?;
    vjp_input(params, moving, &u)
}

pub fn contrastive_loss(params: &MlpParams, cfg: &LossConfig, pair: &Pair) -> Result<f64> {
    let shape = GroupShape::Pair { same: pair.same_label() };
    ensure_kind(cfg, shape)?;
    let a = embed(params, &pair.anchor.x)?;
    let b = embed(params, &pair.other.x)?;
    loss_from_embeddings(cfg, shape, &[&a, &b])
}

pub fn triplet_loss(params: &MlpParams, cfg: &LossConfig, triplet: &Triplet) -> Result<f64> {
    ensure_kind(cfg, GroupShape::Triplet)?;
    let a = embed(params, &triplet.anchor.x)?;
    let p = embed(params, &triplet.positive.x)?;
    let n = embed(params, &triplet.negative.x)?;
    loss_from_embeddings(cfg, GroupShape::Triplet, &[&a, &p, &n])
}

pub fn group_loss(params: &MlpParams, cfg: &LossConfig, group: &Group) -> Result<f64> {
    match group {
        Group::Pair(p) => contrastive_loss(params, cfg, p),
        Group::Triplet(t) => triplet_loss(params, cfg, t),
    }
}

/// Mean contrastive loss of `point` against every member of `dataset`
/// (a copy of `point` inside the dataset contributes a zero term).
pub fn surrogate_contrastive(params: &MlpParams, cfg: &LossConfig, point: &LabeledPoint, dataset: &Dataset) -> Result<f64> {
    if cfg.kind != LossKind::Contrastive {
        return Err(Error::invalid("surrogate_contrastive needs a contrastive config"));
    }
    cfg.validate()?;
    let e = embed(params, &point.x)?;
    let mut sum = 0.0;
    for q in dataset.points() {
        let eq = embed(params, &q.x)?;
        let shape = GroupShape::Pair {
            same: q.label == point.label,
        };
        sum += loss_from_embeddings(cfg, shape, &[&e, &eq])?;
    }
    Ok(sum / dataset.len() as f64)
}

/// Mean triplet loss over every (same-label, different-label) partner pair.
/// The same-label set includes `point` itself when it is in `dataset`.
pub fn surrogate_triplet(params: &MlpParams, cfg: &LossConfig, point: &LabeledPoint, dataset: &Dataset) -> Result<f64> {
    if cfg.kind != LossKind::Triplet {
        return Err(Error::invalid("surrogate_triplet needs a triplet config"));
    }
    cfg.validate()?;
    let e = embed(params, &point.x)?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for q in dataset.points() {
        let d = l2_distance(&e, &embed(params, &q.x)?);
        if q.label == point.label {
            pos.push(d);
        } else {
            neg.push(d);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateClasses);
    }
    let mut sum = 0.0;
    for &dp in &pos {
        for &dn in &neg {
            sum += (dp - dn + cfg.margin_alpha).max(0.0);
        }
    }
    Ok(sum / (pos.len() * neg.len()) as f64)
}

/// Exact gradient of the group loss with respect to one member's input.
pub fn loss_grad_component(params: &MlpParams, cfg: &LossConfig, group: &Group, target: Component) -> Result<Vec<f64>> {
    let slot = group.slot(target)?;
    let shape = GroupShape::of(group);
    ensure_kind(cfg, shape)?;
    let traces = group
        .members()
        .into_iter()
        .map(|m| forward(params, &m.x))
        .collect::<Result<Vec<_>>>()?;
    let emb: Vec<&[f64]> = traces.iter().map(|t| t.embedding.as_slice()).collect();
    let mut wanted = vec![false; shape.arity()];
    wanted[slot] = true;
    let (_, grads) = loss_and_embedding_grads(cfg, shape, &emb, &wanted)?;
    match &grads[slot] {
        Some(u) => vjp_input(params, &traces[slot], u),
        None => Ok(vec![0.0; params.input_dim()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    /// Identity model on R²: embeddings are the normalised inputs.
    fn identity2() -> MlpParams {
        MlpParams::new(vec![2, 2], vec![Matrix::identity(2)], vec![vec![0.0, 0.0]]).unwrap()
    }

    fn lp(x: [f64; 2], label: u32) -> LabeledPoint {
        LabeledPoint::new(x.to_vec(), label)
    }

    #[test]
    fn distance_examples() {
        let p = identity2();
        assert_eq!(embed_distance(&p, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let d = embed_distance(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(embed_distance(&p, &[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(
            grad_distance(&p, &[1.0, 0.0], &[1.0, 0.0], Which::First).unwrap_err(),
            Error::DistanceSingularity
        );
    }

    #[test]
    fn contrastive_examples() {
        let p = identity2();
        let cfg = LossConfig::contrastive();
        let same = Pair::new(lp([1.0, 0.0], 0), lp([1.0, 0.0], 0));
        assert_eq!(contrastive_loss(&p, &cfg, &same).unwrap(), 0.0);
        let diff = Pair::new(lp([1.0, 0.0], 0), lp([1.0, 0.0], 1));
        assert_eq!(contrastive_loss(&p, &cfg, &diff).unwrap(), 1.0);
        let anti = Pair::new(lp([1.0, 0.0], 0), lp([-1.0, 0.0], 1));
        assert_eq!(contrastive_loss(&p, &cfg, &anti).unwrap(), 0.0);
        let literal = LossConfig {
            hinge_negative: false,
            ..cfg
        };
        assert_eq!(contrastive_loss(&p, &literal, &anti).unwrap(), -1.0);
    }

    #[test]
    fn triplet_examples() {
        let p = identity2();
        let cfg = LossConfig::triplet();
        // d(a,p) = 0, d(a,n) = 1
        let a = lp([1.0, 0.0], 0);
        let n_angle = 2.0 * libm::asin(0.5);
        let n = lp([libm::cos(n_angle), libm::sin(n_angle)], 1);
        let t = Triplet::new(a.clone(), a.clone(), n).unwrap();
        assert!(triplet_loss(&p, &cfg, &t).unwrap().abs() < 1e-12);
        // direct arithmetic: 0.5 - 0.4 + 0.2
        let v = loss_from_embeddings(&cfg, GroupShape::Triplet, &[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert!(Triplet::new(lp([1.0, 0.0], 0), lp([1.0, 0.0], 1), lp([0.0, 1.0], 1)).is_err());
    }

    #[test]
    fn triplet_arithmetic_case() {
        // Points on the unit circle at chosen chord lengths from the anchor.
        let chord = |d: f64| {
            let t = 2.0 * libm::asin(d / 2.0);
            [libm::cos(t), libm::sin(t)]
        };
        let cfg = LossConfig::triplet();
        let (a, p, n) = ([1.0, 0.0], chord(0.5), chord(0.4));
        let v = loss_from_embeddings(&cfg, GroupShape::Triplet, &[&a, &p, &n]).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn inactive_hinge_zero_gradient() {
        let p = identity2();
        let cfg = LossConfig::triplet();
        let t = Triplet::new(lp([1.0, 0.0], 0), lp([1.0, 0.05], 0), lp([-1.0, 0.0], 1)).unwrap();
        let g = Group::Triplet(t);
        for c in [Component::Anchor, Component::Positive, Component::Negative] {
            assert_eq!(loss_grad_component(&p, &cfg, &g, c).unwrap(), vec![0.0, 0.0]);
        }
        assert!(loss_grad_component(&p, &cfg, &g, Component::Other).is_err());
    }

    #[test]
    fn surrogate_small_cases() {
        let p = identity2();
        let cfg = LossConfig::contrastive();
        let x = lp([1.0, 0.0], 0);
        let solo = Dataset::new(vec![x.clone()]).unwrap();
        assert_eq!(surrogate_contrastive(&p, &cfg, &x, &solo).unwrap(), 0.0);
        // second point at chord 0.4 with another label
        let t = 2.0 * libm::asin(0.2);
        let y = lp([libm::cos(t), libm::sin(t)], 1);
        let two = Dataset::new(vec![x.clone(), y]).unwrap();
        let v = surrogate_contrastive(&p, &cfg, &x, &two).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
        assert_eq!(
            surrogate_triplet(&p, &LossConfig::triplet(), &x, &solo).unwrap_err(),
            Error::DegenerateClasses
        );
    }
}
