//! δ-separation, the Lipschitz ε-robustness certificate and a Monte-Carlo
//! estimate of the wrong-anchor event under a Gaussian class.

use alloc::vec::Vec;

use crate::attacks::{run_attack, AttackConfig, Objective};
use crate::error::{Error, Result};
use crate::evaluation::AnchorSet;
use crate::model::{embed, forward, vjp_input, LipschitzBound, MlpParams};
use crate::numerics::{l2_distance, Norm, SeededRng};
use crate::synth::{sample_point, GaussianMixtureConfig};

/// Default multiplier applied to the Lipschitz bound before certifying.
pub const DEFAULT_SAFETY_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub index: usize,
    pub delta_separation: f64,
    pub lipschitz_bound_used: f64,
    /// `δ / (2L)`, zero when not separated.
    pub epsilon_certified: f64,
    pub epsilon_target: f64,
    pub certified: bool,
}

/// Nearest and second-nearest anchor distances with the nearest index.
fn two_nearest(anchors: &AnchorSet, ez: &[f64]) -> Result<(usize, f64, usize, f64)> {
    if anchors.len() < 2 {
        return Err(Error::insufficient("δ-separation needs at least two anchors"));
    }
    let mut first = (usize::MAX, f64::INFINITY);
    let mut second = (usize::MAX, f64::INFINITY);
    for (i, a) in anchors.embeddings().iter().enumerate() {
        let d = l2_distance(a, ez);
        if d < first.1 {
            second = first;
            first = (i, d);
        } else if d < second.1 {
            second = (i, d);
        }
    }
    Ok((first.0, first.1, second.0, second.1))
}

/// `d₂ − d₁`: how much closer `z` is to its nearest anchor than to the next.
pub fn delta_separation(params: &MlpParams, z: &[f64], anchors: &AnchorSet) -> Result<f64> {
    let (_, d1, _, d2) = two_nearest(anchors, &embed(params, z)?)?;
    Ok(d2 - d1)
}

/// Lipschitz constant of `d(a, ·)` with respect to the input norm: the
/// normalised embedding bound, times `√k` for Linf, times `safety`.
pub fn effective_lipschitz(bound: &LipschitzBound, norm: Norm, input_dim: usize, safety: f64) -> f64 {
    let conversion = match norm {
        Norm::L2 => 1.0,
        Norm::Linf => libm::sqrt(input_dim as f64),
    };
    bound.normalized * conversion * safety
}

/// Certifies `z` as ε-robust when `L ≤ δ / (2ε)`.
pub fn certify_eps_robust(
    params: &MlpParams,
    index: usize,
    z: &[f64],
    anchors: &AnchorSet,
    epsilon: f64,
    lipschitz: f64,
) -> Result<Certificate> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::invalid("Lipschitz bound must be > 0"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be ≥ 0"));
    }
    let delta = delta_separation(params, z, anchors)?;
    Ok(certificate_from(index, delta, epsilon, lipschitz))
}

/// The certificate arithmetic on its own.
pub fn certificate_from(index: usize, delta: f64, epsilon: f64, lipschitz: f64) -> Certificate {
    let separated = delta > 0.0;
    Certificate {
        index,
        delta_separation: delta,
        lipschitz_bound_used: lipschitz,
        epsilon_certified: if separated { delta / (2.0 * lipschitz) } else { 0.0 },
        epsilon_target: epsilon,
        certified: separated && lipschitz * 2.0 * epsilon <= delta,
    }
}

/// `d(f(x), a_near) − d(f(x), a_other)`; positive means the other anchor won.
pub struct MarginObjective<'a> {
    params: &'a MlpParams,
    near: Vec<f64>,
    other: Vec<f64>,
}

impl<'a> MarginObjective<'a> {
    pub fn new(params: &'a MlpParams, near: Vec<f64>, other: Vec<f64>) -> Self {
        Self { params, near, other }
    }
}

impl Objective for MarginObjective<'_> {
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = forward(self.params, x)?;
        let dn = l2_distance(&t.embedding, &self.near);
        let d_o = l2_distance(&t.embedding, &self.other);
        if dn < crate::losses::DIST_FLOOR || d_o < crate::losses::DIST_FLOOR {
            return Err(Error::DistanceSingularity);
        }
        let u: Vec<f64> = t
            .embedding
            .iter()
            .zip(self.near.iter().zip(&self.other))
            .map(|(e, (n, o))| (e - n) / dn - (e - o) / d_o)
            .collect();
        Ok((dn - d_o, vjp_input(self.params, &t, &u)?))
    }
}

/// Searches for a perturbation in the ball that changes the nearest anchor of
/// `z`, attacking every competing anchor with `restarts` random restarts
/// each. Returns the offending point if one is found.
pub fn falsify_certificate(
    params: &MlpParams,
    z: &[f64],
    anchors: &AnchorSet,
    attack: &AttackConfig,
    restarts: usize,
    rng: &mut SeededRng,
) -> Result<Option<Vec<f64>>> {
    let ez = embed(params, z)?;
    let (nearest, ..) = two_nearest(anchors, &ez)?;
    let near = anchors.embeddings()[nearest].clone();
    for (j, other) in anchors.embeddings().iter().enumerate() {
        if j == nearest {
            continue;
        }
        let obj = MarginObjective::new(params, near.clone(), other.clone());
        for _ in 0..restarts {
            let x = run_attack(&obj, z, attack, rng)?;
            let e = embed(params, &x)?;
            let (flipped, ..) = two_nearest(anchors, &e)?;
            if flipped != nearest {
                return Ok(Some(x));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventFrequency {
    /// Fraction of draws at least as close to the wrong anchor.
    pub frequency: f64,
    /// Mean embedding distance to the correct anchor.
    pub beta_pos: f64,
    /// Mean embedding distance to the wrong anchor.
    pub beta_neg: f64,
    pub n_samples: usize,
}

/// Draws `x` from class `positive_label` of `mixture` and counts how often
/// `d(x, a_neg) ≤ d(x, a_pos)` (ties count as the event).
pub fn empirical_event_frequency(
    params: &MlpParams,
    mixture: &GaussianMixtureConfig,
    positive_label: u32,
    a_pos: &[f64],
    a_neg: &[f64],
    n_samples: usize,
    rng: SeededRng,
) -> Result<EventFrequency> {
    if n_samples == 0 {
        return Err(Error::insufficient("n_samples must be ≥ 1"));
    }
    mixture.validate()?;
    let ep = embed(params, a_pos)?;
    let en = embed(params, a_neg)?;
    let mut events = 0usize;
    let (mut sp, mut sn) = (0.0, 0.0);
    for i in 0..n_samples {
        let mut r = rng.substream(i as u64);
        let x = sample_point(mixture, positive_label, &mut r);
        let e = embed(params, &x.x)?;
        let (dp, dn) = (l2_distance(&e, &ep), l2_distance(&e, &en));
        sp += dp;
        sn += dn;
        if dn <= dp {
            events += 1;
        }
    }
    let n = n_samples as f64;
    Ok(EventFrequency {
        frequency: events as f64 / n,
        beta_pos: sp / n,
        beta_neg: sn / n,
        n_samples,
    })
}
