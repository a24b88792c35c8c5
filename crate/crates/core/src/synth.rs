//! Two-class Gaussian mixture in `[0,1]^k`.

use alloc::vec::Vec;

use crate::data::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::numerics::{streams, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureConfig {
    pub input_dim: usize,
    /// Per-coordinate mean of class 0.
    pub mu_a: f64,
    /// Per-coordinate mean of class 1.
    pub mu_b: f64,
    pub sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub clip_to_unit_box: bool,
    pub seed: u64,
}

impl GaussianMixtureConfig {
    /// σ = 0.025 with 508 training and 516 test points.
    pub fn appendix(input_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            mu_a: 0.25,
            mu_b: 0.75,
            sigma: 0.025,
            n_train: 508,
            n_test: 516,
            clip_to_unit_box: true,
            seed,
        }
    }

    /// σ = 0.075 with roughly 15K points.
    pub fn main(input_dim: usize, seed: u64) -> Self {
        Self {
            sigma: 0.075,
            n_train: 12_000,
            n_test: 3_000,
            ..Self::appendix(input_dim, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be ≥ 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be > 0"));
        }
        if !self.mu_a.is_finite() || !self.mu_b.is_finite() {
            return Err(Error::NonFinite);
        }
        if self.n_train < 2 || self.n_test < 2 {
            return Err(Error::insufficient("n_train and n_test must be ≥ 2"));
        }
        Ok(())
    }

    pub fn mean(&self, label: u32) -> f64 {
        if label == 0 {
            self.mu_a
        } else {
            self.mu_b
        }
    }
}

/// One draw from class `label`. Coordinates are rounded to `f32` precision so
/// that the on-disk format round-trips exactly.
pub fn sample_point(cfg: &GaussianMixtureConfig, label: u32, rng: &mut SeededRng) -> LabeledPoint {
    let mu = cfg.mean(label);
    let x = (0..cfg.input_dim)
        .map(|_| {
            let mut v = mu + cfg.sigma * rng.normal();
            if cfg.clip_to_unit_box {
                v = v.clamp(0.0, 1.0);
            }
            v as f32 as f64
        })
        .collect();
    LabeledPoint::new(x, label)
}

fn draw_split(cfg: &GaussianMixtureConfig, n: usize, split: u64) -> Result<Dataset> {
    let base = SeededRng::new(cfg.seed, streams::DATA).substream(split);
    let points: Vec<LabeledPoint> = (0..n)
        .map(|i| {
            let mut rng = base.substream(i as u64);
            sample_point(cfg, (i % 2) as u32, &mut rng)
        })
        .collect();
    Dataset::new(points)
}

/// Independent train and test draws with alternating, balanced labels.
pub fn generate_mixture(cfg: &GaussianMixtureConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    Ok((draw_split(cfg, cfg.n_train, 0)?, draw_split(cfg, cfg.n_test, 1)?))
}
