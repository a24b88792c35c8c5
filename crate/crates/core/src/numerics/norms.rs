use alloc::vec::Vec;

use super::{ensure_finite, l2_norm};
use crate::error::Result;

/// Slack on every ball-membership check.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L2,
    Linf,
}

pub fn lp_norm(v: &[f64], norm: Norm) -> Result<f64> {
    ensure_finite(v)?;
    Ok(raw_norm(v, norm))
}

fn raw_norm(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => l2_norm(v),
        Norm::Linf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
    }
}

/// An lp ball `B_p(center, epsilon)` in input space.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub center: Vec<f64>,
}

impl BallSpec {
    pub fn new(norm: Norm, epsilon: f64, center: Vec<f64>) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(crate::Error::invalid("epsilon must be ≥ 0"));
        }
        ensure_finite(&center)?;
        Ok(Self {
            norm,
            epsilon,
            center,
        })
    }

    /// The membership authority: `|delta|_p ≤ epsilon + 1e-12`.
    pub fn contains_offset(&self, delta: &[f64]) -> bool {
        delta.iter().all(|v| v.is_finite()) && raw_norm(delta, self.norm) <= self.epsilon + MEMBERSHIP_TOL
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.center.len() && {
            let delta: Vec<f64> = point.iter().zip(&self.center).map(|(p, c)| p - c).collect();
            self.contains_offset(&delta)
        }
    }
}

/// Projects an offset from `ball.center` back into the ball.
pub fn project_ball(delta: &[f64], ball: &BallSpec) -> Result<Vec<f64>> {
    project_offset(delta, ball.norm, ball.epsilon)
}

/// Projection onto the origin-centred ball of radius `epsilon`.
///
/// Points already inside come back unchanged. Linf clamps each coordinate;
/// L2 rescales radially, shrinking the factor ulp by ulp if rounding would
/// leave the result outside, which keeps the projection idempotent.
pub fn project_offset(delta: &[f64], norm: Norm, epsilon: f64) -> Result<Vec<f64>> {
    ensure_finite(delta)?;
    Ok(match norm {
        Norm::Linf => delta.iter().map(|&v| v.clamp(-epsilon, epsilon)).collect(),
        Norm::L2 => {
            let n = l2_norm(delta);
            if n <= epsilon {
                delta.to_vec()
            } else {
                let mut scale = epsilon / n;
                loop {
                    let out: Vec<f64> = delta.iter().map(|v| v * scale).collect();
                    if l2_norm(&out) <= epsilon {
                        break out;
                    }
                    scale = scale.next_down();
                }
            }
        }
    })
}
