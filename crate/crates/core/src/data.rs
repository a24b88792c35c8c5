use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// An input vector with its integer class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub label: u32,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, label: u32) -> Self {
        Self { x, label }
    }
}

/// A labelled sample set sharing one input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<LabeledPoint>,
    input_dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        let input_dim = points
            .first()
            .map(|p| p.x.len())
            .ok_or_else(|| Error::insufficient("dataset is empty"))?;
        if input_dim == 0 {
            return Err(Error::shape("zero input dimension"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.x.len() != input_dim {
                return Err(Error::shape(alloc::format!(
                    "point {i} has dimension {}, expected {input_dim}",
                    p.x.len()
                )));
            }
            if p.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { points, input_dim })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<LabeledPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> Vec<u32> {
        self.points.iter().map(|p| p.label).collect()
    }

    /// One more than the largest label.
    pub fn n_classes(&self) -> usize {
        self.points.iter().map(|p| p.label as usize + 1).max().unwrap_or(0)
    }

    /// Point indices grouped by label, labels ascending.
    pub fn class_members(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.points.iter().enumerate() {
            map.entry(p.label).or_default().push(i);
        }
        map
    }

    /// Sub-dataset made of the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i].clone()).collect())
    }
}
