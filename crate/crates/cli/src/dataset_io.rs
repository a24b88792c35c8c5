//! Binary dataset files.
//!
//! Layout, all integers little-endian: the magic `ADMLDS\x01`, `u32 n`,
//! `u32 k`, `u32 n_classes`, then `n` records of `u32 label` followed by
//! `k` float32 values.

use std::path::Path;

use adml_core::{Dataset, LabeledPoint};

use crate::error::{CliError, Result};

pub const DATASET_MAGIC: &[u8; 7] = b"ADMLDS\x01";

/// Rounds every coordinate to the nearest float32 so the dataset survives a
/// save/load cycle unchanged.
pub fn quantize_f32(dataset: &Dataset) -> Result<Dataset> {
    let pts = dataset
        .points()
        .iter()
        .map(|p| LabeledPoint::new(p.x.iter().map(|&v| v as f32 as f64).collect(), p.label))
        .collect();
    Ok(Dataset::new(pts)?)
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let k = dataset.input_dim();
    let mut out = Vec::with_capacity(19 + dataset.len() * (4 + 4 * k));
    out.extend_from_slice(DATASET_MAGIC);
    let n_classes = dataset.labels().iter().max().map_or(0, |&m| m + 1);
    for v in [dataset.len(), k, n_classes as usize] {
        let v = u32::try_from(v).map_err(|_| CliError::Dataset(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, p) in dataset.points().iter().enumerate() {
        out.extend_from_slice(&p.label.to_le_bytes());
        for (j, &v) in p.x.iter().enumerate() {
            let f = v as f32;
            if f as f64 != v {
                return Err(CliError::Dataset(format!(
                    "point {i} coordinate {j} ({v}) is not representable as float32"
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::Dataset(format!(
                "truncated at byte offset {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(DATASET_MAGIC.len(), "magic").ok() != Some(&DATASET_MAGIC[..]) {
        return Err(CliError::Dataset("bad magic at byte offset 0".into()));
    }
    let n = r.u32("n")? as usize;
    let k = r.u32("k")? as usize;
    let n_classes = r.u32("n_classes")?;
    if n == 0 {
        return Err(CliError::Dataset("file holds no points (n = 0)".into()));
    }
    if k == 0 {
        return Err(CliError::Dataset("input dimension k = 0".into()));
    }
    let mut points = Vec::with_capacity(n.min(bytes.len() / (4 + 4 * k)));
    for i in 0..n {
        let at = r.pos;
        let label = r.u32("label")?;
        if label >= n_classes {
            return Err(CliError::Dataset(format!(
                "label {label} of point {i} at byte offset {at} exceeds n_classes = {n_classes}"
            )));
        }
        let x = (0..k).map(|_| r.f32("coordinates").map(f64::from)).collect::<Result<Vec<_>>>()?;
        points.push(LabeledPoint::new(x, label));
    }
    if r.pos != bytes.len() {
        return Err(CliError::Dataset(format!("{} trailing bytes at byte offset {}", bytes.len() - r.pos, r.pos)));
    }
    Ok(Dataset::new(points)?)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)?).map_err(|e| CliError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
}
