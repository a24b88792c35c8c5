//! CSV outputs: per-seed metrics, the across-seed aggregate, embedding
//! shifts and certificates. Plain `.` decimals, LF line endings, one header
//! row each.

use std::path::Path;

use adml_core::certification::Certificate;
use adml_core::evaluation::ShiftRecord;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub seed: u64,
    /// `benign` or the attack name.
    pub phase: String,
    pub norm: String,
    pub epsilon: f64,
    pub attack_rate: f64,
    pub formulation: String,
    pub perturb_target: String,
    pub r_at_1: f64,
    pub map_at_r: f64,
    pub attack_success_rate: f64,
    pub mean_shift: f64,
    /// Empty unless wall-clock recording is enabled.
    pub wallclock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment_id: String,
    pub phase: String,
    pub norm: String,
    pub epsilon: f64,
    pub attack_rate: f64,
    pub formulation: String,
    pub perturb_target: String,
    pub n_seeds: usize,
    pub r_at_1_mean: f64,
    pub r_at_1_std: f64,
    pub map_at_r_mean: f64,
    pub map_at_r_std: f64,
    pub attack_success_rate_mean: f64,
    pub attack_success_rate_std: f64,
    pub mean_shift_mean: f64,
    pub mean_shift_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub point: usize,
    pub label: u32,
    pub delta_separation: f64,
    pub lipschitz: f64,
    pub epsilon_certified: f64,
    pub epsilon_target: f64,
    pub certified: bool,
}

impl CertificateRow {
    pub fn new(c: &Certificate, label: u32) -> Self {
        Self {
            point: c.index,
            label,
            delta_separation: c.delta_separation,
            lipschitz: c.lipschitz_bound_used,
            epsilon_certified: c.epsilon_certified,
            epsilon_target: c.epsilon_target,
            certified: c.certified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub model: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_benign_r1: Option<f64>,
    pub val_adversarial_r1: Option<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per distinct (phase, norm, ε, rate, formulation, target) in order
/// of first appearance, summarised over seeds.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let key = |r: &MetricsRow| {
        (
            r.experiment_id.clone(),
            r.phase.clone(),
            r.norm.clone(),
            r.epsilon.to_bits(),
            r.attack_rate.to_bits(),
            r.formulation.clone(),
            r.perturb_target.clone(),
        )
    };
    let mut keys = Vec::new();
    for r in rows {
        let k = key(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| key(r) == k).collect();
            let stat = |f: fn(&MetricsRow) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (r1, r1s) = stat(|r| r.r_at_1);
            let (map, maps) = stat(|r| r.map_at_r);
            let (asr, asrs) = stat(|r| r.attack_success_rate);
            let (sh, shs) = stat(|r| r.mean_shift);
            let first = group[0];
            AggregateRow {
                experiment_id: first.experiment_id.clone(),
                phase: first.phase.clone(),
                norm: first.norm.clone(),
                epsilon: first.epsilon,
                attack_rate: first.attack_rate,
                formulation: first.formulation.clone(),
                perturb_target: first.perturb_target.clone(),
                n_seeds: group.len(),
                r_at_1_mean: r1,
                r_at_1_std: r1s,
                map_at_r_mean: map,
                map_at_r_std: maps,
                attack_success_rate_mean: asr,
                attack_success_rate_std: asrs,
                mean_shift_mean: sh,
                mean_shift_std: shs,
            }
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Usage(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

/// Writes `rows` with a header derived from the field names. An empty
/// slice still produces the header.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const METRICS_HEADER: [&str; 13] = [
    "experiment_id",
    "seed",
    "phase",
    "norm",
    "epsilon",
    "attack_rate",
    "formulation",
    "perturb_target",
    "r_at_1",
    "map_at_r",
    "attack_success_rate",
    "mean_shift",
    "wallclock_s",
];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv(path, &METRICS_HEADER, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_aggregate(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let header = [
        "experiment_id",
        "phase",
        "norm",
        "epsilon",
        "attack_rate",
        "formulation",
        "perturb_target",
        "n_seeds",
        "r_at_1_mean",
        "r_at_1_std",
        "map_at_r_mean",
        "map_at_r_std",
        "attack_success_rate_mean",
        "attack_success_rate_std",
        "mean_shift_mean",
        "mean_shift_std",
    ];
    write_csv(path, &header, &aggregate(rows))
}

/// Embedding-shift rows: `model,attack,index,label,shift,correct`, then the
/// benign and adversarial embedding coordinates.
pub fn write_shifts(path: &Path, blocks: &[(String, String, Vec<ShiftRecord>)]) -> Result<()> {
    let dim = blocks
        .iter()
        .flat_map(|(_, _, r)| r.first())
        .map(|r| r.benign_embedding.len())
        .next()
        .unwrap_or(0);
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["model", "attack", "index", "label", "shift", "correct"].map(String::from).to_vec();
    header.extend((0..dim).map(|j| format!("benign_{j}")));
    header.extend((0..dim).map(|j| format!("adversarial_{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (model, attack, records) in blocks {
        for r in records {
            let mut rec = vec![
                model.clone(),
                attack.clone(),
                r.index.to_string(),
                r.label.to_string(),
                r.shift.to_string(),
                r.correct.to_string(),
            ];
            rec.extend(r.benign_embedding.iter().chain(&r.adversarial_embedding).map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_certificates(path: &Path, rows: &[CertificateRow]) -> Result<()> {
    let header = [
        "point",
        "label",
        "delta_separation",
        "lipschitz",
        "epsilon_certified",
        "epsilon_target",
        "certified",
    ];
    write_csv(path, &header, rows)
}
