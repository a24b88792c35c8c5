//! Nearest-anchor inference, R@1 / mAP@R retrieval metrics and robustness
//! reports.

use alloc::string::String;
use alloc::vec::Vec;

use crate::attacks::{attack_success_with, test_time_attack, AttackConfig};
use crate::data::{Dataset, LabeledPoint};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{embed, MlpParams};
use crate::numerics::{l2_distance, streams, SeededRng};

/// Distances closer than this count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Labelled reference points with embeddings cached for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    points: Vec<LabeledPoint>,
    embeddings: Vec<Vec<f64>>,
    fingerprint: u64,
}

impl AnchorSet {
    pub fn new(points: Vec<LabeledPoint>, params: &MlpParams) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::insufficient("anchor set is empty"));
        }
        let embeddings = points.iter().map(|p| embed(params, &p.x)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            embeddings,
            fingerprint: params.fingerprint(),
        })
    }

    pub fn from_dataset(dataset: &Dataset, params: &MlpParams) -> Result<Self> {
        Self::new(dataset.points().to_vec(), params)
    }

    /// Re-embeds the anchors if `params` differ from the cached ones.
    pub fn refresh(&mut self, params: &MlpParams) -> Result<()> {
        let fp = params.fingerprint();
        if fp != self.fingerprint {
            self.embeddings = self.points.iter().map(|p| embed(params, &p.x)).collect::<Result<Vec<_>>>()?;
            self.fingerprint = fp;
        }
        Ok(())
    }

    pub fn is_current(&self, params: &MlpParams) -> bool {
        self.fingerprint == params.fingerprint()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn label(&self, i: usize) -> u32 {
        self.points[i].label
    }
}

/// Index of the anchor embedding closest to `z`, skipping `exclude`.
/// Anchors within [`TIE_TOL`] of the minimum are tied and one is drawn
/// uniformly from `rng`; the stream is only consumed on a tie.
pub fn nearest_anchor(
    anchors: &[Vec<f64>],
    z: &[f64],
    exclude: Option<usize>,
    rng: &mut SeededRng,
) -> Result<usize> {
    let dists: Vec<(usize, f64)> = anchors
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, a)| (i, l2_distance(a, z)))
        .collect();
    let best = dists
        .iter()
        .map(|&(_, d)| d)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::insufficient("no anchors to compare against"));
    }
    let tied: Vec<usize> = dists
        .iter()
        .filter(|&&(_, d)| d - best < TIE_TOL)
        .map(|&(i, _)| i)
        .collect();
    Ok(if tied.len() == 1 { tied[0] } else { tied[rng.below(tied.len())] })
}

/// `lb(A, z)` for an already embedded query.
pub fn predict_label_embedded(
    anchors: &AnchorSet,
    z_embedding: &[f64],
    exclude: Option<usize>,
    rng: &mut SeededRng,
) -> Result<u32> {
    let i = nearest_anchor(anchors.embeddings(), z_embedding, exclude, rng)?;
    Ok(anchors.label(i))
}

/// `lb(A, z)`: the label of the anchor nearest to `f(z)`.
pub fn predict_label(
    anchors: &AnchorSet,
    params: &MlpParams,
    z: &[f64],
    exclude: Option<usize>,
    rng: &mut SeededRng,
) -> Result<u32> {
    if !anchors.is_current(params) {
        return Err(Error::invalid("anchor embeddings are stale for these params"));
    }
    predict_label_embedded(anchors, &embed(params, z)?, exclude, rng)
}

/// The `k` nearest other points to point `i`, nearest first; ties by index.
pub fn knn_indices(embeddings: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    knn_of_query(&embeddings[i], embeddings, i, k)
}

fn knn_of_query(query: &[f64], refs: &[Vec<f64>], i: usize, k: usize) -> Result<Vec<usize>> {
    if refs.is_empty() || k > refs.len() - 1 {
        return Err(Error::invalid(alloc::format!("k = {k} exceeds n - 1 = {}", refs.len().saturating_sub(1))));
    }
    let mut order = ranked(query, refs, i);
    order.truncate(k);
    Ok(order)
}

/// Every reference index except `i`, by ascending distance then index.
fn ranked(query: &[f64], refs: &[Vec<f64>], i: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = refs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, r)| (l2_distance(query, r), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, j)| j).collect()
}

/// Retrieval scores of a query set ranked against a reference set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    pub r_at_1: f64,
    pub map_at_r: f64,
    /// Queries whose class has no other member; left out of mAP@R.
    pub map_excluded: usize,
}

/// Leave-one-out retrieval: query `i` is ranked against every reference
/// except reference `i`. With `queries == refs` this is the benign metric.
pub fn retrieval_metrics(queries: &[Vec<f64>], refs: &[Vec<f64>], labels: &[u32], gated_map: bool) -> Result<Retrieval> {
    let n = refs.len();
    if n < 2 {
        return Err(Error::insufficient("retrieval needs at least two points"));
    }
    if queries.len() != n || labels.len() != n {
        return Err(Error::shape("queries, references and labels differ in length"));
    }
    let mut hits = 0usize;
    let mut map_sum = 0.0;
    let mut map_count = 0usize;
    for i in 0..n {
        let order = ranked(&queries[i], refs, i);
        let y = labels[i];
        if labels[order[0]] == y {
            hits += 1;
        }
        let r = labels.iter().enumerate().filter(|&(j, &l)| j != i && l == y).count();
        if r == 0 {
            continue;
        }
        let mut correct = 0usize;
        let mut ap = 0.0;
        for (k, &j) in order.iter().take(r).enumerate() {
            let rel = labels[j] == y;
            if rel {
                correct += 1;
            }
            if !gated_map || rel {
                ap += correct as f64 / (k + 1) as f64;
            }
        }
        map_sum += ap / r as f64;
        map_count += 1;
    }
    let map_at_r = if map_count == 0 { f64::NAN } else { map_sum / map_count as f64 };
    Ok(Retrieval {
        r_at_1: hits as f64 / n as f64,
        map_at_r,
        map_excluded: n - map_count,
    })
}

fn embed_all(params: &MlpParams, points: &[LabeledPoint]) -> Result<Vec<Vec<f64>>> {
    points.iter().map(|p| embed(params, &p.x)).collect()
}

/// Leave-one-out R@1 within `test_set`.
pub fn recall_at_1(params: &MlpParams, test_set: &Dataset) -> Result<f64> {
    let emb = embed_all(params, test_set.points())?;
    Ok(retrieval_metrics(&emb, &emb, &test_set.labels(), false)?.r_at_1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapAtR {
    pub value: f64,
    pub excluded: usize,
}

/// Leave-one-out mAP@R within `test_set`. `gated` selects the variant that
/// only accumulates precision at relevant ranks.
pub fn map_at_r(params: &MlpParams, test_set: &Dataset, gated: bool) -> Result<MapAtR> {
    let emb = embed_all(params, test_set.points())?;
    let r = retrieval_metrics(&emb, &emb, &test_set.labels(), gated)?;
    if r.map_excluded == test_set.len() {
        return Err(Error::MapUndefined);
    }
    Ok(MapAtR {
        value: r.map_at_r,
        excluded: r.map_excluded,
    })
}

/// Retrieval quality of one (model, dataset, attack) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub r_at_1: f64,
    pub map_at_r: f64,
    pub n_evaluated: usize,
    pub map_excluded: usize,
    /// `"benign"` or the attack name.
    pub attack: String,
    pub mean_shift: f64,
    pub max_shift: f64,
    pub attack_success_rate: f64,
}

/// Seed and options shared by the robustness evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub gated_map: bool,
}

impl EvalOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, gated_map: false }
    }
}

/// Adversarial inputs for every test point. Point `i` attacks its nearest
/// same-label neighbour among the other benign test points and draws its
/// randomness from its own stream. A degenerate attack leaves its point
/// unperturbed.
pub fn perturb_test_set<E: Executor>(
    params: &MlpParams,
    test_set: &Dataset,
    attack: &AttackConfig,
    opts: &EvalOptions,
    exec: &E,
) -> Result<Vec<Vec<f64>>> {
    let anchors = AnchorSet::from_dataset(test_set, params)?;
    let base = SeededRng::new(opts.seed, streams::ATTACK_INIT);
    exec.map(test_set.len(), |i| {
        let mut rng = base.substream(i as u64);
        let z = &test_set.points()[i];
        match test_time_attack(params, z, &anchors, Some(i), attack, &mut rng) {
            // Every iterate sat on the anchor: the attack found no direction.
            Err(Error::AttackDegenerate) => Ok(z.x.clone()),
            r => r,
        }
    })
    .into_iter()
    .collect()
}

/// Benign retrieval report.
pub fn benign_metrics(params: &MlpParams, test_set: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let emb = embed_all(params, test_set.points())?;
    report_from(params, test_set, &emb, &emb, None, opts, "benign")
}

/// Retrieval report with every query perturbed by the test-time attack and
/// ranked against the other, unperturbed, test points.
pub fn robust_metrics<E: Executor>(
    params: &MlpParams,
    test_set: &Dataset,
    attack: &AttackConfig,
    opts: &EvalOptions,
    exec: &E,
) -> Result<MetricsReport> {
    let adv = perturb_test_set(params, test_set, attack, opts, exec)?;
    metrics_from_perturbed(params, test_set, &adv, attack.method.name(), opts)
}

/// Report for precomputed adversarial inputs.
pub fn metrics_from_perturbed(
    params: &MlpParams,
    test_set: &Dataset,
    adversarial: &[Vec<f64>],
    name: &str,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let refs = embed_all(params, test_set.points())?;
    let queries = adversarial.iter().map(|x| embed(params, x)).collect::<Result<Vec<_>>>()?;
    report_from(params, test_set, &queries, &refs, Some(adversarial), opts, name)
}

fn report_from(
    params: &MlpParams,
    test_set: &Dataset,
    queries: &[Vec<f64>],
    refs: &[Vec<f64>],
    adversarial: Option<&[Vec<f64>]>,
    opts: &EvalOptions,
    name: &str,
) -> Result<MetricsReport> {
    let labels = test_set.labels();
    let r = retrieval_metrics(queries, refs, &labels, opts.gated_map)?;
    let n = test_set.len();
    let mut shift_sum = 0.0;
    let mut max_shift = 0.0f64;
    let mut successes = 0usize;
    if let Some(adv) = adversarial {
        let anchors = AnchorSet::from_dataset(test_set, params)?;
        for i in 0..n {
            let s = l2_distance(&queries[i], &refs[i]);
            shift_sum += s;
            max_shift = max_shift.max(s);
            if attack_success_with(&anchors, &refs[i], &queries[i], Some(i), opts.seed, i)? {
                successes += 1;
            }
        }
        debug_assert_eq!(adv.len(), n);
    }
    Ok(MetricsReport {
        r_at_1: r.r_at_1,
        map_at_r: r.map_at_r,
        n_evaluated: n,
        map_excluded: r.map_excluded,
        attack: name.into(),
        mean_shift: shift_sum / n as f64,
        max_shift,
        attack_success_rate: successes as f64 / n as f64,
    })
}

/// One row of the embedding-shift figure.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRecord {
    pub index: usize,
    pub label: u32,
    pub benign_embedding: Vec<f64>,
    pub adversarial_embedding: Vec<f64>,
    pub shift: f64,
    /// Whether the perturbed point's nearest benign neighbour shares its label.
    pub correct: bool,
}

/// Benign and adversarial embeddings of every point under the test-time
/// attack, with the shift between them.
pub fn embedding_shift_report<E: Executor>(
    params: &MlpParams,
    points: &Dataset,
    attack: &AttackConfig,
    opts: &EvalOptions,
    exec: &E,
) -> Result<Vec<ShiftRecord>> {
    let adv = perturb_test_set(params, points, attack, opts, exec)?;
    shift_records(params, points, &adv)
}

/// Shift rows for precomputed adversarial inputs.
pub fn shift_records(params: &MlpParams, points: &Dataset, adversarial: &[Vec<f64>]) -> Result<Vec<ShiftRecord>> {
    let refs = embed_all(params, points.points())?;
    let labels = points.labels();
    let mut out = Vec::with_capacity(points.len());
    for (i, x) in adversarial.iter().enumerate() {
        let q = embed(params, x)?;
        let correct = match ranked(&q, &refs, i).first() {
            Some(&j) => labels[j] == labels[i],
            None => false,
        };
        out.push(ShiftRecord {
            index: i,
            label: labels[i],
            shift: l2_distance(&q, &refs[i]),
            benign_embedding: refs[i].clone(),
            adversarial_embedding: q,
            correct,
        });
    }
    Ok(out)
}
