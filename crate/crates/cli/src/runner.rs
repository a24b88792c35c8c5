//! Subcommand pipelines and the output directory layout.
//!
//! ```text
//! OUT/
//!   manifest.json  resolved_config.txt  metrics.csv  aggregate.csv
//!   PARTIAL                     present only after a failed run
//!   seed-N/
//!     manifest.json  resolved_config.txt
//!     train.adds  test.adds     gen-data
//!     <model>.ckpt  train_log.csv
//!     metrics.csv  shifts.csv   eval, attack, sweeps
//!     certificates.csv          certify
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adml_core::attacks::{AttackMethod, PerturbTarget};
use adml_core::certification::{certify_eps_robust, effective_lipschitz, empirical_event_frequency};
use adml_core::evaluation::{benign_metrics, metrics_from_perturbed, perturb_test_set, shift_records, AnchorSet, EvalOptions, ShiftRecord};
use adml_core::model::{lipschitz_upper_bound, MlpParams};
use adml_core::numerics::streams;
use adml_core::synth::generate_mixture;
use adml_core::training::{train, Formulation};
use adml_core::{Dataset, SeededRng};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{norm_name, ExperimentConfig};
use crate::dataset_io::{quantize_f32, save_dataset};
use crate::error::{CliError, Result};
use crate::parallel::ThreadPoolExecutor;
use crate::report::{
    write_aggregate, write_certificates, write_csv, write_metrics, write_shifts, CertificateRow, MetricsRow, TrainLogRow,
};

pub const PARTIAL_MARKER: &str = "PARTIAL";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Attack,
    Eval,
    Certify,
    SweepRate,
    SweepTarget,
    SweepAttack,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Attack => "attack",
            Command::Eval => "eval",
            Command::Certify => "certify",
            Command::SweepRate => "sweep-rate",
            Command::SweepTarget => "sweep-target",
            Command::SweepAttack => "sweep-attack",
        }
    }
}

/// One trained model within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub formulation: Formulation,
    pub attack_rate: f64,
    pub perturb_target: PerturbTarget,
}

impl Variant {
    fn natural() -> Self {
        Self {
            name: "natural".into(),
            formulation: Formulation::Natural,
            attack_rate: 0.0,
            perturb_target: PerturbTarget::Positive,
        }
    }

    fn target_name(&self) -> &'static str {
        match self.formulation {
            Formulation::Natural => "none",
            _ => self.perturb_target.name(),
        }
    }
}

/// The model named by the config's own `train.*` settings.
fn configured_variant(cfg: &ExperimentConfig) -> Variant {
    match cfg.train_formulation {
        Formulation::Natural => Variant {
            name: "model".into(),
            ..Variant::natural()
        },
        f => Variant {
            name: "model".into(),
            formulation: f,
            attack_rate: cfg.train_attack_rate,
            perturb_target: cfg.train_perturb_target,
        },
    }
}

/// Sweeps compare against a robust formulation; a natural config falls
/// back to F2.
fn robust_formulation(cfg: &ExperimentConfig) -> Formulation {
    match cfg.train_formulation {
        Formulation::Natural => Formulation::F2,
        f => f,
    }
}

fn robust(cfg: &ExperimentConfig, name: String, rate: f64, target: PerturbTarget) -> Variant {
    Variant {
        name,
        formulation: robust_formulation(cfg),
        attack_rate: rate,
        perturb_target: target,
    }
}

/// Models trained by `cmd` and the attacks they are evaluated under.
pub fn plan(cmd: Command, cfg: &ExperimentConfig) -> (Vec<Variant>, Vec<AttackMethod>) {
    let t = cfg.train_perturb_target;
    match cmd {
        Command::GenData => (Vec::new(), Vec::new()),
        Command::Train | Command::Certify => (vec![configured_variant(cfg)], Vec::new()),
        Command::Attack | Command::Eval => (vec![configured_variant(cfg)], cfg.attack_methods.clone()),
        Command::SweepRate => {
            let mut v = vec![Variant::natural()];
            v.extend(cfg.sweep_rates.iter().map(|&r| robust(cfg, format!("rate-{r}"), r, t)));
            (v, cfg.attack_methods.clone())
        }
        Command::SweepTarget => {
            let mut v = vec![Variant::natural()];
            v.extend(
                cfg.sweep_targets
                    .iter()
                    .map(|&tg| robust(cfg, format!("target-{}", tg.name()), cfg.train_attack_rate, tg)),
            );
            (v, cfg.attack_methods.clone())
        }
        Command::SweepAttack => (
            vec![Variant::natural(), robust(cfg, "robust".into(), cfg.train_attack_rate, t)],
            cfg.sweep_attacks.clone(),
        ),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment_id: &'a str,
    command: &'a str,
    seeds: &'a [u64],
    config_hash: String,
    versions: BTreeMap<&'static str, &'static str>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn describe(dir: &Path, cmd: Command, cfg: &ExperimentConfig, seeds: &[u64]) -> Result<()> {
    let manifest = Manifest {
        experiment_id: &cfg.experiment_id,
        command: cmd.name(),
        seeds,
        config_hash: cfg.hash(),
        versions: BTreeMap::from([("adml", env!("CARGO_PKG_VERSION")), ("adml-core", adml_core::VERSION)]),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join("manifest.json"), json)?;
    write_file(&dir.join("resolved_config.txt"), cfg.serialize())
}

/// Train and test splits for `seed`, rounded to float32 so they match the
/// files `gen-data` writes.
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = generate_mixture(&cfg.mixture(seed))?;
    Ok((quantize_f32(&train)?, quantize_f32(&test)?))
}

/// Everything a finished run produced, in memory.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub metrics: Vec<MetricsRow>,
    pub certificates: BTreeMap<u64, Vec<CertificateRow>>,
    pub seed_dirs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct CertifySummaryRow {
    seed: u64,
    n_points: usize,
    n_certified: usize,
    certified_fraction: f64,
    lipschitz: f64,
    mean_delta_separation: f64,
    event_frequency: Option<f64>,
    beta_pos: Option<f64>,
    beta_neg: Option<f64>,
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    exec: &'a ThreadPoolExecutor,
    dir: PathBuf,
    seed: u64,
    train: Dataset,
    test: Dataset,
    log: Vec<TrainLogRow>,
}

impl SeedRun<'_> {
    fn timed<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
        let t = Instant::now();
        let v = f()?;
        Ok((v, self.cfg.output_wallclock.then(|| t.elapsed().as_secs_f64())))
    }

    /// Loads `<name>.ckpt` when it was written under the same config hash,
    /// otherwise trains and saves it.
    fn model(&mut self, v: &Variant) -> Result<MlpParams> {
        let mut tc = self.cfg.train_config(self.seed);
        tc.formulation = v.formulation;
        tc.attack_rate = v.attack_rate;
        tc.perturb_target = v.perturb_target;
        let dims = tc.model.layer_dims(self.train.input_dim());
        let path = self.dir.join(format!("{}.ckpt", v.name));
        let hash = format!("{}:{}", self.cfg.hash(), v.name);
        if path.exists() {
            let ck = load_checkpoint(&path)?;
            ck.check_layer_dims(&dims)?;
            if ck.meta.config_hash == hash && ck.meta.seed == self.seed {
                return Ok(ck.params);
            }
        }
        let out = train(&self.train, &tc, self.exec)?;
        let r = &out.report;
        for (e, &loss) in r.epoch_losses.iter().enumerate() {
            self.log.push(TrainLogRow {
                model: v.name.clone(),
                epoch: e,
                loss,
                val_benign_r1: r.val_benign_r1.get(e).copied(),
                val_adversarial_r1: r.val_adversarial_r1.get(e).copied(),
            });
        }
        save_checkpoint(&Checkpoint::new(out.params.clone(), out.optimizer, self.seed, hash), &path)?;
        Ok(out.params)
    }

    fn row(&self, v: &Variant, phase: &str, epsilon: f64, r: &adml_core::evaluation::MetricsReport, wall: Option<f64>) -> MetricsRow {
        MetricsRow {
            experiment_id: self.cfg.experiment_id.clone(),
            seed: self.seed,
            phase: phase.into(),
            norm: norm_name(self.cfg.attack.norm).into(),
            epsilon,
            attack_rate: v.attack_rate,
            formulation: v.formulation.name().into(),
            perturb_target: v.target_name().into(),
            r_at_1: r.r_at_1,
            map_at_r: r.map_at_r,
            attack_success_rate: r.attack_success_rate,
            mean_shift: r.mean_shift,
            wallclock_s: wall,
        }
    }

    fn evaluate(
        &self,
        v: &Variant,
        params: &MlpParams,
        attacks: &[AttackMethod],
        with_benign: bool,
        rows: &mut Vec<MetricsRow>,
        shifts: &mut Vec<(String, String, Vec<ShiftRecord>)>,
    ) -> Result<()> {
        let opts = EvalOptions {
            seed: self.seed,
            gated_map: self.cfg.eval_gated_map,
        };
        if with_benign {
            let (r, wall) = self.timed(|| Ok(benign_metrics(params, &self.test, &opts)?))?;
            rows.push(self.row(v, "benign", 0.0, &r, wall));
        }
        for &m in attacks {
            let attack = self.cfg.eval_attack(m);
            let ((r, adv), wall) = self.timed(|| {
                let adv = perturb_test_set(params, &self.test, &attack, &opts, self.exec)?;
                Ok((metrics_from_perturbed(params, &self.test, &adv, m.name(), &opts)?, adv))
            })?;
            rows.push(self.row(v, m.name(), attack.epsilon, &r, wall));
            if self.cfg.eval_shift_report {
                shifts.push((v.name.clone(), m.name().into(), shift_records(params, &self.test, &adv)?));
            }
        }
        Ok(())
    }

    fn certify(&self, params: &MlpParams) -> Result<(Vec<CertificateRow>, CertifySummaryRow)> {
        let cfg = self.cfg;
        let anchors = AnchorSet::from_dataset(&self.train, params)?;
        let bound = lipschitz_upper_bound(params, self.test.points())?;
        let l = effective_lipschitz(&bound, cfg.attack.norm, self.test.input_dim(), cfg.certify_safety_factor);
        let pts = self.test.points();
        let certs = adml_core::Executor::map(self.exec, pts.len(), |i| {
            certify_eps_robust(params, i, &pts[i].x, &anchors, cfg.certify_epsilon, l)
        })
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
        let rows: Vec<CertificateRow> = certs.iter().zip(pts).map(|(c, p)| CertificateRow::new(c, p.label)).collect();
        let n_certified = rows.iter().filter(|r| r.certified).count();
        let event = if cfg.certify_mc_samples > 0 {
            let mix = cfg.mixture(self.seed);
            let a_pos = vec![mix.mean(0); mix.input_dim];
            let a_neg = vec![mix.mean(1); mix.input_dim];
            let rng = SeededRng::new(self.seed, streams::MONTE_CARLO);
            Some(empirical_event_frequency(params, &mix, 0, &a_pos, &a_neg, cfg.certify_mc_samples, rng)?)
        } else {
            None
        };
        let summary = CertifySummaryRow {
            seed: self.seed,
            n_points: rows.len(),
            n_certified,
            certified_fraction: n_certified as f64 / rows.len() as f64,
            lipschitz: l,
            mean_delta_separation: rows.iter().map(|r| r.delta_separation).sum::<f64>() / rows.len() as f64,
            event_frequency: event.map(|e| e.frequency),
            beta_pos: event.map(|e| e.beta_pos),
            beta_neg: event.map(|e| e.beta_neg),
        };
        Ok((rows, summary))
    }
}

const CERTIFY_SUMMARY_HEADER: [&str; 9] = [
    "seed",
    "n_points",
    "n_certified",
    "certified_fraction",
    "lipschitz",
    "mean_delta_separation",
    "event_frequency",
    "beta_pos",
    "beta_neg",
];

/// Runs `cmd` for every configured seed and writes the artifacts under
/// `out`. On failure a `PARTIAL` marker holding the error is left behind.
pub fn run_experiment(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let marker = out.join(PARTIAL_MARKER);
    write_file(&marker, format!("{} started\n", cmd.name()))?;
    describe(out, cmd, cfg, &cfg.seeds)?;
    match run_seeds(cmd, cfg, out, threads) {
        Ok(summary) => {
            std::fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
            Ok(summary)
        }
        Err(e) => {
            let _ = std::fs::write(&marker, format!("{} failed: {e}\n", cmd.name()));
            Err(e)
        }
    }
}

fn run_seeds(cmd: Command, cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunSummary> {
    let exec = ThreadPoolExecutor::new(threads)?;
    let (variants, attacks) = plan(cmd, cfg);
    let mut summary = RunSummary::default();
    let mut cert_summaries = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        describe(&dir, cmd, cfg, &[seed])?;
        let (train_set, test_set) = datasets(cfg, seed)?;
        if cmd == Command::GenData {
            save_dataset(&train_set, &dir.join("train.adds"))?;
            save_dataset(&test_set, &dir.join("test.adds"))?;
            summary.seed_dirs.push(dir);
            continue;
        }
        let mut run = SeedRun {
            cfg,
            exec: &exec,
            dir: dir.clone(),
            seed,
            train: train_set,
            test: test_set,
            log: Vec::new(),
        };
        let mut rows = Vec::new();
        let mut shifts = Vec::new();
        for v in &variants {
            let params = run.model(v)?;
            match cmd {
                Command::Train => {}
                Command::Certify => {
                    let (certs, s) = run.certify(&params)?;
                    write_certificates(&dir.join("certificates.csv"), &certs)?;
                    summary.certificates.insert(seed, certs);
                    cert_summaries.push(s);
                }
                _ => run.evaluate(v, &params, &attacks, cmd != Command::Attack, &mut rows, &mut shifts)?,
            }
        }
        if !run.log.is_empty() {
            let header = ["model", "epoch", "loss", "val_benign_r1", "val_adversarial_r1"];
            write_csv(&dir.join("train_log.csv"), &header, &run.log)?;
        }
        if !attacks.is_empty() || matches!(cmd, Command::Eval) {
            write_metrics(&dir.join("metrics.csv"), &rows)?;
            if cfg.eval_shift_report && !shifts.is_empty() {
                write_shifts(&dir.join("shifts.csv"), &shifts)?;
            }
        }
        summary.metrics.extend(rows);
        summary.seed_dirs.push(dir);
    }
    if !matches!(cmd, Command::GenData | Command::Train | Command::Certify) {
        write_metrics(&out.join("metrics.csv"), &summary.metrics)?;
        write_aggregate(&out.join("aggregate.csv"), &summary.metrics)?;
    }
    if cmd == Command::Certify {
        write_csv(&out.join("certify_summary.csv"), &CERTIFY_SUMMARY_HEADER, &cert_summaries)?;
    }
    Ok(summary)
}
