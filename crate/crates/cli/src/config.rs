//! Line-oriented `key = value` experiment configuration.
//!
//! Keys carry dotted section prefixes (`attack.epsilon`), `#` starts a
//! comment, and every key has a default, so an empty document is valid.
//! Values written as `auto` defer to the method or loss specific default.

use std::fmt::Write as _;

use adml_core::attacks::{AttackConfig, AttackMethod, PerturbTarget};
use adml_core::losses::{LossConfig, LossKind};
use adml_core::synth::GaussianMixtureConfig;
use adml_core::training::{EarlyStopping, Formulation, ModelConfig, NegativeStrategy, TrainConfig};
use adml_core::Norm;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub method: AttackMethod,
    pub norm: Norm,
    pub epsilon: f64,
    pub iterations: Option<usize>,
    pub step_size: Option<f64>,
    pub random_init: Option<bool>,
}

impl AttackSettings {
    fn pgd_linf() -> Self {
        Self {
            method: AttackMethod::Pgd,
            norm: Norm::Linf,
            epsilon: 0.01,
            iterations: None,
            step_size: None,
            random_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub seeds: Vec<u64>,

    pub data_input_dim: usize,
    pub data_mu_a: f64,
    pub data_mu_b: f64,
    pub data_sigma: f64,
    pub data_n_train: usize,
    pub data_n_test: usize,
    pub data_clip: bool,
    /// `None` uses the run seed.
    pub data_seed: Option<u64>,

    pub model_hidden: Vec<usize>,
    pub model_embedding_dim: usize,

    pub loss_kind: LossKind,
    pub loss_margin: Option<f64>,
    pub loss_hinge_negative: bool,

    pub train_formulation: Formulation,
    pub train_attack_rate: f64,
    pub train_perturb_target: PerturbTarget,
    pub train_lambda_reg: f64,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_samples_per_class: usize,
    pub train_negative_strategy: NegativeStrategy,
    pub train_lr: f64,
    pub train_weight_decay: f64,
    pub train_early_stopping: bool,
    pub train_patience: usize,
    pub train_holdout_fraction: f64,
    pub train_attack: AttackSettings,

    /// Methods run by `attack` and `eval`.
    pub attack_methods: Vec<AttackMethod>,
    pub attack: AttackSettings,
    pub attack_cw_lambda: f64,
    pub attack_cw_lr: f64,

    pub eval_gated_map: bool,
    pub eval_shift_report: bool,

    pub certify_epsilon: f64,
    pub certify_safety_factor: f64,
    pub certify_mc_samples: usize,

    pub sweep_rates: Vec<f64>,
    pub sweep_targets: Vec<PerturbTarget>,
    pub sweep_attacks: Vec<AttackMethod>,

    pub output_dir: String,
    /// Measured timings break byte-identical reruns, so they are opt-in.
    pub output_wallclock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "adml".into(),
            seeds: vec![0, 1, 2, 3, 4],
            data_input_dim: 3072,
            data_mu_a: 0.25,
            data_mu_b: 0.75,
            data_sigma: 0.025,
            data_n_train: 508,
            data_n_test: 516,
            data_clip: true,
            data_seed: None,
            model_hidden: vec![64, 32],
            model_embedding_dim: 2,
            loss_kind: LossKind::Contrastive,
            loss_margin: None,
            loss_hinge_negative: true,
            train_formulation: Formulation::Natural,
            train_attack_rate: 1.0,
            train_perturb_target: PerturbTarget::Positive,
            train_lambda_reg: 0.0,
            train_epochs: 25,
            train_batch_size: 4,
            train_samples_per_class: 2,
            train_negative_strategy: NegativeStrategy::Uniform,
            train_lr: 3e-5,
            train_weight_decay: 0.0,
            train_early_stopping: false,
            train_patience: 5,
            train_holdout_fraction: 0.1,
            train_attack: AttackSettings::pgd_linf(),
            attack_methods: vec![AttackMethod::Pgd],
            attack: AttackSettings::pgd_linf(),
            attack_cw_lambda: 0.1,
            attack_cw_lr: 0.01,
            eval_gated_map: false,
            eval_shift_report: true,
            certify_epsilon: 0.01,
            certify_safety_factor: adml_core::certification::DEFAULT_SAFETY_FACTOR,
            certify_mc_samples: 1000,
            sweep_rates: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            sweep_targets: vec![PerturbTarget::Positive, PerturbTarget::Negative, PerturbTarget::Anchor],
            sweep_attacks: vec![AttackMethod::Fgsm, AttackMethod::Pgd, AttackMethod::Cw],
            output_dir: "out".into(),
            output_wallclock: false,
        }
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got {v:?}"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got {v:?}"))
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_u64(v: &str) -> std::result::Result<u64, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_auto<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(s.trim())).collect()
}

pub fn parse_method(v: &str) -> std::result::Result<AttackMethod, String> {
    match v {
        "fgsm" => Ok(AttackMethod::Fgsm),
        "rfgsm" => Ok(AttackMethod::Rfgsm),
        "pgd" => Ok(AttackMethod::Pgd),
        "cw" => Ok(AttackMethod::Cw),
        _ => Err(format!("unknown attack method {v:?} (fgsm, rfgsm, pgd, cw)")),
    }
}

fn parse_norm(v: &str) -> std::result::Result<Norm, String> {
    match v {
        "linf" => Ok(Norm::Linf),
        "l2" => Ok(Norm::L2),
        _ => Err(format!("unknown norm {v:?} (linf, l2)")),
    }
}

pub fn norm_name(n: Norm) -> &'static str {
    match n {
        Norm::Linf => "linf",
        Norm::L2 => "l2",
    }
}

fn parse_target(v: &str) -> std::result::Result<PerturbTarget, String> {
    match v {
        "positive" => Ok(PerturbTarget::Positive),
        "negative" => Ok(PerturbTarget::Negative),
        "anchor" => Ok(PerturbTarget::Anchor),
        _ => Err(format!("unknown perturbation target {v:?} (positive, negative, anchor)")),
    }
}

fn parse_formulation(v: &str) -> std::result::Result<Formulation, String> {
    match v {
        "natural" => Ok(Formulation::Natural),
        "f2" => Ok(Formulation::F2),
        "f3" => Ok(Formulation::F3),
        _ => Err(format!("unknown formulation {v:?} (natural, f2, f3)")),
    }
}

fn parse_loss(v: &str) -> std::result::Result<LossKind, String> {
    match v {
        "contrastive" => Ok(LossKind::Contrastive),
        "triplet" => Ok(LossKind::Triplet),
        _ => Err(format!("unknown loss {v:?} (contrastive, triplet)")),
    }
}

fn parse_strategy(v: &str) -> std::result::Result<NegativeStrategy, String> {
    match v {
        "uniform" => Ok(NegativeStrategy::Uniform),
        "distance_weighted" => Ok(NegativeStrategy::DistanceWeighted),
        _ => Err(format!("unknown negative strategy {v:?} (uniform, distance_weighted)")),
    }
}

fn non_negative(x: f64, what: &str) -> std::result::Result<f64, String> {
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("{what} must be ≥ 0"))
    }
}

fn positive(x: f64, what: &str) -> std::result::Result<f64, String> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("{what} must be > 0"))
    }
}

fn auto_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn loss_name(k: LossKind) -> &'static str {
    match k {
        LossKind::Contrastive => "contrastive",
        LossKind::Triplet => "triplet",
    }
}

fn strategy_name(s: NegativeStrategy) -> &'static str {
    match s {
        NegativeStrategy::Uniform => "uniform",
        NegativeStrategy::DistanceWeighted => "distance_weighted",
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value;
        match key {
            "experiment.id" => {
                if v.is_empty() || v.contains(',') {
                    return Err("experiment id must be non-empty and free of commas".into());
                }
                self.experiment_id = v.into()
            }
            "seeds" => {
                let s = parse_list(v, parse_u64)?;
                if s.is_empty() {
                    return Err("at least one seed is required".into());
                }
                self.seeds = s
            }
            "data.input_dim" => {
                let k = parse_usize(v)?;
                if k == 0 {
                    return Err("input_dim must be ≥ 1".into());
                }
                self.data_input_dim = k
            }
            "data.mu_a" => self.data_mu_a = parse_f64(v)?,
            "data.mu_b" => self.data_mu_b = parse_f64(v)?,
            "data.sigma" => self.data_sigma = positive(parse_f64(v)?, "sigma")?,
            "data.n_train" => self.data_n_train = parse_usize(v)?,
            "data.n_test" => self.data_n_test = parse_usize(v)?,
            "data.clip" => self.data_clip = parse_bool(v)?,
            "data.seed" => self.data_seed = parse_auto(v, parse_u64)?,
            "model.hidden" => self.model_hidden = parse_list(v, parse_usize)?,
            "model.embedding_dim" => self.model_embedding_dim = parse_usize(v)?,
            "loss.kind" => self.loss_kind = parse_loss(v)?,
            "loss.margin" => self.loss_margin = parse_auto(v, |s| positive(parse_f64(s)?, "margin"))?,
            "loss.hinge_negative" => self.loss_hinge_negative = parse_bool(v)?,
            "train.formulation" => self.train_formulation = parse_formulation(v)?,
            "train.attack_rate" => {
                let r = parse_f64(v)?;
                if !(0.0..=1.0).contains(&r) {
                    return Err("attack_rate must lie in [0, 1]".into());
                }
                self.train_attack_rate = r
            }
            "train.perturb_target" => self.train_perturb_target = parse_target(v)?,
            "train.lambda_reg" => self.train_lambda_reg = non_negative(parse_f64(v)?, "lambda_reg")?,
            "train.epochs" => self.train_epochs = parse_usize(v)?,
            "train.batch_size" => self.train_batch_size = parse_usize(v)?,
            "train.samples_per_class" => self.train_samples_per_class = parse_usize(v)?,
            "train.negative_strategy" => self.train_negative_strategy = parse_strategy(v)?,
            "train.lr" => self.train_lr = positive(parse_f64(v)?, "lr")?,
            "train.weight_decay" => self.train_weight_decay = non_negative(parse_f64(v)?, "weight_decay")?,
            "train.early_stopping" => self.train_early_stopping = parse_bool(v)?,
            "train.patience" => self.train_patience = parse_usize(v)?,
            "train.holdout_fraction" => self.train_holdout_fraction = parse_f64(v)?,
            "attack.methods" => self.attack_methods = parse_list(v, parse_method)?,
            "attack.cw_lambda" => self.attack_cw_lambda = non_negative(parse_f64(v)?, "cw_lambda")?,
            "attack.cw_lr" => self.attack_cw_lr = positive(parse_f64(v)?, "cw_lr")?,
            "eval.gated_map" => self.eval_gated_map = parse_bool(v)?,
            "eval.shift_report" => self.eval_shift_report = parse_bool(v)?,
            "certify.epsilon" => self.certify_epsilon = non_negative(parse_f64(v)?, "epsilon")?,
            "certify.safety_factor" => self.certify_safety_factor = positive(parse_f64(v)?, "safety_factor")?,
            "certify.mc_samples" => self.certify_mc_samples = parse_usize(v)?,
            "sweep.rates" => {
                let r = parse_list(v, parse_f64)?;
                if r.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err("attack rates must lie in [0, 1]".into());
                }
                self.sweep_rates = r
            }
            "sweep.targets" => self.sweep_targets = parse_list(v, parse_target)?,
            "sweep.attacks" => self.sweep_attacks = parse_list(v, parse_method)?,
            "output.dir" => self.output_dir = v.into(),
            "output.wallclock" => self.output_wallclock = parse_bool(v)?,
            _ => {
                let (prefix, field) = if let Some(f) = key.strip_prefix("train.attack.") {
                    ("train.attack.", f)
                } else if let Some(f) = key.strip_prefix("attack.") {
                    ("attack.", f)
                } else {
                    return Err("unknown key".into());
                };
                let a = if prefix == "attack." { &mut self.attack } else { &mut self.train_attack };
                match field {
                    "method" => a.method = parse_method(v)?,
                    "norm" => a.norm = parse_norm(v)?,
                    "epsilon" => a.epsilon = non_negative(parse_f64(v)?, "epsilon")?,
                    "iterations" => a.iterations = parse_auto(v, parse_usize)?,
                    "step_size" => a.step_size = parse_auto(v, |s| non_negative(parse_f64(s)?, "step_size"))?,
                    "random_init" => a.random_init = parse_auto(v, parse_bool)?,
                    _ => return Err("unknown key".into()),
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("experiment.id".into(), self.experiment_id.clone()),
            ("seeds".into(), join(&self.seeds, |s| s.to_string())),
            ("data.input_dim".into(), self.data_input_dim.to_string()),
            ("data.mu_a".into(), self.data_mu_a.to_string()),
            ("data.mu_b".into(), self.data_mu_b.to_string()),
            ("data.sigma".into(), self.data_sigma.to_string()),
            ("data.n_train".into(), self.data_n_train.to_string()),
            ("data.n_test".into(), self.data_n_test.to_string()),
            ("data.clip".into(), self.data_clip.to_string()),
            ("data.seed".into(), auto_str(&self.data_seed)),
            ("model.hidden".into(), join(&self.model_hidden, |h| h.to_string())),
            ("model.embedding_dim".into(), self.model_embedding_dim.to_string()),
            ("loss.kind".into(), loss_name(self.loss_kind).into()),
            ("loss.margin".into(), auto_str(&self.loss_margin)),
            ("loss.hinge_negative".into(), self.loss_hinge_negative.to_string()),
            ("train.formulation".into(), self.train_formulation.name().into()),
            ("train.attack_rate".into(), self.train_attack_rate.to_string()),
            ("train.perturb_target".into(), self.train_perturb_target.name().into()),
            ("train.lambda_reg".into(), self.train_lambda_reg.to_string()),
            ("train.epochs".into(), self.train_epochs.to_string()),
            ("train.batch_size".into(), self.train_batch_size.to_string()),
            ("train.samples_per_class".into(), self.train_samples_per_class.to_string()),
            ("train.negative_strategy".into(), strategy_name(self.train_negative_strategy).into()),
            ("train.lr".into(), self.train_lr.to_string()),
            ("train.weight_decay".into(), self.train_weight_decay.to_string()),
            ("train.early_stopping".into(), self.train_early_stopping.to_string()),
            ("train.patience".into(), self.train_patience.to_string()),
            ("train.holdout_fraction".into(), self.train_holdout_fraction.to_string()),
        ];
        for (prefix, a) in [("train.attack", &self.train_attack), ("attack", &self.attack)] {
            e.push((format!("{prefix}.method"), a.method.name().into()));
            e.push((format!("{prefix}.norm"), norm_name(a.norm).into()));
            e.push((format!("{prefix}.epsilon"), a.epsilon.to_string()));
            e.push((format!("{prefix}.iterations"), auto_str(&a.iterations)));
            e.push((format!("{prefix}.step_size"), auto_str(&a.step_size)));
            e.push((format!("{prefix}.random_init"), auto_str(&a.random_init)));
        }
        e.extend([
            ("attack.methods".into(), join(&self.attack_methods, |m| m.name().into())),
            ("attack.cw_lambda".into(), self.attack_cw_lambda.to_string()),
            ("attack.cw_lr".into(), self.attack_cw_lr.to_string()),
            ("eval.gated_map".into(), self.eval_gated_map.to_string()),
            ("eval.shift_report".into(), self.eval_shift_report.to_string()),
            ("certify.epsilon".into(), self.certify_epsilon.to_string()),
            ("certify.safety_factor".into(), self.certify_safety_factor.to_string()),
            ("certify.mc_samples".into(), self.certify_mc_samples.to_string()),
            ("sweep.rates".into(), join(&self.sweep_rates, |r| r.to_string())),
            ("sweep.targets".into(), join(&self.sweep_targets, |t| t.name().into())),
            ("sweep.attacks".into(), join(&self.sweep_attacks, |m| m.name().into())),
            ("output.dir".into(), self.output_dir.clone()),
            ("output.wallclock".into(), self.output_wallclock.to_string()),
        ]);
        e
    }

    /// Canonical text form: every key, one per line, in a fixed order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text without the `output.*` keys, hex
    /// encoded, so an experiment hashes alike however it is written out.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries().into_iter().filter(|(k, _)| !k.starts_with("output.")) {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The mixture for the run seeded with `seed`.
    pub fn mixture(&self, seed: u64) -> GaussianMixtureConfig {
        GaussianMixtureConfig {
            input_dim: self.data_input_dim,
            mu_a: self.data_mu_a,
            mu_b: self.data_mu_b,
            sigma: self.data_sigma,
            n_train: self.data_n_train,
            n_test: self.data_n_test,
            clip_to_unit_box: self.data_clip,
            seed: self.data_seed.unwrap_or(seed),
        }
    }

    pub fn loss(&self) -> LossConfig {
        let base = match self.loss_kind {
            LossKind::Contrastive => LossConfig::contrastive(),
            LossKind::Triplet => LossConfig::triplet(),
        };
        LossConfig {
            margin_alpha: self.loss_margin.unwrap_or(base.margin_alpha),
            hinge_negative: self.loss_hinge_negative,
            ..base
        }
    }

    fn resolve_attack(&self, a: &AttackSettings, method: AttackMethod) -> AttackConfig {
        let mut c = AttackConfig::of(method, a.norm, a.epsilon);
        if let Some(i) = a.iterations {
            c.iterations = i;
            if a.step_size.is_none() && method == AttackMethod::Pgd {
                c.step_size = AttackConfig::pgd_with(a.norm, a.epsilon, i).step_size;
            }
        }
        if let Some(s) = a.step_size {
            c.step_size = s;
        }
        if let Some(r) = a.random_init {
            c.random_init = r;
        }
        c.cw_lambda = self.attack_cw_lambda;
        c.cw_lr = self.attack_cw_lr;
        c
    }

    /// Evaluation attack of the given method with the `attack.*` settings.
    pub fn eval_attack(&self, method: AttackMethod) -> AttackConfig {
        self.resolve_attack(&self.attack, method)
    }

    /// The inner-maximisation attack used during training.
    pub fn train_attack(&self) -> AttackConfig {
        self.resolve_attack(&self.train_attack, self.train_attack.method)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            loss: self.loss(),
            formulation: self.train_formulation,
            attack: self.train_attack(),
            attack_rate: self.train_attack_rate,
            perturb_target: self.train_perturb_target,
            lambda_reg: self.train_lambda_reg,
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            samples_per_class: self.train_samples_per_class,
            negative_strategy: self.train_negative_strategy,
            lr: self.train_lr,
            weight_decay: self.train_weight_decay,
            early_stopping: EarlyStopping {
                enabled: self.train_early_stopping,
                patience: self.train_patience,
                holdout_fraction: self.train_holdout_fraction,
            },
            model: ModelConfig {
                hidden: self.model_hidden.clone(),
                embedding_dim: self.model_embedding_dim,
            },
            master_seed: seed,
        }
    }

    /// Cross-field checks, delegated to the library validators.
    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, e: adml_core::Error| CliError::Invalid {
            key: key.into(),
            message: e.to_string(),
        };
        self.mixture(0).validate().map_err(|e| wrap("data", e))?;
        self.train_config(0).validate().map_err(|e| wrap("train", e))?;
        for &m in self.attack_methods.iter().chain(&self.sweep_attacks) {
            self.eval_attack(m).validate().map_err(|e| wrap("attack", e))?;
        }
        Ok(())
    }
}

/// Parses `text` on top of the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    apply_config(&mut cfg, text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies the assignments in `text` to `cfg` without the final validation,
/// so presets and files can be layered.
pub fn apply_config(cfg: &mut ExperimentConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |key: &str, message: String| CliError::Config {
            line: i + 1,
            key: key.into(),
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line, "expected key = value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        cfg.set(key, value).map_err(|m| err(key, m))?;
    }
    Ok(())
}
