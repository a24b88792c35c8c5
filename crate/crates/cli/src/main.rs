use std::path::PathBuf;
use std::process::ExitCode;

use adml::parallel::resolve_threads;
use adml::{load_config, run_experiment, Command, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adml", version, about = "Adversarially robust deep metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and save the train/test datasets.
    GenData(Common),
    /// Train the configured model and save a checkpoint.
    Train(Common),
    /// Attack the configured model and report robust metrics.
    Attack(Common),
    /// Benign and adversarial metrics for the configured model.
    Eval(Common),
    /// Lipschitz certificates for every test point.
    Certify(Common),
    /// Natural model against robust models over `sweep.rates`.
    SweepRate(Common),
    /// Natural model against robust models over `sweep.targets`.
    SweepTarget(Common),
    /// Natural and robust models under every attack in `sweep.attacks`.
    SweepAttack(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed to run; repeat for several. Overrides `seeds`.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Worker threads (falls back to ADML_THREADS, then the core count).
    #[arg(long)]
    threads: Option<usize>,
    /// Named preset applied before the config file.
    #[arg(long)]
    preset: Option<String>,
}

fn run(cli: Cli) -> Result<()> {
    let (cmd, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Attack(a) => (Command::Attack, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Certify(a) => (Command::Certify, a),
        Cmd::SweepRate(a) => (Command::SweepRate, a),
        Cmd::SweepTarget(a) => (Command::SweepTarget, a),
        Cmd::SweepAttack(a) => (Command::SweepAttack, a),
    };
    let mut cfg = load_config(args.preset.as_deref(), &args.config)?;
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(out) = args.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    let threads = resolve_threads(args.threads)?;
    let out = PathBuf::from(&cfg.output_dir);
    let summary = run_experiment(cmd, &cfg, &out, threads)?;
    for r in &summary.metrics {
        println!(
            "seed {} {:<8} {:<8} rate {:<5} {:<6} R@1 {:.4} mAP@R {:.4} shift {:.4}",
            r.seed, r.formulation, r.phase, r.attack_rate, r.perturb_target, r.r_at_1, r.map_at_r, r.mean_shift
        );
    }
    println!("{} finished; outputs in {}", cmd.name(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adml: {e}");
            ExitCode::FAILURE
        }
    }
}
