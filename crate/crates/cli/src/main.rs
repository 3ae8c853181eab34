use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};

use imlab::data;
use imlab::experiment::{
    load_config, read_records, regime_report, run, store_path, sweep_report, theory_report, RunOptions, SweepAxis,
};
use imlab::nn::load_checkpoint;
use imlab::pretrain::Encoder;
use imlab::probes::{probe_state, ProbeConfig};
use imlab::theory::{
    verify_bc_confounding, verify_fd_complexity, verify_id_recovery, BcConfoundingConfig, Experiment,
    FdComplexityConfig, IdRecoveryConfig, TheoryReport,
};

#[derive(Parser)]
#[command(name = "imlab", version, about = "Pretraining objectives for multitask imitation on latent linear MDPs")]
struct Cli {
    /// Worker threads for the cell scheduler.
    #[arg(long, global = true, default_value_t = default_workers())]
    workers: usize,
    /// Added to every seed in the config.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Output directory.
    #[arg(long, global = true, env = "IMLAB_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config, skipping cells already in the store.
    Run { config: PathBuf },
    /// Summarize a metrics store or theory reports.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Fit a state probe on a saved encoder and dataset.
    Probe {
        encoder: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a theory experiment and save its report.
    Verify { experiment: VerifyTarget },
}

#[derive(Subcommand)]
enum ReportKind {
    /// Success against finetuning or pretraining size.
    Sweep {
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = Axis::Finetune)]
        axis: Axis,
        /// Size held fixed on the other axis (defaults from the store).
        #[arg(long)]
        fixed: Option<usize>,
    },
    /// Held-out vs in-distribution and latent vs inferrable contexts.
    Regime { store: PathBuf },
    /// Collate theory reports; exit 0 if all pass, 1 on a failure, 2 if one is missing.
    Theory { store: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Finetune,
    Pretrain,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyTarget {
    IdRecovery,
    BcConfounding,
    FdComplexity,
    All,
}

/// A store argument may be the output directory or the CSV itself.
fn resolve_store(p: &Path) -> PathBuf {
    if p.is_dir() {
        store_path(p)
    } else {
        p.to_path_buf()
    }
}

fn report_dir(store: &Path, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        if store.is_dir() {
            store.to_path_buf()
        } else {
            store.parent().unwrap_or(Path::new(".")).to_path_buf()
        }
    })
}

fn verify(e: Experiment) -> imlab::Result<TheoryReport> {
    match e {
        Experiment::IdRecovery => {
            let mut cfg = IdRecoveryConfig::noiseless(4, 32, 2);
            cfg.gradient_steps = 2000;
            verify_id_recovery(&cfg)
        }
        Experiment::BcConfounding => verify_bc_confounding(&BcConfoundingConfig::default()),
        Experiment::FdComplexity => verify_fd_complexity(&FdComplexityConfig::default()),
    }
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            let opts = RunOptions { out, workers: cli.workers, seed_offset: cli.seed_offset };
            let s = run(&cfg, &opts)?;
            println!("{}: {} executed, {} skipped, {} failed", s.store.display(), s.executed, s.skipped, s.failed);
            Ok(0)
        }
        Command::Report { kind: ReportKind::Sweep { store, axis, fixed } } => {
            let records = read_records(&resolve_store(&store))?;
            if records.is_empty() {
                bail!("no records in {}", store.display());
            }
            let axis = match axis {
                Axis::Finetune => SweepAxis::FinetuneSize,
                Axis::Pretrain => SweepAxis::PretrainSize,
            };
            let rep = sweep_report(&records, axis, fixed);
            let path = rep.save(&report_dir(&store, &cli.out))?;
            print!("{}", rep.to_csv());
            for m in &rep.missing {
                eprintln!("missing: {m}");
            }
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::Report { kind: ReportKind::Regime { store } } => {
            let records = read_records(&resolve_store(&store))?;
            let rep = regime_report(&records);
            let path = rep.save(&report_dir(&store, &cli.out))?;
            print!("{}", rep.to_csv());
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::Report { kind: ReportKind::Theory { store } } => {
            let summary = theory_report(&store)?;
            print!("{}", summary.text);
            Ok(summary.exit_code as u8)
        }
        Command::Probe { encoder, dataset, steps, seed } => {
            let enc = Encoder::from_checkpoint(load_checkpoint(&encoder)?)?;
            let ds = data::load(&dataset)?;
            let p = probe_state(&enc, &ds, &ProbeConfig::new(steps, seed))?;
            println!("train_mse {:.6e}", p.train_loss);
            println!("val_mse {:.6e}", p.val_loss);
            println!("normalized {:.6e}", p.normalized());
            if let Some(r2) = p.mean_r_squared() {
                println!("mean_r2 {r2:.6}");
            }
            Ok(0)
        }
        Command::Verify { experiment } => {
            let targets: Vec<Experiment> = match experiment {
                VerifyTarget::IdRecovery => vec![Experiment::IdRecovery],
                VerifyTarget::BcConfounding => vec![Experiment::BcConfounding],
                VerifyTarget::FdComplexity => vec![Experiment::FdComplexity],
                VerifyTarget::All => Experiment::ALL.to_vec(),
            };
            let dir = cli.out.unwrap_or_else(|| PathBuf::from("results")).join("theory");
            let mut all_pass = true;
            for e in targets {
                log::info!("running {e}");
                let rep = verify(e).with_context(|| format!("{e} did not complete"))?;
                rep.save(&dir)?;
                print!("{}", rep.to_text());
                all_pass &= rep.pass;
            }
            Ok(if all_pass { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<imlab::Error>().map_or(1, |e| e.code());
            ExitCode::from(code as u8)
        }
    }
}
