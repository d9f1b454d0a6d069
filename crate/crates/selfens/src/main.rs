use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use selfens::config::TrainConfig;
use selfens::error::{Error, Result};
use selfens::{checkpoint, config, evaluate, manifest, report, synth, trainer};

#[derive(Parser)]
#[command(name = "selfens", version, about = "Semi-supervised consistency training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class image corpus with a manifest
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// Images per class
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Create a labeled/unlabeled/test split plan under a label budget
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of labeled training samples to keep
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Disable class-balanced selection of the labeled subset
        #[arg(long)]
        no_stratify: bool,
        #[arg(long, default_value_t = manifest::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
    },
    /// Train on a split, writing checkpoints and logs to a run directory
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// key = value config file; omitted keys take preset defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override one config key, e.g. --set alpha=0; repeatable, wins
        /// over the file
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a plan's test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Report exact / one-off accuracy for ordered classes
        #[arg(long)]
        ordinal: bool,
        /// Crop size fed to the network (must match training)
        #[arg(long, default_value_t = 128)]
        crop: usize,
        /// Also write the report as CSV to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-segment and total trainable parameter counts
    Paramcount {
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
    /// Finite-difference gradient verification of every operation
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Paired supervised / semi-supervised comparison over run directories
    Report {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
}

fn check_thread_env() -> Result<()> {
    if let Ok(v) = std::env::var("SELFENS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Usage(format!("SELFENS_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::Usage("SELFENS_THREADS must be at least 1".into()));
        }
        // compute is currently single-threaded; the cap is validated and
        // accepted so scripts can set it uniformly
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    check_thread_env()?;
    match cli.command {
        Command::SynthGen { out, per_class, seed } => {
            let m = synth::generate_synthetic(&out, per_class * 2, seed)?;
            println!("wrote {} images and manifest.csv to {}", m.records.len(), out.display());
        }
        Command::Split { manifest: mpath, budget, seed, out, no_stratify, test_fraction } => {
            let m = manifest::parse_manifest(&mpath)?;
            let plan = manifest::make_split_with_fraction(&m, budget, seed, !no_stratify, test_fraction)?;
            manifest::save_plan(&out, &m, &plan)?;
            println!(
                "plan: {} labeled, {} unlabeled, {} test -> {}",
                plan.labeled.len(),
                plan.unlabeled.len(),
                plan.test.len(),
                out.display()
            );
        }
        Command::Train { manifest: mpath, plan, config: cfg_path, out_dir, overrides } => {
            let m = manifest::parse_manifest(&mpath)?;
            let p = manifest::load_plan(&plan, &m)?;
            let mut cfg = match &cfg_path {
                Some(path) => config::load_config(path)?,
                None => TrainConfig::default(),
            };
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            let outcome = trainer::fit(&m, &p, &cfg, Some(&out_dir))?;
            let last = outcome.log.last().expect("at least one epoch");
            println!(
                "trained {} epochs; final eval_acc {:.2}%, best {:.2}% at epoch {}",
                outcome.log.len(),
                last.eval_acc * 100.0,
                outcome.best_report.accuracy * 100.0,
                outcome.best_epoch
            );
        }
        Command::Eval { checkpoint: ckpt, manifest: mpath, plan, ordinal, crop, out } => {
            let m = manifest::parse_manifest(&mpath)?;
            let p = manifest::load_plan(&plan, &m)?;
            let net = checkpoint::load(&ckpt)?;
            let spec = selfens_core::augment::AugmentSpec::degenerate(crop, crop);
            let store = selfens::batches::ImageStore::load(&m, &p.test, &spec)?;
            let r = evaluate::evaluate(&net, &store, &p.test, crop, &m.classes, ordinal)?;
            print!("{}", report::report_text(&r));
            if let Some(path) = out {
                std::fs::write(&path, report::report_csv(&r, ordinal)).map_err(Error::io(&path))?;
            }
        }
        Command::Paramcount { classes } => {
            if classes < 2 {
                return Err(Error::Usage("paramcount: need at least 2 classes".into()));
            }
            let net = selfens_core::network::Network::<f32>::canonical(classes, 0);
            for (n, (start, end)) in selfens_core::network::canonical_segments().into_iter().enumerate() {
                let count: usize = (start..end).map(|i| net.layer_parameters(i)).sum();
                println!("segment {}: {count}", n + 1);
            }
            println!("total: {}", net.count_parameters());
        }
        Command::Gradcheck { seed, cases } => {
            let results = selfens_core::gradcheck::run_suite(seed, cases);
            print!("{}", selfens_core::gradcheck::format_results(&results));
            if results.iter().any(|r| !r.passed()) {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
        Command::Report { runs } => {
            let summaries: Result<Vec<_>> =
                runs.iter().map(|d| report::load_run_summary(d)).collect();
            print!("{}", report::comparison_table(&summaries?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("bad arguments");
            eprintln!("selfens: usage: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("selfens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
