use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drka_core::commands::{cmd_ablate, cmd_eval, cmd_sweep_k, cmd_train};
use drka_core::config::{parse_range, parse_tasks, RunConfig};
use drka_core::toy::ToySpec;
use drka_core::Error;

#[derive(Parser)]
#[command(name = "drka", version, about = "Train and evaluate description-augmented KG embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` per line)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (defaults to the config's out_dir)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, last.bin, trace.csv, manifest.json
    Train {
        #[command(flatten)]
        common: Common,
        /// Use fixed per-entity description sets instead of retrieval
        #[arg(long)]
        no_retriever: bool,
        #[arg(long, value_name = "N")]
        descs_per_entity: Option<usize>,
    },
    /// Evaluate a checkpoint; writes per-task JSON reports and report.md
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Comma-separated subset of lp,rp,tp
        #[arg(long, default_value = "lp,rp,tp")]
        tasks: String,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Output directory (defaults to the checkpoint's directory)
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Retrain for every k in LO..HI and write sweep.csv
    SweepK {
        #[command(flatten)]
        common: Common,
        /// Inclusive k range (defaults to the config's k_sweep)
        #[arg(long, value_name = "LO..HI")]
        k_range: Option<String>,
    },
    /// Retriever ablation: fixed description sets, alignment loss only
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_retriever: bool,
        #[arg(long, value_name = "N")]
        descs_per_entity: Option<usize>,
    },
    /// Write the synthetic toy dataset and a matching toy.conf
    Toy {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set out_dir".into()))?;
    Ok((cfg, out))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Train {
            common,
            no_retriever,
            descs_per_entity,
        } => {
            let (mut cfg, out) = load(&common)?;
            cfg.train.no_retriever |= no_retriever;
            if let Some(n) = descs_per_entity {
                cfg.train.descs_per_entity = n;
            }
            cfg.train.validate()?;
            let r = cmd_train(&cfg, &out)?;
            println!(
                "trained {} epochs; best validation MRR {:.4}; wrote {}",
                r.outcome.last.epoch,
                r.outcome.best.best_valid_mrr,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            tasks,
            seed,
            out,
        } => {
            let tasks = parse_tasks(&tasks).map_err(|e| Failure::Usage(e.to_string()))?;
            let out = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
            let reports = cmd_eval(&checkpoint, &tasks, &out, seed)?;
            println!("wrote {} reports to {}", reports.len(), out.display());
        }
        Command::SweepK { common, k_range } => {
            let (cfg, out) = load(&common)?;
            let range = match k_range {
                Some(s) => parse_range(&s).map_err(|e| Failure::Usage(e.to_string()))?,
                None => cfg
                    .k_sweep
                    .ok_or_else(|| Failure::Usage("no k range: pass --k-range or set k_sweep".into()))?,
            };
            for row in cmd_sweep_k(&cfg, range, &out)? {
                println!("k = {:2}  mrr {:.4}  hits@10 {:.4}", row.k, row.mrr, row.hits10);
            }
        }
        Command::Ablate {
            common,
            no_retriever,
            descs_per_entity,
        } => {
            if !no_retriever {
                return Err(Failure::Usage("ablate needs an ablation flag; the available one is --no-retriever".into()));
            }
            let (cfg, out) = load(&common)?;
            let n = descs_per_entity.unwrap_or(cfg.train.descs_per_entity);
            let r = cmd_ablate(&cfg, n, &out)?;
            println!(
                "ablation: best validation MRR {:.4}; {} triples skipped; wrote {}",
                r.outcome.best.best_valid_mrr,
                r.outcome.best.skipped_triples,
                out.display()
            );
        }
        Command::Toy { out, seed } => {
            let spec = ToySpec {
                seed: seed.unwrap_or(ToySpec::default().seed),
                ..ToySpec::default()
            };
            let toy = spec.build()?;
            let files = toy.write(&out)?;
            let conf = out.join("toy.conf");
            std::fs::write(&conf, drka_core::toy::config_text(&files, &out))
                .map_err(|e| Failure::Run(Error::Io { path: conf.clone(), source: e }))?;
            println!("wrote toy dataset and {}", conf.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
