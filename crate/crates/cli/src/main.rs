//! `influence-lab`: generate data, train scoring runs, score, prune,
//! retrain, evaluate, sweep and report from one JSON config.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use influence_lab::experiment::{write_reports, Cell, CellKind, ExperimentConfig, MethodName, Workspace};
use influence_lab::sampling::{End, StratumKey};
use influence_lab::scores::ScoreKind;
use influence_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "influence-lab", version, about = "Training-data influence scores and score-driven pruning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value: dotted.path=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Artifact root; wins over INFLUENCE_LAB_CACHE and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent sweep cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Discard existing artifacts and recompute.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train/test splits as JSONL with provenance.
    GenData,
    /// Train scoring runs (all configured seeds, or --seed).
    Train,
    /// Compute score tables.
    Score {
        /// vog, el2n, forgetting, tracin or pvi; all configured when omitted.
        scores: Vec<String>,
    },
    /// Build a pruning plan.
    Prune {
        /// hard, softmax, linear, combined, random or stratified.
        #[arg(long, default_value = "hard")]
        method: String,
        /// Score the plan is built from (score-based methods).
        #[arg(long)]
        score: Option<String>,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "head")]
        end: String,
        /// Stratum key for stratified plans.
        #[arg(long, default_value = "class")]
        key: String,
    },
    /// Retrain on a plan (or on all data with --baseline) and evaluate.
    Retrain {
        #[arg(long, conflicts_with = "baseline")]
        plan: Option<PathBuf>,
        #[arg(long)]
        baseline: bool,
    },
    /// Compare a retrained run against its baseline.
    Eval {
        #[arg(long)]
        run: String,
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Run the whole grid and write the pruning-curve CSV.
    Sweep,
    /// Write SVG curves and score histograms.
    Report,
}

fn workspace(g: &Global) -> Result<Workspace> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let cfg = ExperimentConfig::from_path(path, &g.set)?;
    let jobs = g
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(Workspace::new(cfg, g.out.clone(), g.force, jobs))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.cmd {
        Command::GenData => {
            let ws = workspace(g)?;
            println!("{}", ws.gen_data()?.display());
        }
        Command::Train => {
            let ws = workspace(g)?;
            let dirs = match g.seed {
                Some(s) => vec![ws.train(s)?],
                None => ws.train_all()?,
            };
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Score { scores } => {
            let ws = workspace(g)?;
            let kinds: Vec<ScoreKind> = if scores.is_empty() {
                ws.cfg.score.scores.clone()
            } else {
                scores.iter().map(|s| parse(s)).collect::<Result<_>>()?
            };
            for k in kinds {
                let t = ws.score(k)?;
                println!("{}\t{} rows", ws.score_path(k).display(), t.len());
            }
        }
        Command::Prune {
            method,
            score,
            fraction,
            end,
            key,
        } => {
            let ws = workspace(g)?;
            let kind = match method.as_str() {
                "random" => CellKind::Random,
                "stratified" => CellKind::Stratified {
                    key: match key.as_str() {
                        "class" => StratumKey::Class,
                        "domain" => StratumKey::Domain,
                        k => return Err(Error::Config(format!("unknown stratum key {k:?} (class|domain)"))),
                    },
                },
                m => {
                    let method: MethodName = parse(m)?;
                    let score = score
                        .as_deref()
                        .ok_or_else(|| Error::Config(format!("--score is required for method {m}")))?;
                    CellKind::Score {
                        score: parse(score)?,
                        method,
                        end: parse::<End>(&end)?,
                    }
                }
            };
            let cell = Cell {
                kind,
                prune_fraction: fraction,
                seed: g.seed.unwrap_or(0),
            };
            let (path, plan) = ws.prune(&cell)?;
            for w in &plan.warnings {
                log::warn!("{w}");
            }
            println!("{}\tkept {} of {}", path.display(), plan.kept.len(), plan.num_examples);
        }
        Command::Retrain { plan, baseline } => {
            let ws = workspace(g)?;
            let (id, report) = match (plan, baseline) {
                (Some(p), _) => ws.retrain_plan(&p, g.seed)?,
                (None, true) => ws.retrain_baseline(g.seed.unwrap_or(0))?,
                (None, false) => return Err(Error::Config("retrain needs --plan or --baseline".into())),
            };
            println!("{}", ws.cell_dir(&id).display());
            print!("{}", report.to_csv());
        }
        Command::Eval { run, baseline } => {
            let ws = workspace(g)?;
            print!("{}", ws.eval(&run, baseline.as_deref())?.to_csv());
        }
        Command::Sweep => {
            let ws = workspace(g)?;
            let (path, rows) = ws.sweep()?;
            println!("{}\t{} rows", path.display(), rows.len());
        }
        Command::Report => {
            let root = match (&g.config, &g.out) {
                (Some(_), _) => workspace(g)?.root().to_path_buf(),
                (None, Some(out)) => out.clone(),
                (None, None) => return Err(Error::Config("report needs --out or --config".into())),
            };
            for p in write_reports(&root)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
