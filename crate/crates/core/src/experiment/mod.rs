//! Config-driven experiment loop: data generation, scoring runs, score
//! tables, pruning plans, retraining cells, sweeps and reports.
//!
//! Layout under the artifact root:
//!
//! ```text
//! data/{train,test}.jsonl, provenance.json
//! runs/train-s{seed}/store/         artifact store of a scoring run
//! runs/train-s{seed}/model.json     final weights (+ null_model.json for PVI)
//! scores/{score}.tsv
//! plans/{plan id}.json
//! cells/{run id}/plan.json, model.json, metrics.json
//! reports/curve.csv, curve_*.svg, hist_*.svg, hist_*.csv
//! ```
//!
//! Every directory carries `stamp.json` with the hash of the configuration
//! blocks it depends on; a mismatch is refused unless `force` is set.

mod config;
mod nlu;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::tensor_file::write_atomic;
use crate::artifacts::ArtifactStore;
use crate::dataset::{
    generate_synthetic, inject_label_noise, load_jsonl_with, split, write_jsonl, Dataset, JsonlOptions,
    NoiseRecord, PAD,
};
use crate::evalmetrics::{compute_metrics, relative_er, sigma_efficiency, EvalReport};
use crate::sampling::{
    combine_scores, hard_cutoff, linear_weighted_sample, linear_weights, random_sample_n, softmax_sample,
    stratified_sample, trail_entropy, weight_table, weighted_sample, End, SamplingPlan, StratumKey,
};
use crate::scores::{
    el2n_scores, forgetting_scores, pvi_scores, tracin_self_scores, vog_scores, CheckpointSelect, ScoreKind,
    ScoreTable,
};
use crate::trainer::{evaluate, init_model, train, train_null_model, Model, ModelConfig, Task, TrainSchedule};
use crate::{Error, Result};

pub use config::{
    apply_override, DatasetBlock, EvalBlock, ExperimentConfig, MethodName, NoiseBlock, PruneBlock, ScoreBlock,
    SourceBlock, TrainerBlock,
};
pub use nlu::{evaluate_stack, train_stack, NluStack};
pub use report::CurveRow;

/// Overrides the configured artifact root (an explicit `--out` wins).
pub const CACHE_ENV: &str = "INFLUENCE_LAB_CACHE";
const STAMP: &str = "stamp.json";

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    hash: String,
    complete: bool,
}

enum Prep {
    Done,
    Fresh,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_stamp(dir: &Path) -> Result<Option<Stamp>> {
    let p = dir.join(STAMP);
    if p.exists() {
        read_json(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Skips completed work, refuses foreign work, and clears interrupted work.
fn prepare(dir: &Path, hash: &str, force: bool) -> Result<Prep> {
    if dir.exists() {
        match read_stamp(dir)? {
            Some(s) if s.hash != hash && !force => {
                return Err(Error::Config(format!(
                    "{} holds artifacts of a different configuration (hash {}, expected {hash}); \
                     rerun with --force or choose another output directory",
                    dir.display(),
                    s.hash
                )))
            }
            Some(s) if s.complete && !force => return Ok(Prep::Done),
            _ => io(dir, fs::remove_dir_all(dir))?,
        }
    }
    io(dir, fs::create_dir_all(dir))?;
    write_json(
        &dir.join(STAMP),
        &Stamp {
            hash: hash.to_string(),
            complete: false,
        },
    )?;
    Ok(Prep::Fresh)
}

fn finish(dir: &Path, hash: &str) -> Result<()> {
    write_json(
        &dir.join(STAMP),
        &Stamp {
            hash: hash.to_string(),
            complete: true,
        },
    )
}

/// Train and test splits as the experiment sees them; noise is applied to
/// the training split only.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub noise: Option<NoiseRecord>,
}

/// What a retraining cell trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellKind {
    Baseline,
    Random,
    Stratified { key: StratumKey },
    Score { score: ScoreKind, method: MethodName, end: End },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(flatten)]
    pub kind: CellKind,
    pub prune_fraction: f64,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        let s = self.seed;
        let f = self.prune_fraction;
        match &self.kind {
            CellKind::Baseline => format!("baseline-s{s}"),
            CellKind::Random => format!("random-p{f}-s{s}"),
            CellKind::Stratified { key } => format!("stratified-{}-p{f}-s{s}", key_name(*key)),
            CellKind::Score { score, method, end } => {
                format!("{}-{}-{}-p{f}-s{s}", score.name(), method.name(), end_name(*end))
            }
        }
    }

    /// (score, method, end) columns of the curve CSV.
    fn series(&self) -> (String, String, String) {
        match &self.kind {
            CellKind::Baseline => ("baseline".into(), "none".into(), String::new()),
            CellKind::Random => ("random".into(), "random".into(), String::new()),
            CellKind::Stratified { key } => ("stratified".into(), key_name(*key).into(), String::new()),
            CellKind::Score { score, method, end } => {
                (score.name().into(), method.name().into(), end_name(*end).into())
            }
        }
    }
}

fn key_name(k: StratumKey) -> &'static str {
    match k {
        StratumKey::Domain => "domain",
        StratumKey::Class => "class",
    }
}

fn end_name(e: End) -> &'static str {
    match e {
        End::Head => "head",
        End::Tail => "tail",
    }
}

/// Result of one retraining cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub report: EvalReport,
}

pub struct Workspace {
    pub cfg: ExperimentConfig,
    root: PathBuf,
    force: bool,
    jobs: usize,
    splits: OnceLock<Splits>,
    /// Directories produced by this workspace; `force` does not redo them.
    produced: Mutex<BTreeSet<PathBuf>>,
}

impl Workspace {
    /// `out` wins over [`CACHE_ENV`], which wins over `cfg.output_dir`.
    pub fn new(cfg: ExperimentConfig, out: Option<PathBuf>, force: bool, jobs: usize) -> Self {
        let root = out
            .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| cfg.output_dir.clone());
        Workspace {
            cfg,
            root,
            force,
            jobs: jobs.max(1),
            splits: OnceLock::new(),
            produced: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn prep(&self, dir: &Path, hash: &str) -> Result<Prep> {
        let again = self.produced.lock().expect("lock").contains(dir);
        prepare(dir, hash, self.force && !again)
    }

    fn done(&self, dir: &Path, hash: &str) -> Result<()> {
        finish(dir, hash)?;
        self.produced.lock().expect("lock").insert(dir.to_path_buf());
        Ok(())
    }

    fn hash(&self, blocks: &[&str], extra: Value) -> String {
        let v = self.cfg.value();
        let mut parts: Vec<&Value> = blocks.iter().map(|b| &v[*b]).collect();
        parts.push(&extra);
        ExperimentConfig::hash_of(&parts)
    }

    fn data_hash(&self) -> String {
        self.hash(&["dataset"], Value::Null)
    }

    fn needs_null(&self) -> bool {
        self.cfg.score.scores.contains(&ScoreKind::Pvi)
    }

    fn train_hash(&self) -> String {
        self.hash(&["dataset", "trainer"], json!({ "null_model": self.needs_null() }))
    }

    fn score_hash(&self, kind: ScoreKind) -> String {
        let s = &self.cfg.score;
        self.hash(
            &["dataset", "trainer"],
            json!({
                "score": kind,
                "norm": s.norm,
                "el2n_epoch": s.el2n_epoch,
                "tracin_reduce": s.tracin_reduce,
            }),
        )
    }

    /// Identity of a retraining run: the data it trains on and its seed.
    fn retrain_hash(&self, plan: Option<&SamplingPlan>, seed: u64) -> String {
        self.hash(&["dataset", "trainer"], json!({ "plan": plan, "seed": seed, "nlu": self.cfg.eval.nlu }))
    }

    /// Generates or loads the data, splits it and injects training noise.
    /// Deterministic in the config, so every command recomputes it.
    pub fn splits(&self) -> Result<&Splits> {
        if let Some(s) = self.splits.get() {
            return Ok(s);
        }
        let ds = &self.cfg.dataset;
        let train_frac = 1.0 - ds.test_fraction;
        let check = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("dataset file {} does not exist", p.display())))
            }
        };
        let (train_raw, test) = match &ds.source {
            SourceBlock::Synthetic { generator, seed } => split(&generate_synthetic(generator, *seed)?, train_frac, ds.split_seed)?,
            SourceBlock::Jsonl { train, test, vocab_size } => {
                check(train)?;
                let opts = JsonlOptions {
                    vocab_size: *vocab_size,
                    labels: None,
                };
                let full = load_jsonl_with(train, &opts)?;
                match test {
                    Some(t) => {
                        check(t)?;
                        let opts = JsonlOptions {
                            labels: Some(full.class_names.clone()),
                            ..opts
                        };
                        let te = load_jsonl_with(t, &opts)?;
                        (full, te)
                    }
                    None => split(&full, train_frac, ds.split_seed)?,
                }
            }
        };
        let (train, noise) = match &ds.noise {
            Some(nb) if nb.rate > 0.0 => {
                let (d, rec) = inject_label_noise(&train_raw, nb.rate, nb.seed)?;
                (d, Some(rec))
            }
            _ => (train_raw, None),
        };
        let _ = self.splits.set(Splits { train, test, noise });
        Ok(self.splits.get().expect("just set"))
    }

    pub fn model_config(&self, seed: u64) -> Result<ModelConfig> {
        let sp = self.splits()?;
        let t = &self.cfg.trainer;
        Ok(ModelConfig {
            vocab_size: sp.train.vocab_size.max(sp.test.vocab_size),
            embed_dim: t.embed_dim,
            hidden_dims: t.hidden_dims.clone(),
            num_classes: sp.train.num_classes,
            task: Task::SequenceClassification,
            dropout_rate: t.dropout_rate,
            seed,
        })
    }

    pub fn schedule(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            seed,
            ..self.cfg.trainer.schedule.clone()
        }
    }

    /// Writes the splits as JSONL plus their provenance. Existing output is
    /// refused unless `force` is set.
    pub fn gen_data(&self) -> Result<PathBuf> {
        let dir = self.root.join("data");
        if dir.exists() && !self.force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        let hash = self.data_hash();
        prepare(&dir, &hash, true)?;
        let sp = self.splits()?;
        write_jsonl(&sp.train, dir.join("train.jsonl"))?;
        write_jsonl(&sp.test, dir.join("test.jsonl"))?;
        write_json(
            &dir.join("provenance.json"),
            &json!({
                "config_hash": hash,
                "train": { "examples": sp.train.len(), "provenance": sp.train.provenance },
                "test": { "examples": sp.test.len(), "provenance": sp.test.provenance },
                "noise": sp.noise,
            }),
        )?;
        finish(&dir, &hash)?;
        Ok(dir)
    }

    pub fn train_dir(&self, seed: u64) -> PathBuf {
        self.root.join("runs").join(format!("train-s{seed}"))
    }

    /// Scoring run for one seed: artifact store, final model and, when PVI
    /// is configured, the null model. Skipped when already complete.
    pub fn train(&self, seed: u64) -> Result<PathBuf> {
        let dir = self.train_dir(seed);
        let hash = self.train_hash();
        if let Prep::Done = self.prep(&dir, &hash)? {
            log::info!("{} is complete; skipping", dir.display());
            return Ok(dir);
        }
        let sp = self.splits()?;
        let mcfg = self.model_config(seed)?;
        let s = self.schedule(seed);
        let mut store = ArtifactStore::create(dir.join("store"))?;
        let out = train(init_model(&mcfg)?, &sp.train, &s, Some(&mut store))?;
        write_json(&dir.join("model.json"), &out.model)?;
        if self.needs_null() {
            let ns = TrainSchedule {
                epochs: self.cfg.trainer.null_epochs.unwrap_or(s.epochs),
                ..s.clone()
            };
            let null = train_null_model(&mcfg, &sp.train.labels(), &ns)?;
            write_json(&dir.join("null_model.json"), &null)?;
        }
        write_json(
            &dir.join("train.json"),
            &json!({
                "seed": seed,
                "steps": out.steps,
                "checkpoints": out.checkpoints,
                "epoch_losses": out.epoch_losses,
            }),
        )?;
        self.done(&dir, &hash)?;
        Ok(dir)
    }

    pub fn train_all(&self) -> Result<Vec<PathBuf>> {
        self.cfg.trainer.seeds.iter().map(|&s| self.train(s)).collect()
    }

    fn stores(&self, seeds: &[u64]) -> Result<Vec<ArtifactStore>> {
        seeds.iter().map(|&s| ArtifactStore::open_read(self.train_dir(s).join("store"))).collect()
    }

    pub fn score_path(&self, kind: ScoreKind) -> PathBuf {
        self.root.join("scores").join(format!("{}.tsv", kind.name()))
    }

    /// Computes a score table from the scoring runs (training any missing
    /// seed first) and writes it as TSV.
    pub fn score(&self, kind: ScoreKind) -> Result<ScoreTable> {
        let seeds: Vec<u64> = match kind {
            ScoreKind::Vog | ScoreKind::Tracin => vec![self.cfg.trainer.seeds[0]],
            _ => self.cfg.trainer.seeds.clone(),
        };
        if kind == ScoreKind::Pvi && !self.needs_null() {
            return Err(Error::Config("pvi must be listed in score.scores so null models are trained".into()));
        }
        for &s in &seeds {
            self.train(s)?;
        }
        let sc = &self.cfg.score;
        let norm = sc.norm;
        let mut t = match kind {
            ScoreKind::Vog => vog_scores(&self.stores(&seeds)?[0], norm)?,
            ScoreKind::Tracin => tracin_self_scores(&self.stores(&seeds)?[0], None, None, sc.tracin_reduce, norm)?,
            ScoreKind::El2n => {
                let at = match sc.el2n_epoch.or(self.cfg.trainer.schedule.score_at_epoch) {
                    Some(e) => CheckpointSelect::Epoch(e),
                    None => CheckpointSelect::Last,
                };
                el2n_scores(&self.stores(&seeds)?, at, norm)?
            }
            ScoreKind::Forgetting => {
                let traces = self
                    .stores(&seeds)?
                    .iter()
                    .map(ArtifactStore::prediction_trace)
                    .collect::<Result<Vec<_>>>()?;
                forgetting_scores(&traces, norm)?
            }
            ScoreKind::Pvi => {
                let sp = self.splits()?;
                let probs = |file: &str, null: bool| -> Result<Vec<Vec<f64>>> {
                    seeds
                        .iter()
                        .map(|&s| {
                            let m: Model<f32> = read_json(&self.train_dir(s).join(file))?;
                            sp.train
                                .examples
                                .par_iter()
                                .map(|e| {
                                    let toks = if null { std::slice::from_ref(&PAD) } else { &e.tokens[..] };
                                    m.class_probability(toks, e.label).map(f64::from)
                                })
                                .collect()
                        })
                        .collect()
                };
                pvi_scores(&probs("model.json", false)?, &probs("null_model.json", true)?, &sp.train.labels(), norm)?
            }
        };
        t.provenance.stores = seeds.iter().map(|s| format!("runs/train-s{s}/store")).collect();
        t.provenance.seeds = seeds;
        t.provenance.params.insert("config_hash".into(), self.score_hash(kind));
        let path = self.score_path(kind);
        io(&path, fs::create_dir_all(path.parent().expect("scores dir")))?;
        t.write_tsv(&path)?;
        Ok(t)
    }

    /// The stored table when its hash matches, else a fresh computation.
    pub fn load_or_score(&self, kind: ScoreKind) -> Result<ScoreTable> {
        let path = self.score_path(kind);
        if path.exists() && !self.force {
            let t = ScoreTable::read_tsv(&path)?;
            let want = self.score_hash(kind);
            match t.provenance.params.get("config_hash") {
                Some(h) if *h == want => return Ok(t),
                Some(h) => {
                    return Err(Error::Config(format!(
                        "{} was computed under a different configuration (hash {h}, expected {want}); \
                         rerun with --force or choose another output directory",
                        path.display()
                    )))
                }
                None => {}
            }
        }
        self.score(kind)
    }

    /// Sampling plan of a cell; `None` for the baseline.
    pub fn plan(&self, cell: &Cell, table: Option<&ScoreTable>) -> Result<Option<SamplingPlan>> {
        let sp = self.splits()?;
        let n = sp.train.len();
        let (f, seed) = (cell.prune_fraction, cell.seed);
        let p = &self.cfg.prune;
        let plan = match &cell.kind {
            CellKind::Baseline => return Ok(None),
            CellKind::Random => random_sample_n(n, f, seed)?,
            CellKind::Stratified { key } => stratified_sample(&sp.train, f, *key, seed)?,
            CellKind::Score { score, method, end } => {
                let t = table.ok_or_else(|| Error::invalid(format!("cell {} needs the {} table", cell.id(), score.name())))?;
                if t.len() != n {
                    return Err(Error::invalid(format!(
                        "{} table has {} rows but the training split has {n}",
                        t.name,
                        t.len()
                    )));
                }
                match method {
                    MethodName::Hard => hard_cutoff(t, f, *end)?,
                    MethodName::Softmax => softmax_sample(t, f, p.temperature, *end, seed)?,
                    MethodName::Linear => linear_weighted_sample(t, f, p.epsilon, *end, seed)?,
                    MethodName::Combined => {
                        let (sw, w1) = linear_weights(t.values(), p.epsilon, *end)?;
                        let ent = trail_entropy(&sp.train)?;
                        let (ew, w2) = linear_weights(&ent.per_example, p.epsilon, End::Head)?;
                        let combined = combine_scores(&weight_table(&t.name, sw)?, &weight_table("trail_entropy", ew)?)?;
                        let mut plan = weighted_sample(&combined, f, seed)?;
                        plan.warnings.extend(w1.into_iter().chain(w2));
                        plan
                    }
                }
            }
        };
        Ok(Some(plan))
    }

    /// Writes a plan to `plans/{cell id}.json`.
    pub fn prune(&self, cell: &Cell) -> Result<(PathBuf, SamplingPlan)> {
        let table = match &cell.kind {
            CellKind::Score { score, .. } => Some(self.load_or_score(*score)?),
            _ => None,
        };
        let plan = self
            .plan(cell, table.as_ref())?
            .ok_or_else(|| Error::invalid("the baseline has no plan"))?;
        let dir = self.root.join("plans");
        io(&dir, fs::create_dir_all(&dir))?;
        let path = dir.join(format!("{}.json", cell.id()));
        plan.write_json(&path)?;
        Ok((path, plan))
    }

    pub fn cell_dir(&self, id: &str) -> PathBuf {
        self.root.join("cells").join(id)
    }

    /// Retrains on the plan's subset and evaluates on the test split.
    pub fn retrain(&self, id: &str, seed: u64, plan: Option<&SamplingPlan>, hash: &str) -> Result<EvalReport> {
        let dir = self.cell_dir(id);
        if let Prep::Done = self.prep(&dir, hash)? {
            return read_json(&dir.join("metrics.json"));
        }
        let sp = self.splits()?;
        let sub = match plan {
            Some(p) => {
                if p.num_examples != sp.train.len() {
                    return Err(Error::invalid(format!(
                        "plan covers {} examples but the training split has {}",
                        p.num_examples,
                        sp.train.len()
                    )));
                }
                write_json(&dir.join("plan.json"), p)?;
                sp.train.subset(&p.kept)?
            }
            None => sp.train.clone(),
        };
        let mcfg = self.model_config(seed)?;
        let s = self.schedule(seed);
        let model = train(init_model(&mcfg)?, &sub, &s, None)?.model;
        let mut metrics = compute_metrics(&evaluate(&model, &sp.test)?)?;
        if self.cfg.eval.nlu {
            let stack = train_stack(&sub, &mcfg, &s)?;
            for (k, v) in compute_metrics(&evaluate_stack(&stack, &sp.test)?)? {
                metrics.entry(k).or_insert(v);
            }
        }
        let mut report = EvalReport::new(metrics, sub.len());
        report.metadata.insert("run_id".into(), id.to_string());
        report.metadata.insert("seed".into(), seed.to_string());
        report.metadata.insert("config_hash".into(), hash.to_string());
        write_json(&dir.join("model.json"), &model)?;
        write_json(&dir.join("metrics.json"), &report)?;
        self.done(&dir, hash)?;
        Ok(report)
    }

    /// Runs one sweep cell (plan, retrain, evaluate).
    pub fn run_cell(&self, cell: &Cell, tables: &BTreeMap<ScoreKind, ScoreTable>) -> Result<CellResult> {
        let table = match &cell.kind {
            CellKind::Score { score, .. } => tables.get(score),
            _ => None,
        };
        let id = cell.id();
        let plan = self.plan(cell, table)?;
        let hash = self.retrain_hash(plan.as_ref(), cell.seed);
        let report = self.retrain(&id, cell.seed, plan.as_ref(), &hash)?;
        Ok(CellResult {
            cell: cell.clone(),
            report,
        })
    }

    /// Every cell of the configured grid, baselines first.
    pub fn grid(&self) -> Vec<Cell> {
        let p = &self.cfg.prune;
        let mut cells: Vec<Cell> = p
            .seeds
            .iter()
            .map(|&seed| Cell {
                kind: CellKind::Baseline,
                prune_fraction: 0.0,
                seed,
            })
            .collect();
        let mut kinds = Vec::new();
        for &score in &self.cfg.score.scores {
            for &method in &p.methods {
                for &end in &p.ends {
                    kinds.push(CellKind::Score { score, method, end });
                }
            }
        }
        if p.random {
            kinds.push(CellKind::Random);
        }
        if let Some(key) = p.stratified {
            kinds.push(CellKind::Stratified { key });
        }
        for kind in kinds {
            for &prune_fraction in &p.fractions {
                for &seed in &p.seeds {
                    cells.push(Cell {
                        kind: kind.clone(),
                        prune_fraction,
                        seed,
                    });
                }
            }
        }
        cells
    }

    /// Full grid: scoring runs, score tables, every cell (in parallel, up to
    /// `jobs` at a time), then the aggregated curve CSV. Completed cells are
    /// reused, so an interrupted sweep resumes where it stopped.
    pub fn sweep(&self) -> Result<(PathBuf, Vec<CurveRow>)> {
        let cells = self.grid();
        let mut seen = std::collections::BTreeSet::new();
        for c in &cells {
            if !seen.insert(c.id()) {
                return Err(Error::Config(format!("run id {} occurs twice in the grid", c.id())));
            }
        }
        self.splits()?;
        let mut tables = BTreeMap::new();
        for &kind in &self.cfg.score.scores {
            tables.insert(kind, self.load_or_score(kind)?);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", self.jobs)))?;
        let results: Vec<CellResult> = pool.install(|| {
            cells
                .par_iter()
                .map(|c| {
                    log::info!("cell {}", c.id());
                    self.run_cell(c, &tables)
                })
                .collect::<Result<_>>()
        })?;
        let rows = aggregate(&results)?;
        let dir = self.root.join("reports");
        io(&dir, fs::create_dir_all(&dir))?;
        let path = dir.join("curve.csv");
        write_atomic(&path, report::curve_csv(&rows).as_bytes())?;
        Ok((path, rows))
    }

    pub fn report(&self) -> Result<Vec<PathBuf>> {
        write_reports(&self.root)
    }

    /// Retrains on a plan file; the run id is the file stem.
    pub fn retrain_plan(&self, plan_path: &Path, seed: Option<u64>) -> Result<(String, EvalReport)> {
        let plan = SamplingPlan::read_json(plan_path)?;
        let stem = plan_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("bad plan file name {}", plan_path.display())))?;
        let id = match (seed, plan.seed) {
            (Some(s), p) if p != Some(s) => format!("{stem}-r{s}"),
            _ => stem.to_string(),
        };
        let seed = seed.or(plan.seed).unwrap_or(0);
        let hash = self.retrain_hash(Some(&plan), seed);
        let report = self.retrain(&id, seed, Some(&plan), &hash)?;
        Ok((id, report))
    }

    /// Trains the all-data run of a seed under the baseline's run id.
    pub fn retrain_baseline(&self, seed: u64) -> Result<(String, EvalReport)> {
        let id = format!("{}-s{seed}", self.cfg.eval.baseline);
        let report = self.retrain(&id, seed, None, &self.retrain_hash(None, seed))?;
        Ok((id, report))
    }

    /// Reads a cell's metrics and attaches its seed's baseline (or `baseline`
    /// when given).
    pub fn eval(&self, id: &str, baseline: Option<&str>) -> Result<EvalReport> {
        let dir = self.cell_dir(id);
        let path = dir.join("metrics.json");
        if !path.exists() {
            return Err(Error::Config(format!("run {id} has no metrics; run retrain or sweep first")));
        }
        let mut report: EvalReport = read_json(&path)?;
        let base_id = match baseline {
            Some(b) => b.to_string(),
            None => {
                let seed = report.metadata.get("seed").cloned().unwrap_or_else(|| "0".into());
                format!("{}-s{seed}", self.cfg.eval.baseline)
            }
        };
        let base_path = self.cell_dir(&base_id).join("metrics.json");
        if base_id != id && base_path.exists() {
            let base: EvalReport = read_json(&base_path)?;
            report.attach_baseline(&base_id, &base);
        } else if base_id != id {
            log::warn!("baseline run {base_id} not found; relative metrics omitted");
        }
        write_json(&dir.join("eval.json"), &report)?;
        write_atomic(&dir.join("eval.csv"), report.to_csv().as_bytes())?;
        Ok(report)
    }

    /// Plan loaded back from a finished cell.
    pub fn cell_plan(&self, id: &str) -> Result<SamplingPlan> {
        SamplingPlan::read_json(self.cell_dir(id).join("plan.json"))
    }
}

/// Mean and population std over seeds for every (score, method, end,
/// fraction) group, plus error-rate change and σ against each seed's
/// baseline.
pub fn aggregate(results: &[CellResult]) -> Result<Vec<CurveRow>> {
    let baselines: BTreeMap<u64, &EvalReport> = results
        .iter()
        .filter(|r| r.cell.kind == CellKind::Baseline)
        .map(|r| (r.cell.seed, &r.report))
        .collect();
    type Key = (String, String, String, u64);
    let mut groups: BTreeMap<Key, Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        let (s, m, e) = r.cell.series();
        groups.entry((s, m, e, r.cell.prune_fraction.to_bits())).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((score, method, end, fbits), members) in groups {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &members {
            for m in &r.report.metrics {
                values.entry(m.metric.clone()).or_default().push(m.value);
            }
            if let (Some(b), Some(er)) = (baselines.get(&r.cell.seed), r.report.value("error_rate")) {
                if r.cell.kind != CellKind::Baseline {
                    if let Some(rel) = b.value("error_rate").and_then(|be| relative_er(er, be)) {
                        values.entry("error_rate_rel".into()).or_default().push(rel);
                        let dd = (r.report.train_size as f64 - b.train_size as f64) / b.train_size as f64;
                        if let Ok(sig) = sigma_efficiency(100.0 * rel, dd) {
                            values.entry("sigma".into()).or_default().push(sig);
                        }
                    }
                }
            }
        }
        let n = members.len();
        let metrics = values
            .into_iter()
            .filter(|(_, v)| v.len() == n)
            .map(|(k, v)| (k, report::mean_std(&v)))
            .collect();
        rows.push(CurveRow {
            score,
            method,
            end,
            prune_fraction: f64::from_bits(fbits),
            kept: members[0].report.train_size,
            seeds: n,
            metrics,
        });
    }
    rows.sort_by(|a, b| {
        let rank = |r: &CurveRow| (r.score != "baseline") as u8;
        rank(a)
            .cmp(&rank(b))
            .then_with(|| a.score.cmp(&b.score))
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.end.cmp(&b.end))
            .then_with(|| a.prune_fraction.total_cmp(&b.prune_fraction))
    });
    Ok(rows)
}

/// Curve SVGs from `reports/curve.csv` and histograms of every score
/// table under `scores/`.
pub fn write_reports(root: &Path) -> Result<Vec<PathBuf>> {
    let out_dir = root.join("reports");
    let curve = out_dir.join("curve.csv");
    let scores_dir = root.join("scores");
    let mut tables: Vec<PathBuf> = match fs::read_dir(&scores_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    tables.sort();
    if !curve.exists() && tables.is_empty() {
        return Err(Error::Config(format!(
            "nothing to report in {}: no reports/curve.csv and no scores/*.tsv",
            root.display()
        )));
    }
    io(&out_dir, fs::create_dir_all(&out_dir))?;
    let mut written = Vec::new();
    if curve.exists() {
        let text = io(&curve, fs::read_to_string(&curve))?;
        let rows = report::parse_curve_csv(&curve, &text)?;
        let mut scores: Vec<&str> = rows
            .iter()
            .map(|r| r.score.as_str())
            .filter(|s| *s != "baseline" && *s != "random")
            .collect();
        scores.dedup();
        if scores.is_empty() && rows.iter().any(|r| r.score == "random") {
            scores.push("random");
        }
        for score in scores {
            for metric in ["accuracy", "error_rate"] {
                if !rows.iter().any(|r| r.metrics.contains_key(metric)) {
                    continue;
                }
                let p = out_dir.join(format!("curve_{score}_{metric}.svg"));
                write_atomic(&p, report::curve_svg(&rows, score, metric)?.as_bytes())?;
                written.push(p);
            }
        }
    }
    for t in tables {
        let table = ScoreTable::read_tsv(&t)?;
        let (edges, counts) = report::histogram(table.values(), 30);
        let stem = t.file_stem().and_then(|s| s.to_str()).unwrap_or("score").to_string();
        let csv = out_dir.join(format!("hist_{stem}.csv"));
        write_atomic(&csv, report::histogram_csv(&edges, &counts).as_bytes())?;
        let svg = out_dir.join(format!("hist_{stem}.svg"));
        let title = format!("{} ({:?} normalization, N = {})", table.name, table.mode, table.len());
        write_atomic(&svg, report::histogram_svg(&title, &edges, &counts).as_bytes())?;
        written.extend([csv, svg]);
    }
    Ok(written)
}
