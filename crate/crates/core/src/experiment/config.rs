use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::GeneratorSpec;
use crate::sampling::{End, StratumKey};
use crate::scores::{NormMode, ScoreKind, TracInReduce};
use crate::trainer::TrainSchedule;
use crate::util::sha256_hex;
use crate::{Error, Result};

/// One JSON document describing a whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub dataset: DatasetBlock,
    pub trainer: TrainerBlock,
    #[serde(default)]
    pub score: ScoreBlock,
    #[serde(default)]
    pub prune: PruneBlock,
    #[serde(default)]
    pub eval: EvalBlock,
}

fn default_output() -> PathBuf {
    PathBuf::from("influence-lab-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceBlock {
    Synthetic {
        generator: GeneratorSpec,
        #[serde(default)]
        seed: u64,
    },
    Jsonl {
        train: PathBuf,
        /// Held-out file; when absent the train file is split.
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_vocab")]
        vocab_size: usize,
    },
}

fn default_vocab() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub source: SourceBlock,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Label noise injected into the training split.
    #[serde(default)]
    pub noise: Option<NoiseBlock>,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerBlock {
    pub embed_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub dropout_rate: f64,
    pub schedule: TrainSchedule,
    /// One scoring run per seed; VoG and TracIn use the first.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Epochs for the null models PVI needs; the schedule's when absent.
    #[serde(default)]
    pub null_epochs: Option<usize>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreBlock {
    pub scores: Vec<ScoreKind>,
    pub norm: NormMode,
    /// Epoch EL2N is read at; the schedule's `score_at_epoch` when absent.
    pub el2n_epoch: Option<f64>,
    pub tracin_reduce: TracInReduce,
}

impl Default for ScoreBlock {
    fn default() -> Self {
        ScoreBlock {
            scores: vec![ScoreKind::Vog],
            norm: NormMode::Class,
            el2n_epoch: None,
            tracin_reduce: TracInReduce::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Hard,
    Softmax,
    Linear,
    /// Mean of linear score weights and linear label-trail-entropy weights.
    Combined,
}

impl MethodName {
    pub fn name(self) -> &'static str {
        match self {
            MethodName::Hard => "hard",
            MethodName::Softmax => "softmax",
            MethodName::Linear => "linear",
            MethodName::Combined => "combined",
        }
    }
}

impl std::str::FromStr for MethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method {s:?} (hard|softmax|linear|combined)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneBlock {
    pub methods: Vec<MethodName>,
    pub fractions: Vec<f64>,
    pub ends: Vec<End>,
    /// Plan and retraining seeds.
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub epsilon: f64,
    /// Also run random and stratified-random plans at every fraction.
    pub random: bool,
    pub stratified: Option<StratumKey>,
}

impl Default for PruneBlock {
    fn default() -> Self {
        PruneBlock {
            methods: vec![MethodName::Hard],
            fractions: vec![0.4],
            ends: vec![End::Head, End::Tail],
            seeds: vec![0],
            temperature: 1.0,
            epsilon: 0.01,
            random: true,
            stratified: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    /// Train domain, intent and slot models and report the NLU metrics.
    pub nlu: bool,
    /// Run id every other run is compared against.
    pub baseline: String,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock {
            nlu: false,
            baseline: "baseline".to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dataset.test_fraction) {
            return bad(format!("test_fraction must be in [0, 1), got {}", self.dataset.test_fraction));
        }
        if let SourceBlock::Jsonl { test: None, .. } | SourceBlock::Synthetic { .. } = &self.dataset.source {
            if self.dataset.test_fraction == 0.0 {
                return bad("test_fraction must be positive without a separate test file".into());
            }
        }
        if let Some(f) = self.prune.fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
            return bad(format!("prune fraction {f} outside [0, 1)"));
        }
        if self.trainer.seeds.is_empty() || self.prune.seeds.is_empty() {
            return bad("trainer.seeds and prune.seeds must be non-empty".into());
        }
        if self.trainer.embed_dim == 0 {
            return bad("embed_dim must be >= 1".into());
        }
        self.trainer.schedule.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.prune.fractions {
            if !seen.insert(f.to_bits()) {
                return bad(format!("prune fraction {f} listed twice"));
            }
        }
        if self.prune.methods.contains(&MethodName::Combined) {
            let hier = matches!(&self.dataset.source, SourceBlock::Synthetic { generator, .. } if generator.is_hierarchical());
            let jsonl = matches!(self.dataset.source, SourceBlock::Jsonl { .. });
            if !hier && !jsonl {
                return bad("the combined method needs intent and slot annotations".into());
            }
        }
        Ok(())
    }

    /// Hash of the JSON for the given blocks; stored next to every output
    /// so stale or foreign artifacts are detected.
    pub fn hash_of(parts: &[&Value]) -> String {
        let bytes = serde_json::to_vec(parts).expect("values serialize");
        sha256_hex(&bytes)[..16].to_string()
    }

    pub fn value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON when it is valid JSON
/// and taken as a string otherwise. Array elements are addressed by index.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path {path:?}")));
    }
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(k.to_string(), value);
                    return Ok(());
                }
                map.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = k
                    .parse()
                    .map_err(|_| Error::Config(format!("{path:?}: {k:?} is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("{path:?}: index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("{path:?}: {k:?} is inside a non-container value"))),
        };
    }
    unreachable!("loop returns on the last key")
}
