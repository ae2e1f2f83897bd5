//! Pruning plans built from score tables or from the dataset alone.
//!
//! Every method keeps exactly `N − round(prune_fraction · N)` examples.

mod entropy;
mod weighted;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Field};
use crate::scores::{NormMode, ScoreTable};
use crate::util::{seeded_rng, stratified_quotas};
use crate::{Error, Result};
pub use entropy::{combine_scores, entropy_bits, trail_entropy, DomainEntropy, IntentEntropy, TrailEntropyTable};

const SOFTMAX_STREAM: u64 = 0x5a01;
const LINEAR_STREAM: u64 = 0x5a02;
const RANDOM_STREAM: u64 = 0x5a03;
const STRATIFIED_STREAM: u64 = 0x5a04;
const WEIGHTED_STREAM: u64 = 0x5a05;

/// Which end of the score ordering is pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum End {
    /// Lowest scores (the easiest examples for difficulty scores).
    #[default]
    Head,
    /// Highest scores.
    Tail,
}

impl FromStr for End {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(End::Head),
            "tail" => Ok(End::Tail),
            _ => Err(Error::Config(format!("unknown end {s:?} (head|tail)"))),
        }
    }
}

impl End {
    fn sign(self) -> f64 {
        match self {
            End::Head => 1.0,
            End::Tail => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKey {
    Domain,
    Class,
}

impl FromStr for StratumKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain" => Ok(StratumKey::Domain),
            "class" => Ok(StratumKey::Class),
            _ => Err(Error::Config(format!("unknown stratum key {s:?} (domain|class)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    HardCutoff { end: End },
    Softmax { temperature: f64, end: End },
    Linear { epsilon: f64, end: End },
    Random,
    Stratified { key: StratumKey },
    /// Precomputed sampling weights, e.g. a combination of two weightings.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(flatten)]
    pub method: Method,
    pub num_examples: usize,
    pub prune_fraction: f64,
    pub keep_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    /// Kept ids, ascending.
    pub kept: Vec<usize>,
    /// Per-id sampling weight, for the weighted methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SamplingPlan {
    fn new(method: Method, n: usize, prune: f64, mut kept: Vec<usize>) -> Self {
        kept.sort_unstable();
        SamplingPlan {
            method,
            num_examples: n,
            prune_fraction: prune,
            keep_fraction: 1.0 - prune,
            seed: None,
            score: None,
            kept,
            weights: None,
            warnings: Vec::new(),
        }
    }

    /// Ids not kept, ascending.
    pub fn pruned(&self) -> Vec<usize> {
        let mut keep = vec![false; self.num_examples];
        for &i in &self.kept {
            keep[i] = true;
        }
        (0..self.num_examples).filter(|&i| !keep[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: SamplingPlan = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_examples];
        for &i in &self.kept {
            if i >= self.num_examples || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(format!("plan keeps invalid or duplicate id {i}")));
            }
        }
        Ok(())
    }
}

/// `N − round(prune · N)`.
pub fn keep_count(n: usize, prune_fraction: f64) -> usize {
    n - ((prune_fraction * n as f64).round() as usize).min(n)
}

fn check_fraction(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("prune fraction must be in [0, 1), got {p}")))
    }
}

/// Removes `round(prune · N)` examples from one end of the score ordering.
/// Among equal scores, lower ids are removed first.
pub fn hard_cutoff(scores: &ScoreTable, prune_fraction: f64, end: End) -> Result<SamplingPlan> {
    check_fraction(prune_fraction)?;
    let v = scores.values();
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let by_score = match end {
            End::Head => v[a].total_cmp(&v[b]),
            End::Tail => v[b].total_cmp(&v[a]),
        };
        by_score.then(a.cmp(&b))
    });
    let drop = n - keep_count(n, prune_fraction);
    let mut plan = SamplingPlan::new(Method::HardCutoff { end }, n, prune_fraction, order[drop..].to_vec());
    plan.score = Some(scores.name.clone());
    Ok(plan)
}

/// Retention weights `∝ exp(±score / T)`; the sign makes the pruned end the
/// less likely to be kept.
pub fn softmax_weights(scores: &[f64], temperature: f64, end: End) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let z: Vec<f64> = scores.iter().map(|s| end.sign() * s / temperature).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / sum).collect())
}

fn weighted_plan(method: Method, weights: Vec<f64>, prune: f64, seed: u64, stream: u64) -> Result<SamplingPlan> {
    check_fraction(prune)?;
    let n = weights.len();
    let mut rng = seeded_rng(seed, stream);
    let kept = weighted::sample_without_replacement(&weights, keep_count(n, prune), &mut rng);
    let mut plan = SamplingPlan::new(method, n, prune, kept);
    plan.seed = Some(seed);
    plan.weights = Some(weights);
    Ok(plan)
}

pub fn softmax_sample(
    scores: &ScoreTable,
    prune_fraction: f64,
    temperature: f64,
    end: End,
    seed: u64,
) -> Result<SamplingPlan> {
    let w = softmax_weights(scores.values(), temperature, end)?;
    let mut plan = weighted_plan(Method::Softmax { temperature, end }, w, prune_fraction, seed, SOFTMAX_STREAM)?;
    plan.score = Some(scores.name.clone());
    Ok(plan)
}

/// Affine map of scores onto `[ε, 1]` (min → ε, max → 1), divided by the
/// sum. With `Tail` the map is applied to negated scores. All-equal scores
/// give uniform weights and a warning.
pub fn linear_weights(scores: &[f64], epsilon: f64, end: End) -> Result<(Vec<f64>, Option<String>)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    let n = scores.len();
    if n == 0 {
        return Ok((Vec::new(), None));
    }
    let s: Vec<f64> = scores.iter().map(|x| end.sign() * x).collect();
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        let msg = "all scores equal; linear weights fall back to uniform".to_string();
        log::warn!("{msg}");
        return Ok((vec![1.0 / n as f64; n], Some(msg)));
    }
    let t: Vec<f64> = s
        .iter()
        .map(|x| epsilon + (1.0 - epsilon) * (x - min) / (max - min))
        .collect();
    let sum: f64 = t.iter().sum();
    Ok((t.into_iter().map(|x| x / sum).collect(), None))
}

pub fn linear_weighted_sample(
    scores: &ScoreTable,
    prune_fraction: f64,
    epsilon: f64,
    end: End,
    seed: u64,
) -> Result<SamplingPlan> {
    let (w, warning) = linear_weights(scores.values(), epsilon, end)?;
    let mut plan = weighted_plan(Method::Linear { epsilon, end }, w, prune_fraction, seed, LINEAR_STREAM)?;
    plan.score = Some(scores.name.clone());
    plan.warnings.extend(warning);
    Ok(plan)
}

/// Samples from precomputed weights (a score table whose values are weights).
pub fn weighted_sample(weights: &ScoreTable, prune_fraction: f64, seed: u64) -> Result<SamplingPlan> {
    if let Some(v) = weights.values().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!("sampling weight {v} is negative")));
    }
    let mut plan = weighted_plan(Method::Weighted, weights.values().to_vec(), prune_fraction, seed, WEIGHTED_STREAM)?;
    plan.score = Some(weights.name.clone());
    Ok(plan)
}

pub fn random_sample(d: &Dataset, prune_fraction: f64, seed: u64) -> Result<SamplingPlan> {
    random_sample_n(d.len(), prune_fraction, seed)
}

/// Uniform sampling without replacement over ids `0..n`.
pub fn random_sample_n(n: usize, prune_fraction: f64, seed: u64) -> Result<SamplingPlan> {
    check_fraction(prune_fraction)?;
    let mut rng = seeded_rng(seed, RANDOM_STREAM);
    let kept = index::sample(&mut rng, n, keep_count(n, prune_fraction)).into_vec();
    let mut plan = SamplingPlan::new(Method::Random, n, prune_fraction, kept);
    plan.seed = Some(seed);
    Ok(plan)
}

/// Uniform sampling within strata; per-stratum quotas follow the stratum
/// sizes by largest remainder and sum to the global keep count.
pub fn stratified_sample(d: &Dataset, prune_fraction: f64, key: StratumKey, seed: u64) -> Result<SamplingPlan> {
    let field = match key {
        StratumKey::Domain => Field::Domain,
        StratumKey::Class => Field::Class,
    };
    let strata = d.strata(field)?;
    stratified_sample_by(&strata, prune_fraction, key, seed)
}

pub fn stratified_sample_by(strata: &[String], prune_fraction: f64, key: StratumKey, seed: u64) -> Result<SamplingPlan> {
    check_fraction(prune_fraction)?;
    let n = strata.len();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(s.as_str()).or_default().push(i);
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let quotas = stratified_quotas(&sizes, keep_count(n, prune_fraction));
    let mut rng = seeded_rng(seed, STRATIFIED_STREAM);
    let mut kept = Vec::with_capacity(quotas.iter().sum());
    for (members, &q) in groups.values().zip(&quotas) {
        kept.extend(index::sample(&mut rng, members.len(), q).into_iter().map(|j| members[j]));
    }
    let mut plan = SamplingPlan::new(Method::Stratified { key }, n, prune_fraction, kept);
    plan.seed = Some(seed);
    Ok(plan)
}

/// A score table holding sampling weights; normalization does not apply.
pub fn weight_table(name: &str, weights: Vec<f64>) -> Result<ScoreTable> {
    let labels = vec![0; weights.len()];
    ScoreTable::from_raw(name, weights, &labels, NormMode::None)
}
