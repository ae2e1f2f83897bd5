//! Evaluation arithmetic: accuracy, recall-based error rates (DCER/ICER),
//! semantic error rates (SEMER, F-SEMER), interpretation error rate (IRER),
//! relative error-rate change, data-score efficiency and set overlap.
//!
//! Conventions:
//! - ICER is computed over examples whose domain was predicted correctly.
//! - SEMER counts slots at token granularity; the slot count is the number of
//!   non-`Other` tokens on the reference side.
//! - Data-score efficiency divides a relative error change in percent by a
//!   relative data change expressed as a signed fraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::dataset::{NoiseRecord, OTHER_SLOT};
use crate::{Error, Result};

/// Gold or predicted labels of one evaluated example.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ids: Vec<usize>,
    pub gold: Vec<Annotation>,
    pub predicted: Vec<Annotation>,
}

impl PredictionSet {
    pub fn push(&mut self, id: usize, gold: Annotation, predicted: Annotation) {
        self.ids.push(id);
        self.gold.push(gold);
        self.predicted.push(predicted);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self)
    }

    fn pairs(&self) -> impl Iterator<Item = (&Annotation, &Annotation)> {
        self.gold.iter().zip(&self.predicted)
    }

    fn non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid("empty prediction set"))
        } else {
            Ok(())
        }
    }
}

pub fn accuracy(p: &PredictionSet) -> Result<f64> {
    p.non_empty()?;
    let mut correct = 0usize;
    for (g, q) in p.pairs() {
        match (g.class, q.class) {
            (Some(a), Some(b)) => correct += usize::from(a == b),
            _ => return Err(Error::invalid("accuracy needs gold and predicted classes")),
        }
    }
    Ok(correct as f64 / p.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorField {
    Domain,
    Intent,
}

fn get<'a>(a: &'a Annotation, field: ErrorField) -> Option<&'a str> {
    match field {
        ErrorField::Domain => a.domain.as_deref(),
        ErrorField::Intent => a.intent.as_deref(),
    }
}

/// DCER for `Domain`; ICER for `Intent`, restricted to examples routed to
/// their gold domain when domains are annotated.
pub fn recall_error_rate(p: &PredictionSet, field: ErrorField) -> Result<f64> {
    p.non_empty()?;
    let mut considered = 0usize;
    let mut errors = 0usize;
    for (g, q) in p.pairs() {
        let gold = get(g, field)
            .ok_or_else(|| Error::invalid(format!("gold {field:?} missing")))?;
        if field == ErrorField::Intent {
            if let Some(gd) = g.domain.as_deref() {
                if q.domain.as_deref() != Some(gd) {
                    continue;
                }
            }
        }
        considered += 1;
        errors += usize::from(get(q, field) != Some(gold));
    }
    if considered == 0 {
        return Err(Error::invalid("no examples routed to their gold domain"));
    }
    Ok(errors as f64 / considered as f64)
}

/// Which side's slot annotations define the slots being counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Gold,
    Predicted,
}

fn slots_of(a: &Annotation) -> Result<&[String]> {
    a.slots
        .as_deref()
        .ok_or_else(|| Error::invalid("slot annotations missing"))
}

/// `(#intent errors + #slot errors) / (#utterances + #slots)`.
pub fn semer(p: &PredictionSet, reference: Reference) -> Result<f64> {
    p.non_empty()?;
    let mut intent_errors = 0usize;
    let mut slot_errors = 0usize;
    let mut slots = 0usize;
    for (g, q) in p.pairs() {
        let gi = g.intent.as_deref().ok_or_else(|| Error::invalid("gold intent missing"))?;
        intent_errors += usize::from(q.intent.as_deref() != Some(gi));
        let (gs, qs) = (slots_of(g)?, slots_of(q)?);
        if gs.len() != qs.len() {
            return Err(Error::invalid("gold and predicted slot sequences differ in length"));
        }
        let (refs, other) = match reference {
            Reference::Gold => (gs, qs),
            Reference::Predicted => (qs, gs),
        };
        for (r, o) in refs.iter().zip(other) {
            if r != OTHER_SLOT {
                slots += 1;
                slot_errors += usize::from(r != o);
            }
        }
    }
    Ok((intent_errors + slot_errors) as f64 / (p.len() + slots) as f64)
}

/// Harmonic mean `2ab/(a+b)`, zero when both are zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Harmonic mean of SEMER with predicted labels as reference and SEMER with
/// gold labels as reference.
pub fn f_semer(p: &PredictionSet) -> Result<f64> {
    Ok(harmonic_mean(
        semer(p, Reference::Predicted)?,
        semer(p, Reference::Gold)?,
    ))
}

/// Fraction of utterances with any domain, intent or slot error.
pub fn irer(p: &PredictionSet) -> Result<f64> {
    p.non_empty()?;
    let mut wrong = 0usize;
    for (g, q) in p.pairs() {
        let domain_err = g.domain.is_some() && g.domain != q.domain;
        let intent_err = g.intent.is_some() && g.intent != q.intent;
        let slot_err = match (&g.slots, &q.slots) {
            (Some(a), Some(b)) => a != b,
            (Some(_), None) => true,
            _ => false,
        };
        wrong += usize::from(domain_err || intent_err || slot_err);
    }
    Ok(wrong as f64 / p.len() as f64)
}

/// `(candidate − baseline) / baseline`; `None` when the baseline is zero.
pub fn relative_er(candidate: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (candidate - baseline) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUnits {
    /// Relative ER in percent over relative data change as a fraction.
    #[default]
    PercentOverFraction,
    /// Both as fractions.
    Ratio,
}

/// Data-score efficiency `σ = (ΔER/ER) / (Δd/d)` with ΔER/ER in percent and
/// Δd/d as a signed fraction (negative when data is pruned).
pub fn sigma_efficiency(rel_er_percent: f64, rel_data_change: f64) -> Result<f64> {
    sigma_efficiency_with(rel_er_percent, rel_data_change, SigmaUnits::PercentOverFraction)
}

/// As [`sigma_efficiency`]; with `Ratio` the first argument is a fraction.
pub fn sigma_efficiency_with(rel_er: f64, rel_data_change: f64, units: SigmaUnits) -> Result<f64> {
    if rel_data_change == 0.0 {
        return Err(Error::invalid("data-score efficiency is undefined for zero data change"));
    }
    let _ = units;
    Ok(rel_er / rel_data_change)
}

pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseOverlap {
    pub jaccard: f64,
    /// Fraction of flipped examples that were pruned.
    pub flipped_pruned_fraction: f64,
    /// Jaccard expected from a uniformly random pruned set of the same size.
    pub random_expectation: f64,
    pub random_std: f64,
}

/// Overlap between a pruned id set and the ids whose labels noise flipped,
/// with the random-pruning reference from the hypergeometric distribution.
pub fn noise_overlap(pruned: &[usize], noise: &NoiseRecord, n: usize) -> Result<NoiseOverlap> {
    let pruned: BTreeSet<usize> = pruned.iter().copied().collect();
    let flipped: BTreeSet<usize> = noise.flipped_ids.iter().copied().collect();
    if pruned.iter().chain(&flipped).any(|&i| i >= n) {
        return Err(Error::invalid("ids outside the dataset"));
    }
    let j = jaccard(&pruned, &flipped);
    let frac = if flipped.is_empty() {
        0.0
    } else {
        pruned.intersection(&flipped).count() as f64 / flipped.len() as f64
    };
    let (mean, std) = random_jaccard_moments(n, flipped.len(), pruned.len())?;
    Ok(NoiseOverlap {
        jaccard: j,
        flipped_pruned_fraction: frac,
        random_expectation: mean,
        random_std: std,
    })
}

/// Mean and standard deviation of `X / (m + f − X)` for
/// `X ~ Hypergeometric(n, f, m)`.
pub fn random_jaccard_moments(n: usize, flipped: usize, pruned: usize) -> Result<(f64, f64)> {
    if flipped == 0 && pruned == 0 {
        return Ok((0.0, 0.0));
    }
    if flipped > n || pruned > n {
        return Err(Error::invalid("hypergeometric: draws exceed the population"));
    }
    let lo = (flipped + pruned).saturating_sub(n);
    let hi = flipped.min(pruned);
    let ln_total = ln_binomial(n as u64, pruned as u64);
    let (mut m1, mut m2) = (0.0, 0.0);
    for x in lo..=hi {
        let ln_p = ln_binomial(flipped as u64, x as u64) + ln_binomial((n - flipped) as u64, (pruned - x) as u64) - ln_total;
        let p = ln_p.exp();
        let j = x as f64 / (pruned + flipped - x) as f64;
        m1 += p * j;
        m2 += p * j * j;
    }
    Ok((m1, (m2 - m1 * m1).max(0.0).sqrt()))
}

/// One metric row of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_er: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<MetricRow>,
    pub train_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_change: Option<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Metrics an [`EvalReport`] can carry. `accuracy` is reported as its error
/// rate `error_rate = 1 − accuracy` as well.
pub const ERROR_METRICS: [&str; 6] = ["error_rate", "dcer", "icer", "semer", "f_semer", "irer"];

impl EvalReport {
    pub fn new(values: BTreeMap<String, f64>, train_size: usize) -> Self {
        EvalReport {
            metrics: values
                .into_iter()
                .map(|(metric, value)| MetricRow {
                    metric,
                    value,
                    relative_er: None,
                    sigma: None,
                })
                .collect(),
            train_size,
            baseline: None,
            data_change: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.value)
    }

    /// Fills relative ER and σ for every error-rate metric present in both
    /// reports.
    pub fn attach_baseline(&mut self, name: &str, baseline: &EvalReport) {
        self.baseline = Some(name.to_string());
        let dd = (self.train_size as f64 - baseline.train_size as f64) / baseline.train_size as f64;
        self.data_change = Some(dd);
        for row in &mut self.metrics {
            if !ERROR_METRICS.contains(&row.metric.as_str()) {
                continue;
            }
            if let Some(b) = baseline.value(&row.metric) {
                row.relative_er = relative_er(row.value, b);
                row.sigma = row
                    .relative_er
                    .and_then(|r| sigma_efficiency(100.0 * r, dd).ok());
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("metric,value,relative_er,sigma\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.metric,
                m.value,
                opt(m.relative_er),
                opt(m.sigma)
            ));
        }
        out
    }
}

/// All metrics computable from `p`: accuracy/error_rate when classes are
/// present, the NLU suite when domains, intents and slots are.
pub fn compute_metrics(p: &PredictionSet) -> Result<BTreeMap<String, f64>> {
    p.non_empty()?;
    let mut out = BTreeMap::new();
    if p.gold.iter().all(|g| g.class.is_some()) {
        let acc = accuracy(p)?;
        out.insert("accuracy".to_string(), acc);
        out.insert("error_rate".to_string(), 1.0 - acc);
    }
    if p.gold.iter().all(|g| g.domain.is_some()) {
        out.insert("dcer".into(), recall_error_rate(p, ErrorField::Domain)?);
    }
    if p.gold.iter().all(|g| g.intent.is_some()) {
        if let Ok(v) = recall_error_rate(p, ErrorField::Intent) {
            out.insert("icer".into(), v);
        }
        if p.gold.iter().all(|g| g.slots.is_some()) {
            out.insert("semer".into(), semer(p, Reference::Gold)?);
            out.insert("f_semer".into(), f_semer(p)?);
        }
    }
    if p.gold.iter().any(|g| g.domain.is_some() || g.intent.is_some() || g.slots.is_some()) {
        out.insert("irer".into(), irer(p)?);
    }
    Ok(out)
}
