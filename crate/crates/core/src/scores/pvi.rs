use super::{NormMode, ScoreTable};
use crate::{Error, Result};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

fn log2p(p: f64) -> f64 {
    p.max(PROB_FLOOR).log2()
}

/// `−log₂ p_null(y) + log₂ p_model(y|x)`.
pub fn pvi(model_prob: f64, null_prob: f64) -> f64 {
    log2p(model_prob) - log2p(null_prob)
}

fn check(p: &[Vec<f64>], n: usize, what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("no {what} probabilities")));
    }
    for row in p {
        if row.len() != n {
            return Err(Error::invalid(format!(
                "{what} probabilities cover {} examples, expected {n}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("{what} probability {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// PVI from gold-label probabilities of model seeds (`model_probs[s][i]`)
/// and null-model seeds. Each side's log-probabilities are averaged over its
/// seeds.
pub fn pvi_scores(
    model_probs: &[Vec<f64>],
    null_probs: &[Vec<f64>],
    labels: &[usize],
    norm: NormMode,
) -> Result<ScoreTable> {
    let n = labels.len();
    check(model_probs, n, "model")?;
    check(null_probs, n, "null-model")?;
    let mean_log = |ps: &[Vec<f64>], i: usize| ps.iter().map(|p| log2p(p[i])).sum::<f64>() / ps.len() as f64;
    let raw = (0..n)
        .map(|i| mean_log(model_probs, i) - mean_log(null_probs, i))
        .collect();
    let mut t = ScoreTable::from_raw("pvi", raw, labels, norm)?;
    t.provenance.params.insert("model_seeds".into(), model_probs.len().to_string());
    t.provenance.params.insert("null_seeds".into(), null_probs.len().to_string());
    Ok(t)
}
