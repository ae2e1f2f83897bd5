use super::{NormMode, ScoreTable};
use crate::artifacts::PredictionTrace;
use crate::{Error, Result};

/// Correct→incorrect transitions between consecutive logged steps, and
/// whether each example was never correct at any logged step.
pub fn forgetting_counts(trace: &PredictionTrace) -> (Vec<usize>, Vec<bool>) {
    let n = trace.num_examples();
    let mut counts = vec![0usize; n];
    let mut learned = vec![false; n];
    let mut prev: Option<Vec<bool>> = None;
    for t in 0..trace.steps.len() {
        let now: Vec<bool> = (0..n).map(|i| trace.correct(t, i)).collect();
        if let Some(p) = &prev {
            for i in 0..n {
                counts[i] += usize::from(p[i] && !now[i]);
            }
        }
        for i in 0..n {
            learned[i] |= now[i];
        }
        prev = Some(now);
    }
    (counts, learned.into_iter().map(|l| !l).collect())
}

/// Forgetting events averaged over traces (one per seed). Examples never
/// learned in any trace score 0 and are flagged.
pub fn forgetting_scores(traces: &[PredictionTrace], norm: NormMode) -> Result<ScoreTable> {
    let first = traces.first().ok_or_else(|| Error::invalid("forgetting needs at least one trace"))?;
    let labels = first.labels.clone();
    let mut sum = vec![0.0f64; labels.len()];
    let mut never = vec![true; labels.len()];
    for t in traces {
        if t.labels != labels {
            return Err(Error::invalid("traces were logged on different labels"));
        }
        if t.steps.len() < 2 {
            return Err(Error::invalid(format!(
                "forgetting needs at least 2 logged steps, trace has {}",
                t.steps.len()
            )));
        }
        let (c, nl) = forgetting_counts(t);
        for i in 0..labels.len() {
            sum[i] += c[i] as f64;
            never[i] &= nl[i];
        }
    }
    let raw = sum.into_iter().map(|v| v / traces.len() as f64).collect();
    let mut table = ScoreTable::from_raw("forgetting", raw, &labels, norm)?;
    table.never_learned = Some(never);
    table.provenance.params.insert("traces".into(), traces.len().to_string());
    table.provenance.params.insert(
        "logged_steps".into(),
        traces.iter().map(|t| t.steps.len().to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(table)
}
