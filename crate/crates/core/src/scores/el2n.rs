use serde::{Deserialize, Serialize};

use super::{NormMode, ScoreTable};
use crate::artifacts::ArtifactStore;
use crate::{Error, Result};

/// Which checkpoint early-training scores are read from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelect {
    Index(usize),
    /// First checkpoint at or after this fractional epoch, else the last.
    Epoch(f64),
    Last,
}

impl CheckpointSelect {
    pub fn resolve(self, store: &ArtifactStore) -> Result<usize> {
        let n = store.num_checkpoints();
        if n == 0 {
            return Err(Error::Store(format!("{} has no checkpoints", store.root().display())));
        }
        match self {
            CheckpointSelect::Index(i) if i < n => Ok(i),
            CheckpointSelect::Index(i) => Err(Error::Store(format!("checkpoint {i} out of range ({n} stored)"))),
            CheckpointSelect::Epoch(e) => Ok(store
                .checkpoints()
                .iter()
                .position(|c| c.meta.epoch >= e - 1e-9)
                .unwrap_or(n - 1)),
            CheckpointSelect::Last => Ok(n - 1),
        }
    }
}

/// `‖softmax(logits) − onehot(label)‖₂`.
pub fn el2n(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.iter()
        .enumerate()
        .map(|(k, e)| {
            let d = e / z - if k == label { 1.0 } else { 0.0 };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// EL2N at the selected checkpoint, averaged over one store per seed.
pub fn el2n_scores(stores: &[ArtifactStore], at: CheckpointSelect, norm: NormMode) -> Result<ScoreTable> {
    let first = stores.first().ok_or_else(|| Error::invalid("EL2N needs at least one store"))?;
    let labels = first.header()?.labels.clone();
    let mut sum = vec![0.0f64; labels.len()];
    let mut epochs = Vec::new();
    let mut prov_stores = Vec::new();
    let mut seeds = Vec::new();
    for s in stores {
        let h = s.header()?;
        if h.labels != labels {
            return Err(Error::invalid(format!(
                "{} was trained on different labels",
                s.root().display()
            )));
        }
        let c = at.resolve(s)?;
        epochs.push(s.checkpoints()[c].meta.epoch);
        let logits = s.read_logits(c)?;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let z: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            sum[i] += el2n(&z, labels[i]);
        }
        prov_stores.push(s.root().display().to_string());
        seeds.push(h.seed);
    }
    let raw = sum.into_iter().map(|v| v / stores.len() as f64).collect();
    let mut t = ScoreTable::from_raw("el2n", raw, &labels, norm)?;
    t.provenance.stores = prov_stores;
    t.provenance.seeds = seeds;
    t.provenance.params.insert(
        "epoch".into(),
        epochs.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    Ok(t)
}
