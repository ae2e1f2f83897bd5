use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Operation};
use crate::util::seeded_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub noise_rate: f64,
    /// Ids whose label actually changed, ascending.
    pub flipped_ids: Vec<usize>,
    /// Number of examples whose label was re-drawn (changed or not).
    pub selected: usize,
    pub seed: u64,
}

impl NoiseRecord {
    pub fn flipped_fraction(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.flipped_ids.len() as f64 / n as f64
        }
    }
}

/// Isotropic label noise: exactly `round(p * N)` examples are chosen without
/// replacement and each gets a label drawn uniformly from all K classes, so
/// a chosen example keeps its label with probability 1/K.
pub fn inject_label_noise(d: &Dataset, p: f64, seed: u64) -> Result<(Dataset, NoiseRecord)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("noise rate must be in [0, 1], got {p}")));
    }
    if d.num_classes < 2 {
        return Err(Error::invalid("label noise needs at least 2 classes"));
    }
    let n = d.len();
    let count = (p * n as f64).round() as usize;
    let mut rng = seeded_rng(seed, 0x401_5e);
    let mut selected = index::sample(&mut rng, n, count).into_vec();
    selected.sort_unstable();

    let mut out = d.clone();
    let mut flipped_ids = Vec::new();
    for id in selected {
        let new_label = rng.gen_range(0..d.num_classes);
        if new_label != out.examples[id].label {
            flipped_ids.push(id);
        }
        out.examples[id].label = new_label;
    }
    let record = NoiseRecord {
        noise_rate: p,
        flipped_ids,
        selected: count,
        seed,
    };
    out.provenance.operations.push(Operation::Noise(record.clone()));
    Ok((out, record))
}
