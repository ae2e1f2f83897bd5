use serde::{Deserialize, Serialize};

use super::{NormMode, ScoreTable};
use crate::artifacts::ArtifactStore;
use crate::trainer::LayerRef;
use crate::{Error, Result};

/// How per-checkpoint terms `η_i · g·g` are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TracInReduce {
    /// L2 norm of the vector of per-checkpoint terms.
    #[default]
    L2,
    Sum,
}

/// Self-influence from per-checkpoint squared gradient norms `g·g`.
pub fn tracin_self(dots: &[f64], etas: &[f64], reduce: TracInReduce) -> f64 {
    let terms = dots.iter().zip(etas).map(|(d, e)| e * d);
    match reduce {
        TracInReduce::L2 => terms.map(|t| t * t).sum::<f64>().sqrt(),
        TracInReduce::Sum => terms.sum(),
    }
}

/// TracIn self-influence over every stored checkpoint. `etas` defaults to the
/// step sizes recorded in the manifest. `layer`, when given, must match the
/// layer the store captured.
pub fn tracin_self_scores(
    store: &ArtifactStore,
    layer: Option<LayerRef>,
    etas: Option<&[f64]>,
    reduce: TracInReduce,
    norm: NormMode,
) -> Result<ScoreTable> {
    let h = store.header()?;
    let cap = store.capture()?;
    if let Some(l) = layer {
        if l != cap.layer {
            return Err(Error::Config(format!(
                "store captured layer {:?}, TracIn asked for {l:?}",
                cap.layer
            )));
        }
    }
    let k = store.num_checkpoints();
    if k == 0 {
        return Err(Error::Store(format!("{} has no checkpoints", store.root().display())));
    }
    let etas: Vec<f64> = match etas {
        Some(e) if e.len() < k => {
            return Err(Error::invalid(format!(
                "missing step size for checkpoint {} ({} given for {k} checkpoints)",
                e.len(),
                e.len()
            )))
        }
        Some(e) => e[..k].to_vec(),
        None => store.checkpoints().iter().map(|c| c.meta.learning_rate).collect(),
    };
    if let Some(i) = etas.iter().position(|e| !e.is_finite()) {
        return Err(Error::invalid(format!("step size for checkpoint {i} is not finite")));
    }
    let n = h.num_examples();
    let mut dots = vec![Vec::with_capacity(k); n];
    for c in 0..k {
        let g = store.read_layer_grads(c)?;
        for (i, row) in g.rows().into_iter().enumerate() {
            dots[i].push(row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>());
        }
    }
    let raw = dots.iter().map(|d| tracin_self(d, &etas, reduce)).collect();
    let mut t = ScoreTable::from_raw("tracin", raw, &h.labels, norm)?;
    t.provenance.stores.push(store.root().display().to_string());
    t.provenance.seeds.push(h.seed);
    t.provenance.params.insert("layer".into(), format!("{:?}", cap.layer));
    t.provenance.params.insert("reduce".into(), format!("{reduce:?}").to_lowercase());
    t.provenance.params.insert("checkpoints".into(), k.to_string());
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_cases() {
        assert_eq!(tracin_self(&[0.0, 0.0], &[1.0, 1.0], TracInReduce::L2), 0.0);
        // g = (3,4): g·g = 25.
        assert_eq!(tracin_self(&[25.0], &[1.0], TracInReduce::L2), 25.0);
        assert_eq!(tracin_self(&[3.0, 4.0], &[1.0, 1.0], TracInReduce::L2), 5.0);
        assert_eq!(tracin_self(&[3.0, 4.0], &[1.0, 1.0], TracInReduce::Sum), 7.0);
    }

    #[test]
    fn scales_with_eta() {
        let a = tracin_self(&[1.5, 2.0, 0.25], &[0.1; 3], TracInReduce::L2);
        let b = tracin_self(&[1.5, 2.0, 0.25], &[0.3; 3], TracInReduce::L2);
        assert!((b - 3.0 * a).abs() < 1e-12);
    }
}
