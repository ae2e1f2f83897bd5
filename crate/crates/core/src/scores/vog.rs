use ndarray::Array2;

use super::{NormMode, ScoreTable};
use crate::artifacts::{ArtifactStore, CaptureMode};
use crate::{Error, Result};

/// VoG of one example from its G matrices at each checkpoint:
/// the mean over elements of `(1/√N_c)·Σ_c (G_jk − μ_jk)²`.
pub fn vog_from_checkpoints(g: &[Array2<f64>]) -> Result<f64> {
    if g.len() < 2 {
        return Err(Error::invalid("VoG needs at least 2 checkpoints"));
    }
    let shape = g[0].dim();
    if g.iter().any(|m| m.dim() != shape) {
        return Err(Error::invalid("G matrices differ in shape across checkpoints"));
    }
    let nc = g.len() as f64;
    let mut mean = Array2::<f64>::zeros(shape);
    for m in g {
        mean += m;
    }
    mean /= nc;
    let mut ss = Array2::<f64>::zeros(shape);
    for m in g {
        ss.zip_mut_with(&(m - &mean), |s, d| *s += d * d);
    }
    Ok(ss.mean().unwrap_or(0.0) / nc.sqrt())
}

/// VoG for every example of a single run.
pub fn vog_scores(store: &ArtifactStore, norm: NormMode) -> Result<ScoreTable> {
    let h = store.header()?;
    let nc = store.num_checkpoints();
    if nc < 2 {
        return Err(Error::Store(format!(
            "VoG needs at least 2 checkpoints, {} has {nc}",
            store.root().display()
        )));
    }
    let cap = store.capture()?;
    if !cap.gradients {
        return Err(Error::Store("store has no gradient capture".into()));
    }
    let raw = match cap.mode {
        CaptureMode::Full => full(store, nc)?,
        CaptureMode::Reduced => reduced(store)?,
    };
    let mut t = ScoreTable::from_raw("vog", raw, &h.labels, norm)?;
    t.provenance.stores.push(store.root().display().to_string());
    t.provenance.seeds.push(h.seed);
    t.provenance.params.insert("checkpoints".into(), nc.to_string());
    t.provenance
        .params
        .insert("capture".into(), format!("{:?}", cap.mode).to_lowercase());
    Ok(t)
}

/// Two passes over the checkpoints: element means, then squared deviations.
fn full(store: &ArtifactStore, nc: usize) -> Result<Vec<f64>> {
    let first = store.read_gradients(0)?;
    let mut mean = vec![0.0f64; first.data.len()];
    for c in 0..nc {
        let g = if c == 0 { first.clone() } else { store.read_gradients(c)? };
        for (m, &v) in mean.iter_mut().zip(&g.data) {
            *m += f64::from(v);
        }
    }
    for m in &mut mean {
        *m /= nc as f64;
    }
    let mut ss = vec![0.0f64; mean.len()];
    for c in 0..nc {
        let g = store.read_gradients(c)?;
        for ((s, &m), &v) in ss.iter_mut().zip(&mean).zip(&g.data) {
            let d = f64::from(v) - m;
            *s += d * d;
        }
    }
    let scale = (nc as f64).sqrt();
    Ok((0..first.rows())
        .map(|i| {
            let a = first.offsets[i] * first.width;
            let b = first.offsets[i + 1] * first.width;
            let row = &ss[a..b];
            row.iter().sum::<f64>() / row.len().max(1) as f64 / scale
        })
        .collect())
}

/// From stored moments: `Σ_c (G − μ)² = N_c · (E[G²] − μ²)`.
fn reduced(store: &ArtifactStore) -> Result<Vec<f64>> {
    let m = store.read_moments()?;
    let nc = m.count as f64;
    Ok((0..m.mean.rows())
        .map(|i| {
            let (mu, sq) = (m.mean.row(i), m.mean_sq.row(i));
            let s: f64 = mu.iter().zip(sq).map(|(u, q)| (nc * (q - u * u)).max(0.0)).sum();
            s / mu.len().max(1) as f64 / nc.sqrt()
        })
        .collect())
}
