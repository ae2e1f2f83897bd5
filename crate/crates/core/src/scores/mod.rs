//! Data influence scores and their normalization.

mod el2n;
mod forgetting;
mod pvi;
mod tracin;
mod vog;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};
pub use el2n::{el2n, el2n_scores, CheckpointSelect};
pub use forgetting::{forgetting_counts, forgetting_scores};
pub use pvi::{pvi, pvi_scores, PROB_FLOOR};
pub use tracin::{tracin_self, tracin_self_scores, TracInReduce};
pub use vog::{vog_from_checkpoints, vog_scores};

/// Population standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    #[default]
    Class,
    Dataset,
}

impl FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormMode::None),
            "class" => Ok(NormMode::Class),
            "dataset" => Ok(NormMode::Dataset),
            _ => Err(Error::Config(format!("unknown normalization {s:?} (none|class|dataset)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Vog,
    El2n,
    Forgetting,
    Tracin,
    Pvi,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] = [
        ScoreKind::Vog,
        ScoreKind::El2n,
        ScoreKind::Forgetting,
        ScoreKind::Tracin,
        ScoreKind::Pvi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Vog => "vog",
            ScoreKind::El2n => "el2n",
            ScoreKind::Forgetting => "forgetting",
            ScoreKind::Tracin => "tracin",
            ScoreKind::Pvi => "pvi",
        }
    }
}

impl FromStr for ScoreKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown score {s:?} (vog|el2n|forgetting|tracin|pvi)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreProvenance {
    #[serde(default)]
    pub stores: Vec<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Per-example raw and normalized scores, in id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub name: String,
    pub ids: Vec<usize>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Normalization group of each example (gold class in class mode).
    pub groups: Vec<usize>,
    pub mode: NormMode,
    pub stats: Vec<GroupStats>,
    /// Forgetting only: example never predicted correctly at a logged step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub never_learned: Option<Vec<bool>>,
    pub provenance: ScoreProvenance,
}

#[derive(Serialize, Deserialize)]
struct TsvMeta {
    name: String,
    mode: NormMode,
    stats: Vec<GroupStats>,
    provenance: ScoreProvenance,
}

const TSV_MAGIC: &str = "# influence-lab score table";

impl ScoreTable {
    /// A table with ids `0..raw.len()` normalized under `mode`.
    pub fn from_raw(name: &str, raw: Vec<f64>, labels: &[usize], mode: NormMode) -> Result<Self> {
        if raw.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} labels",
                raw.len(),
                labels.len()
            )));
        }
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} score of example {i} is not finite")));
        }
        let mut t = ScoreTable {
            name: name.to_string(),
            ids: (0..raw.len()).collect(),
            normalized: raw.clone(),
            raw,
            groups: vec![0; labels.len()],
            mode: NormMode::None,
            stats: Vec::new(),
            never_learned: None,
            provenance: ScoreProvenance::default(),
        };
        t.normalize(mode, labels);
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The column sampling uses: normalized scores, or raw ones when the
    /// mode is `None`.
    pub fn values(&self) -> &[f64] {
        &self.normalized
    }

    /// Re-normalizes from the raw column. `labels` are ignored outside class
    /// mode.
    pub fn normalize(&mut self, mode: NormMode, labels: &[usize]) {
        self.mode = mode;
        self.provenance.warnings.retain(|w| !w.starts_with("std floored"));
        match mode {
            NormMode::None => {
                self.groups = vec![0; self.raw.len()];
                self.normalized = self.raw.clone();
                self.stats.clear();
                return;
            }
            NormMode::Class => self.groups = labels.to_vec(),
            NormMode::Dataset => self.groups = vec![0; self.raw.len()],
        }
        let (normalized, stats) = normalize(&self.raw, &self.groups);
        for s in stats.iter().filter(|s| s.floored) {
            self.provenance
                .warnings
                .push(format!("std floored at {STD_FLOOR:e} for group {}", s.group));
        }
        self.normalized = normalized;
        self.stats = stats;
    }

    pub fn to_tsv(&self) -> Result<String> {
        let meta = TsvMeta {
            name: self.name.clone(),
            mode: self.mode,
            stats: self.stats.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = String::new();
        writeln!(out, "{TSV_MAGIC}").unwrap();
        writeln!(out, "# {}", serde_json::to_string(&meta)?).unwrap();
        out.push_str("id\traw\tnormalized\tgroup");
        if self.never_learned.is_some() {
            out.push_str("\tnever_learned");
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{}\t{}\t{}\t{}", self.ids[i], self.raw[i], self.normalized[i], self.groups[i]).unwrap();
            if let Some(nl) = &self.never_learned {
                write!(out, "\t{}", u8::from(nl[i])).unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(path, &text)
    }

    pub fn parse_tsv(path: &Path, text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == TSV_MAGIC => {}
            _ => return Err(err(1, "not a score table".into())),
        }
        let meta: TsvMeta = match lines.next() {
            Some((_, l)) if l.starts_with("# ") => {
                serde_json::from_str(&l[2..]).map_err(|e| err(2, e.to_string()))?
            }
            _ => return Err(err(2, "missing metadata line".into())),
        };
        let has_flag = match lines.next() {
            Some((_, "id\traw\tnormalized\tgroup")) => false,
            Some((_, "id\traw\tnormalized\tgroup\tnever_learned")) => true,
            _ => return Err(err(3, "unexpected column header".into())),
        };
        let mut t = ScoreTable {
            name: meta.name,
            ids: Vec::new(),
            raw: Vec::new(),
            normalized: Vec::new(),
            groups: Vec::new(),
            mode: meta.mode,
            stats: meta.stats,
            never_learned: has_flag.then(Vec::new),
            provenance: meta.provenance,
        };
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 + usize::from(has_flag) {
                return Err(err(i + 1, format!("expected {} columns", 4 + usize::from(has_flag))));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
            t.ids.push(int(cols[0])?);
            t.raw.push(num(cols[1])?);
            t.normalized.push(num(cols[2])?);
            t.groups.push(int(cols[3])?);
            if let Some(nl) = &mut t.never_learned {
                nl.push(cols[4] == "1");
            }
        }
        if t.ids.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(err(4, "ids must be 0..N-1 in order".into()));
        }
        Ok(t)
    }
}

/// z-normalization within groups using the population standard deviation,
/// floored at [`STD_FLOOR`].
pub fn normalize(raw: &[f64], groups: &[usize]) -> (Vec<f64>, Vec<GroupStats>) {
    let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (&v, &g) in raw.iter().zip(groups) {
        acc.entry(g).or_default().push(v);
    }
    let stats: BTreeMap<usize, GroupStats> = acc
        .into_iter()
        .map(|(g, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let floored = std < STD_FLOOR;
            (
                g,
                GroupStats {
                    group: g,
                    count: vals.len(),
                    mean,
                    std: if floored { STD_FLOOR } else { std },
                    floored,
                },
            )
        })
        .collect();
    let out = raw
        .iter()
        .zip(groups)
        .map(|(&v, g)| {
            let s = &stats[g];
            if s.floored {
                0.0
            } else {
                (v - s.mean) / s.std
            }
        })
        .collect();
    (out, stats.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_std(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn dataset_mode_standardizes() {
        let t = ScoreTable::from_raw("x", vec![1.0, 2.0, 3.0], &[0, 1, 0], NormMode::Dataset).unwrap();
        let (m, s) = mean_std(&t.normalized);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert!((t.normalized[0] + 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn all_equal_group_is_zero_with_warning() {
        let t = ScoreTable::from_raw("x", vec![4.0; 3], &[0; 3], NormMode::Class).unwrap();
        assert_eq!(t.normalized, vec![0.0; 3]);
        assert!(t.stats[0].floored);
        assert_eq!(t.provenance.warnings.len(), 1);
    }

    #[test]
    fn class_mode_recomputed_stats() {
        let raw = vec![1.0, 10.0, 2.0, 30.0, 3.0, 20.0];
        let labels = vec![0, 1, 0, 1, 0, 1];
        let t = ScoreTable::from_raw("x", raw.clone(), &labels, NormMode::Class).unwrap();
        for c in 0..2 {
            let group: Vec<f64> = (0..6).filter(|&i| labels[i] == c).map(|i| t.normalized[i]).collect();
            let (m, s) = mean_std(&group);
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
            let rawg: Vec<f64> = (0..6).filter(|&i| labels[i] == c).map(|i| raw[i]).collect();
            let (rm, rs) = mean_std(&rawg);
            assert!((t.stats[c].mean - rm).abs() < 1e-12 && (t.stats[c].std - rs).abs() < 1e-12);
        }
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let raw = vec![0.1, 1.0 / 3.0, 2.0f64.sqrt(), -1e-300];
        let mut t = ScoreTable::from_raw("vog", raw, &[0, 0, 1, 1], NormMode::Class).unwrap();
        t.never_learned = Some(vec![true, false, false, true]);
        t.provenance.params.insert("layer".into(), "last_hidden".into());
        let s = t.to_tsv().unwrap();
        let back = ScoreTable::parse_tsv(Path::new("t.tsv"), &s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(ScoreTable::parse_tsv(Path::new("t"), "id\traw\n").is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("tracin".parse::<ScoreKind>().unwrap(), ScoreKind::Tracin);
        assert!("x".parse::<ScoreKind>().is_err());
        assert_eq!("dataset".parse::<NormMode>().unwrap(), NormMode::Dataset);
    }
}
