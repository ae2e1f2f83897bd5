//! Dataset representation, ingestion, synthetic generation, label noise and
//! slot-annotation parsing.
//!
//! Datasets are immutable once built. Every derived dataset (split, subset,
//! noisy copy) gets fresh dense ids `0..N` and records how it was derived in
//! its [`Provenance`].

pub(crate) mod annotation;
mod jsonl;
mod noise;
mod synthetic;
mod tokenizer;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::util::{seeded_rng, stratified_quotas};
use crate::{Error, Result};

pub use annotation::{label_trail, parse_annotation, AnnotatedUtterance, OTHER_SLOT};
pub use jsonl::{load_jsonl, load_jsonl_with, write_jsonl, JsonlOptions, JsonlRecord};
pub use noise::{inject_label_noise, NoiseRecord};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with_log, is_near_duplicate, DomainSpec,
    GeneratorSpec, IntentSpec, Origin, TemplateLog,
};
pub use tokenizer::{Tokenizer, TokenizerSpec};

/// Padding token. Excluded from pooling; the null model sees only this.
pub const PAD: u32 = 0;
/// Separator between the two segments of a sentence pair.
pub const SEP: u32 = 1;
/// First id available to ordinary words.
pub const FIRST_WORD_ID: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub tokens: Vec<u32>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    /// One slot label per token when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<Vec<String>>,
}

/// How a dataset came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Synthetic { spec: GeneratorSpec, seed: u64 },
    Jsonl { path: String, tokenizer: TokenizerSpec },
    Inline { description: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    Split { train_fraction: f64, seed: u64, part: String },
    Noise(NoiseRecord),
    Subset { kept: usize, of: usize },
    Relabel { field: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    #[serde(default)]
    pub operations: Vec<Operation>,
}

impl Provenance {
    pub fn inline(description: impl Into<String>) -> Self {
        Provenance {
            source: Source::Inline {
                description: description.into(),
            },
            operations: Vec::new(),
        }
    }

    /// The most recent label-noise record, if any.
    pub fn noise(&self) -> Option<&NoiseRecord> {
        self.operations.iter().rev().find_map(|op| match op {
            Operation::Noise(r) => Some(r),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub class_names: Vec<String>,
    /// Slot label inventory for token tagging; empty when the data carries no slots.
    #[serde(default)]
    pub slot_names: Vec<String>,
    pub provenance: Provenance,
}

/// Which annotation a stratified operation or relabeling keys on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Class,
    Domain,
    Intent,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        examples: Vec<Example>,
        num_classes: usize,
        vocab_size: usize,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let slot_names = collect_slot_names(&examples);
        let d = Dataset {
            examples,
            num_classes,
            vocab_size,
            class_names,
            slot_names,
            provenance,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::invalid("dataset has zero classes"));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        for (i, e) in self.examples.iter().enumerate() {
            if e.id != i {
                return Err(Error::invalid(format!(
                    "example ids must be dense 0..N-1; position {i} has id {}",
                    e.id
                )));
            }
            if e.tokens.is_empty() {
                return Err(Error::invalid(format!("example {i} has no tokens")));
            }
            if e.label >= self.num_classes {
                return Err(Error::invalid(format!(
                    "example {i} has label {} but K = {}",
                    e.label, self.num_classes
                )));
            }
            if let Some(&t) = e.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
                return Err(Error::invalid(format!(
                    "example {i} has token {t} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
            if let Some(slots) = &e.slots {
                if slots.len() != e.tokens.len() {
                    return Err(Error::invalid(format!(
                        "example {i} has {} slot labels for {} tokens",
                        slots.len(),
                        e.tokens.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy with the examples at `ids` (in the given order), renumbered densely.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut examples = Vec::with_capacity(ids.len());
        for (new_id, &id) in ids.iter().enumerate() {
            let ex = self
                .examples
                .get(id)
                .ok_or_else(|| Error::invalid(format!("unknown example id {id}")))?;
            examples.push(Example {
                id: new_id,
                ..ex.clone()
            });
        }
        let mut provenance = self.provenance.clone();
        provenance.operations.push(Operation::Subset {
            kept: ids.len(),
            of: self.len(),
        });
        Ok(Dataset {
            examples,
            provenance,
            ..self.clone_header()
        })
    }

    /// Re-labels every example by its domain or intent string. Class names
    /// are the sorted distinct values.
    pub fn relabel_by(&self, field: Field) -> Result<Dataset> {
        if field == Field::Class {
            return Ok(self.clone());
        }
        let values: Vec<&str> = self
            .examples
            .iter()
            .map(|e| field_value(e, field).ok_or(e.id))
            .collect::<std::result::Result<_, _>>()
            .map_err(|id| Error::invalid(format!("example {id} has no {field:?} annotation")))?;
        let names: Vec<String> = {
            let mut v: Vec<String> = values.iter().map(|s| s.to_string()).collect();
            v.sort();
            v.dedup();
            v
        };
        let index: BTreeMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let examples = self
            .examples
            .iter()
            .zip(&values)
            .map(|(e, v)| Example {
                label: index[v],
                ..e.clone()
            })
            .collect();
        let mut provenance = self.provenance.clone();
        provenance.operations.push(Operation::Relabel {
            field: format!("{field:?}").to_lowercase(),
        });
        Ok(Dataset {
            examples,
            num_classes: names.len(),
            vocab_size: self.vocab_size,
            class_names: names,
            slot_names: self.slot_names.clone(),
            provenance,
        })
    }

    /// Stratum key of every example for `field`.
    pub fn strata(&self, field: Field) -> Result<Vec<String>> {
        self.examples
            .iter()
            .map(|e| match field {
                Field::Class => Ok(self.class_names[e.label].clone()),
                _ => field_value(e, field).map(str::to_string).ok_or_else(|| {
                    Error::invalid(format!("example {} has no {field:?} annotation", e.id))
                }),
            })
            .collect()
    }

    /// Stable bytes for hashing and determinism checks.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            examples: Vec::new(),
            num_classes: self.num_classes,
            vocab_size: self.vocab_size,
            class_names: self.class_names.clone(),
            slot_names: self.slot_names.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

fn field_value(e: &Example, field: Field) -> Option<&str> {
    match field {
        Field::Domain => e.domain.as_deref(),
        Field::Intent => e.intent.as_deref(),
        Field::Class => None,
    }
}

pub(crate) fn collect_slot_names(examples: &[Example]) -> Vec<String> {
    let mut names: Vec<String> = examples
        .iter()
        .filter_map(|e| e.slots.as_ref())
        .flatten()
        .cloned()
        .collect();
    names.sort();
    names.dedup();
    names
}

/// Stratified train/test split. Each class contributes `round(frac * n_c)`
/// examples to train, adjusted by largest remainder so the global train size
/// is `round(frac * N)`. Both parts keep the original relative order.
pub fn split(d: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes];
    for e in &d.examples {
        by_class[e.label].push(e.id);
    }
    if let Some((c, ids)) = by_class
        .iter()
        .enumerate()
        .find(|(_, ids)| !ids.is_empty() && ids.len() < 2)
    {
        return Err(Error::invalid(format!(
            "class {c} ({}) has {} example(s); a split needs at least 2",
            d.class_names[c],
            ids.len()
        )));
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let target = (train_frac * d.len() as f64).round() as usize;
    let quotas = stratified_quotas(&sizes, target);

    let mut rng = seeded_rng(seed, 0x5b11);
    let mut train_ids = Vec::with_capacity(target);
    for (ids, &q) in by_class.iter().zip(&quotas) {
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        train_ids.extend_from_slice(&shuffled[..q]);
    }
    train_ids.sort_unstable();
    let mut in_train = vec![false; d.len()];
    for &i in &train_ids {
        in_train[i] = true;
    }
    let test_ids: Vec<usize> = (0..d.len()).filter(|&i| !in_train[i]).collect();

    let mut train = d.subset(&train_ids)?;
    let mut test = d.subset(&test_ids)?;
    for (part, ds) in [("train", &mut train), ("test", &mut test)] {
        let op = ds.provenance.operations.last_mut().expect("subset op");
        *op = Operation::Split {
            train_fraction: train_frac,
            seed,
            part: part.to_string(),
        };
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(labels: &[usize], k: usize) -> Dataset {
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Example {
                id: i,
                tokens: vec![FIRST_WORD_ID + (i % 5) as u32],
                label: l,
                domain: None,
                intent: None,
                slots: None,
            })
            .collect();
        Dataset::new(
            examples,
            k,
            10,
            (0..k).map(|c| format!("c{c}")).collect(),
            Provenance::inline("toy"),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let d = toy(&labels, 3);
        let (tr, te) = split(&d, 0.8, 5).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr2, _) = split(&d, 0.8, 5).unwrap();
        assert_eq!(tr, tr2);
        // per-class train counts within ±1 of frac * n_c
        let before = d.class_counts();
        let after = tr.class_counts();
        for (b, a) in before.iter().zip(&after) {
            let want = 0.8 * *b as f64;
            assert!((*a as f64 - want).abs() <= 1.0, "{a} vs {want}");
        }
        assert_eq!(
            tr.class_counts().iter().zip(te.class_counts()).map(|(a, b)| a + b).collect::<Vec<_>>(),
            before
        );
    }

    #[test]
    fn split_rejects_singleton_class() {
        let d = toy(&[0, 0, 0, 1], 2);
        assert!(split(&d, 0.5, 1).is_err());
        assert!(split(&toy(&[0, 0, 1, 1], 2), 1.0, 1).is_err());
    }

    #[test]
    fn validate_rejects_bad_labels_and_ids() {
        let mut d = toy(&[0, 1], 2);
        d.examples[1].label = 2;
        assert!(d.validate().is_err());
        let mut d = toy(&[0, 1], 2);
        d.examples[1].id = 7;
        assert!(d.validate().is_err());
        let mut d = toy(&[0, 1], 2);
        d.examples[0].slots = Some(vec!["a".into(), "b".into()]);
        assert!(d.validate().is_err());
    }

    #[test]
    fn relabel_by_intent() {
        let mut d = toy(&[0, 1, 0], 2);
        for (e, it) in d.examples.iter_mut().zip(["play", "stop", "play"]) {
            e.intent = Some(it.to_string());
        }
        let r = d.relabel_by(Field::Intent).unwrap();
        assert_eq!(r.class_names, vec!["play", "stop"]);
        assert_eq!(r.labels(), vec![0, 1, 0]);
        assert!(toy(&[0], 1).relabel_by(Field::Domain).is_err());
    }
}
