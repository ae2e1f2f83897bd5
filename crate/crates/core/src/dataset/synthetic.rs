//! Deterministic synthetic text-classification data.
//!
//! Vocabulary layout: reserved ids, then one block of `signal_vocab`
//! indicative words per class (flat mode) or per intent and per slot name
//! (hierarchical mode), then shared filler words.
//!
//! A `redundancy` fraction of each class is drawn as lightly mutated copies
//! of a small per-class template pool; the rest are fresh draws. Fresh
//! examples are where the indicative vocabulary is actually covered, so
//! pruning them hurts while pruning the near-duplicates does not.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::annotation::OTHER_SLOT;
use super::{Dataset, Example, Provenance, Source, FIRST_WORD_ID, SEP};
use crate::util::{apportion, seeded_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub name: String,
    #[serde(default)]
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub intents: Vec<IntentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Number of classes in flat mode; ignored when `hierarchy` is set.
    #[serde(default)]
    pub num_classes: usize,
    pub num_examples: usize,
    pub vocab_size: usize,
    /// Class (or domain) mixture; uniform when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    pub templates_per_class: usize,
    /// Indicative words per class / intent / slot.
    pub signal_vocab: usize,
    /// Indicative words placed in every example.
    pub signal_tokens: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of each class emitted as near-duplicates of the template pool.
    pub redundancy: f64,
    /// Fraction of filler positions re-drawn in a near-duplicate.
    pub mutation_rate: f64,
    /// Probability that a fresh example also carries one indicative word of
    /// another class.
    #[serde(default)]
    pub confusion: f64,
    /// Emit `[A, SEP, B]` sentence pairs.
    #[serde(default)]
    pub pair_segments: bool,
    /// Domain → intent → slot hierarchy. Classes are the domains.
    #[serde(default)]
    pub hierarchy: Option<Vec<DomainSpec>>,
}

impl GeneratorSpec {
    /// Flat K-class spec with workable defaults.
    pub fn flat(num_classes: usize, num_examples: usize, vocab_size: usize) -> Self {
        GeneratorSpec {
            num_classes,
            num_examples,
            vocab_size,
            class_weights: None,
            templates_per_class: 8,
            signal_vocab: 20,
            signal_tokens: 2,
            min_len: 6,
            max_len: 10,
            redundancy: 0.0,
            mutation_rate: 0.1,
            confusion: 0.0,
            pair_segments: false,
            hierarchy: None,
        }
    }

    pub fn is_hierarchical(&self) -> bool {
        self.hierarchy.is_some()
    }

    fn class_count(&self) -> usize {
        match &self.hierarchy {
            Some(h) => h.len(),
            None => self.num_classes,
        }
    }
}

/// Where a generated example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Fresh,
    Template { pool_index: usize },
}

/// The generator's own record of template copies, indexed by example id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateLog {
    pub origins: Vec<Origin>,
    pub pool: Vec<Vec<u32>>,
}

/// Same length and at most a quarter of positions differ.
pub fn is_near_duplicate(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).filter(|(x, y)| x != y).count() <= a.len() / 4
}

pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<Dataset> {
    generate_synthetic_with_log(spec, seed).map(|(d, _)| d)
}

struct Unit {
    class: usize,
    domain: Option<String>,
    intent: Option<String>,
    signal: Vec<u32>,
    slots: Vec<(String, Vec<u32>)>,
}

struct Draft {
    tokens: Vec<u32>,
    slots: Vec<String>,
    filler_positions: Vec<usize>,
}

pub fn generate_synthetic_with_log(spec: &GeneratorSpec, seed: u64) -> Result<(Dataset, TemplateLog)> {
    let k = spec.class_count();
    if k == 0 {
        return Err(Error::invalid("generator declares no classes"));
    }
    if spec.num_examples < k {
        return Err(Error::invalid(format!(
            "N = {} is smaller than K = {k}",
            spec.num_examples
        )));
    }
    if spec.templates_per_class == 0 {
        return Err(Error::invalid("zero template pool"));
    }
    if spec.signal_vocab == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::invalid("signal_vocab and lengths must be positive, min_len <= max_len"));
    }
    if !(0.0..=1.0).contains(&spec.redundancy)
        || !(0.0..=1.0).contains(&spec.mutation_rate)
        || !(0.0..=1.0).contains(&spec.confusion)
    {
        return Err(Error::invalid("redundancy, mutation_rate and confusion must be in [0, 1]"));
    }
    let weights = match &spec.class_weights {
        Some(w) if w.len() != k || w.iter().any(|x| !x.is_finite() || *x < 0.0) => {
            return Err(Error::invalid(format!("class_weights must have {k} non-negative entries")))
        }
        Some(w) => w.clone(),
        None => vec![1.0; k],
    };

    // Vocabulary layout.
    let mut next = FIRST_WORD_ID;
    let mut block = |n: usize| {
        let b: Vec<u32> = (next..next + n as u32).collect();
        next += n as u32;
        b
    };
    let (units, class_names) = match &spec.hierarchy {
        None => {
            let units: Vec<Unit> = (0..k)
                .map(|c| Unit {
                    class: c,
                    domain: None,
                    intent: None,
                    signal: block(spec.signal_vocab),
                    slots: Vec::new(),
                })
                .collect();
            (units, (0..k).map(|c| format!("class{c}")).collect::<Vec<_>>())
        }
        Some(h) => {
            let mut slot_names: Vec<String> = h
                .iter()
                .flat_map(|d| d.intents.iter().flat_map(|i| i.slots.iter().cloned()))
                .collect();
            slot_names.sort();
            slot_names.dedup();
            if slot_names.iter().any(|s| s == OTHER_SLOT) {
                return Err(Error::invalid("slot name `Other` is reserved"));
            }
            let slot_blocks: Vec<(String, Vec<u32>)> = slot_names
                .into_iter()
                .map(|s| {
                    let b = block(spec.signal_vocab);
                    (s, b)
                })
                .collect();
            let mut units = Vec::new();
            for (c, d) in h.iter().enumerate() {
                if d.intents.is_empty() {
                    return Err(Error::invalid(format!("domain {} has no intents", d.name)));
                }
                for it in &d.intents {
                    let slots = it
                        .slots
                        .iter()
                        .map(|s| slot_blocks.iter().find(|(n, _)| n == s).cloned().unwrap())
                        .collect();
                    units.push(Unit {
                        class: c,
                        domain: Some(d.name.clone()),
                        intent: Some(it.name.clone()),
                        signal: block(spec.signal_vocab),
                        slots,
                    });
                }
            }
            (units, h.iter().map(|d| d.name.clone()).collect())
        }
    };
    let first_filler = next;
    if (first_filler as usize) >= spec.vocab_size {
        return Err(Error::invalid(format!(
            "vocab_size {} leaves no filler words after {} reserved/indicative ids",
            spec.vocab_size, first_filler
        )));
    }
    let fillers: Vec<u32> = (first_filler..spec.vocab_size as u32).collect();

    // Per-unit example counts: classes by weight, units within a class evenly.
    let class_counts = apportion(spec.num_examples, &weights);
    let mut unit_counts = vec![0usize; units.len()];
    for (c, &n_c) in class_counts.iter().enumerate() {
        let members: Vec<usize> = (0..units.len()).filter(|&u| units[u].class == c).collect();
        for (u, n) in members.iter().zip(apportion(n_c, &vec![1.0; members.len()])) {
            unit_counts[*u] = n;
        }
    }

    let mut rng = seeded_rng(seed, 0x6e4e);
    let signal_pool: Vec<Vec<u32>> = units.iter().map(|u| u.signal.clone()).collect();
    let mut pool = Vec::new();
    let mut drafts: Vec<(usize, Draft, Origin)> = Vec::with_capacity(spec.num_examples);
    for (ui, unit) in units.iter().enumerate() {
        let n_u = unit_counts[ui];
        let n_red = ((spec.redundancy * n_u as f64).round() as usize).min(n_u);
        let pool_start = pool.len();
        let templates: Vec<Draft> = (0..spec.templates_per_class)
            .map(|_| draft(spec, unit, &fillers, None, &mut rng))
            .collect();
        pool.extend(templates.iter().map(|t| t.tokens.clone()));
        for r in 0..n_red {
            let t = r % templates.len();
            let copy = mutate(&templates[t], spec.mutation_rate, &fillers, &mut rng);
            drafts.push((ui, copy, Origin::Template { pool_index: pool_start + t }));
        }
        for _ in n_red..n_u {
            let distractor = if units.len() > 1 && rng.gen::<f64>() < spec.confusion {
                let mut other = rng.gen_range(0..units.len() - 1);
                if other >= ui {
                    other += 1;
                }
                Some(*signal_pool[other].choose(&mut rng).unwrap())
            } else {
                None
            };
            drafts.push((ui, draft(spec, unit, &fillers, distractor, &mut rng), Origin::Fresh));
        }
    }
    drafts.shuffle(&mut rng);

    let hierarchical = spec.is_hierarchical();
    let mut examples = Vec::with_capacity(drafts.len());
    let mut origins = Vec::with_capacity(drafts.len());
    for (id, (ui, d, origin)) in drafts.into_iter().enumerate() {
        let unit = &units[ui];
        examples.push(Example {
            id,
            tokens: d.tokens,
            label: unit.class,
            domain: unit.domain.clone(),
            intent: unit.intent.clone(),
            slots: hierarchical.then_some(d.slots),
        });
        origins.push(origin);
    }
    let provenance = Provenance {
        source: Source::Synthetic {
            spec: spec.clone(),
            seed,
        },
        operations: Vec::new(),
    };
    let dataset = Dataset::new(examples, k, spec.vocab_size, class_names, provenance)?;
    Ok((dataset, TemplateLog { origins, pool }))
}

fn draft(
    spec: &GeneratorSpec,
    unit: &Unit,
    fillers: &[u32],
    distractor: Option<u32>,
    rng: &mut ChaCha8Rng,
) -> Draft {
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    // (token, slot label, is_filler)
    let mut cells: Vec<(u32, String, bool)> = Vec::with_capacity(len + 4);
    for _ in 0..spec.signal_tokens {
        cells.push((*unit.signal.choose(rng).unwrap(), OTHER_SLOT.to_string(), false));
    }
    if let Some(t) = distractor {
        cells.push((t, OTHER_SLOT.to_string(), false));
    }
    let mut spans = Vec::new();
    for (name, values) in &unit.slots {
        let span_len = rng.gen_range(1..=2);
        spans.push(
            (0..span_len)
                .map(|_| (*values.choose(rng).unwrap(), name.clone(), false))
                .collect::<Vec<_>>(),
        );
    }
    let used = cells.len() + spans.iter().map(Vec::len).sum::<usize>();
    for _ in used..len {
        cells.push((*fillers.choose(rng).unwrap(), OTHER_SLOT.to_string(), true));
    }
    cells.shuffle(rng);
    // Slot spans stay contiguous.
    for span in spans {
        let at = rng.gen_range(0..=cells.len());
        cells.splice(at..at, span);
    }
    if spec.pair_segments && cells.len() >= 2 {
        let mid = cells.len() / 2;
        cells.insert(mid, (SEP, OTHER_SLOT.to_string(), false));
    }
    let filler_positions = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.2)
        .map(|(i, _)| i)
        .collect();
    let (tokens, slots): (Vec<u32>, Vec<String>) = cells.into_iter().map(|(t, s, _)| (t, s)).unzip();
    Draft {
        tokens,
        slots,
        filler_positions,
    }
}

fn mutate(template: &Draft, rate: f64, fillers: &[u32], rng: &mut ChaCha8Rng) -> Draft {
    let len = template.tokens.len();
    let budget = ((rate * len as f64).round() as usize)
        .min(len / 4)
        .min(template.filler_positions.len());
    let mut tokens = template.tokens.clone();
    for &p in template.filler_positions.choose_multiple(rng, budget) {
        tokens[p] = *fillers.choose(rng).unwrap();
    }
    Draft {
        tokens,
        slots: template.slots.clone(),
        filler_positions: template.filler_positions.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hierarchy() -> Vec<DomainSpec> {
        vec![
            DomainSpec {
                name: "Music".into(),
                intents: vec![
                    IntentSpec {
                        name: "PlayMusic".into(),
                        slots: vec!["ArtistName".into()],
                    },
                    IntentSpec {
                        name: "StopMusic".into(),
                        slots: vec![],
                    },
                ],
            },
            DomainSpec {
                name: "Weather".into(),
                intents: vec![IntentSpec {
                    name: "GetWeather".into(),
                    slots: vec!["City".into(), "Date".into()],
                }],
            },
        ]
    }

    #[test]
    fn exact_uniform_mixture() {
        let d = generate_synthetic(&GeneratorSpec::flat(3, 300, 500), 1).unwrap();
        assert_eq!(d.class_counts(), vec![100, 100, 100]);
        assert_eq!(d.len(), 300);
    }

    #[test]
    fn weighted_mixture_within_one() {
        let mut spec = GeneratorSpec::flat(3, 301, 500);
        spec.class_weights = Some(vec![0.5, 0.3, 0.2]);
        let d = generate_synthetic(&spec, 1).unwrap();
        for (got, w) in d.class_counts().iter().zip([0.5, 0.3, 0.2]) {
            assert!((*got as f64 - w * 301.0).abs() <= 1.0);
        }
    }

    #[test]
    fn deterministic() {
        let spec = GeneratorSpec::flat(3, 200, 500);
        let a = generate_synthetic(&spec, 9).unwrap().to_canonical_json();
        let b = generate_synthetic(&spec, 9).unwrap().to_canonical_json();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 10).unwrap().to_canonical_json();
        assert_ne!(a, c);
    }

    #[test]
    fn redundancy_yields_near_duplicates() {
        let mut spec = GeneratorSpec::flat(3, 1000, 2000);
        spec.redundancy = 0.5;
        let (d, log) = generate_synthetic_with_log(&spec, 4).unwrap();
        let dups = d
            .examples
            .iter()
            .zip(&log.origins)
            .filter(|(e, o)| match o {
                Origin::Template { pool_index } => is_near_duplicate(&e.tokens, &log.pool[*pool_index]),
                Origin::Fresh => false,
            })
            .count();
        assert!(dups >= 500, "{dups}");
    }

    #[test]
    fn errors() {
        assert!(generate_synthetic(&GeneratorSpec::flat(3, 2, 500), 1).is_err());
        let mut spec = GeneratorSpec::flat(3, 30, 500);
        spec.templates_per_class = 0;
        let e = generate_synthetic(&spec, 1).unwrap_err().to_string();
        assert!(e.contains("zero template pool"), "{e}");
        assert!(generate_synthetic(&GeneratorSpec::flat(3, 30, 40), 1).is_err());
    }

    #[test]
    fn hierarchical_mode_annotates() {
        let mut spec = GeneratorSpec::flat(0, 120, 600);
        spec.hierarchy = Some(hierarchy());
        spec.redundancy = 0.3;
        let d = generate_synthetic(&spec, 2).unwrap();
        assert_eq!(d.num_classes, 2);
        assert_eq!(d.class_names, vec!["Music", "Weather"]);
        for e in &d.examples {
            let slots = e.slots.as_ref().unwrap();
            assert_eq!(slots.len(), e.tokens.len());
            assert!(e.domain.is_some() && e.intent.is_some());
            if e.intent.as_deref() == Some("GetWeather") {
                assert!(slots.iter().any(|s| s == "City"));
            }
        }
        assert!(d.slot_names.contains(&"Other".to_string()));
    }

    #[test]
    fn pair_mode_inserts_separator() {
        let mut spec = GeneratorSpec::flat(3, 30, 500);
        spec.pair_segments = true;
        let d = generate_synthetic(&spec, 1).unwrap();
        assert!(d.examples.iter().all(|e| e.tokens.iter().filter(|&&t| t == SEP).count() == 1));
    }
}
