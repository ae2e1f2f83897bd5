use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::annotation::trail_of;
use crate::dataset::Dataset;
use crate::scores::{NormMode, ScoreTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentEntropy {
    pub domain: String,
    pub intent: String,
    pub count: usize,
    pub distinct_trails: usize,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntropy {
    pub domain: String,
    pub count: usize,
    /// Entropy of the intent labels within the domain.
    pub intent_entropy_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailEntropyTable {
    pub intents: Vec<IntentEntropy>,
    pub domains: Vec<DomainEntropy>,
    /// Each example's intent entropy, by id.
    pub per_example: Vec<f64>,
}

/// Shannon entropy in bits of the empirical distribution given by `counts`.
pub fn entropy_bits<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Label-trail entropy per (domain, intent) and intent-label entropy per
/// domain. Trails are built from token ids and slot labels.
pub fn trail_entropy(d: &Dataset) -> Result<TrailEntropyTable> {
    let missing: Vec<usize> = d
        .examples
        .iter()
        .filter(|e| e.intent.is_none() || e.slots.is_none())
        .map(|e| e.id)
        .collect();
    if !missing.is_empty() {
        let shown: Vec<String> = missing.iter().take(20).map(usize::to_string).collect();
        return Err(Error::invalid(format!(
            "{} examples lack intent or slot annotations: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    let mut trails: BTreeMap<(String, String), BTreeMap<String, usize>> = BTreeMap::new();
    let mut intents: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for e in &d.examples {
        let domain = e.domain.clone().unwrap_or_default();
        let intent = e.intent.clone().unwrap();
        let values: Vec<String> = e.tokens.iter().map(u32::to_string).collect();
        let slots = e.slots.as_ref().unwrap();
        let trail = trail_of(values.iter().map(String::as_str), slots.iter().map(String::as_str));
        *trails
            .entry((domain.clone(), intent.clone()))
            .or_default()
            .entry(trail)
            .or_default() += 1;
        *intents.entry(domain).or_default().entry(intent).or_default() += 1;
    }
    let intent_rows: Vec<IntentEntropy> = trails
        .into_iter()
        .map(|((domain, intent), t)| IntentEntropy {
            domain,
            intent,
            count: t.values().sum(),
            distinct_trails: t.len(),
            entropy_bits: entropy_bits(t.into_values()),
        })
        .collect();
    let domains = intents
        .into_iter()
        .map(|(domain, c)| DomainEntropy {
            domain,
            count: c.values().sum(),
            intent_entropy_bits: entropy_bits(c.into_values()),
        })
        .collect();
    let lookup: BTreeMap<(&str, &str), f64> = intent_rows
        .iter()
        .map(|r| ((r.domain.as_str(), r.intent.as_str()), r.entropy_bits))
        .collect();
    let per_example = d
        .examples
        .iter()
        .map(|e| lookup[&(e.domain.as_deref().unwrap_or(""), e.intent.as_deref().unwrap())])
        .collect();
    Ok(TrailEntropyTable {
        intents: intent_rows,
        domains,
        per_example,
    })
}

/// Per-id mean of two sampling-weight tables, renormalized to sum to 1.
pub fn combine_scores(a: &ScoreTable, b: &ScoreTable) -> Result<ScoreTable> {
    if a.ids != b.ids {
        return Err(Error::invalid(format!(
            "cannot combine {} and {}: id sets differ",
            a.name, b.name
        )));
    }
    let mean: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (x + y) / 2.0).collect();
    let sum: f64 = mean.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::invalid("combined weights do not have a positive sum"));
    }
    let labels = vec![0; mean.len()];
    let mut t = ScoreTable::from_raw(
        &format!("{}+{}", a.name, b.name),
        mean.into_iter().map(|x| x / sum).collect(),
        &labels,
        NormMode::None,
    )?;
    t.ids = a.ids.clone();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::weight_table;

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy_bits([7]), 0.0);
        assert!((entropy_bits([3, 3, 3, 3]) - 2.0).abs() < 1e-12);
        assert!((entropy_bits([2, 1, 1]) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn combine_cases() {
        let a = weight_table("a", vec![0.5, 0.3, 0.2]).unwrap();
        let same = combine_scores(&a, &a).unwrap();
        for (x, y) in same.values().iter().zip(a.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let u = weight_table("u", vec![1.0 / 3.0; 3]).unwrap();
        let c = combine_scores(&u, &a).unwrap();
        let want = [(0.5 + 1.0 / 3.0) / 2.0, (0.3 + 1.0 / 3.0) / 2.0, (0.2 + 1.0 / 3.0) / 2.0];
        for (x, y) in c.values().iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((c.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let short = weight_table("s", vec![0.5, 0.5]).unwrap();
        assert!(combine_scores(&a, &short).is_err());
    }
}
