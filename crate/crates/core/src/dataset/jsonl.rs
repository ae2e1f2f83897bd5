use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::annotation::parse_annotation;
use super::{Dataset, Example, Provenance, Source, Tokenizer, SEP};
use crate::{Error, Result};

/// One line of the JSONL interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<i64>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Debug, Clone)]
pub struct JsonlOptions {
    pub vocab_size: usize,
    /// Fixed label inventory. When absent, labels are the sorted distinct
    /// label strings in the file.
    pub labels: Option<Vec<String>>,
}

impl Default for JsonlOptions {
    fn default() -> Self {
        JsonlOptions {
            vocab_size: 20_000,
            labels: None,
        }
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    load_jsonl_with(path, &JsonlOptions::default())
}

pub fn load_jsonl_with(path: impl AsRef<Path>, opts: &JsonlOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tokenizer = Tokenizer::new(opts.vocab_size)
        .ok_or_else(|| Error::invalid(format!("vocab size {} too small", opts.vocab_size)))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        records.push((i + 1, rec));
    }
    if records.is_empty() {
        return Err(parse_err(0, "no examples".to_string()));
    }

    let mut seen_ids = BTreeSet::new();
    for (line, rec) in &records {
        if let Some(id) = rec.id {
            if !seen_ids.insert(id) {
                return Err(parse_err(*line, format!("duplicate id {id}")));
            }
        }
    }

    let class_names = match &opts.labels {
        Some(l) => l.clone(),
        None => records
            .iter()
            .map(|(_, r)| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let label_index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut examples = Vec::with_capacity(records.len());
    for (id, (line, rec)) in records.iter().enumerate() {
        let label = *label_index.get(rec.label.as_str()).ok_or_else(|| {
            parse_err(
                *line,
                format!(
                    "unknown label {:?}; known labels: {}",
                    rec.label,
                    class_names.join(", ")
                ),
            )
        })?;
        let (tokens, slots) = match &rec.annotation {
            Some(ann) => {
                if rec.text_pair.is_some() {
                    return Err(parse_err(
                        *line,
                        "annotation is not supported together with text_pair".into(),
                    ));
                }
                let u = parse_annotation(ann).map_err(|e| parse_err(*line, e.to_string()))?;
                let words: Vec<&str> = rec.text.split_whitespace().collect();
                if words != u.tokens.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(parse_err(
                        *line,
                        "annotation tokens do not match text".into(),
                    ));
                }
                (tokenizer.encode(&rec.text), Some(u.slots))
            }
            None => {
                let toks = match &rec.text_pair {
                    Some(b) => tokenizer.encode_pair(&rec.text, b),
                    None => tokenizer.encode(&rec.text),
                };
                (toks, None)
            }
        };
        if tokens.is_empty() {
            return Err(parse_err(*line, "text has no tokens".into()));
        }
        examples.push(Example {
            id,
            tokens,
            label,
            domain: rec.domain.clone(),
            intent: rec.intent.clone(),
            slots,
        });
    }

    let provenance = Provenance {
        source: Source::Jsonl {
            path: path.display().to_string(),
            tokenizer: tokenizer.spec(),
        },
        operations: Vec::new(),
    };
    Dataset::new(
        examples,
        class_names.len(),
        opts.vocab_size,
        class_names,
        provenance,
    )
}

/// Writes `d` in the JSONL interchange format. Token ids are rendered as the
/// words `w<id>`; a SEP token splits `text` from `text_pair`.
pub fn write_jsonl(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in &d.examples {
        let word = |t: &u32| format!("w{t}");
        let (text, text_pair) = match e.tokens.iter().position(|&t| t == SEP) {
            Some(p) if e.slots.is_none() => (
                e.tokens[..p].iter().map(word).collect::<Vec<_>>().join(" "),
                Some(e.tokens[p + 1..].iter().map(word).collect::<Vec<_>>().join(" ")),
            ),
            _ => (e.tokens.iter().map(word).collect::<Vec<_>>().join(" "), None),
        };
        let annotation = e.slots.as_ref().map(|slots| {
            e.tokens
                .iter()
                .zip(slots)
                .map(|(t, s)| format!("w{t}|{s}"))
                .collect::<Vec<_>>()
                .join(" ")
        });
        let rec = JsonlRecord {
            id: Some(e.id as i64),
            text,
            text_pair,
            label: d.class_names[e.label].clone(),
            domain: e.domain.clone(),
            intent: e.intent.clone(),
            annotation,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
