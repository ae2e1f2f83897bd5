use std::fmt;

use crate::{Error, Result};

/// Slot label for tokens outside any slot.
pub const OTHER_SLOT: &str = "Other";

/// A `token|SlotLabel` annotated utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedUtterance {
    pub tokens: Vec<String>,
    pub slots: Vec<String>,
    pub intent: Option<String>,
    pub domain: Option<String>,
}

/// Parses whitespace-separated `token|SlotLabel` pairs, splitting each pair on
/// its last `|` so tokens may themselves contain `|`.
pub fn parse_annotation(s: &str) -> Result<AnnotatedUtterance> {
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    for (i, pair) in s.split_whitespace().enumerate() {
        match pair.rsplit_once('|') {
            Some((tok, slot)) if !tok.is_empty() && !slot.is_empty() => {
                tokens.push(tok.to_string());
                slots.push(slot.to_string());
            }
            _ => {
                return Err(Error::invalid(format!(
                    "annotation token {} ({pair:?}) is not a token|SlotLabel pair",
                    i + 1
                )))
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::invalid("empty utterance"));
    }
    Ok(AnnotatedUtterance {
        tokens,
        slots,
        intent: None,
        domain: None,
    })
}

impl fmt::Display for AnnotatedUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (t, s)) in self.tokens.iter().zip(&self.slots).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}|{s}")?;
        }
        Ok(())
    }
}

/// Slot labels plus non-Other slot values: `Other` for Other tokens,
/// `value|SlotLabel` otherwise, space-joined.
pub fn label_trail(u: &AnnotatedUtterance) -> String {
    trail_of(u.tokens.iter().map(String::as_str), u.slots.iter().map(String::as_str))
}

pub(crate) fn trail_of<'a>(
    values: impl Iterator<Item = &'a str>,
    slots: impl Iterator<Item = &'a str>,
) -> String {
    let parts: Vec<String> = values
        .zip(slots)
        .map(|(v, s)| {
            if s == OTHER_SLOT {
                OTHER_SLOT.to_string()
            } else {
                format!("{v}|{s}")
            }
        })
        .collect();
    parts.join(" ")
}
