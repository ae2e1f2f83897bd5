use serde::{Deserialize, Serialize};

use super::{FIRST_WORD_ID, SEP};

/// Recorded in provenance so a dataset can be re-tokenized identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: String,
    pub vocab_size: usize,
}

/// Whitespace tokenizer hashing each word into a fixed vocabulary with
/// 64-bit FNV-1a. Ids below [`FIRST_WORD_ID`] are reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tokenizer {
    pub const KIND: &'static str = "whitespace-fnv1a64";

    pub fn new(vocab_size: usize) -> Option<Self> {
        (vocab_size > FIRST_WORD_ID as usize).then_some(Tokenizer { vocab_size })
    }

    pub fn spec(&self) -> TokenizerSpec {
        TokenizerSpec {
            kind: Self::KIND.to_string(),
            vocab_size: self.vocab_size,
        }
    }

    pub fn word_id(&self, word: &str) -> u32 {
        let mut h = FNV_OFFSET;
        for b in word.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        let span = (self.vocab_size - FIRST_WORD_ID as usize) as u64;
        FIRST_WORD_ID + (h % span) as u32
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.word_id(w)).collect()
    }

    /// `[segment A, SEP, segment B]`.
    pub fn encode_pair(&self, a: &str, b: &str) -> Vec<u32> {
        let mut out = self.encode(a);
        out.push(SEP);
        out.extend(self.encode(b));
        out
    }
}
