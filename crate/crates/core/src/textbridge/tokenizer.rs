use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::surrogate::grammar_words;

pub const MAX_LEN: usize = 32;
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
/// Width of a decimal-numeral bucket in data units.
pub const NUMERAL_STEP: f64 = 0.25;
pub const NUMERAL_LIMIT: f64 = 16.0;
pub const COUNT_STEP: u32 = 10;
pub const COUNT_LIMIT: u32 = 600;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    /// Number of non-pad ids before truncation padding.
    pub len: usize,
}

/// Closed vocabulary: specials, grammar words, then numeral buckets.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

fn decimal_token(v: f64) -> String {
    let k = (v.clamp(-NUMERAL_LIMIT, NUMERAL_LIMIT) / NUMERAL_STEP).round() as i64;
    format!("<dec{k}>")
}

fn count_token(c: u64) -> String {
    let step = COUNT_STEP as u64;
    let b = ((c + step / 2) / step * step).min(COUNT_LIMIT as u64);
    format!("<cnt{b}>")
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<unk>".into()];
        tokens.extend(grammar_words().into_iter().map(String::from));
        let k = (NUMERAL_LIMIT / NUMERAL_STEP).round() as i64;
        tokens.extend((-k..=k).map(|i| format!("<dec{i}>")));
        tokens.extend((0..=COUNT_LIMIT).step_by(COUNT_STEP as usize).map(|c| format!("<cnt{c}>")));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Normalized word pieces before id lookup.
    pub fn pieces(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            let lower = raw.to_lowercase();
            let word = lower.trim_matches(|c: char| !c.is_alphanumeric() && c != '<' && c != '>' && c != '-');
            let word = word.trim_end_matches('-');
            if word.is_empty() {
                continue;
            }
            let token = if word.bytes().all(|b| b.is_ascii_digit()) {
                word.parse::<u64>().map(count_token).unwrap_or_else(|_| "<unk>".into())
            } else if let Ok(v) = word.parse::<f64>() {
                if v.is_finite() {
                    decimal_token(v)
                } else {
                    word.to_string()
                }
            } else {
                word.to_string()
            };
            out.push(token);
        }
        out
    }

    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let mut ids: Vec<u32> = Self::pieces(text).iter().map(|p| self.id(p)).take(MAX_LEN).collect();
        let len = ids.len();
        ids.resize(MAX_LEN, PAD);
        TokenizedText { ids, len }
    }

    pub fn unk_count(&self, text: &str) -> usize {
        Self::pieces(text).iter().filter(|p| self.id(p) == UNK).count()
    }
}
