use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::serialize::{marker_number, EOS, SOS};

pub const UNK: &str = "[UNK]";
pub const SOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;

/// Whitespace-token vocabulary. Specials take ids 0..3, corpus tokens follow
/// by descending frequency, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    markers: Vec<Option<usize>>,
}

impl Vocab {
    pub fn build<I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines = 0;
        for line in corpus {
            lines += 1;
            for tok in line.as_ref().split_whitespace() {
                if tok == SOS || tok == EOS || tok == UNK {
                    continue;
                }
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        if lines == 0 {
            return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [SOS, EOS, UNK]
            .into_iter()
            .map(String::from)
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let markers = tokens.iter().map(|t| marker_number(t)).collect();
        Self {
            tokens,
            index,
            markers,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Unknown tokens map to `[UNK]`.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.id_or_unk(t)).collect()
    }

    /// Strict variant: fails on the first out-of-vocabulary token.
    pub fn encode_strict(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::invalid(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn marker(&self, id: u32) -> Option<usize> {
        self.markers[id as usize]
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        if tokens.len() < 3 || tokens[0] != SOS || tokens[1] != EOS || tokens[2] != UNK {
            return Err(serde::de::Error::custom("vocabulary must start with [SOS] [EOS] [UNK]"));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_corpus() {
        let v = Vocab::build(["A B"]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(0), SOS);
        assert_eq!(v.token(3), "A");
        assert_eq!(v.token(4), "B");
        assert_eq!(v.id_or_unk("Z"), UNK_ID);
        assert!(v.encode_strict("A Z").is_err());
        assert!(Vocab::build(Vec::<String>::new()).is_err());
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(["b a", "c a"]).unwrap();
        assert_eq!(v.decode(&[3, 4, 5]), "a b c");
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
