use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const MAX_VOCAB: usize = 64;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const GRAMMAR_WORDS: [&str; 10] = ["no", "acute", "findings", ".", "left", "right", "bilateral", "lung", "shows", "heart"];

/// Bijection between report words and token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() > MAX_VOCAB {
            return Err(Error::Vocabulary(format!("{} tokens exceed the limit of {MAX_VOCAB}", tokens.len())));
        }
        for (id, name) in RESERVED.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*name) {
                return Err(Error::Vocabulary(format!("reserved id {id} must be `{name}`")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Reserved tokens, the template grammar, then every word of every class
    /// name in class order.
    pub fn for_classes(classes: &[String]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().chain(GRAMMAR_WORDS.iter()).map(|s| s.to_string()).collect();
        for class in classes {
            for word in class.split_whitespace() {
                let w = word.to_ascii_lowercase();
                if !tokens.contains(&w) {
                    tokens.push(w);
                }
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn require(&self, token: &str) -> Result<usize> {
        self.id(token)
            .ok_or_else(|| Error::Vocabulary(format!("token `{token}` missing from vocabulary")))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined words, skipping reserved ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > UNK)
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Token → id map as written to `vocab.json`.
    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
    }

    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![String::new(); map.len()];
        for (t, &i) in map {
            if i >= tokens.len() || !tokens[i].is_empty() {
                return Err(Error::Vocabulary(format!("token ids are not a permutation (`{t}` → {i})")));
            }
            tokens[i] = t.clone();
        }
        Self::from_tokens(tokens)
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, usize>::deserialize(d)?;
        Vocabulary::from_map(&map).map_err(serde::de::Error::custom)
    }
}
