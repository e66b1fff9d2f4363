//! Token and character vocabularies with reserved `<pad>`/`<unk>` ids.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Bijective token↔id map over non-reserved entries; `<pad>` = 0, `<unk>` = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            id_to_token: vec!["<pad>".to_string(), "<unk>".to_string()],
            token_to_id: BTreeMap::new(),
        };
        v.rebuild_index();
        v
    }

    fn rebuild_index(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn from_tokens(id_to_token: Vec<String>) -> Self {
        let mut v = Vocab {
            id_to_token,
            token_to_id: BTreeMap::new(),
        };
        v.rebuild_index();
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    /// Lookup falling back to `<unk>` for unseen tokens.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

/// Character vocabulary; same reserved-id scheme as [`Vocab`].
pub type CharVocab = Vocab;

/// Builds word and char vocabularies from tokenized sentences.
pub fn build_vocabs<'a>(
    sentences: impl Iterator<Item = &'a [String]>,
    lowercase: bool,
) -> (Vocab, CharVocab) {
    let mut vocab = Vocab::new();
    let mut chars = CharVocab::new();
    for tokens in sentences {
        for tok in tokens {
            let tok = if lowercase { tok.to_lowercase() } else { tok.clone() };
            vocab.add(&tok);
            for c in tok.chars() {
                chars.add(&c.to_string());
            }
        }
    }
    (vocab, chars)
}
