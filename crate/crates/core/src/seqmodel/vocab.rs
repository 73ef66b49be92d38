use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token table: data symbols followed by four reserved ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const PAD: &str = "<pad>";
pub const UNDEFINED: &str = "<undef>";

impl Vocab {
    /// Builds a vocabulary from data symbols; the reserved tokens get the
    /// ids directly after them.
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut tokens: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Config("vocabulary needs at least one symbol".into()));
        }
        for (i, t) in tokens.iter().enumerate() {
            if [BOS, EOS, PAD, UNDEFINED].contains(&t.as_str()) || tokens[..i].contains(t) {
                return Err(Error::Config(format!("duplicate or reserved symbol `{t}`")));
            }
        }
        tokens.extend([BOS, EOS, PAD, UNDEFINED].map(String::from));
        Ok(Self { tokens })
    }

    /// `{"0", "1"}` plus reserved tokens.
    pub fn binary() -> Self {
        Self::new(["0", "1"]).expect("valid symbols")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_symbols(&self) -> usize {
        self.tokens.len() - 4
    }

    pub fn bos(&self) -> usize {
        self.tokens.len() - 4
    }

    pub fn eos(&self) -> usize {
        self.tokens.len() - 3
    }

    pub fn pad(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn undefined(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Parses a string of single-character symbols.
    pub fn encode_chars(&self, s: &str, max_len: usize) -> Result<Sequence> {
        let ids = s
            .chars()
            .map(|c| {
                self.id(&c.to_string())
                    .filter(|&i| i < self.n_symbols())
                    .ok_or_else(|| Error::Dataset(format!("symbol `{c}` not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Sequence::new(ids, self, max_len)
    }

    /// Renders ids; reserved tokens appear with their angle-bracket names.
    pub fn render(&self, seq: &[usize]) -> String {
        seq.iter().map(|&i| self.token(i)).collect()
    }
}

/// Token ids of one data sequence (no bos/eos).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sequence(Vec<usize>);

impl Sequence {
    /// Validated data sequence: only data symbols, at most `max_len` long.
    pub fn new(ids: Vec<usize>, vocab: &Vocab, max_len: usize) -> Result<Self> {
        if ids.len() > max_len {
            return Err(Error::Dataset(format!(
                "sequence of length {} exceeds the bound {max_len}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab.n_symbols()) {
            return Err(Error::Dataset(format!(
                "token id {bad} is reserved and cannot appear in data"
            )));
        }
        Ok(Self(ids))
    }

    /// Unchecked construction, used for decoder output which may end in the
    /// undefined token.
    pub fn from_ids(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for id in &self.0 {
            write!(f, "{id}")?;
        }
        Ok(())
    }
}
