use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Label inventory. Blank is not a member; the start-of-sentence id is
/// `size()`, one past the last label, and is only ever used as context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Vocabulary of `size` labels named `t0`, `t1`, ...
    pub fn new(size: usize) -> Result<Self> {
        Self::with_names((0..size).map(|i| format!("t{i}")).collect())
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Vocab(
                "vocabulary must contain at least one label".into(),
            ));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token name {n:?}")));
            }
            if lookup.insert(n.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token name {n:?}")));
            }
        }
        Ok(Self { names, lookup })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn sos_id(&self) -> TokenId {
        self.names.len()
    }

    /// Rows in a context lookup table: every label plus SOS.
    pub fn context_rows(&self) -> usize {
        self.names.len() + 1
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.lookup.get(name).copied()
    }

    pub fn check(&self, token: TokenId) -> Result<()> {
        if token < self.size() {
            Ok(())
        } else {
            Err(Error::Vocab(format!(
                "token id {token} outside vocabulary of size {}",
                self.size()
            )))
        }
    }

    pub fn check_all(&self, tokens: &[TokenId]) -> Result<()> {
        tokens.iter().try_for_each(|&t| self.check(t))
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.name(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable fingerprint of the label inventory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..16])
    }
}

/// Two-label context `(y_{u-2}, y_{u-1})` for predicting the next label after
/// `history`, with SOS filling positions before the first label.
pub fn bigram_context(history: &[TokenId], sos: TokenId) -> [TokenId; 2] {
    let n = history.len();
    let prev = if n >= 1 { history[n - 1] } else { sos };
    let prev2 = if n >= 2 { history[n - 2] } else { sos };
    [prev2, prev]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_padding() {
        assert_eq!(bigram_context(&[], 9), [9, 9]);
        assert_eq!(bigram_context(&[4], 9), [9, 4]);
        assert_eq!(bigram_context(&[1, 2, 3], 9), [2, 3]);
    }

    #[test]
    fn names_validated() {
        assert!(Vocabulary::with_names(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::with_names(vec!["a b".into()]).is_err());
        assert!(Vocabulary::with_names(vec![]).is_err());
        let v = Vocabulary::new(4).unwrap();
        assert_eq!(v.sos_id(), 4);
        assert!(v.check(4).is_err());
        assert_eq!(v.id("t2"), Some(2));
        assert_ne!(v.hash(), Vocabulary::new(5).unwrap().hash());
    }
}
