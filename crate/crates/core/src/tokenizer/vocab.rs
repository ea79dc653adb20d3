use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION_PREFIX: &str = "##";

/// Ordered subword inventory. Index is the token id; the five special tokens
/// occupy ids 0-4. Continuation pieces carry the `##` prefix.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Tokenizer(format!(
                "vocabulary of {} tokens cannot hold the special tokens",
                tokens.len()
            )));
        }
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *expected {
                return Err(Error::Tokenizer(format!(
                    "special token {expected} missing at id {i} (found {})",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Tokenizer(format!("duplicate token {t}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| {
                Error::Tokenizer(format!("id {id} out of range for vocabulary of {}", self.size()))
            })
    }

    pub fn is_special(id: u32) -> bool {
        id < SPECIAL_TOKENS.len() as u32
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Vocab::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["a", "b", "##a", "##b", "ab"].map(str::to_string));
        Vocab::from_tokens(tokens).unwrap()
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = toy();
        assert_eq!(v.id_of("[PAD]"), Some(PAD_ID));
        assert_eq!(v.id_of("[MASK]"), Some(MASK_ID));
        assert_eq!(v.token(UNK_ID).unwrap(), "[UNK]");
    }

    #[test]
    fn missing_specials_rejected() {
        let tokens = vec!["a".to_string(), "b".to_string()];
        assert!(Vocab::from_tokens(tokens).is_err());
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.push("x".into());
        tokens.push("x".into());
        assert!(Vocab::from_tokens(tokens).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let v = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.write(&path).unwrap();
        let v2 = Vocab::read(&path).unwrap();
        assert_eq!(v.tokens(), v2.tokens());
    }

    #[test]
    fn out_of_range_id_errors() {
        let v = toy();
        assert!(v.token(999).is_err());
    }
}
