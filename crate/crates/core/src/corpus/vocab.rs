use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer-coded word. Ids 0..3 are reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u32);

impl Token {
    pub const BOS: Token = Token(0);
    pub const EOS: Token = Token(1);
    pub const UNK: Token = Token(2);
    pub const NUM_RESERVED: usize = 3;

    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const BOS_WORD: &str = "<bos>";
pub const EOS_WORD: &str = "<eos>";
pub const UNK_WORD: &str = "<unk>";

/// Bijective word <-> id map with the three reserved tokens at fixed ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, Token>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [BOS_WORD, EOS_WORD, UNK_WORD] {
            v.insert(w);
        }
        v
    }

    /// Builds a vocabulary whose non-reserved words appear in the given order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    /// Returns the id of `word`, adding it if absent.
    pub fn insert(&mut self, word: &str) -> Token {
        if let Some(&t) = self.index.get(word) {
            return t;
        }
        let t = Token(self.words.len() as u32);
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), t);
        t
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<Token> {
        self.index.get(word).copied()
    }

    /// Out-of-vocabulary words map to UNK.
    pub fn encode_word(&self, word: &str) -> Token {
        self.get(word).unwrap_or(Token::UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<Token> {
        words.iter().map(|w| self.encode_word(w.as_ref())).collect()
    }

    pub fn word(&self, t: Token) -> Option<&str> {
        self.words.get(t.idx()).map(String::as_str)
    }

    pub fn decode(&self, tokens: &[Token]) -> Vec<String> {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or(UNK_WORD).to_string())
            .collect()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line in id order, reserved tokens included.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for w in &self.words {
            writeln!(f, "{w}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut words = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.is_empty() {
                words.push(line);
            }
        }
        let reserved = [BOS_WORD, EOS_WORD, UNK_WORD];
        if words.len() < 3 || words[..3] != reserved {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                field: "reserved tokens".into(),
            });
        }
        let v = Self::from_words(&words[3..]);
        if v.len() != words.len() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                field: "duplicate word".into(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::from_words(["a", "b"]);
        assert_eq!(v.get(BOS_WORD), Some(Token::BOS));
        assert_eq!(v.get(EOS_WORD), Some(Token::EOS));
        assert_eq!(v.get(UNK_WORD), Some(Token::UNK));
        assert_eq!(v.get("a"), Some(Token(3)));
        assert_eq!(v.encode_word("zzz"), Token::UNK);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::from_words(["dog", "cat", "red"]);
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    proptest! {
        #[test]
        fn encode_decode_identity(ids in proptest::collection::vec(0u32..8, 0..20)) {
            let v = Vocabulary::from_words(["a", "b", "c", "d", "e"]);
            let toks: Vec<Token> = ids.into_iter().map(Token).collect();
            prop_assert_eq!(v.encode(&v.decode(&toks)), toks);
        }
    }
}
