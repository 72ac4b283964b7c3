//! Tokens, the tokenizer contract, and the default rule-based tokenizer.
//!
//! The default tokenizer lowercases its input, splits on whitespace, keeps
//! runs of alphanumeric characters together and emits every other
//! non-whitespace character as its own token. Surfaces map to ids through a
//! [`Vocabulary`]; anything outside it maps to [`UNK_ID`] but keeps its
//! surface, so `detokenize` followed by `tokenize` reproduces the id sequence.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Vocabulary index of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const UNK_ID: TokenId = TokenId(0);
pub const UNK_SURFACE: &str = "<unk>";

/// A token: vocabulary id plus the text fragment it was read from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
}

/// Tokenizer contract. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;

    fn detokenize(&self, tokens: &[Token]) -> String {
        let mut out = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&t.surface);
        }
        out
    }

    fn vocab_size(&self) -> usize;

    /// Surface of a known id.
    fn surface(&self, id: TokenId) -> Option<&str>;

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.tokenize(text).into_iter().map(|t| t.id).collect()
    }

    /// Renders ids back to text. Unknown ids render as [`UNK_SURFACE`], which
    /// does not survive re-tokenization; use [`Tokenizer::detokenize`] when
    /// the original surfaces are at hand.
    fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(*id).unwrap_or(UNK_SURFACE));
        }
        out
    }
}

/// Splits text into lowercase surfaces under the default rules.
pub fn split_surfaces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Surface ↔ id table. Id 0 is reserved for the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from surfaces in first-seen order. Duplicates and
    /// the unknown surface are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            words: vec![UNK_SURFACE.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(UNK_SURFACE.to_string(), UNK_ID);
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    /// Builds a vocabulary from every surface found in `texts`.
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self::default();
        for text in texts {
            for s in split_surfaces(text) {
                vocab.insert(s);
            }
        }
        vocab
    }

    fn insert(&mut self, word: String) -> TokenId {
        if let Some(id) = self.index.get(&word) {
            return *id;
        }
        let id = TokenId(self.words.len() as u32);
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.words.get(id.index()).map(String::as_str)
    }

    /// All ids except the unknown token.
    pub fn known_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (1..self.words.len() as u32).map(TokenId)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.words[1..].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        Ok(Vocabulary::from_words(words))
    }
}

/// The default deterministic tokenizer.
#[derive(Debug, Clone)]
pub struct RuleTokenizer {
    vocab: Arc<Vocabulary>,
}

impl RuleTokenizer {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        Self { vocab }
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }
}

impl Tokenizer for RuleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        split_surfaces(text)
            .into_iter()
            .map(|surface| Token {
                id: self.vocab.id(&surface).unwrap_or(UNK_ID),
                surface,
            })
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn surface(&self, id: TokenId) -> Option<&str> {
        self.vocab.surface(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tokenizer(texts: &[&str]) -> RuleTokenizer {
        RuleTokenizer::new(Arc::new(Vocabulary::build(texts.iter().copied())))
    }

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        assert_eq!(
            split_surfaces("Solve 2x+3=7."),
            vec!["solve", "2x", "+", "3", "=", "7", "."]
        );
        assert!(split_surfaces("").is_empty());
        assert!(split_surfaces("   \n\t").is_empty());
    }

    #[test]
    fn unknown_surfaces_keep_text() {
        let tok = tokenizer(&["hello world"]);
        let toks = tok.tokenize("hello there");
        assert_eq!(toks[0].id, tok.vocabulary().id("hello").unwrap());
        assert_eq!(toks[1].id, UNK_ID);
        assert_eq!(toks[1].surface, "there");
        assert_eq!(tok.detokenize(&toks), "hello there");
    }

    #[test]
    fn ids_are_in_range() {
        let tok = tokenizer(&["a b c. d, e"]);
        for t in tok.tokenize("a b z . ,") {
            assert!(t.id.index() < tok.vocab_size());
        }
    }

    #[test]
    fn vocabulary_serde_keeps_ids() {
        let v = Vocabulary::build(["x y z", "y w"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("w"), Some(TokenId(4)));
    }

    proptest! {
        #[test]
        fn detokenize_then_tokenize_is_stable(line in "[a-zA-Z0-9 +=.,;:()!?\\-]{0,80}") {
            let tok = tokenizer(&["the cat sat on 2x + 3 = 7 ."]);
            let first = tok.tokenize(&line);
            let again = tok.tokenize(&tok.detokenize(&first));
            prop_assert_eq!(first, again);
        }
    }
}
