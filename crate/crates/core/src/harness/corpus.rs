//! Desk-scale synthetic corpus.
//!
//! Every record is about one topic and circles a small set of focus words.
//! Reasoning and answer are drawn from the same word distribution, so each
//! benign block repeats its own words and shares them with the answer. That
//! repetition is the signal the matching heads learn; injected tokens break it.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::record::ServiceRecord;
use crate::text::{TokenId, Vocabulary};

const FUNCTION_WORDS: &[&str] = &[
    "the",
    "of",
    "and",
    "to",
    "a",
    "in",
    "is",
    "that",
    "it",
    "for",
    "we",
    "this",
    "with",
    "as",
    "be",
    "on",
    "so",
    "if",
    "then",
    "by",
    "not",
    "are",
    "or",
    "but",
    "from",
    "at",
    "which",
    "can",
    "do",
    "let",
    "me",
    "check",
    "wait",
    "now",
    "first",
    "next",
    "since",
    "because",
    "therefore",
    "thus",
    "maybe",
    "should",
    "would",
    "also",
    "each",
    "all",
    "some",
    "other",
    "there",
    "when",
    "what",
    "how",
    "here",
    "again",
    "value",
    "case",
    "step",
    "think",
    "need",
    "get",
];

const SYMBOLS: &[&str] = &["=", "+", "-", "(", ")", ",", ".", ":", "?", "*", "/"];

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Fixed shape of the shared vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconShape {
    pub topics: usize,
    pub words_per_topic: usize,
    pub seed: u64,
}

impl Default for LexiconShape {
    fn default() -> Self {
        LexiconShape {
            topics: 48,
            words_per_topic: 200,
            seed: 0x1e81c0,
        }
    }
}

/// Function words, symbols and per-topic pseudo-words, with their ids.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub vocab: Arc<Vocabulary>,
    pub function: Vec<TokenId>,
    pub symbols: Vec<TokenId>,
    pub topics: Vec<Vec<TokenId>>,
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=4);
    let mut w = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

impl Lexicon {
    pub fn new(shape: LexiconShape) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(shape.seed);
        let mut taken: BTreeSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        let mut topic_words = Vec::with_capacity(shape.topics);
        for _ in 0..shape.topics {
            let mut words = Vec::with_capacity(shape.words_per_topic);
            while words.len() < shape.words_per_topic {
                let w = pseudo_word(&mut rng);
                if taken.insert(w.clone()) {
                    words.push(w);
                }
            }
            topic_words.push(words);
        }
        let all = FUNCTION_WORDS
            .iter()
            .chain(SYMBOLS)
            .map(|s| s.to_string())
            .chain(topic_words.iter().flatten().cloned());
        let vocab = Vocabulary::from_words(all);
        let ids = |words: &mut dyn Iterator<Item = &str>| -> Vec<TokenId> {
            let set: BTreeSet<TokenId> = words.map(|w| vocab.id(w).expect("inserted")).collect();
            set.into_iter().collect()
        };
        let function = ids(&mut FUNCTION_WORDS.iter().copied());
        let symbols = ids(&mut SYMBOLS.iter().copied());
        let topics = topic_words
            .iter()
            .map(|ws| ws.iter().map(|w| vocab.id(w).expect("inserted")).collect())
            .collect();
        Lexicon {
            vocab: Arc::new(vocab),
            function,
            symbols,
            topics,
        }
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::new(LexiconShape::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub records: usize,
    /// Reasoning length range, sampled log-uniformly.
    pub reasoning_len: [usize; 2],
    pub prompt_len: [usize; 2],
    pub answer_len: [usize; 2],
    /// Distinct focus words per record.
    pub focus_words: usize,
    pub lexicon: LexiconShape,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            records: 1000,
            reasoning_len: [512, 8192],
            prompt_len: [16, 64],
            answer_len: [48, 160],
            focus_words: 16,
            lexicon: LexiconShape::default(),
            seed: 42,
        }
    }
}

impl CorpusConfig {
    /// Lengths chosen so that the mean block count at β = 256 / 512 / 1024
    /// lands near 16.8 / 8.6 / 4.5.
    pub fn matched() -> Self {
        CorpusConfig {
            reasoning_len: [800, 12800],
            ..Self::default()
        }
    }

    pub fn with_records(mut self, records: usize) -> Self {
        self.records = records;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("reasoning", self.reasoning_len),
            ("prompt", self.prompt_len),
            ("answer", self.answer_len),
        ] {
            if lo == 0 || lo > hi {
                return Err(invalid(format!("{name} length range [{lo}, {hi}] is empty or zero")));
            }
        }
        if self.lexicon.topics < 2 || self.lexicon.words_per_topic < self.focus_words.max(1) {
            return Err(invalid(
                "the lexicon needs two topics and enough words for the focus set",
            ));
        }
        if self.focus_words < 4 {
            return Err(invalid("records need at least four focus words"));
        }
        Ok(())
    }
}

/// A generated corpus and the lexicon it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub records: Vec<ServiceRecord>,
    /// Topic of each record.
    pub topics: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.lexicon.vocab
    }

    /// Writes the vocabulary as a JSON array of surfaces.
    pub fn write_vocab(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self.lexicon.vocab.as_ref())?)?;
        Ok(())
    }
}

fn log_uniform<R: Rng>(range: [usize; 2], rng: &mut R) -> usize {
    let (lo, hi) = ((range[0] as f64).ln(), (range[1] as f64).ln());
    (rng.random_range(lo..=hi).exp().round() as usize).clamp(range[0], range[1])
}

struct Mix {
    function: f64,
    focus: f64,
    topic: f64,
}

/// Function words are drawn uniformly from a fixed core this large.
const CORE_FUNCTION_WORDS: usize = 12;

// Reasoning and answer draw from the same record distribution, so every
// benign block repeats the words its answer uses.
const REASONING_MIX: Mix = Mix {
    function: 0.35,
    focus: 0.65,
    topic: 0.0,
};
const ANSWER_MIX: Mix = Mix {
    function: 0.35,
    focus: 0.60,
    topic: 0.05,
};
const PROMPT_MIX: Mix = Mix {
    function: 0.40,
    focus: 0.30,
    topic: 0.30,
};

fn draw<R: Rng>(mix: &Mix, lex: &Lexicon, focus: &[TokenId], topic: &[TokenId], rng: &mut R) -> TokenId {
    let x: f64 = rng.random();
    let pool = if x < mix.function {
        &lex.function[..CORE_FUNCTION_WORDS.min(lex.function.len())]
    } else if x < mix.function + mix.focus {
        focus
    } else if x < mix.function + mix.focus + mix.topic {
        topic
    } else {
        &lex.symbols
    };
    *pool.choose(rng).expect("non-empty")
}

fn generate_record(cfg: &CorpusConfig, lex: &Lexicon, rng: &mut ChaCha8Rng) -> (ServiceRecord, usize) {
    let t = rng.random_range(0..lex.topics.len());
    let topic = &lex.topics[t];
    let focus: Vec<TokenId> = index::sample(rng, topic.len(), cfg.focus_words)
        .into_iter()
        .map(|i| topic[i])
        .collect();
    let sequence = |mix: &Mix, len: usize, rng: &mut ChaCha8Rng| -> Vec<TokenId> {
        (0..len).map(|_| draw(mix, lex, &focus, topic, rng)).collect()
    };
    let reasoning_len = log_uniform(cfg.reasoning_len, rng);
    let reasoning = sequence(&REASONING_MIX, reasoning_len, rng);
    let prompt_len = rng.random_range(cfg.prompt_len[0]..=cfg.prompt_len[1]);
    let prompt = sequence(&PROMPT_MIX, prompt_len, rng);
    let answer_len = rng.random_range(cfg.answer_len[0]..=cfg.answer_len[1]);
    let answer = sequence(&ANSWER_MIX, answer_len, rng);
    (ServiceRecord::benign(prompt, reasoning, answer), t)
}

/// Generates `cfg.records` benign records. Record `i` depends only on the
/// seed and `i`, so corpora of different sizes share prefixes.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let lexicon = Lexicon::new(cfg.lexicon);
    let mut records = Vec::with_capacity(cfg.records);
    let mut topics = Vec::with_capacity(cfg.records);
    for i in 0..cfg.records {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let (r, t) = generate_record(cfg, &lexicon, &mut rng);
        records.push(r);
        topics.push(t);
    }
    Ok(SyntheticCorpus {
        lexicon,
        records,
        topics,
    })
}
