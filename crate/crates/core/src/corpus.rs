//! Corpus records (JSON Lines) and the bundled synthetic training corpus.

use std::collections::BTreeSet;
use std::io::BufRead;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenId;
use crate::vocab::VocabModel;

/// One corpus record: either raw text or pre-tokenized ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub content: RecordContent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordContent {
    Text(String),
    Tokens(Vec<TokenId>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<TokenId>>,
}

impl CorpusRecord {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            content: RecordContent::Text(text.into()),
        }
    }

    pub fn tokens(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Self {
            id: id.into(),
            content: RecordContent::Tokens(tokens),
        }
    }

    pub fn parse(line: &str) -> Result<Self> {
        let raw: RawRecord = serde_json::from_str(line)?;
        let content = match (raw.text, raw.tokens) {
            (Some(t), None) => RecordContent::Text(t),
            (None, Some(t)) => RecordContent::Tokens(t),
            _ => {
                return Err(Error::Config(format!(
                    "record {:?} must have exactly one of `text` or `tokens`",
                    raw.id
                )))
            }
        };
        Ok(Self { id: raw.id, content })
    }

    pub fn to_json(&self) -> String {
        let raw = match &self.content {
            RecordContent::Text(t) => RawRecord {
                id: self.id.clone(),
                text: Some(t.clone()),
                tokens: None,
            },
            RecordContent::Tokens(t) => RawRecord {
                id: self.id.clone(),
                text: None,
                tokens: Some(t.clone()),
            },
        };
        serde_json::to_string(&raw).expect("record serializes")
    }

    /// Token ids, tokenizing text with `vocab` and range-checking ids.
    pub fn token_ids(&self, vocab: &VocabModel) -> Result<Vec<TokenId>> {
        match &self.content {
            RecordContent::Text(t) => vocab.encode_text(t),
            RecordContent::Tokens(t) => {
                crate::types::check_ids(t, vocab.size())?;
                Ok(t.clone())
            }
        }
    }
}

/// A JSONL line that failed to parse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Parses every non-blank line; bad lines become errors without stopping
/// the read. Line numbers are 1-based.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<std::result::Result<CorpusRecord, LineError>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(CorpusRecord::parse(&line).map_err(|e| LineError {
            line: i + 1,
            message: e.to_string(),
        }));
    }
    Ok(out)
}

pub const BUNDLED_SEED: u64 = 0x5EED_C0DE;
pub const BUNDLED_TOKENS: usize = 100_000;

/// The bundled training corpus: about 10^5 tokens of synthetic prose.
pub fn bundled_corpus() -> Vec<String> {
    synthetic_corpus(BUNDLED_SEED, BUNDLED_TOKENS)
}

/// Deterministic synthetic prose from a small phrase-structure grammar over
/// an invented lexicon with Zipfian word frequencies and per-document
/// topics. Returns documents totalling at least `target_tokens` tokens.
pub fn synthetic_corpus(seed: u64, target_tokens: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = Lexicon::new(&mut rng);
    let mut docs = Vec::new();
    let mut total = 0;
    while total < target_tokens {
        let topic = rng.gen_range(0..TOPICS);
        let sentences = rng.gen_range(6..=18);
        let mut words: Vec<&str> = Vec::new();
        for _ in 0..sentences {
            lex.sentence(&mut rng, topic, &mut words);
        }
        total += words.len();
        docs.push(words.join(" "));
    }
    docs
}

const TOPICS: usize = 16;

const DETERMINERS: &[&str] = &["the", "a", "this", "that", "every", "some", "our", "their", "its", "each"];
const PREPOSITIONS: &[&str] = &["in", "on", "with", "near", "under", "over", "for", "from", "into", "about"];
const CONJUNCTIONS: &[&str] = &["and", "but", "while", "because", "so"];
const AUXILIARIES: &[&str] = &["will", "can", "must", "might", "should", "did"];

struct Category {
    words: Vec<String>,
    zipf: WeightedIndex<f64>,
}

impl Category {
    fn new(words: Vec<String>) -> Self {
        let zipf = WeightedIndex::new((0..words.len()).map(|r| 1.0 / (r as f64 + 1.0).powf(1.05)))
            .expect("nonempty category");
        Self { words, zipf }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.words[self.zipf.sample(rng)]
    }

    /// Zipfian pick restricted to the words belonging to `topic`.
    fn pick_topical(&self, rng: &mut ChaCha8Rng, topic: usize) -> &str {
        let per_topic = self.words.len() / TOPICS;
        let rank = self.zipf.sample(rng) % per_topic.max(1);
        &self.words[(rank * TOPICS + topic) % self.words.len()]
    }
}

struct Lexicon {
    nouns: Category,
    verbs: Category,
    adjectives: Category,
    adverbs: Category,
    names: Category,
}

impl Lexicon {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut used: BTreeSet<String> = DETERMINERS
            .iter()
            .chain(PREPOSITIONS)
            .chain(CONJUNCTIONS)
            .chain(AUXILIARIES)
            .map(|s| s.to_string())
            .collect();
        let mut make = |n: usize, syllables: (usize, usize), suffix: &str, rng: &mut ChaCha8Rng| {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let w = format!("{}{suffix}", pseudo_word(rng, syllables));
                if used.insert(w.clone()) {
                    out.push(w);
                }
            }
            Category::new(out)
        };
        Self {
            nouns: make(720, (1, 3), "", rng),
            verbs: make(320, (1, 2), "s", rng),
            adjectives: make(240, (1, 3), "y", rng),
            adverbs: make(80, (2, 3), "ly", rng),
            names: make(96, (2, 3), "o", rng),
        }
    }

    fn noun_phrase<'a>(&'a self, rng: &mut ChaCha8Rng, topic: usize, out: &mut Vec<&'a str>) {
        if rng.gen_bool(0.12) {
            out.push(self.names.pick(rng));
            return;
        }
        out.push(DETERMINERS[rng.gen_range(0..DETERMINERS.len())]);
        let adjectives = [0, 0, 1, 1, 2][rng.gen_range(0..5)];
        for _ in 0..adjectives {
            out.push(self.adjectives.pick(rng));
        }
        if rng.gen_bool(0.6) {
            out.push(self.nouns.pick_topical(rng, topic));
        } else {
            out.push(self.nouns.pick(rng));
        }
    }

    fn verb_phrase<'a>(&'a self, rng: &mut ChaCha8Rng, topic: usize, out: &mut Vec<&'a str>) {
        if rng.gen_bool(0.15) {
            out.push(AUXILIARIES[rng.gen_range(0..AUXILIARIES.len())]);
        }
        out.push(self.verbs.pick(rng));
        match rng.gen_range(0..4) {
            0 => out.push(self.adverbs.pick(rng)),
            1 => self.prep_phrase(rng, topic, out),
            _ => self.noun_phrase(rng, topic, out),
        }
    }

    fn prep_phrase<'a>(&'a self, rng: &mut ChaCha8Rng, topic: usize, out: &mut Vec<&'a str>) {
        out.push(PREPOSITIONS[rng.gen_range(0..PREPOSITIONS.len())]);
        self.noun_phrase(rng, topic, out);
    }

    fn sentence<'a>(&'a self, rng: &mut ChaCha8Rng, topic: usize, out: &mut Vec<&'a str>) {
        match rng.gen_range(0..6) {
            0 => {
                self.prep_phrase(rng, topic, out);
                out.push(",");
                self.noun_phrase(rng, topic, out);
                self.verb_phrase(rng, topic, out);
            }
            1 => {
                self.noun_phrase(rng, topic, out);
                self.verb_phrase(rng, topic, out);
                out.push(CONJUNCTIONS[rng.gen_range(0..CONJUNCTIONS.len())]);
                self.noun_phrase(rng, topic, out);
                self.verb_phrase(rng, topic, out);
            }
            2 => {
                self.noun_phrase(rng, topic, out);
                self.verb_phrase(rng, topic, out);
                self.prep_phrase(rng, topic, out);
            }
            _ => {
                self.noun_phrase(rng, topic, out);
                self.verb_phrase(rng, topic, out);
            }
        }
        out.push(".");
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> String {
    const ONSETS: &[&str] = &[
        "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
        "br", "cr", "dr", "fl", "gr", "pl", "st", "tr", "sh", "ch", "th",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "io"];
    const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "t", "m", "nd", "st", "ck"];
    let syllables = rng.gen_range(lo..=hi);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
    }
    w
}
