//! Text normalization into a reduced symbol alphabet, plus the
//! document-frequency word mask.
//!
//! Normalization runs, in order: NFKD decomposition, uppercase splitting
//! (marker + lowercase letter), equivalence-class merging, digit folding
//! to `7`, Latin folding to `s` for Greek text, whitespace collapsing,
//! and truncation of identical-token runs to five.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Emitted before the lowercase form of every uppercase letter.
///
/// A private-use codepoint, so it survives NFKD and never collides with
/// real text.
pub const UPPER: &str = "\u{E000}";
/// Replaces words whose document frequency is below the mask threshold.
pub const RARE_WORD: &str = "°";
pub const DIGIT: &str = "7";
pub const SPACE: &str = " ";
/// Representative token for the dash equivalence class.
pub const DASH: &str = "—";
/// Single stand-in for every Latin letter in Greek text.
pub const GREEK_LATIN: &str = "s";

const MAX_RUN: usize = 5;

/// A single equivalence class: every listed codepoint becomes `token`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub codepoints: Vec<char>,
    pub token: String,
}

/// Character merges applied after NFKD. Loaded from JSON of the form
/// `{"classes": [{"codepoints": ["–", "—"], "token": "—"}, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub classes: Vec<EquivalenceClass>,
}

impl Default for EquivalenceConfig {
    /// Dashes, curly quotes and the ellipsis. This list is a best guess at
    /// which rare punctuation is used interchangeably; it is not exhaustive.
    fn default() -> Self {
        let class = |cps: &[char], token: &str| EquivalenceClass {
            codepoints: cps.to_vec(),
            token: token.to_owned(),
        };
        EquivalenceConfig {
            classes: vec![
                class(&['\u{2012}', '\u{2013}', '\u{2014}', '\u{2015}', '\u{2212}'], DASH),
                class(&['\u{2018}', '\u{2019}', '\u{201A}', '\u{201B}', '\u{2032}', '`', '\u{00B4}'], "'"),
                class(&['\u{201C}', '\u{201D}', '\u{201E}', '\u{201F}', '\u{2033}', '\u{00AB}', '\u{00BB}'], "\""),
                // NFKD already expands U+2026; this catches text normalized elsewhere.
                class(&['\u{2026}'], "..."),
            ],
        }
    }
}

impl EquivalenceConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn lookup(&self) -> HashMap<char, &str> {
        let mut map = HashMap::new();
        for class in &self.classes {
            for &cp in &class.codepoints {
                map.insert(cp, class.token.as_str());
            }
        }
        map
    }
}

/// Whether the language tag selects Greek handling (Latin letters folded).
pub fn is_greek(language: &str) -> bool {
    matches!(language.to_ascii_lowercase().as_str(), "gr" | "el" | "greek")
}

/// A document as a token stream, before encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedText {
    pub tokens: Vec<String>,
    pub source_id: String,
}

impl NormalizedText {
    pub fn new(source_id: impl Into<String>, tokens: Vec<String>) -> Self {
        NormalizedText {
            tokens,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens concatenated back into a string.
    pub fn joined(&self) -> String {
        self.tokens.concat()
    }
}

/// Applies the normalization chain with a fixed equivalence config.
#[derive(Debug, Clone)]
pub struct Normalizer {
    greek: bool,
    merges: HashMap<char, String>,
}

impl Normalizer {
    pub fn new(language: &str, config: &EquivalenceConfig) -> Self {
        let merges = config
            .lookup()
            .into_iter()
            .map(|(k, v)| (k, v.to_owned()))
            .collect();
        Normalizer {
            greek: is_greek(language),
            merges,
        }
    }

    pub fn normalize(&self, source_id: &str, raw: &str) -> NormalizedText {
        let mut tokens: Vec<String> = Vec::with_capacity(raw.len());
        let push = |tok: String, tokens: &mut Vec<String>| {
            let is_space = tok == SPACE;
            if is_space && tokens.last().map(String::as_str) == Some(SPACE) {
                return;
            }
            tokens.push(tok);
        };

        for c in raw.nfkd() {
            if c.is_uppercase() {
                push(UPPER.to_owned(), &mut tokens);
                for lc in c.to_lowercase() {
                    push(self.map_char(lc), &mut tokens);
                }
            } else {
                push(self.map_char(c), &mut tokens);
            }
        }
        truncate_runs(&mut tokens);
        NormalizedText::new(source_id, tokens)
    }

    fn map_char(&self, c: char) -> String {
        if let Some(tok) = self.merges.get(&c) {
            return tok.clone();
        }
        if c.is_numeric() {
            return DIGIT.to_owned();
        }
        if self.greek && is_latin_letter(c) {
            return GREEK_LATIN.to_owned();
        }
        if c.is_whitespace() {
            return SPACE.to_owned();
        }
        c.to_string()
    }
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (c.is_alphabetic()
            && matches!(c as u32, 0x00C0..=0x024F | 0x1E00..=0x1EFF | 0x2C60..=0x2C7F | 0xA720..=0xA7FF))
}

/// Normalizes with the default equivalence classes.
pub fn normalize(raw: &str, language: &str) -> NormalizedText {
    Normalizer::new(language, &EquivalenceConfig::default()).normalize("", raw)
}

fn truncate_runs(tokens: &mut Vec<String>) {
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut run = 0usize;
    for tok in tokens.drain(..) {
        if out.last() == Some(&tok) {
            run += 1;
        } else {
            run = 1;
        }
        if run <= MAX_RUN {
            out.push(tok);
        }
    }
    *tokens = out;
}

/// The reduced symbol set; symbol ids are positions in `symbols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    language_tag: String,
    min_frequency: f64,
}

#[derive(Serialize, Deserialize)]
struct AlphabetFile {
    language_tag: String,
    min_frequency: f64,
    symbols: Vec<String>,
}

impl Serialize for Alphabet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AlphabetFile {
            language_tag: self.language_tag.clone(),
            min_frequency: self.min_frequency,
            symbols: self.symbols.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = AlphabetFile::deserialize(d)?;
        Alphabet::from_symbols(file.symbols, file.language_tag, file.min_frequency)
            .map_err(serde::de::Error::custom)
    }
}

impl Alphabet {
    pub fn from_symbols(
        symbols: Vec<String>,
        language_tag: impl Into<String>,
        min_frequency: f64,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate alphabet symbol {s:?}")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::EmptyAlphabet(min_frequency));
        }
        Ok(Alphabet {
            symbols,
            index,
            language_tag: language_tag.into(),
            min_frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn language_tag(&self) -> &str {
        &self.language_tag
    }

    pub fn min_frequency(&self) -> f64 {
        self.min_frequency
    }

    /// Appends `token` if it is not already present.
    pub fn with_token(mut self, token: &str) -> Self {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_owned(), self.symbols.len());
            self.symbols.push(token.to_owned());
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("alphabet serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the compact JSON form; identifies the alphabet in
    /// model headers and run manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("alphabet serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Keeps every token whose share of the concatenated corpus is at least
/// `min_frequency`. Order is descending frequency, ties by codepoint.
pub fn build_alphabet(
    corpus: &[NormalizedText],
    min_frequency: f64,
    language_tag: &str,
) -> Result<Alphabet> {
    if !(min_frequency > 0.0 && min_frequency < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "min_frequency must lie in (0, 1), got {min_frequency}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    for text in corpus {
        for tok in &text.tokens {
            *counts.entry(tok.as_str()).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n as f64 / total as f64 >= min_frequency)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if kept.is_empty() {
        return Err(Error::EmptyAlphabet(min_frequency));
    }
    Alphabet::from_symbols(
        kept.into_iter().map(|(t, _)| t.to_owned()).collect(),
        language_tag,
        min_frequency,
    )
}

/// A document as symbol ids, optionally in reverse reading order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDoc {
    pub doc_id: String,
    pub symbols: Vec<usize>,
    pub reversed: bool,
}

impl EncodedDoc {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Maps tokens to ids. Tokens outside the alphabet are dropped; there is
/// no unknown symbol.
pub fn encode(text: &NormalizedText, alphabet: &Alphabet, reversed: bool) -> EncodedDoc {
    let mut symbols: Vec<usize> = text.tokens.iter().filter_map(|t| alphabet.id(t)).collect();
    if reversed {
        symbols.reverse();
    }
    EncodedDoc {
        doc_id: text.source_id.clone(),
        symbols,
        reversed,
    }
}

fn is_letter_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.is_alphabetic() || is_combining_mark(c),
        _ => false,
    }
}

/// A word occurrence: token span `[start, end)` and its case-free key.
struct WordSpan {
    start: usize,
    end: usize,
    key: String,
}

/// Words are maximal runs of letter tokens; an uppercase marker belongs to
/// the letter after it. Digits and punctuation end a word.
fn word_spans(tokens: &[String]) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let starts_word = is_letter_token(&tokens[i])
            || (tokens[i] == UPPER && tokens.get(i + 1).is_some_and(|t| is_letter_token(t)));
        if !starts_word {
            i += 1;
            continue;
        }
        let start = i;
        let mut key = String::new();
        while i < tokens.len() {
            let tok = tokens[i].as_str();
            if is_letter_token(tok) {
                key.push_str(tok);
                i += 1;
            } else if tok == UPPER && tokens.get(i + 1).is_some_and(|t| is_letter_token(t)) {
                i += 1;
            } else {
                break;
            }
        }
        spans.push(WordSpan { start, end: i, key });
    }
    spans
}

/// Number of distinct documents containing each word.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DocFreqTable {
    pub counts: BTreeMap<String, usize>,
    pub n_docs: usize,
}

impl DocFreqTable {
    /// Fraction of documents containing `word`; 0 for unseen words.
    pub fn frequency(&self, word: &str) -> f64 {
        if self.n_docs == 0 {
            return 0.0;
        }
        self.counts.get(word).copied().unwrap_or(0) as f64 / self.n_docs as f64
    }
}

pub fn doc_frequency(documents: &[NormalizedText]) -> DocFreqTable {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in documents {
        let words: BTreeSet<String> = word_spans(&doc.tokens).into_iter().map(|w| w.key).collect();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
    }
    DocFreqTable {
        counts,
        n_docs: documents.len(),
    }
}

/// Replaces each word with document frequency below `threshold` by a
/// single [`RARE_WORD`] token.
pub fn mask_rare_words(
    text: &NormalizedText,
    table: &DocFreqTable,
    threshold: f64,
) -> Result<NormalizedText> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "document frequency threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut out = Vec::with_capacity(text.tokens.len());
    let mut pos = 0;
    for span in word_spans(&text.tokens) {
        out.extend_from_slice(&text.tokens[pos..span.start]);
        if table.frequency(&span.key) < threshold {
            out.push(RARE_WORD.to_owned());
        } else {
            out.extend_from_slice(&text.tokens[span.start..span.end]);
        }
        pos = span.end;
    }
    out.extend_from_slice(&text.tokens[pos..]);
    truncate_runs(&mut out);
    Ok(NormalizedText::new(text.source_id.clone(), out))
}
