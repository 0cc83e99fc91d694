//! Vocabularies, pretrained vector ingestion, the character-level token
//! encoder, and dropout.
//!
//! Token lookup is case-insensitive (keys are lowercased); the character
//! vocabulary keeps case. Index 0 of both vocabularies is the shared
//! unknown entry.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::{Mat64, Rng, Vec64};
use crate::recurrent::{bilstm_trace, BiLstmParams};

/// Uniform bound for randomly initialized embedding rows.
pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

/// Placeholder stored at index 0 of a [`TokenVocab`].
pub const UNK_TOKEN: &str = "<UNK>";

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Lowercased token → row index. Index 0 is the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self {
            tokens: vec![UNK_TOKEN.to_string()],
            index: HashMap::new(),
        }
    }
}

impl TokenVocab {
    /// Vocabulary over the lowercased forms of `tokens`, in first-seen order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Adds the lowercased form of `token` if absent and returns its index.
    pub fn insert(&mut self, token: &str) -> usize {
        let key = token.to_lowercase();
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.tokens.len();
        self.index.insert(key.clone(), i);
        self.tokens.push(key);
        i
    }

    /// Row for `token`, or 0 when unseen.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(&token.to_lowercase()).copied()
    }

    /// Number of rows, including the unknown entry.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Known entries in index order, without the unknown placeholder.
    pub fn entries(&self) -> &[String] {
        &self.tokens[1..]
    }
}

/// Character → row index. Index 0 is the unknown character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Default for CharVocab {
    fn default() -> Self {
        Self {
            chars: vec!['\u{fffd}'],
            index: HashMap::new(),
        }
    }
}

impl CharVocab {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for t in tokens {
            for c in t.chars() {
                v.insert(c);
            }
        }
        v
    }

    pub fn insert(&mut self, c: char) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        let i = self.chars.len();
        self.index.insert(c, i);
        self.chars.push(c);
        i
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }

    pub fn encode(&self, token: &str) -> Vec<usize> {
        token.chars().map(|c| self.lookup(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Known characters in index order, without the unknown placeholder.
    pub fn entries(&self) -> &[char] {
        &self.chars[1..]
    }
}

/// A vocabulary-by-dimension table of embedding rows.
pub type EmbeddingTable = Mat64;

/// Random table with entries in `±EMBEDDING_INIT_BOUND`.
pub fn random_table(rows: usize, dim: usize, rng: &mut Rng) -> EmbeddingTable {
    Mat64::uniform(rows, dim, EMBEDDING_INIT_BOUND, rng)
}

/// Parses `token v1 … vd` lines separated by single spaces.
///
/// Row 0 of the returned table is a random unknown-token row. Tokens are
/// lowercased; when two lines collide the first wins.
pub fn parse_pretrained(text: &str, expected_dim: usize, source: &str, rng: &mut Rng) -> Result<(TokenVocab, EmbeddingTable)> {
    let mut vocab = TokenVocab::default();
    let mut rows: Vec<Vec64> = vec![(0..expected_dim)
        .map(|_| rng.gen_range(-EMBEDDING_INIT_BOUND..=EMBEDDING_INIT_BOUND))
        .collect()];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec64, _>>()
            .map_err(|e| perr(format!("bad vector component: {e}")))?;
        if values.len() != expected_dim {
            return Err(perr(format!(
                "expected {expected_dim} components, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(perr("non-finite vector component".into()));
        }
        if vocab.get(token).is_some() {
            warn!("{source}:{}: duplicate token `{token}` ignored", n + 1);
            continue;
        }
        vocab.insert(token);
        rows.push(values);
    }
    Ok((vocab, Mat64::from_rows(&rows)?))
}

pub fn load_pretrained(path: &Path, expected_dim: usize, rng: &mut Rng) -> Result<(TokenVocab, EmbeddingTable)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pretrained(&text, expected_dim, &path.display().to_string(), rng)
}

/// Writes every known entry (not the unknown row) in the text vector format.
pub fn write_pretrained(vocab: &TokenVocab, table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (i, tok) in vocab.entries().iter().enumerate() {
        out.push_str(tok);
        for v in table.row(i + 1) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Character-based token embedding: the final forward and backward hidden
/// states of a character BiLSTM, concatenated.
pub fn encode_token_chars(token: &str, vocab: &CharVocab, table: &EmbeddingTable, params: &BiLstmParams) -> Result<Vec64> {
    if token.is_empty() {
        return Err(Error::Empty("token"));
    }
    let ids = vocab.encode(token);
    let xs: Vec<&[f64]> = ids.iter().map(|&c| table.row(c)).collect();
    Ok(bilstm_trace(&xs, params)?.summary())
}

/// Token lookup: vocabulary plus its table.
pub type TokenChannel<'a> = (&'a TokenVocab, &'a EmbeddingTable);
/// Character encoder: vocabulary, character table, and BiLSTM.
pub type CharChannel<'a> = (&'a CharVocab, &'a EmbeddingTable, &'a BiLstmParams);

/// Character-enhanced token embeddings `e_i = [token row; char encoding]`.
/// Either channel may be absent.
pub fn embed_sequence(tokens: &[&str], token: Option<TokenChannel<'_>>, chars: Option<CharChannel<'_>>) -> Result<Vec<Vec64>> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if token.is_none() && chars.is_none() {
        return Err(Error::InvalidArgument("at least one embedding channel is required".into()));
    }
    tokens
        .iter()
        .map(|t| {
            let mut e = Vec::new();
            if let Some((vocab, table)) = token {
                e.extend_from_slice(table.row(vocab.lookup(t)));
            }
            if let Some((vocab, table, params)) = chars {
                e.extend(encode_token_chars(t, vocab, table, params)?);
            }
            Ok(e)
        })
        .collect()
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Result<Vec64> {
    check_probability(p)?;
    if p == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect())
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability must be in [0, 1), got {p}")));
    }
    Ok(())
}

/// Inverted dropout. Inference mode is the identity.
pub fn dropout(e: &[f64], p: f64, mode: Mode, rng: &mut Rng) -> Result<Vec64> {
    check_probability(p)?;
    match mode {
        Mode::Infer => Ok(e.to_vec()),
        Mode::Train => {
            let mask = dropout_mask(e.len(), p, rng)?;
            Ok(e.iter().zip(&mask).map(|(x, m)| x * m).collect())
        }
    }
}
