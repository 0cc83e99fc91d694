//! Feature-based linear-chain CRF baseline.
//!
//! Each token fires a set of sparse string features drawn from its window
//! (identity, lowercased n-grams, word shape, affixes, gazetteer membership
//! and regex classes). Emission scores are summed per-label feature weights;
//! training and decoding share the chain layer with the neural tagger.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use regex::Regex;

use crate::chain_crf::{posterior_marginals, viterbi, TransitionMatrix};
use crate::corpus::{tokenize, Dataset, LabelSet, Token};
use crate::error::{Error, Result};
use crate::evaluation::{token_prf, EvalMode, Predictions};
use crate::format::{
    escape, label_lines, parse_value, push_f64s, read_entries, read_label_lines, split_header, PayloadReader,
};
use crate::numerics::{seeded_rng, Mat64};
use crate::synth_corpus::Lexicons;
use crate::training::EpochLog;

pub const BASELINE_MAGIC: &str = "DEID-CRF v1";
const FAMILY: &str = "DEID-CRF ";
pub const MAX_OFFSET: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    /// Exact token text.
    Identity,
    /// Lowercased tokens `o..o+n`.
    NGram(u8),
    /// `X`/`x`/`d` per character, other characters kept.
    Shape,
    /// Lowercased prefixes of lengths `1..=max`.
    Prefix(u8),
    Suffix(u8),
    Gazetteer,
    RegexClass,
}

impl TemplateKind {
    fn tag(self) -> String {
        match self {
            Self::Identity => "id".into(),
            Self::NGram(n) => format!("ng{n}"),
            Self::Shape => "shape".into(),
            Self::Prefix(n) => format!("pre{n}"),
            Self::Suffix(n) => format!("suf{n}"),
            Self::Gazetteer => "gaz".into(),
            Self::RegexClass => "re".into(),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::NGram(n) => write!(f, "ngram{n}"),
            Self::Shape => f.write_str("shape"),
            Self::Prefix(n) => write!(f, "prefix{n}"),
            Self::Suffix(n) => write!(f, "suffix{n}"),
            Self::Gazetteer => f.write_str("gazetteer"),
            Self::RegexClass => f.write_str("regex"),
        }
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown template kind `{s}`"));
        let num = |rest: &str, max: u8| -> Result<u8> {
            match rest.parse::<u8>() {
                Ok(n) if (1..=max).contains(&n) => Ok(n),
                _ => Err(bad()),
            }
        };
        Ok(match s {
            "identity" => Self::Identity,
            "shape" => Self::Shape,
            "gazetteer" => Self::Gazetteer,
            "regex" => Self::RegexClass,
            _ => {
                if let Some(r) = s.strip_prefix("ngram") {
                    Self::NGram(num(r, 3)?)
                } else if let Some(r) = s.strip_prefix("prefix") {
                    Self::Prefix(num(r, 4)?)
                } else if let Some(r) = s.strip_prefix("suffix") {
                    Self::Suffix(num(r, 4)?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// One feature kind applied at a set of window offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureTemplate {
    pub kind: TemplateKind,
    pub offsets: Vec<i32>,
}

impl FeatureTemplate {
    pub fn new(kind: TemplateKind, offsets: impl IntoIterator<Item = i32>) -> Result<Self> {
        let offsets: Vec<i32> = offsets.into_iter().collect();
        let span = match kind {
            TemplateKind::NGram(n) => i32::from(n) - 1,
            _ => 0,
        };
        if offsets.is_empty() {
            return Err(Error::InvalidArgument(format!("template `{kind}` has no offsets")));
        }
        if let Some(o) = offsets.iter().find(|&&o| o < -MAX_OFFSET || o + span > MAX_OFFSET) {
            return Err(Error::InvalidArgument(format!(
                "offset {o} of `{kind}` leaves the ±{MAX_OFFSET} window"
            )));
        }
        Ok(Self { kind, offsets })
    }
}

fn range(a: i32, b: i32) -> std::ops::RangeInclusive<i32> {
    a..=b
}

/// The built-in template set: the token and its two neighbours on each side.
pub fn default_templates() -> Vec<FeatureTemplate> {
    use TemplateKind::*;
    [
        (Identity, range(-2, 2)),
        (NGram(1), range(-2, 2)),
        (NGram(2), range(-2, 1)),
        (NGram(3), range(-2, 0)),
        (Shape, range(-2, 2)),
        (Prefix(4), range(0, 0)),
        (Suffix(4), range(-1, 1)),
        (Gazetteer, range(-1, 1)),
        (RegexClass, range(-1, 1)),
    ]
    .into_iter()
    .map(|(k, r)| FeatureTemplate::new(k, r).expect("built-in templates are valid"))
    .collect()
}

/// Parses `kind = offsets` lines; offsets are comma-separated integers or
/// `a..b` ranges. `#` starts a comment.
pub fn parse_templates(text: &str, source: &str) -> Result<Vec<FeatureTemplate>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: no + 1,
            message,
        };
        let (kind, offs) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `kind = offsets`, found `{line}`")))?;
        let kind: TemplateKind = kind.trim().parse().map_err(|e: Error| err(e.to_string()))?;
        let mut offsets = Vec::new();
        for part in offs.split(',').map(str::trim) {
            let parse = |s: &str| s.trim().parse::<i32>().map_err(|_| err(format!("bad offset `{s}`")));
            match part.split_once("..") {
                Some((a, b)) => offsets.extend(parse(a)?..=parse(b)?),
                None => offsets.push(parse(part)?),
            }
        }
        out.push(FeatureTemplate::new(kind, offsets).map_err(|e| err(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Empty("template configuration"));
    }
    Ok(out)
}

pub fn templates_to_text(templates: &[FeatureTemplate]) -> String {
    templates
        .iter()
        .map(|t| {
            let offs: Vec<String> = t.offsets.iter().map(i32::to_string).collect();
            format!("{} = {}\n", t.kind, offs.join(","))
        })
        .collect()
}

/// A named list of token sequences, matched case-insensitively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gazetteer {
    pub name: String,
    entries: BTreeSet<Vec<String>>,
    max_len: usize,
}

impl Gazetteer {
    pub fn new<S: AsRef<str>>(name: impl Into<String>, entries: impl IntoIterator<Item = S>) -> Self {
        let mut g = Self {
            name: name.into(),
            entries: BTreeSet::new(),
            max_len: 0,
        };
        for e in entries {
            g.insert(e.as_ref());
        }
        g
    }

    pub fn insert(&mut self, entry: &str) {
        let toks: Vec<String> = tokenize(entry).into_iter().map(|t| t.text.to_lowercase()).collect();
        if !toks.is_empty() {
            self.max_len = self.max_len.max(toks.len());
            self.entries.insert(toks);
        }
    }

    pub fn remove(&mut self, entry: &str) -> bool {
        let toks: Vec<String> = tokenize(entry).into_iter().map(|t| t.text.to_lowercase()).collect();
        self.entries.remove(&toks)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries as their space-joined tokens.
    pub fn entries(&self) -> impl Iterator<Item = String> + '_ {
        self.entries.iter().map(|e| e.join(" "))
    }

    /// One entry per line; the file stem names the gazetteer.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "gazetteer".into());
        Ok(Self::new(name, text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }

    /// Whether some entry occurrence covers token `q`.
    fn covers(&self, lower: &[String], q: usize) -> bool {
        let lo = (q + 1).saturating_sub(self.max_len);
        (lo..=q).any(|s| {
            (q + 1 - s..=self.max_len.min(lower.len() - s))
                .any(|len| self.entries.contains(&lower[s..s + len]))
        })
    }
}

/// Gazetteers built from the generator's word lists.
pub fn builtin_gazetteers() -> Vec<Gazetteer> {
    let lex = Lexicons::builtin();
    vec![
        Gazetteer::new("first_names", &lex.first_names),
        Gazetteer::new("last_names", &lex.last_names),
        Gazetteer::new("streets", &lex.streets),
        Gazetteer::new("cities", &lex.cities),
        Gazetteer::new("states", &lex.states),
        Gazetteer::new("countries", &lex.countries),
        Gazetteer::new("hospitals", &lex.hospitals),
        Gazetteer::new("employers", &lex.employers),
        Gazetteer::new("professions", &lex.professions),
    ]
}

/// `X` for upper case, `x` for lower case, `d` for digits; anything else is
/// kept.
pub fn word_shape(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                'd'
            } else {
                c
            }
        })
        .collect()
}

struct RegexClasses {
    year: Regex,
    date: Regex,
    phone: Regex,
    id: Regex,
    zip: Regex,
}

fn regex_classes() -> &'static RegexClasses {
    static CLASSES: OnceLock<RegexClasses> = OnceLock::new();
    CLASSES.get_or_init(|| RegexClasses {
        year: Regex::new(r"^(1[89]|2\d)\d\d$").unwrap(),
        date: Regex::new(
            r"(?i)^(\d{1,2}[/-]\d{1,2}([/-]\d{2,4})?|\d{4}-\d{1,2}-\d{1,2}|\d{1,2}-(jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*-\d{2,4})$",
        )
        .unwrap(),
        phone: Regex::new(r"^(\(\d{3}\)|\d{3}[-.])?\d{3}[-.]\d{4}$").unwrap(),
        id: Regex::new(r"^([A-Za-z]{1,3}-?\d{5,}|\d{3}-\d{2}-\d{4}|\d{6,}|[A-Za-z]{2}\d{3,}-[A-Za-z])$").unwrap(),
        zip: Regex::new(r"^\d{5}(-\d{4})?$").unwrap(),
    })
}

/// Regex classes of glued text (no whitespace inside). A four-digit year
/// is reported as `year-like` rather than `date`.
pub fn classify_glued(text: &str) -> Vec<&'static str> {
    let r = regex_classes();
    let mut out = Vec::new();
    if r.year.is_match(text) {
        out.push("year-like");
    } else if r.date.is_match(text) {
        out.push("date");
    }
    if r.phone.is_match(text) {
        out.push("phone");
    }
    if r.id.is_match(text) {
        out.push("id");
    }
    if r.zip.is_match(text) {
        out.push("zip");
    }
    out
}

/// Regex classes at token `q`: every run of whitespace-free adjacent tokens
/// that contains `q` and stays within two tokens of it.
fn regex_features(tokens: &[Token], q: usize) -> BTreeSet<&'static str> {
    let glued = |a: usize| tokens[a].end == tokens[a + 1].start;
    let mut lo = q;
    while lo > 0 && q - lo < 2 && glued(lo - 1) {
        lo -= 1;
    }
    let mut hi = q;
    while hi + 1 < tokens.len() && hi - q < 2 && glued(hi) {
        hi += 1;
    }
    let mut out = BTreeSet::new();
    for a in lo..=q {
        for b in q..=hi {
            let text: String = tokens[a..=b].iter().map(|t| t.text.as_str()).collect();
            out.extend(classify_glued(&text));
        }
    }
    out
}

fn prefix(text: &str, n: usize) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    (chars.len() >= n).then(|| chars[..n].iter().collect::<String>().to_lowercase())
}

fn suffix(text: &str, n: usize) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    (chars.len() >= n).then(|| chars[chars.len() - n..].iter().collect::<String>().to_lowercase())
}

/// The feature strings fired at position `i`.
///
/// ```
/// use deid::corpus::tokenize;
/// use deid::feature_crf::{default_templates, extract_features};
///
/// let f = extract_features(&tokenize("2087"), 0, &default_templates(), &[]);
/// assert!(f.contains("shape[0]=dddd"));
/// assert!(f.contains("re[0]=year-like"));
/// assert!(f.contains("id[-1]=BOS"));
/// ```
pub fn extract_features(
    tokens: &[Token],
    i: usize,
    templates: &[FeatureTemplate],
    gazetteers: &[Gazetteer],
) -> BTreeSet<String> {
    assert!(i < tokens.len(), "position {i} out of range");
    let n = tokens.len() as i64;
    let lower: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let slot = |o: i32| -> std::result::Result<usize, &'static str> {
        let q = i as i64 + i64::from(o);
        if q < 0 {
            Err("BOS")
        } else if q >= n {
            Err("EOS")
        } else {
            Ok(q as usize)
        }
    };
    let mut out = BTreeSet::new();
    for t in templates {
        let tag = t.kind.tag();
        for &o in &t.offsets {
            let name = |v: &str| format!("{tag}[{o}]={v}");
            let q = match slot(o) {
                Ok(q) => q,
                Err(marker) => {
                    out.insert(name(marker));
                    continue;
                }
            };
            let text = tokens[q].text.as_str();
            match t.kind {
                TemplateKind::Identity => {
                    out.insert(name(text));
                }
                TemplateKind::NGram(len) => {
                    let parts: Vec<&str> = (0..i32::from(len))
                        .map(|d| match slot(o + d) {
                            Ok(p) => lower[p].as_str(),
                            Err(marker) => marker,
                        })
                        .collect();
                    out.insert(name(&parts.join("|")));
                }
                TemplateKind::Shape => {
                    out.insert(name(&word_shape(text)));
                }
                TemplateKind::Prefix(max) => {
                    for k in 1..=usize::from(max) {
                        if let Some(p) = prefix(text, k) {
                            out.insert(format!("{tag}{k}[{o}]={p}"));
                        }
                    }
                }
                TemplateKind::Suffix(max) => {
                    for k in 1..=usize::from(max) {
                        if let Some(s) = suffix(text, k) {
                            out.insert(format!("{tag}{k}[{o}]={s}"));
                        }
                    }
                }
                TemplateKind::Gazetteer => {
                    for g in gazetteers.iter().filter(|g| g.covers(&lower, q)) {
                        out.insert(name(&g.name));
                    }
                }
                TemplateKind::RegexClass => {
                    for c in regex_features(tokens, q) {
                        out.insert(name(c));
                    }
                }
            }
        }
    }
    out
}

/// Training settings for the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub learning_rate: f64,
    /// L2 strength, applied as a proximal shrink `1 / (1 + lr·λ)` after
    /// every sequence.
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            l2: 1e-4,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!("L2 strength {}", self.l2)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max epochs must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting, with or without the `crf.` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidArgument(format!("bad value `{value}` for `{key}`"));
        match key.strip_prefix("crf.").unwrap_or(key) {
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad())?,
            "l2" => self.l2 = value.parse().map_err(|_| bad())?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad())?,
            "patience" => self.patience = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::InvalidArgument(format!("unknown baseline setting `{key}`"))),
        }
        Ok(())
    }

    fn lines(&self) -> Vec<(&'static str, String)> {
        vec![
            ("crf.learning_rate", self.learning_rate.to_string()),
            ("crf.l2", self.l2.to_string()),
            ("crf.max_epochs", self.max_epochs.to_string()),
            ("crf.patience", self.patience.to_string()),
            ("crf.seed", self.seed.to_string()),
        ]
    }
}

/// Per-feature label weights and the transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseWeights {
    features: Vec<String>,
    index: HashMap<String, usize>,
    /// `features × labels`.
    pub weights: Mat64,
    pub transitions: TransitionMatrix,
}

impl SparseWeights {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            features: Vec::new(),
            index: HashMap::new(),
            weights: Mat64::zeros(0, num_labels),
            transitions: TransitionMatrix(Mat64::zeros(num_labels, num_labels)),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.transitions.0.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.features
    }

    pub fn feature_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Id of `name`, adding a zero row when it is new.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.features.len();
        self.features.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.weights.push_zero_row();
        id
    }

    pub fn all_finite(&self) -> bool {
        self.weights.as_slice().iter().chain(self.transitions.0.as_slice()).all(|v| v.is_finite())
    }

    /// Summed weights of the known features at each position.
    pub fn emissions(&self, feature_ids: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let k = self.num_labels();
        feature_ids
            .iter()
            .map(|ids| {
                let mut e = vec![0.0; k];
                for &f in ids {
                    for (acc, w) in e.iter_mut().zip(self.weights.row(f)) {
                        *acc += w;
                    }
                }
                e
            })
            .collect()
    }
}

/// A trained baseline with everything needed to reproduce its features.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub templates: Vec<FeatureTemplate>,
    pub gazetteers: Vec<Gazetteer>,
    pub label_set: LabelSet,
    pub weights: SparseWeights,
    pub best_dev_f1: f64,
    pub epoch: usize,
}

fn sequence_features(tokens: &[Token], templates: &[FeatureTemplate], gazetteers: &[Gazetteer]) -> Vec<BTreeSet<String>> {
    (0..tokens.len()).map(|i| extract_features(tokens, i, templates, gazetteers)).collect()
}

impl BaselineModel {
    fn known_ids(&self, tokens: &[Token]) -> Vec<Vec<usize>> {
        sequence_features(tokens, &self.templates, &self.gazetteers)
            .into_iter()
            .map(|fs| fs.iter().filter_map(|f| self.weights.feature_id(f)).collect())
            .collect()
    }

    /// Viterbi labels for one token sequence.
    pub fn predict(&self, tokens: &[Token]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let em = self.weights.emissions(&self.known_ids(tokens));
        Ok(viterbi(&em, &self.weights.transitions)?.0)
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Predictions> {
        dataset.sequences.iter().map(|s| self.predict(&s.tokens)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = format!("{BASELINE_MAGIC}\n");
        for (k, v) in self.config.lines() {
            h += &format!("{k}\t{v}\n");
        }
        h += &format!("best_dev_f1\t{}\nepoch\t{}\n", self.best_dev_f1, self.epoch);
        h += &format!("templates\t{}\n", self.templates.len());
        for t in &self.templates {
            h += &format!("template\t{}", escape(templates_to_text(std::slice::from_ref(t)).trim_end()));
            h.push('\n');
        }
        h += &format!("gazetteers\t{}\n", self.gazetteers.len());
        for g in &self.gazetteers {
            h += &format!("gazetteer\t{}\n", escape(&g.name));
            h += &format!("entries\t{}\n", g.len());
            for e in g.entries() {
                h += &format!("entry\t{}\n", escape(&e));
            }
        }
        h += &label_lines(&self.label_set);
        h += &format!("features\t{}\n", self.weights.num_features());
        for f in self.weights.feature_names() {
            h += &format!("feature\t{}\n", escape(f));
        }
        let (f, k) = (self.weights.num_features(), self.weights.num_labels());
        h += &format!("array\tweights\t{f}\t{k}\narray\ttransitions\t{k}\t{k}\nend\n");
        let mut bytes = h.into_bytes();
        push_f64s(&mut bytes, self.weights.weights.as_slice());
        push_f64s(&mut bytes, self.weights.transitions.0.as_slice());
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let first = String::from_utf8_lossy(first);
        if first != BASELINE_MAGIC {
            return Err(match first.strip_prefix(FAMILY) {
                Some(v) => Error::Version(v.to_string()),
                None => Error::checkpoint("magic", format!("expected `{BASELINE_MAGIC}`")),
            });
        }
        let (header, payload) = split_header(bytes)?;
        let mut lines = header.lines().skip(1).peekable();
        let mut config = BaselineConfig::default();
        let mut best_dev_f1 = 0.0;
        let mut epoch = 0;
        let keys: Vec<&str> = config.lines().into_iter().map(|(k, _)| k).chain(["best_dev_f1", "epoch"]).collect();
        for key in keys {
            let s = "config";
            let line = lines.next().ok_or_else(|| Error::checkpoint(s, format!("missing `{key}`")))?;
            let v = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .ok_or_else(|| Error::checkpoint(s, format!("expected `{key}`, found `{line}`")))?;
            match key {
                "crf.learning_rate" => config.learning_rate = parse_value(v, key, s)?,
                "crf.l2" => config.l2 = parse_value(v, key, s)?,
                "crf.max_epochs" => config.max_epochs = parse_value(v, key, s)?,
                "crf.patience" => config.patience = parse_value(v, key, s)?,
                "crf.seed" => config.seed = parse_value(v, key, s)?,
                "best_dev_f1" => best_dev_f1 = parse_value(v, key, s)?,
                _ => epoch = parse_value(v, key, s)?,
            }
        }
        let templates = read_entries(&mut lines, "templates", "template")?
            .iter()
            .map(|t| parse_templates(t, "model file").map(|mut v| v.remove(0)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::checkpoint("templates", e.to_string()))?;
        let count: usize = match lines.next().and_then(|l| l.strip_prefix("gazetteers\t")) {
            Some(v) => parse_value(v, "gazetteers", "gazetteers")?,
            None => return Err(Error::checkpoint("gazetteers", "missing count")),
        };
        let mut gazetteers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = read_entries_single(&mut lines)?;
            let entries = read_entries(&mut lines, "entries", "entry")?;
            gazetteers.push(Gazetteer::new(name, entries));
        }
        let label_set = read_label_lines(&mut lines)?;
        let features = read_entries(&mut lines, "features", "feature")?;
        let k = label_set.len();
        let f = features.len();
        for (name, rows, cols) in [("weights", f, k), ("transitions", k, k)] {
            let expected = format!("array\t{name}\t{rows}\t{cols}");
            match lines.next() {
                Some(l) if l == expected => {}
                other => {
                    return Err(Error::checkpoint(
                        "arrays",
                        format!("expected `{expected}`, found `{}`", other.unwrap_or("end of header")),
                    ))
                }
            }
        }
        if let Some(extra) = lines.next() {
            return Err(Error::checkpoint("header", format!("unexpected line `{extra}`")));
        }
        let mut reader = PayloadReader::new(payload);
        let w = reader.take(f * k, "weights")?;
        let t = reader.take(k * k, "transitions")?;
        reader.finish()?;
        let mut index = HashMap::with_capacity(f);
        for (i, name) in features.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::checkpoint("features", format!("duplicate feature `{name}`")));
            }
        }
        Ok(Self {
            config,
            templates,
            gazetteers,
            label_set,
            weights: SparseWeights {
                features,
                index,
                weights: Mat64::from_vec(f, k, w)?,
                transitions: TransitionMatrix(Mat64::from_vec(k, k, t)?),
            },
            best_dev_f1,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn read_entries_single<'a>(lines: &mut std::iter::Peekable<impl Iterator<Item = &'a str>>) -> Result<String> {
    lines
        .next()
        .and_then(|l| l.strip_prefix("gazetteer\t"))
        .and_then(crate::format::unescape)
        .ok_or_else(|| Error::checkpoint("gazetteers", "expected a `gazetteer` line"))
}

/// Outcome of [`train_baseline`].
#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub log: Vec<EpochLog>,
}

/// SGD on the L2-regularized conditional log-likelihood, one sequence per
/// step, keeping the weights with the best dev binary-HIPAA F1.
pub fn train_baseline(
    train: &Dataset,
    dev: &Dataset,
    templates: &[FeatureTemplate],
    gazetteers: &[Gazetteer],
    config: &BaselineConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<BaselineOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if templates.is_empty() {
        return Err(Error::Empty("template list"));
    }
    let ls = &train.label_set;
    if ls.len() < 2 {
        return Err(Error::InvalidLabelSet("the label set needs a PHI label".into()));
    }
    if &dev.label_set != ls {
        return Err(Error::InvalidArgument("train and dev label sets differ".into()));
    }
    let k = ls.len();
    let mut weights = SparseWeights::zeros(k);
    let encoded: Vec<Vec<Vec<usize>>> = train
        .sequences
        .iter()
        .map(|s| {
            sequence_features(&s.tokens, templates, gazetteers)
                .into_iter()
                .map(|fs| fs.iter().map(|f| weights.intern(f)).collect())
                .collect()
        })
        .collect();

    let mut model = BaselineModel {
        config: config.clone(),
        templates: templates.to_vec(),
        gazetteers: gazetteers.to_vec(),
        label_set: ls.clone(),
        weights,
        best_dev_f1: f64::NEG_INFINITY,
        epoch: 0,
    };
    let mut rng = seeded_rng(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut best = model.weights.clone();
    let mut since_best = 0;
    let mut log = Vec::new();
    let lr = config.learning_rate;
    let shrink = 1.0 / (1.0 + lr * config.l2);
    // Feature weights are stored divided by `scale`.
    let mut scale = 1.0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &si in &order {
            let ids = &encoded[si];
            let gold = &train.sequences[si].labels;
            let w = &mut model.weights;
            let mut em = w.emissions(ids);
            em.iter_mut().flatten().for_each(|v| *v *= scale);
            let (log_z, marg) = posterior_marginals(&em, &w.transitions)?;
            let gold_score: f64 = gold.iter().enumerate().map(|(i, &l)| em[i][l]).sum::<f64>()
                + gold.windows(2).map(|p| w.transitions.0.row(p[0])[p[1]]).sum::<f64>();
            let loss = log_z - gold_score;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    note_id: train.sequences[si].note_id.clone(),
                    epoch,
                    loss,
                });
            }
            total += loss;
            scale *= shrink;
            for (i, fs) in ids.iter().enumerate() {
                let mut g = marg.unary[i].clone();
                g[gold[i]] -= 1.0;
                for &f in fs {
                    for (wv, gv) in w.weights.row_mut(f).iter_mut().zip(&g) {
                        *wv -= lr * gv / scale;
                    }
                }
            }
            let t = w.transitions.0.as_mut_slice();
            t.iter_mut().for_each(|v| *v *= shrink);
            for (i, pair) in marg.pairwise.iter().enumerate() {
                for (a, row) in pair.iter().enumerate() {
                    for (b, p) in row.iter().enumerate() {
                        t[a * k + b] -= lr * p;
                    }
                }
                t[gold[i] * k + gold[i + 1]] += lr;
            }
            if scale < 1e-6 {
                w.weights.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
                scale = 1.0;
            }
        }
        let mut snapshot = model.weights.clone();
        snapshot.weights.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        if !snapshot.all_finite() {
            return Err(Error::NonFinite("baseline weights".into()));
        }
        let current = BaselineModel {
            weights: snapshot,
            ..model.clone()
        };
        let (p, r, f1) = if dev.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let rep = token_prf(dev, &current.predict_dataset(dev)?, EvalMode::BinaryHipaa)?;
            (rep.precision, rep.recall, rep.f1)
        };
        if f1 > model.best_dev_f1 {
            model.best_dev_f1 = f1;
            model.epoch = epoch;
            best = current.weights;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / encoded.len() as f64,
            dev_precision: p,
            dev_recall: r,
            dev_f1: f1,
            best_dev_f1: model.best_dev_f1,
        };
        on_epoch(&entry);
        log.push(entry);
        if since_best >= config.patience && config.patience > 0 {
            break;
        }
    }
    model.weights = best;
    Ok(BaselineOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_crf::oracle::brute_force_best;
    use crate::corpus::{Category, LabeledSequence};
    use crate::numerics::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn words(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    #[test]
    fn single_token_window_is_all_boundary() {
        let t = default_templates();
        let f = extract_features(&words("Smith"), 0, &t, &[]);
        for tpl in &t {
            for &o in tpl.offsets.iter().filter(|&&o| o != 0) {
                let marker = if o < 0 { "BOS" } else { "EOS" };
                assert!(f.contains(&format!("{}[{o}]={marker}", tpl.kind.tag())), "{} {o}", tpl.kind);
            }
        }
        let non_boundary: Vec<&String> = f
            .iter()
            .filter(|s| !s.ends_with("=BOS") && !s.ends_with("=EOS"))
            .filter(|s| !s.contains("[0]="))
            .collect();
        assert!(non_boundary.is_empty(), "{non_boundary:?}");
    }

    #[test]
    fn year_shape_and_class() {
        let f = extract_features(&words("in 2087 ."), 1, &default_templates(), &[]);
        assert!(f.contains("shape[0]=dddd"));
        assert!(f.contains("re[0]=year-like"));
        assert!(!f.contains("re[0]=date"));
        assert_eq!(word_shape("McDonald's-2"), "XxXxxxxx'x-d");
    }

    #[test]
    fn glued_runs_find_dates_and_phones() {
        let toks = words("call 617-555-0134 on 02/20/2087");
        let has = |i: usize, c: &str| regex_features(&toks, i).contains(c);
        let phone = toks.iter().position(|t| t.text == "555").unwrap();
        assert!(has(phone, "phone"));
        let day = toks.iter().position(|t| t.text == "20").unwrap();
        assert!(has(day, "date"));
        assert!(!has(0, "phone"));
        assert_eq!(classify_glued("02139"), vec!["zip"]);
        assert!(classify_glued("123-45-6789").contains(&"id"));
    }

    #[test]
    fn gazetteer_membership_is_set_semantics() {
        let t = vec![FeatureTemplate::new(TemplateKind::Gazetteer, [0]).unwrap()];
        let toks = words("Dr. Smith saw Jane Doe");
        let mut g = Gazetteer::new("names", ["smith", "jane doe"]);
        let with = extract_features(&toks, 2, &t, std::slice::from_ref(&g));
        assert!(with.contains("gaz[0]=names"));
        assert!(extract_features(&toks, 5, &t, std::slice::from_ref(&g)).contains("gaz[0]=names"));
        assert!(!extract_features(&toks, 3, &t, std::slice::from_ref(&g)).contains("gaz[0]=names"));
        assert!(g.remove("SMITH"));
        let without = extract_features(&toks, 2, &t, std::slice::from_ref(&g));
        let diff: Vec<_> = with.symmetric_difference(&without).collect();
        assert_eq!(diff, vec!["gaz[0]=names"]);
    }

    #[test]
    fn template_file_round_trip() {
        let t = default_templates();
        assert_eq!(parse_templates(&templates_to_text(&t), "x").unwrap(), t);
        let parsed = parse_templates("# comment\nidentity = -1..1\nsuffix3 = 0, 2\n", "x").unwrap();
        assert_eq!(parsed[0].offsets, vec![-1, 0, 1]);
        assert_eq!(parsed[1].kind, TemplateKind::Suffix(3));
        assert!(parse_templates("identity = 5", "x").is_err());
        assert!(parse_templates("ngram3 = 3", "x").is_err());
        assert!(parse_templates("colour = 0", "x").is_err());
        assert!(parse_templates("", "x").is_err());
    }

    fn three_labels() -> LabelSet {
        LabelSet::new([("O", Category::O, false), ("PATIENT", Category::Name, true), ("DATE", Category::Date, true)]).unwrap()
    }

    /// Labels fixed by whether the token is capitalized.
    fn capital_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded_rng(seed);
        let pool = ["alpha", "Beta", "gamma", "Delta", "eps", "Zeta", "eta", "Theta"];
        let seqs = (0..n)
            .map(|i| {
                let len = rng.gen_range(3..8);
                let ws: Vec<&str> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
                let labels = ws.iter().map(|w| usize::from(w.starts_with(char::is_uppercase))).collect();
                LabeledSequence::from_words(format!("s{i}"), &ws, labels).unwrap()
            })
            .collect();
        Dataset::new(seqs, three_labels()).unwrap()
    }

    fn shape_only() -> Vec<FeatureTemplate> {
        vec![FeatureTemplate::new(TemplateKind::Shape, [0]).unwrap()]
    }

    #[test]
    fn single_feature_task_is_learned_exactly() {
        let d = capital_dataset(40, 1);
        let out = train_baseline(&d, &d, &shape_only(), &[], &BaselineConfig::default(), |_| {}).unwrap();
        assert_eq!(out.model.predict_dataset(&d).unwrap(), d.labels());
        let losses: Vec<f64> = out.log.iter().map(|l| l.train_loss).collect();
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn strong_regularization_shrinks_weights() {
        let d = capital_dataset(30, 2);
        let norm = |l2: f64| {
            let c = BaselineConfig { l2, max_epochs: 5, patience: 0, ..BaselineConfig::default() };
            let m = train_baseline(&d, &d, &shape_only(), &[], &c, |_| {}).unwrap().model;
            m.weights.weights.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let (weak, strong) = (norm(1e-3), norm(1e3));
        assert!(strong < 0.1 * weak, "{strong} vs {weak}");
    }

    #[test]
    fn zero_weights_pick_lowest_labels() {
        let m = BaselineModel {
            config: BaselineConfig::default(),
            templates: default_templates(),
            gazetteers: Vec::new(),
            label_set: three_labels(),
            weights: SparseWeights::zeros(3),
            best_dev_f1: 0.0,
            epoch: 0,
        };
        assert_eq!(m.predict(&words("a b c d")).unwrap(), vec![0; 4]);
    }

    #[test]
    fn decoding_matches_enumeration_and_ignores_unfired_features() {
        let d = capital_dataset(20, 3);
        let mut m = train_baseline(&d, &d, &default_templates(), &[], &BaselineConfig { max_epochs: 3, ..BaselineConfig::default() }, |_| {})
            .unwrap()
            .model;
        let mut rng = seeded_rng(9);
        m.weights.transitions.0.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let before: Vec<_> = d.sequences.iter().map(|s| m.predict(&s.tokens).unwrap()).collect();
        for s in &d.sequences {
            let em = m.weights.emissions(&m.known_ids(&s.tokens));
            let (best, _) = brute_force_best(&em, &m.weights.transitions).unwrap();
            assert_eq!(m.predict(&s.tokens).unwrap(), best);
        }
        let id = m.weights.intern("never[0]=fired");
        m.weights.weights.row_mut(id).fill(7.0);
        let after: Vec<_> = d.sequences.iter().map(|s| m.predict(&s.tokens).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn model_file_round_trip() {
        let d = capital_dataset(15, 4);
        let gaz = vec![Gazetteer::new("greek", ["alpha", "beta gamma"])];
        let m = train_baseline(&d, &d, &default_templates(), &gaz, &BaselineConfig { max_epochs: 2, ..BaselineConfig::default() }, |_| {})
            .unwrap()
            .model;
        let bytes = m.to_bytes();
        let back = BaselineModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(BaselineModel::from_bytes(b"DEID-CRF v9\n"), Err(Error::Version(_))));
        assert!(BaselineModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(BaselineModel::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let d = capital_dataset(15, 5);
        let run = || {
            train_baseline(&d, &d, &default_templates(), &[], &BaselineConfig { max_epochs: 3, ..BaselineConfig::default() }, |_| {})
                .unwrap()
                .model
                .to_bytes()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn extraction_is_position_local(
            ws in prop::collection::vec("[A-Za-z0-9]{1,5}|[-/.]", 2..14),
            j_seed in any::<usize>(),
            replacement in "[A-Za-z0-9]{1,5}|[-/]",
        ) {
            let text = ws.join(" ");
            let toks = tokenize(&text);
            prop_assume!(!toks.is_empty());
            let j = j_seed % toks.len();
            let mut edited = toks.clone();
            edited[j] = Token::new(replacement.as_str(), toks[j].start);
            let t = default_templates();
            let g = builtin_gazetteers();
            for i in 0..toks.len() {
                if i.abs_diff(j) > MAX_OFFSET as usize {
                    prop_assert_eq!(extract_features(&toks, i, &t, &g), extract_features(&edited, i, &t, &g));
                }
            }
        }
    }
}
