//! Tokens, label inventories, and labeled-sequence I/O.
//!
//! Two on-disk forms are supported. The token file holds one
//! `token<TAB>label` pair per line with a blank line between sequences.
//! Lines starting with `#` are comments; the writer emits two structured
//! comments per sequence (`# note <id>` and `# offsets s:e s:e ...`) so a
//! round trip keeps note ids and source offsets. The stand-off form is a raw
//! note plus an annotation file of `start<TAB>end<TAB>label` byte spans.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// A token and its byte span `[start, end)` in the source note.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, start: usize) -> Self {
        let text = text.into();
        let end = start + text.len();
        Self { text, start, end }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Letter,
    Digit,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Punct
    }
}

/// Splits on whitespace, then isolates every punctuation character, then
/// cuts at letter/digit boundaries.
///
/// ```
/// let toks: Vec<String> = deid::corpus::tokenize("Results02/20/2087")
///     .into_iter()
///     .map(|t| t.text)
///     .collect();
/// assert_eq!(toks, ["Results", "02", "/", "20", "/", "2087"]);
/// ```
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut run: Option<(usize, CharClass)> = None;
    for (i, c) in text.char_indices() {
        let class = classify(c);
        if let Some((start, prev)) = run {
            if prev != class || class == CharClass::Punct {
                tokens.push(Token::new(&text[start..i], start));
                run = None;
            }
        }
        if class != CharClass::Space && run.is_none() {
            run = Some((i, class));
        }
    }
    if let Some((start, _)) = run {
        tokens.push(Token::new(&text[start..], start));
    }
    tokens
}

/// PHI categories, plus `O` for the non-PHI label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Age,
    Contact,
    Date,
    Id,
    Location,
    Name,
    Profession,
    O,
}

impl Category {
    pub const PHI: [Category; 7] = [
        Category::Age,
        Category::Contact,
        Category::Date,
        Category::Id,
        Category::Location,
        Category::Name,
        Category::Profession,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Age => "AGE",
            Category::Contact => "CONTACT",
            Category::Date => "DATE",
            Category::Id => "ID",
            Category::Location => "LOCATION",
            Category::Name => "NAME",
            Category::Profession => "PROFESSION",
            Category::O => "O",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "AGE" => Category::Age,
            "CONTACT" => Category::Contact,
            "DATE" => Category::Date,
            "ID" => Category::Id,
            "LOCATION" => Category::Location,
            "NAME" => Category::Name,
            "PROFESSION" => Category::Profession,
            "O" => Category::O,
            other => return Err(Error::InvalidLabelSet(format!("unknown category `{other}`"))),
        })
    }
}

/// Name of the single non-PHI label.
pub const OUTSIDE: &str = "O";

/// Ordered label inventory. Index 0 is always the non-PHI label `O`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    hipaa: Vec<bool>,
    categories: Vec<Category>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    /// Builds a label set from `(name, category, is_hipaa)` entries.
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Category, bool)>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut hipaa = Vec::new();
        let mut categories = Vec::new();
        let mut index = HashMap::new();
        for (name, cat, h) in entries {
            let name = name.into();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::InvalidLabelSet(format!("bad label name `{name}`")));
            }
            if index.insert(name.clone(), labels.len()).is_some() {
                return Err(Error::InvalidLabelSet(format!("duplicate label `{name}`")));
            }
            let is_outside = name == OUTSIDE;
            if is_outside != (cat == Category::O) {
                return Err(Error::InvalidLabelSet(format!(
                    "label `{name}` has category {cat}; only `O` may (and must) use category O"
                )));
            }
            if is_outside && h {
                return Err(Error::InvalidLabelSet("`O` cannot be a HIPAA type".into()));
            }
            labels.push(name);
            hipaa.push(h);
            categories.push(cat);
        }
        if labels.first().map(String::as_str) != Some(OUTSIDE) {
            return Err(Error::InvalidLabelSet("the first label must be `O`".into()));
        }
        Ok(Self {
            labels,
            hipaa,
            categories,
            index,
        })
    }

    /// PHI types of the i2b2 column of the HIPAA/i2b2/MIMIC taxonomy, minus
    /// the two types that occur in neither dataset (URLs/IPs and biometric
    /// identifiers).
    pub fn i2b2() -> Self {
        use Category::*;
        Self::new([
            (OUTSIDE, O, false),
            ("AGE_90_PLUS", Age, true),
            ("AGE", Age, false),
            ("PHONE", Contact, true),
            ("EMAIL", Contact, true),
            ("DATE", Date, true),
            ("YEAR", Date, false),
            ("HOLIDAY", Date, false),
            ("DAY_OF_WEEK", Date, false),
            ("SSN", Id, true),
            ("MEDICAL_RECORD", Id, true),
            ("ACCOUNT", Id, true),
            ("LICENSE", Id, true),
            ("DEVICE", Id, true),
            ("ADDRESS", Location, true),
            ("STATE", Location, false),
            ("COUNTRY", Location, false),
            ("EMPLOYER", Location, true),
            ("HOSPITAL", Location, false),
            ("PATIENT", Name, true),
            ("PROVIDER", Name, false),
            ("PROFESSION", Profession, false),
        ])
        .expect("built-in label set is valid")
    }

    /// Parses `label<TAB>category<TAB>hipaa` lines (`hipaa` is `0`/`1`).
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let perr = |message: String| Error::Parse {
                path: source.to_string(),
                line: n + 1,
                message,
            };
            if cols.len() != 3 {
                return Err(perr(format!("expected 3 columns, found {}", cols.len())));
            }
            let cat = cols[1].parse::<Category>().map_err(|e| perr(e.to_string()))?;
            let h = match cols[2] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(perr(format!("bad HIPAA flag `{other}`"))),
            };
            entries.push((cols[0].to_string(), cat, h));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Inverse of [`LabelSet::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.labels[i],
                self.categories[i],
                u8::from(self.hipaa[i])
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn is_hipaa(&self, idx: usize) -> bool {
        self.hipaa[idx]
    }

    /// True for every label except `O`.
    pub fn is_phi(&self, idx: usize) -> bool {
        idx != 0
    }

    pub fn category(&self, idx: usize) -> Category {
        self.categories[idx]
    }

    pub fn outside(&self) -> usize {
        0
    }
}

/// Tokens of one note with one label index per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSequence {
    pub note_id: String,
    pub tokens: Vec<Token>,
    pub labels: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(note_id: impl Into<String>, tokens: Vec<Token>, labels: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("a labeled sequence needs at least one token"));
        }
        if tokens.len() != labels.len() {
            return Err(Error::Misaligned(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        let mut prev_end = 0;
        for (i, t) in tokens.iter().enumerate() {
            if t.start >= t.end || t.end - t.start != t.text.len() {
                return Err(Error::InvalidArgument(format!(
                    "token {i} `{}` has inconsistent offsets {}..{}",
                    t.text, t.start, t.end
                )));
            }
            if i > 0 && t.start < prev_end {
                return Err(Error::InvalidArgument(format!("token {i} overlaps its predecessor")));
            }
            prev_end = t.end;
        }
        Ok(Self {
            note_id: note_id.into(),
            tokens,
            labels,
        })
    }

    /// Builds a sequence from bare token strings laid out with single spaces.
    pub fn from_words<S: AsRef<str>>(note_id: impl Into<String>, words: &[S], labels: Vec<usize>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(words.len());
        let mut pos = 0;
        for w in words {
            let t = Token::new(w.as_ref(), pos);
            pos = t.end + 1;
            tokens.push(t);
        }
        Self::new(note_id, tokens, labels)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }
}

/// A collection of sequences sharing one label set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub sequences: Vec<LabeledSequence>,
    pub label_set: LabelSet,
}

impl Dataset {
    pub fn new(sequences: Vec<LabeledSequence>, label_set: LabelSet) -> Result<Self> {
        let k = label_set.len();
        for s in &sequences {
            if let Some(&bad) = s.labels.iter().find(|&&l| l >= k) {
                return Err(Error::InvalidArgument(format!(
                    "sequence `{}` has label index {bad} outside a label set of {k}",
                    s.note_id
                )));
            }
        }
        Ok(Self {
            sequences,
            label_set,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(LabeledSequence::len).sum()
    }

    /// All label assignments, in sequence order.
    pub fn labels(&self) -> Vec<Vec<usize>> {
        self.sequences.iter().map(|s| s.labels.clone()).collect()
    }

    /// Same tokens with the label assignments replaced.
    pub fn with_labels(&self, labels: Vec<Vec<usize>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Misaligned(format!(
                "{} label rows for {} sequences",
                labels.len(),
                self.len()
            )));
        }
        let sequences = self
            .sequences
            .iter()
            .zip(labels)
            .map(|(s, l)| LabeledSequence::new(s.note_id.clone(), s.tokens.clone(), l))
            .collect::<Result<_>>()?;
        Self::new(sequences, self.label_set.clone())
    }

    /// Concatenation of two datasets over the same label set.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.label_set != other.label_set {
            return Err(Error::InvalidArgument("datasets use different label sets".into()));
        }
        let mut sequences = self.sequences.clone();
        sequences.extend(other.sequences.iter().cloned());
        Self::new(sequences, self.label_set.clone())
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            label_set: self.label_set.clone(),
        }
    }
}

/// A labeled byte span of a raw note.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl Span {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }
}

/// Tokenizes `text` and labels every token that intersects an annotated span.
///
/// A token touching two spans takes the label of the one that starts first;
/// a token only partly covered still takes the span's label.
pub fn standoff_to_sequence(
    note_id: &str,
    text: &str,
    spans: &[Span],
    label_set: &LabelSet,
) -> Result<LabeledSequence> {
    let mut resolved = Vec::with_capacity(spans.len());
    for s in spans {
        if s.start >= s.end || s.end > text.len() {
            return Err(Error::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len: text.len(),
            });
        }
        resolved.push((s.start, s.end, label_set.index_of(&s.label)?));
    }
    resolved.sort_by_key(|&(s, e, _)| (s, e));
    for w in resolved.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::SpanConflict {
                first_start: w[0].0,
                first_end: w[0].1,
                second_start: w[1].0,
                second_end: w[1].1,
            });
        }
    }
    let tokens = tokenize(text);
    let mut labels = Vec::with_capacity(tokens.len());
    // spans are sorted and disjoint, so a single cursor suffices
    let mut cursor = 0;
    for t in &tokens {
        while cursor < resolved.len() && resolved[cursor].1 <= t.start {
            cursor += 1;
        }
        let label = match resolved.get(cursor) {
            Some(&(s, _, l)) if s < t.end => l,
            _ => label_set.outside(),
        };
        labels.push(label);
    }
    LabeledSequence::new(note_id, tokens, labels)
}

/// Parses an annotation file of `start<TAB>end<TAB>label` lines.
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(perr(format!("expected 3 columns, found {}", cols.len())));
        }
        let start = cols[0].parse().map_err(|e| perr(format!("bad start offset: {e}")))?;
        let end = cols[1].parse().map_err(|e| perr(format!("bad end offset: {e}")))?;
        spans.push(Span::new(start, end, cols[2]));
    }
    Ok(spans)
}

/// Reads a raw note and its annotation file. The note id is the text file's stem.
pub fn read_standoff(text_path: &Path, ann_path: &Path, label_set: &LabelSet) -> Result<LabeledSequence> {
    let text = fs::read_to_string(text_path).map_err(|e| Error::io(text_path, e))?;
    let ann = fs::read_to_string(ann_path).map_err(|e| Error::io(ann_path, e))?;
    let spans = parse_annotations(&ann, &ann_path.display().to_string())?;
    let id = text_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    standoff_to_sequence(&id, &text, &spans, label_set)
}

fn format_offsets(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| format!("{}:{}", t.start, t.end))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serializes a dataset in the token-per-line format.
pub fn write_token_string(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for seq in &dataset.sequences {
        if seq.note_id.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!("note id `{}` spans lines", seq.note_id)));
        }
        out.push_str("# note ");
        out.push_str(&seq.note_id);
        out.push('\n');
        out.push_str("# offsets ");
        out.push_str(&format_offsets(&seq.tokens));
        out.push('\n');
        for (t, &l) in seq.tokens.iter().zip(&seq.labels) {
            if t.text.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!("token `{}` contains a separator", t.text)));
            }
            out.push_str(&t.text);
            out.push('\t');
            out.push_str(dataset.label_set.name(l));
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_token_file(dataset: &Dataset, path: &Path) -> Result<()> {
    let s = write_token_string(dataset)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses the token-per-line format. `source` names the input in errors.
pub fn read_token_str(text: &str, label_set: &LabelSet, source: &str) -> Result<Dataset> {
    struct Pending {
        note: Option<String>,
        offsets: Option<(usize, Vec<(usize, usize)>)>,
        words: Vec<String>,
        labels: Vec<usize>,
    }
    let empty = || Pending {
        note: None,
        offsets: None,
        words: Vec::new(),
        labels: Vec::new(),
    };
    let perr = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut sequences = Vec::new();
    let mut cur = empty();
    let finish = |cur: Pending, sequences: &mut Vec<LabeledSequence>, line: usize| -> Result<()> {
        if cur.words.is_empty() {
            return Ok(());
        }
        let note = cur.note.unwrap_or_else(|| format!("seq{}", sequences.len()));
        let seq = match cur.offsets {
            Some((at, offs)) => {
                if offs.len() != cur.words.len() {
                    return Err(perr(
                        at,
                        format!("{} offsets for {} tokens", offs.len(), cur.words.len()),
                    ));
                }
                let tokens = cur
                    .words
                    .into_iter()
                    .zip(offs)
                    .map(|(text, (start, end))| Token { text, start, end })
                    .collect();
                LabeledSequence::new(note, tokens, cur.labels)
            }
            None => LabeledSequence::from_words(note, &cur.words, cur.labels),
        };
        sequences.push(seq.map_err(|e| perr(line, e.to_string()))?);
        Ok(())
    };

    let mut last_line = 0;
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        last_line = lineno;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(id) = rest.strip_prefix(" note ") {
                cur.note = Some(id.to_string());
            } else if let Some(offs) = rest.strip_prefix(" offsets ") {
                let parsed = offs
                    .split(' ')
                    .filter(|s| !s.is_empty())
                    .map(|pair| {
                        let (s, e) = pair.split_once(':')?;
                        Some((s.parse().ok()?, e.parse().ok()?))
                    })
                    .collect::<Option<Vec<(usize, usize)>>>()
                    .ok_or_else(|| perr(lineno, format!("malformed offsets `{offs}`")))?;
                cur.offsets = Some((lineno, parsed));
            }
            continue;
        }
        if line.is_empty() {
            finish(std::mem::replace(&mut cur, empty()), &mut sequences, lineno)?;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(perr(
                lineno,
                format!("expected `token<TAB>label`, found {} column(s)", cols.len()),
            ));
        }
        if cols[0].is_empty() {
            return Err(perr(lineno, "empty token".into()));
        }
        let label = label_set
            .index_of(cols[1])
            .map_err(|_| perr(lineno, format!("unknown label `{}`", cols[1])))?;
        cur.words.push(cols[0].to_string());
        cur.labels.push(label);
    }
    finish(cur, &mut sequences, last_line)?;
    Dataset::new(sequences, label_set.clone())
}

pub fn read_token_file(path: &Path, label_set: &LabelSet) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_token_str(&text, label_set, &path.display().to_string())
}

/// Part sizes for splitting `n` sequences by `fractions`.
///
/// Sizes are the rounded fractions (the last part takes the remainder); a
/// part that would round to zero borrows one sequence from the largest part.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidArgument(format!("fractions must be positive: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fractions sum to {total}, not 1")));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("cannot split {n} sequences into 3 parts")));
    }
    let nf = n as f64;
    let mut sizes = [
        (nf * fractions[0]).round() as usize,
        (nf * fractions[1]).round() as usize,
        0,
    ];
    sizes[0] = sizes[0].min(n);
    sizes[1] = sizes[1].min(n - sizes[0]);
    sizes[2] = n - sizes[0] - sizes[1];
    for i in 0..3 {
        if sizes[i] == 0 {
            let largest = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[largest] -= 1;
            sizes[i] = 1;
        }
    }
    Ok(sizes)
}

/// Seeded sequence-level partition into train/dev/test with
/// [`split_sizes`] parts. Each part keeps the original sequence order.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    let sizes = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (a, rest) = order.split_at(sizes[0]);
    let (b, c) = rest.split_at(sizes[1]);
    let part = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        dataset.subset(&idx)
    };
    Ok((part(a), part(b), part(c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(toks: &[Token]) -> Vec<&str> {
        toks.iter().map(|t| t.text.as_str()).collect()
    }

    fn name_set() -> LabelSet {
        LabelSet::new([
            ("O", Category::O, false),
            ("NAME", Category::Name, true),
            ("DATE", Category::Date, true),
        ])
        .unwrap()
    }

    #[test]
    fn tokenizer_examples() {
        assert!(tokenize("").is_empty());
        let t = tokenize("Mr. Parkinson");
        assert_eq!(texts(&t), ["Mr", ".", "Parkinson"]);
        let offs: Vec<_> = t.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(offs, [(0, 2), (2, 3), (4, 13)]);
        assert_eq!(
            texts(&tokenize("Results02/20/2087")),
            ["Results", "02", "/", "20", "/", "2087"]
        );
        assert_eq!(texts(&tokenize("MC # 0937884Date")), ["MC", "#", "0937884", "Date"]);
        assert_eq!(texts(&tokenize("  a\t\nb  ")), ["a", "b"]);
        assert_eq!(texts(&tokenize("--")), ["-", "-"]);
    }

    #[test]
    fn tokenizer_handles_multibyte() {
        let text = "Zürich 3°C café";
        for t in tokenize(text) {
            assert_eq!(&text[t.start..t.end], t.text);
        }
        assert_eq!(texts(&tokenize("3°C")), ["3", "°", "C"]);
    }

    #[test]
    fn standoff_examples() {
        let ls = name_set();
        let s = standoff_to_sequence("n", "a b", &[], &ls).unwrap();
        assert_eq!(s.labels, [0, 0]);
        let s = standoff_to_sequence("n", "Mr. Parkinson", &[Span::new(4, 13, "NAME")], &ls).unwrap();
        assert_eq!(s.labels, [0, 0, 1]);
        let s = standoff_to_sequence("n", "Mr. Parkinson", &[Span::new(4, 9, "NAME")], &ls).unwrap();
        assert_eq!(s.labels, [0, 0, 1]);
    }

    #[test]
    fn standoff_first_span_wins_and_errors() {
        let ls = name_set();
        let s = standoff_to_sequence(
            "n",
            "Johnson x",
            &[Span::new(0, 3, "NAME"), Span::new(3, 7, "DATE")],
            &ls,
        )
        .unwrap();
        assert_eq!(s.labels, [1, 0]);
        let err = standoff_to_sequence(
            "n",
            "abcdef",
            &[Span::new(0, 4, "NAME"), Span::new(2, 5, "DATE")],
            &ls,
        );
        assert!(matches!(err, Err(Error::SpanConflict { .. })));
        let err = standoff_to_sequence("n", "abc", &[Span::new(0, 2, "ZIP")], &ls);
        assert!(matches!(err, Err(Error::UnknownLabel(l)) if l == "ZIP"));
        let err = standoff_to_sequence("n", "abc", &[Span::new(0, 9, "NAME")], &ls);
        assert!(matches!(err, Err(Error::SpanOutOfBounds { .. })));
    }

    #[test]
    fn token_file_minimal_and_malformed() {
        let ls = name_set();
        let d = read_token_str("John\tNAME\n\n", &ls, "mem").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.sequences[0].labels, [1]);
        assert_eq!(d.sequences[0].tokens[0].text, "John");

        match read_token_str("a b c\n", &ls, "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match read_token_str("# c\nx\tO\ny\tZIP\n", &ls, "mem") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("ZIP"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn token_file_roundtrip_keeps_offsets_and_ids() {
        let ls = name_set();
        let a = standoff_to_sequence("note-a", "Mr. Parkinson", &[Span::new(4, 13, "NAME")], &ls).unwrap();
        let b = LabeledSequence::from_words("note-b", &["seen", "today"], vec![0, 2]).unwrap();
        let d = Dataset::new(vec![a, b], ls.clone()).unwrap();
        let text = write_token_string(&d).unwrap();
        let back = read_token_str(&text, &ls, "mem").unwrap();
        assert_eq!(back, d);
        assert_eq!(write_token_string(&back).unwrap(), text);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ls = name_set();
        let mk = |n: usize| {
            let seqs = (0..n)
                .map(|i| LabeledSequence::from_words(format!("s{i}"), &["x"], vec![0]).unwrap())
                .collect();
            Dataset::new(seqs, ls.clone()).unwrap()
        };
        let d = mk(10);
        let (a, b, c) = split_dataset(&d, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let again = split_dataset(&d, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((a.clone(), b.clone(), c.clone()), again);
        let d = mk(100);
        let (a, b, c) = split_dataset(&d, [0.4, 0.4, 0.2], 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (40, 40, 20));
        assert!(split_dataset(&mk(2), [0.4, 0.4, 0.2], 1).is_err());
        assert!(split_dataset(&mk(5), [0.5, 0.5, 0.5], 1).is_err());
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSet::new([("NAME", Category::Name, true), ("O", Category::O, false)]).is_err());
        assert!(LabelSet::new([("O", Category::O, false), ("O", Category::O, false)]).is_err());
        assert!(LabelSet::new([("O", Category::O, false), ("X", Category::O, true)]).is_err());
        let ls = LabelSet::i2b2();
        assert_eq!(LabelSet::parse(&ls.to_text(), "mem").unwrap(), ls);
        for i in 0..ls.len() {
            if ls.is_hipaa(i) {
                assert_ne!(ls.category(i), Category::O);
            }
        }
    }
}
