//! Deterministic synthetic clinical notes with exact PHI annotations.
//!
//! A note is a run of sentences. Each sentence either comes from a filler
//! template (no PHI) or, with the configured per-category probability, from a
//! template of that PHI category. Slots are filled by per-type generators
//! drawing on word lists and number patterns, so every annotated span records
//! the generator that produced it.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{split_dataset, split_sizes, standoff_to_sequence, tokenize, Category, Dataset, LabelSet, Span};
use crate::error::{Error, Result};

/// Word lists used to fill slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicons {
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub streets: Vec<String>,
    pub cities: Vec<String>,
    pub states: Vec<String>,
    pub countries: Vec<String>,
    pub hospitals: Vec<String>,
    pub employers: Vec<String>,
    pub professions: Vec<String>,
}

const LEXICON_FILES: [&str; 9] = [
    "first_names",
    "last_names",
    "streets",
    "cities",
    "states",
    "countries",
    "hospitals",
    "employers",
    "professions",
];

fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

impl Lexicons {
    /// The word lists shipped in `data/lexicons`.
    pub fn builtin() -> Self {
        Self {
            first_names: parse_list(include_str!("../data/lexicons/first_names.txt")),
            last_names: parse_list(include_str!("../data/lexicons/last_names.txt")),
            streets: parse_list(include_str!("../data/lexicons/streets.txt")),
            cities: parse_list(include_str!("../data/lexicons/cities.txt")),
            states: parse_list(include_str!("../data/lexicons/states.txt")),
            countries: parse_list(include_str!("../data/lexicons/countries.txt")),
            hospitals: parse_list(include_str!("../data/lexicons/hospitals.txt")),
            employers: parse_list(include_str!("../data/lexicons/employers.txt")),
            professions: parse_list(include_str!("../data/lexicons/professions.txt")),
        }
    }

    fn lists_mut(&mut self) -> [&mut Vec<String>; 9] {
        [
            &mut self.first_names,
            &mut self.last_names,
            &mut self.streets,
            &mut self.cities,
            &mut self.states,
            &mut self.countries,
            &mut self.hospitals,
            &mut self.employers,
            &mut self.professions,
        ]
    }

    /// Built-in lists, each replaced by `<dir>/<name>.txt` when that file
    /// exists.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut lex = Self::builtin();
        for (name, list) in LEXICON_FILES.iter().zip(lex.lists_mut()) {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *list = parse_list(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
            }
        }
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        let mut lex = self.clone();
        for (name, list) in LEXICON_FILES.iter().zip(lex.lists_mut()) {
            if list.is_empty() {
                return Err(Error::InvalidArgument(format!("lexicon `{name}` is empty")));
            }
        }
        Ok(())
    }

    /// Every distinct name entry (first or last), lowercased and sorted.
    pub fn name_entries(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .first_names
            .iter()
            .chain(&self.last_names)
            .map(|n| n.to_lowercase())
            .collect();
        set.into_iter().collect()
    }
}

/// Which share of the name lexicons a part of the corpus may draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamePool {
    All,
    /// Entry `j` of [`Lexicons::name_entries`] belongs to part `j % parts`.
    Part { index: usize, parts: usize },
}

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub notes: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a sentence carries PHI of each category, in
    /// [`Category::PHI`] order.
    pub densities: [f64; 7],
    pub seed: u64,
    pub lexicons: Lexicons,
    /// Give train, dev and test disjoint name pools.
    pub disjoint_names: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            notes: 500,
            min_tokens: 20,
            max_tokens: 60,
            densities: [0.06; 7],
            seed: 0,
            lexicons: Lexicons::builtin(),
            disjoint_names: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.notes == 0 {
            return Err(Error::InvalidArgument("note count must be positive".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "bad token range {}..={}",
                self.min_tokens, self.max_tokens
            )));
        }
        if self.densities.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::InvalidArgument("densities must lie in [0, 1]".into()));
        }
        let sum: f64 = self.densities.iter().sum();
        if sum > 0.5 + 1e-12 {
            return Err(Error::InvalidArgument(format!("densities sum to {sum}, above 0.5")));
        }
        self.lexicons.validate()
    }

    pub fn density(&self, c: Category) -> f64 {
        Category::PHI.iter().position(|&x| x == c).map_or(0.0, |i| self.densities[i])
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidArgument(format!("bad value `{value}` for `{key}`"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match key {
            "notes" => self.notes = value.parse().map_err(|_| bad())?,
            "min_tokens" => self.min_tokens = value.parse().map_err(|_| bad())?,
            "max_tokens" => self.max_tokens = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "disjoint_names" => self.disjoint_names = value.parse().map_err(|_| bad())?,
            "density" => self.densities = [num(value)?; 7],
            "lexicons" => self.lexicons = Lexicons::from_dir(Path::new(value))?,
            _ => match key.strip_prefix("density.") {
                Some(cat) => {
                    let c: Category = cat.parse()?;
                    let i = Category::PHI
                        .iter()
                        .position(|&x| x == c)
                        .ok_or_else(|| Error::InvalidArgument(format!("`{cat}` is not a PHI category")))?;
                    self.densities[i] = num(value)?;
                }
                None => return Err(Error::InvalidArgument(format!("unknown generator setting `{key}`"))),
            },
        }
        Ok(())
    }
}

/// A PHI span with the generator that produced its text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenSpan {
    pub start: usize,
    pub end: usize,
    pub label: &'static str,
    pub generator: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedNote {
    pub note_id: String,
    pub text: String,
    pub spans: Vec<GenSpan>,
}

impl GeneratedNote {
    pub fn standoff_spans(&self) -> Vec<Span> {
        self.spans.iter().map(|s| Span::new(s.start, s.end, s.label)).collect()
    }

    /// `start<TAB>end<TAB>label` lines.
    pub fn annotation_text(&self) -> String {
        self.spans
            .iter()
            .fold(String::new(), |mut s, sp| {
                let _ = writeln!(s, "{}\t{}\t{}", sp.start, sp.end, sp.label);
                s
            })
    }
}

const SEXES: &[&str] = &["man", "woman", "male", "female", "gentleman", "lady"];
const SYMPTOMS: &[&str] = &[
    "chest pain", "shortness of breath", "fatigue", "nausea", "dizziness", "cough", "fever", "headache",
    "back pain", "leg swelling", "palpitations", "abdominal pain", "weight loss", "insomnia", "anxiety",
    "vomiting", "diarrhea", "blurred vision", "joint pain", "rash",
];
const CONDITIONS: &[&str] = &[
    "hypertension", "diabetes", "CAD", "CHF", "COPD", "asthma", "atrial fibrillation", "hyperlipidemia",
    "CKD", "depression", "osteoarthritis", "GERD", "hypothyroidism", "anemia", "gout", "stroke",
];
const MEDS: &[&str] = &[
    "aspirin", "metoprolol", "lisinopril", "atorvastatin", "metformin", "insulin", "warfarin", "furosemide",
    "omeprazole", "amlodipine", "prednisone", "gabapentin", "levothyroxine", "sertraline", "albuterol",
];
const FINDINGS: &[&str] = &[
    "lungs clear to auscultation", "regular rate and rhythm", "abdomen soft and nontender",
    "no focal deficits", "mild pedal edema", "no murmurs", "pupils equal and reactive", "no acute distress",
];
const FREQS: &[&str] = &["daily", "twice daily", "at bedtime", "as needed", "every morning", "three times daily"];
const HOLIDAYS: &[&str] = &[
    "Christmas", "Thanksgiving", "Easter", "New Year", "Labor Day", "Memorial Day", "Independence Day",
    "Halloween", "Passover", "Hanukkah", "Ramadan", "Valentine's Day",
];
const WEEKDAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];
const STREET_SUFFIXES: &[&str] = &["St", "Street", "Ave", "Road", "Rd", "Lane", "Drive", "Court"];
const EMAIL_DOMAINS: &[&str] = &["mail.com", "inbox.org", "post.net", "webmail.com", "letters.org"];

const FILLER: &[&str] = &[
    "Patient reports {symptom} and {symptom}.",
    "History of {condition} and {condition}.",
    "Continue {med} {dose} mg {freq}.",
    "Exam: {finding}.",
    "BP {bp}, HR {hr}, temp {temp}.",
    "Labs notable for creatinine {lab} and potassium {lab}.",
    "Plan to follow up in {small} weeks.",
    "Denies {symptom}.",
    "Will start {med} for {condition}.",
    "No acute distress.",
    "Increase {med} to {dose} mg {freq}.",
    "Chronic {condition}, stable on {med}.",
    "{finding}, {finding}.",
    "Reports {symptom} for {small} days.",
];

/// Templates per PHI category, in [`Category::PHI`] order.
const PHI_TEMPLATES: [&[&str]; 7] = [
    &[
        "{age} year old {sex} with {condition}.",
        "{age} yo {sex} presenting with {symptom}.",
        "Patient is {age} years old.",
        "Age: {age}.",
        "Father died at {age} of {condition}.",
    ],
    &[
        "Call {phone} with questions.",
        "Daughter can be reached at {phone}.",
        "Pager {phone}.",
        "Email {email} for records.",
        "Contact: {email}, phone {phone}.",
    ],
    &[
        "Seen in clinic on {date}.",
        "Admitted {date} and discharged {date}.",
        "Last colonoscopy in {year}.",
        "Symptoms began around {holiday}.",
        "Returns every {weekday} for dialysis.",
        "Quit smoking in {year}.",
        "Follow up on {weekday}, {date}.",
    ],
    &[
        "MRN: {mrn}.",
        "SSN {ssn} on file.",
        "Account number {account}.",
        "Driver license {license} verified.",
        "Pacemaker serial number {device}.",
        "Medical record {mrn}, account {account}.",
    ],
    &[
        "Lives at {address}.",
        "Moved here from {country} as a child.",
        "Recently relocated to {state}.",
        "Works at {employer}.",
        "Transferred from {hospital}.",
        "Previously treated at {hospital} in {state}.",
        "Home address: {address}.",
    ],
    &[
        "{patient} was seen today.",
        "Discussed the plan with {patient} and family.",
        "Dr. {provider_last} was consulted.",
        "Seen with {provider}, MD.",
        "Patient {patient} reports {symptom}.",
        "Signed by {provider}.",
    ],
    &[
        "Works as a {profession}.",
        "Retired {profession}.",
        "Occupation: {profession}.",
        "Employed as a {profession} at {employer}.",
    ],
];

/// A run of text, optionally annotated.
type Piece = (String, Option<(&'static str, &'static str)>);

struct Generator<'a> {
    lex: &'a Lexicons,
    first: Vec<&'a str>,
    last: Vec<&'a str>,
}

fn pick<'a, T: ?Sized>(rng: &mut ChaCha8Rng, items: &'a [&'a T]) -> &'a T {
    items.choose(rng).expect("word lists are nonempty")
}

fn pick_owned<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> &'a str {
    items.choose(rng).expect("lexicons are validated nonempty")
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

fn letters(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'A' + rng.gen_range(0..26u8))).collect()
}

impl<'a> Generator<'a> {
    fn new(lex: &'a Lexicons, pool: NamePool) -> Result<Self> {
        let allowed: Option<HashSet<String>> = match pool {
            NamePool::All => None,
            NamePool::Part { index, parts } => {
                if parts == 0 || index >= parts {
                    return Err(Error::InvalidArgument(format!("name pool {index} of {parts}")));
                }
                Some(
                    lex.name_entries()
                        .into_iter()
                        .enumerate()
                        .filter(|(j, _)| j % parts == index)
                        .map(|(_, n)| n)
                        .collect(),
                )
            }
        };
        let keep = |list: &'a [String]| -> Vec<&'a str> {
            list.iter()
                .filter(|n| allowed.as_ref().is_none_or(|a| a.contains(&n.to_lowercase())))
                .map(String::as_str)
                .collect()
        };
        let (first, last) = (keep(&lex.first_names), keep(&lex.last_names));
        if first.is_empty() || last.is_empty() {
            return Err(Error::InvalidArgument("name pool is empty".into()));
        }
        Ok(Self { lex, first, last })
    }

    fn phi(&self, slot: &str, rng: &mut ChaCha8Rng) -> Vec<Piece> {
        let tag = |text: String, label: &'static str, generator: &'static str| -> Piece { (text, Some((label, generator))) };
        let plain = |text: &str| -> Piece { (text.to_string(), None) };
        match slot {
            "age" => {
                if rng.gen_bool(0.4) {
                    vec![tag(rng.gen_range(90..=104).to_string(), "AGE_90_PLUS", "age")]
                } else {
                    vec![tag(rng.gen_range(18..=89).to_string(), "AGE", "age")]
                }
            }
            "phone" => {
                let (a, b, c) = (digits(rng, 3), digits(rng, 3), digits(rng, 4));
                let text = match rng.gen_range(0..3) {
                    0 => format!("{a}-{b}-{c}"),
                    1 => format!("({a}) {b}-{c}"),
                    _ => format!("{a}.{b}.{c}"),
                };
                vec![tag(text, "PHONE", "phone")]
            }
            "email" => {
                let f = pick(rng, &self.first).to_lowercase();
                let l = pick(rng, &self.last).to_lowercase();
                let user = match rng.gen_range(0..3) {
                    0 => format!("{}{l}", &f[..1]),
                    1 => format!("{f}.{l}"),
                    _ => format!("{l}{}", rng.gen_range(1..100)),
                };
                vec![tag(format!("{user}@{}", pick(rng, EMAIL_DOMAINS)), "EMAIL", "email")]
            }
            "date" => {
                let (m, d, y) = (rng.gen_range(1..=12), rng.gen_range(1..=28), rng.gen_range(2000..=2099));
                let month = MONTHS[m - 1];
                let text = match rng.gen_range(0..6) {
                    0 => format!("{m:02}/{d:02}/{y}"),
                    1 => format!("{m}/{d}/{:02}", y % 100),
                    2 => format!("{month} {d}"),
                    3 => format!("{month} {d}, {y}"),
                    4 => format!("{m}/{d}"),
                    _ => format!("{y}-{m:02}-{d:02}"),
                };
                vec![tag(text, "DATE", "date")]
            }
            "year" => vec![tag(rng.gen_range(1990..=2099).to_string(), "YEAR", "year")],
            "holiday" => vec![tag(pick(rng, HOLIDAYS).to_string(), "HOLIDAY", "holiday")],
            "weekday" => vec![tag(pick(rng, WEEKDAYS).to_string(), "DAY_OF_WEEK", "weekday")],
            "ssn" => vec![tag(
                format!("{}-{}-{}", digits(rng, 3), digits(rng, 2), digits(rng, 4)),
                "SSN",
                "ssn",
            )],
            "mrn" => {
                let n = rng.gen_range(7..=9);
                vec![tag(digits(rng, n), "MEDICAL_RECORD", "mrn")]
            }
            "account" => {
                let text = if rng.gen_bool(0.5) {
                    digits(rng, 10)
                } else {
                    format!("{}-{}", letters(rng, 2), digits(rng, 7))
                };
                vec![tag(text, "ACCOUNT", "account")]
            }
            "license" => {
                let text = if rng.gen_bool(0.5) {
                    format!("{}{}", letters(rng, 1), digits(rng, 8))
                } else {
                    format!("{}-{}", letters(rng, 2), digits(rng, 5))
                };
                vec![tag(text, "LICENSE", "license")]
            }
            "device" => vec![tag(
                format!("{}{}-{}", letters(rng, 2), digits(rng, 4), letters(rng, 1)),
                "DEVICE",
                "device",
            )],
            "address" => {
                let mut text = format!(
                    "{} {} {}",
                    rng.gen_range(1..=9999),
                    pick_owned(rng, &self.lex.streets),
                    pick(rng, STREET_SUFFIXES)
                );
                if rng.gen_bool(0.6) {
                    text += &format!(", {}", pick_owned(rng, &self.lex.cities));
                }
                if rng.gen_bool(0.3) {
                    text += &format!(" {}", digits(rng, 5));
                }
                vec![tag(text, "ADDRESS", "address")]
            }
            "state" => vec![tag(pick_owned(rng, &self.lex.states).to_string(), "STATE", "state")],
            "country" => vec![tag(pick_owned(rng, &self.lex.countries).to_string(), "COUNTRY", "country")],
            "employer" => vec![tag(pick_owned(rng, &self.lex.employers).to_string(), "EMPLOYER", "employer")],
            "hospital" => vec![tag(pick_owned(rng, &self.lex.hospitals).to_string(), "HOSPITAL", "hospital")],
            "profession" => vec![tag(
                pick_owned(rng, &self.lex.professions).to_string(),
                "PROFESSION",
                "profession",
            )],
            "patient" => {
                let (f, l) = (pick(rng, &self.first), pick(rng, &self.last));
                match rng.gen_range(0..4) {
                    0 => vec![tag(format!("{f} {l}"), "PATIENT", "name")],
                    1 => vec![plain(pick(rng, &["Mr. ", "Ms. ", "Mrs. "])), tag(l.to_string(), "PATIENT", "name")],
                    2 => vec![tag(f.to_string(), "PATIENT", "name")],
                    _ => vec![tag(format!("{l}, {f}"), "PATIENT", "name")],
                }
            }
            "provider" => {
                let (f, l) = (pick(rng, &self.first), pick(rng, &self.last));
                if rng.gen_bool(0.5) {
                    vec![tag(format!("{f} {l}"), "PROVIDER", "name")]
                } else {
                    vec![plain("Dr. "), tag(l.to_string(), "PROVIDER", "name")]
                }
            }
            "provider_last" => vec![tag(pick(rng, &self.last).to_string(), "PROVIDER", "name")],
            _ => vec![plain(&self.filler(slot, rng))],
        }
    }

    fn filler(&self, slot: &str, rng: &mut ChaCha8Rng) -> String {
        match slot {
            "sex" => pick(rng, SEXES).to_string(),
            "symptom" => pick(rng, SYMPTOMS).to_string(),
            "condition" => pick(rng, CONDITIONS).to_string(),
            "med" => pick(rng, MEDS).to_string(),
            "finding" => pick(rng, FINDINGS).to_string(),
            "freq" => pick(rng, FREQS).to_string(),
            "dose" => (rng.gen_range(1..=100) * 5).to_string(),
            "bp" => format!("{}/{}", rng.gen_range(95..=180), rng.gen_range(55..=110)),
            "hr" => rng.gen_range(48..=130).to_string(),
            "temp" => format!("{}.{}", rng.gen_range(96..=102), rng.gen_range(0..10)),
            "lab" => format!("{}.{}", rng.gen_range(0..=6), rng.gen_range(0..10)),
            "small" => rng.gen_range(1..=12).to_string(),
            other => unreachable!("template slot `{other}` has no generator"),
        }
    }

    /// Fills one template.
    fn sentence(&self, template: &str, rng: &mut ChaCha8Rng) -> Vec<Piece> {
        let mut pieces = Vec::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                pieces.push((rest[..open].to_string(), None));
            }
            let close = open + rest[open..].find('}').expect("templates are well formed");
            pieces.extend(self.phi(&rest[open + 1..close], rng));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            pieces.push((rest.to_string(), None));
        }
        pieces
    }
}

fn sentence_text(pieces: &[Piece]) -> String {
    pieces.iter().map(|p| p.0.as_str()).collect()
}

fn note_rng(seed: u64, part: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((part << 32) | index);
    rng
}

fn generate_note(config: &GenConfig, gen: &Generator<'_>, note_id: String, mut rng: ChaCha8Rng) -> GeneratedNote {
    let target = rng.gen_range(config.min_tokens..=config.max_tokens);
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut count = 0;
    let mut misses = 0;
    while count < target {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut templates = FILLER;
        for (i, d) in config.densities.iter().enumerate() {
            acc += d;
            if u < acc {
                templates = PHI_TEMPLATES[i];
                break;
            }
        }
        let pieces = gen.sentence(pick(&mut rng, templates), &mut rng);
        let n = tokenize(&sentence_text(&pieces)).len();
        if count + n > config.max_tokens && count >= config.min_tokens {
            misses += 1;
            if misses >= 4 {
                break;
            }
            continue;
        }
        if !text.is_empty() {
            text.push(' ');
        }
        for (piece, tag) in pieces {
            let start = text.len();
            text.push_str(&piece);
            if let Some((label, generator)) = tag {
                spans.push(GenSpan {
                    start,
                    end: text.len(),
                    label,
                    generator,
                });
            }
        }
        count += n;
    }
    GeneratedNote { note_id, text, spans }
}

/// `count` notes for one corpus part. `part` separates random streams and
/// prefixes note ids.
pub fn generate_notes(config: &GenConfig, part: (&str, u64), count: usize, pool: NamePool) -> Result<Vec<GeneratedNote>> {
    config.validate()?;
    let gen = Generator::new(&config.lexicons, pool)?;
    Ok((0..count)
        .map(|i| generate_note(config, &gen, format!("{}{:05}", part.0, i + 1), note_rng(config.seed, part.1, i as u64)))
        .collect())
}

/// Tokenizes and labels generated notes under the built-in label set.
pub fn notes_to_dataset(notes: &[GeneratedNote]) -> Result<Dataset> {
    let ls = LabelSet::i2b2();
    let seqs = notes
        .iter()
        .map(|n| standoff_to_sequence(&n.note_id, &n.text, &n.standoff_spans(), &ls))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(seqs, ls)
}

/// `config.notes` labeled notes.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    notes_to_dataset(&generate_notes(config, ("note", 0), config.notes, NamePool::All)?)
}

/// Generated train/dev/test parts with their raw notes.
#[derive(Clone, Debug)]
pub struct GeneratedSplit {
    pub parts: [(Vec<GeneratedNote>, Dataset); 3],
}

pub const PART_NAMES: [&str; 3] = ["train", "dev", "test"];

/// `config.notes` notes split into train/dev/test. With `disjoint_names`
/// each part draws names from its own third of the name lexicons; otherwise
/// one corpus is generated and split by [`split_dataset`].
pub fn generate_split(config: &GenConfig, fractions: [f64; 3]) -> Result<GeneratedSplit> {
    config.validate()?;
    if config.disjoint_names {
        let sizes = split_sizes(config.notes, fractions)?;
        let mut parts = Vec::with_capacity(3);
        for (i, (&name, &size)) in PART_NAMES.iter().zip(&sizes).enumerate() {
            let notes = generate_notes(config, (name, i as u64 + 1), size, NamePool::Part { index: i, parts: 3 })?;
            let ds = notes_to_dataset(&notes)?;
            parts.push((notes, ds));
        }
        let parts: [(Vec<GeneratedNote>, Dataset); 3] = parts.try_into().expect("three parts");
        return Ok(GeneratedSplit { parts });
    }
    let notes = generate_notes(config, ("note", 0), config.notes, NamePool::All)?;
    let all = notes_to_dataset(&notes)?;
    let (a, b, c) = split_dataset(&all, fractions, config.seed)?;
    let pick_notes = |d: &Dataset| -> Vec<GeneratedNote> {
        let ids: HashSet<&str> = d.sequences.iter().map(|s| s.note_id.as_str()).collect();
        notes.iter().filter(|n| ids.contains(n.note_id.as_str())).cloned().collect()
    };
    Ok(GeneratedSplit {
        parts: [(pick_notes(&a), a), (pick_notes(&b), b), (pick_notes(&c), c)],
    })
}

/// Writes `<id>.txt` and `<id>.ann` for every note.
pub fn write_standoff(notes: &[GeneratedNote], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for n in notes {
        let txt = dir.join(format!("{}.txt", n.note_id));
        fs::write(&txt, &n.text).map_err(|e| Error::io(&txt, e))?;
        let ann = dir.join(format!("{}.ann", n.note_id));
        fs::write(&ann, n.annotation_text()).map_err(|e| Error::io(&ann, e))?;
    }
    Ok(())
}

/// Corpus size summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub notes: usize,
    pub tokens: usize,
    /// Maximal runs of one PHI label within a note.
    pub phi_instances: usize,
    pub phi_tokens: usize,
    /// Distinct token strings.
    pub vocabulary: usize,
    /// PHI instances per category, in [`Category::PHI`] order.
    pub category_instances: [usize; 7],
}

pub fn corpus_stats(dataset: &Dataset) -> CorpusStats {
    let ls = &dataset.label_set;
    let mut vocab = HashSet::new();
    let mut s = CorpusStats {
        notes: dataset.len(),
        tokens: 0,
        phi_instances: 0,
        phi_tokens: 0,
        vocabulary: 0,
        category_instances: [0; 7],
    };
    for seq in &dataset.sequences {
        s.tokens += seq.len();
        vocab.extend(seq.texts());
        let mut prev = ls.outside();
        for &l in &seq.labels {
            if ls.is_phi(l) {
                s.phi_tokens += 1;
                if l != prev {
                    s.phi_instances += 1;
                    if let Some(i) = Category::PHI.iter().position(|&c| c == ls.category(l)) {
                        s.category_instances[i] += 1;
                    }
                }
            }
            prev = l;
        }
    }
    s.vocabulary = vocab.len();
    s
}

impl CorpusStats {
    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "notes\t{}\ntokens\t{}\nphi_instances\t{}\nphi_tokens\t{}\nvocabulary\t{}\n",
            self.notes, self.tokens, self.phi_instances, self.phi_tokens, self.vocabulary
        );
        for (c, n) in Category::PHI.iter().zip(&self.category_instances) {
            let _ = writeln!(out, "instances.{c}\t{n}");
        }
        out
    }
}
