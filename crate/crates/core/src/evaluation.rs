//! Token-level scoring, paired significance testing, and the union ensemble.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::corpus::{Category, Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::numerics::seeded_rng;

/// Label assignments for a whole dataset, one vector per sequence.
pub type Predictions = Vec<Vec<usize>>;

/// How labels are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EvalMode {
    /// HIPAA types collapse to one PHI class, everything else to non-PHI.
    #[default]
    BinaryHipaa,
    /// A PHI token counts only when its exact type is right (micro-averaged).
    PerType,
    /// As `PerType`, with types merged into their categories.
    PerCategory,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::BinaryHipaa, EvalMode::PerType, EvalMode::PerCategory];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::BinaryHipaa => "binary-hipaa",
            EvalMode::PerType => "per-type",
            EvalMode::PerCategory => "per-category",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown evaluation mode `{s}`")))
    }
}

/// Which score the significance test compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    Precision,
    Recall,
    #[default]
    F1,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "precision" => Ok(Metric::Precision),
            "recall" => Ok(Metric::Recall),
            "f1" => Ok(Metric::F1),
            _ => Err(Error::InvalidArgument(format!("unknown metric `{s}`"))),
        }
    }
}

/// True positive, false positive and false negative token counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    /// `TP / (TP + FP)`; with no predicted positives, 1 if nothing was
    /// missed and 0 otherwise.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.fp, self.fn_)
    }

    /// `TP / (TP + FN)`; with no gold positives, 1 if nothing was
    /// over-predicted and 0 otherwise.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.fn_, self.fp)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Precision => self.precision(),
            Metric::Recall => self.recall(),
            Metric::F1 => self.f1(),
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(tp: u64, wrong: u64, other: u64) -> f64 {
    if tp + wrong == 0 {
        if other == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + wrong) as f64
    }
}

/// Scores of one system against gold.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One entry per PHI label, in label-set order.
    pub per_type: Vec<(String, Counts)>,
    /// One entry per PHI category present in the label set.
    pub per_category: Vec<(Category, Counts)>,
}

fn check_aligned(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Misaligned(format!(
            "{} predicted sequences for {} gold sequences",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Misaligned(format!(
                "sequence {i}: {} predicted labels for {} tokens",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

fn check_labels(pred: &[Vec<usize>], label_set: &LabelSet) -> Result<()> {
    match pred.iter().flatten().find(|&&l| l >= label_set.len()) {
        Some(bad) => Err(Error::InvalidArgument(format!("predicted label index {bad} out of range"))),
        None => Ok(()),
    }
}

/// Counts for one sequence.
fn sequence_counts(gold: &[usize], pred: &[usize], mode: EvalMode, ls: &LabelSet) -> Counts {
    let mut c = Counts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        let (g_pos, p_pos, same) = match mode {
            EvalMode::BinaryHipaa => {
                let (a, b) = (ls.is_hipaa(g), ls.is_hipaa(p));
                (a, b, a == b)
            }
            EvalMode::PerType => (ls.is_phi(g), ls.is_phi(p), g == p),
            EvalMode::PerCategory => (ls.is_phi(g), ls.is_phi(p), ls.category(g) == ls.category(p)),
        };
        match (g_pos, p_pos) {
            (true, true) if same => c.tp += 1,
            (true, true) => {
                c.fp += 1;
                c.fn_ += 1;
            }
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => {}
        }
    }
    c
}

/// Token-level precision, recall and F1 of `pred` against the gold labels of
/// `gold`.
pub fn token_prf(gold: &Dataset, pred: &[Vec<usize>], mode: EvalMode) -> Result<EvalReport> {
    let gold_labels = gold.labels();
    token_prf_labels(&gold_labels, pred, mode, &gold.label_set)
}

/// [`token_prf`] on bare label vectors.
pub fn token_prf_labels(gold: &[Vec<usize>], pred: &[Vec<usize>], mode: EvalMode, ls: &LabelSet) -> Result<EvalReport> {
    check_aligned(gold, pred)?;
    check_labels(pred, ls)?;
    check_labels(gold, ls)?;
    let mut counts = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        counts += sequence_counts(g, p, mode, ls);
    }

    let mut per_type: Vec<(String, Counts)> = (1..ls.len()).map(|l| (ls.name(l).to_string(), Counts::default())).collect();
    let cats: Vec<Category> = Category::PHI
        .into_iter()
        .filter(|c| (1..ls.len()).any(|l| ls.category(l) == *c))
        .collect();
    let mut per_category: Vec<(Category, Counts)> = cats.iter().map(|&c| (c, Counts::default())).collect();
    let cat_slot = |c: Category| cats.iter().position(|&x| x == c);
    for (&g, &p) in gold.iter().flatten().zip(pred.iter().flatten()) {
        if g == p {
            if g != 0 {
                per_type[g - 1].1.tp += 1;
            }
        } else {
            if p != 0 {
                per_type[p - 1].1.fp += 1;
            }
            if g != 0 {
                per_type[g - 1].1.fn_ += 1;
            }
        }
        let (gc, pc) = (ls.category(g), ls.category(p));
        if gc == pc {
            if let Some(s) = cat_slot(gc) {
                per_category[s].1.tp += 1;
            }
        } else {
            if let Some(s) = cat_slot(pc) {
                per_category[s].1.fp += 1;
            }
            if let Some(s) = cat_slot(gc) {
                per_category[s].1.fn_ += 1;
            }
        }
    }

    Ok(EvalReport {
        mode,
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        per_type,
        per_category,
    })
}

impl EvalReport {
    /// `key<TAB>value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = format!(
            "mode\t{}\ntp\t{}\nfp\t{}\nfn\t{}\nprecision\t{:.6}\nrecall\t{:.6}\nf1\t{:.6}\n",
            self.mode, self.counts.tp, self.counts.fp, self.counts.fn_, self.precision, self.recall, self.f1
        );
        for (name, c) in &self.per_type {
            s += &format!("type.{name}\t{} {} {} {:.6}\n", c.tp, c.fp, c.fn_, c.f1());
        }
        for (cat, c) in &self.per_category {
            s += &format!("category.{cat}\t{} {} {} {:.6}\n", c.tp, c.fp, c.fn_, c.f1());
        }
        s
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} evaluation\n{:<16} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}\n",
            self.mode, "", "TP", "FP", "FN", "precision", "recall", "F1"
        );
        let mut row = |name: &str, c: &Counts| {
            s += &format!(
                "{:<16} {:>7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}\n",
                name,
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        };
        row("overall", &self.counts);
        for (name, c) in &self.per_type {
            if c.tp + c.fp + c.fn_ > 0 {
                row(name, c);
            }
        }
        for (cat, c) in &self.per_category {
            if c.tp + c.fp + c.fn_ > 0 {
                row(&format!("[{cat}]"), c);
            }
        }
        s
    }
}

/// Two-sided approximate randomization test. Each shuffle swaps the outputs
/// of the two systems on each whole sequence with probability ½; the p-value
/// is `(count + 1) / (shuffles + 1)` where `count` is the number of shuffles
/// whose absolute metric difference reaches the observed one.
pub fn approx_randomization(
    pred_a: &[Vec<usize>],
    pred_b: &[Vec<usize>],
    gold: &Dataset,
    mode: EvalMode,
    metric: Metric,
    shuffles: usize,
    seed: u64,
) -> Result<f64> {
    let gold_labels = gold.labels();
    check_aligned(&gold_labels, pred_a)?;
    check_aligned(&gold_labels, pred_b)?;
    check_labels(pred_a, &gold.label_set)?;
    check_labels(pred_b, &gold.label_set)?;
    let ls = &gold.label_set;
    let per_seq: Vec<(Counts, Counts)> = gold_labels
        .iter()
        .zip(pred_a.iter().zip(pred_b))
        .map(|(g, (a, b))| (sequence_counts(g, a, mode, ls), sequence_counts(g, b, mode, ls)))
        .collect();
    let delta = |pairs: &mut dyn Iterator<Item = (Counts, Counts)>| {
        let (mut ca, mut cb) = (Counts::default(), Counts::default());
        for (a, b) in pairs {
            ca += a;
            cb += b;
        }
        (ca.metric(metric) - cb.metric(metric)).abs()
    };
    let observed = delta(&mut per_seq.iter().copied());
    let mut rng = seeded_rng(seed);
    let mut count = 0usize;
    for _ in 0..shuffles {
        let d = delta(&mut per_seq.iter().map(|&(a, b)| if rng.gen::<bool>() { (b, a) } else { (a, b) }));
        if d >= observed {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (shuffles + 1) as f64)
}

/// Union ensemble: a token is PHI when either system flags it. When both
/// flag it with different types, a HIPAA type beats a non-HIPAA one and
/// otherwise `pred_a` (the primary system) wins.
pub fn ensemble_union(pred_a: &[Vec<usize>], pred_b: &[Vec<usize>], label_set: &LabelSet) -> Result<Predictions> {
    check_aligned(pred_a, pred_b)?;
    check_labels(pred_a, label_set)?;
    check_labels(pred_b, label_set)?;
    Ok(pred_a
        .iter()
        .zip(pred_b)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| {
                    if label_set.is_hipaa(x) || (!label_set.is_hipaa(y) && label_set.is_phi(x)) {
                        x
                    } else {
                        y
                    }
                })
                .collect()
        })
        .collect())
}
