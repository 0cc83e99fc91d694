//! Training-set size sweep: one tagger per training fraction, each scored
//! on a held-out set.

use std::fmt::Write as _;

use super::{predict_dataset, train, Checkpoint, EpochLog, TrainConfig};
use crate::corpus::Dataset;
use crate::embeddings::{EmbeddingTable, TokenVocab};
use crate::error::{Error, Result};
use crate::evaluation::{token_prf, EvalMode, EvalReport};

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_sequences: usize,
    pub checkpoint: Checkpoint,
    /// Binary-HIPAA scores on the evaluation set.
    pub report: EvalReport,
}

/// Trains once per fraction, in the given order. Subsets for one seed are
/// nested: a smaller fraction keeps a prefix of the same shuffled order.
pub fn sweep(
    train_set: &Dataset,
    dev: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    fractions: &[f64],
    pretrained: Option<&(TokenVocab, EmbeddingTable)>,
    mut on_epoch: impl FnMut(f64, &EpochLog),
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no sweep fractions given".into()));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let cfg = TrainConfig {
            train_fraction: fraction,
            ..config.clone()
        };
        let outcome = train(train_set, dev, &cfg, pretrained, |l| on_epoch(fraction, l))?;
        let report = token_prf(eval, &predict_dataset(&outcome.checkpoint.tagger, eval)?, EvalMode::BinaryHipaa)?;
        rows.push(SweepRow {
            fraction,
            train_sequences: ((train_set.len() as f64) * fraction).ceil().max(1.0) as usize,
            checkpoint: outcome.checkpoint,
            report,
        });
    }
    Ok(rows)
}

/// `fraction<TAB>train_sequences<TAB>precision<TAB>recall<TAB>f1` with a
/// header line.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction\ttrain_sequences\tprecision\trecall\tf1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.fraction, r.train_sequences, r.report.precision, r.report.recall, r.report.f1
        );
    }
    out
}

/// Adjacent pairs where F1 drops as the fraction grows.
pub fn f1_inversions(f1s: &[f64]) -> usize {
    f1s.windows(2).filter(|w| w[1] < w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversions_count_drops() {
        assert_eq!(f1_inversions(&[0.1, 0.2, 0.3, 0.4]), 0);
        assert_eq!(f1_inversions(&[0.1, 0.3, 0.2, 0.4]), 1);
        assert_eq!(f1_inversions(&[0.4, 0.3, 0.2]), 2);
        assert_eq!(f1_inversions(&[]), 0);
    }
}
