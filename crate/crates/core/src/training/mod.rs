//! Per-sequence SGD for the tagger with gradient clipping, dropout, and
//! dev-set model selection.

mod checkpoint;
mod sweep;

use std::collections::HashMap;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng as _;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use sweep::{f1_inversions, sweep, sweep_table, SweepRow};

use crate::corpus::Dataset;
use crate::embeddings::{CharVocab, EmbeddingTable, TokenVocab};
use crate::error::{Error, Result};
use crate::evaluation::{token_prf, EvalMode, Predictions};
use crate::numerics::seeded_rng;
use crate::sequence_model::{Gradients, ModelConfig, Tagger};

/// Optimization settings. Serialized into every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Global gradient-norm threshold.
    pub clip: f64,
    pub max_epochs: usize,
    /// Epochs without a dev F1 gain before stopping.
    pub patience: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Fraction of the training sequences used, in (0, 1].
    pub train_fraction: f64,
    /// Probability of replacing a training token seen only once with the
    /// unknown token, so the unknown row gets trained.
    pub singleton_unk: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            clip: 5.0,
            max_epochs: 100,
            patience: 10,
            dropout: 0.5,
            seed: 0,
            train_fraction: 1.0,
            singleton_unk: 0.5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip threshold must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train fraction must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.singleton_unk) {
            return bad("singleton replacement probability must be in [0, 1]");
        }
        self.model.validate()
    }

    /// Applies one `key = value` setting. Keys match the checkpoint header,
    /// with or without their `train.` / `model.` prefix.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
        }
        let bare = key.strip_prefix("train.").or_else(|| key.strip_prefix("model.")).unwrap_or(key);
        let m = &mut self.model;
        match bare {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "singleton_unk" => self.singleton_unk = parse(key, value)?,
            "char_dim" => m.char_dim = parse(key, value)?,
            "char_hidden" => m.char_hidden = parse(key, value)?,
            "token_dim" => m.token_dim = parse(key, value)?,
            "label_hidden" => m.label_hidden = parse(key, value)?,
            "ff_hidden" => m.ff_hidden = parse(key, value)?,
            "seq_opt" => m.seq_opt = parse(key, value)?,
            "token_emb" => m.token_emb = parse(key, value)?,
            "char_emb" => m.char_emb = parse(key, value)?,
            "pretrained" => m.pretrained = parse(key, value)?,
            "output_gate" => m.output_gate = parse(key, value)?,
            "raw_score_emissions" => m.raw_score_emissions = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown training setting `{key}`"))),
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sequence loss over the epoch.
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    /// Best dev F1 so far, including this epoch.
    pub best_dev_f1: f64,
}

impl EpochLog {
    /// `epoch<TAB>train_loss<TAB>dev_P<TAB>dev_R<TAB>dev_F1`
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.dev_precision, self.dev_recall, self.dev_f1
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// ⌈n·fraction⌉ sequences chosen by a seeded shuffle, kept in original order.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = dataset.len();
    let keep = ((n as f64) * fraction).ceil() as usize;
    let keep = keep.clamp(1.min(n), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    Dataset::new(
        chosen.into_iter().map(|i| dataset.sequences[i].clone()).collect(),
        dataset.label_set.clone(),
    )
}

/// Token and character vocabularies. Pretrained entries come first so their
/// rows line up with the pretrained table.
pub fn build_vocabularies(train: &Dataset, pretrained: Option<&TokenVocab>) -> (TokenVocab, CharVocab) {
    let mut tokens = pretrained.cloned().unwrap_or_default();
    let mut chars = CharVocab::default();
    for seq in &train.sequences {
        for t in seq.texts() {
            tokens.insert(t);
            for c in t.chars() {
                chars.insert(c);
            }
        }
    }
    (tokens, chars)
}

/// Predicted labels for every sequence.
pub fn predict_dataset(tagger: &Tagger, dataset: &Dataset) -> Result<Predictions> {
    dataset
        .sequences
        .iter()
        .map(|s| tagger.predict(&s.texts().collect::<Vec<_>>()))
        .collect()
}

/// Fraction of tokens whose predicted label equals the gold label.
pub fn token_accuracy(gold: &Dataset, pred: &[Vec<usize>]) -> f64 {
    let total = gold.num_tokens();
    let right: usize = gold
        .sequences
        .iter()
        .zip(pred)
        .map(|(s, p)| s.labels.iter().zip(p).filter(|(a, b)| a == b).count())
        .sum();
    if total == 0 {
        1.0
    } else {
        right as f64 / total as f64
    }
}

/// Trains a tagger, keeping the parameters with the best dev binary-HIPAA F1.
///
/// `pretrained` is required when `config.model.pretrained` is set and ignored
/// otherwise. `on_epoch` sees each log line as it is produced.
pub fn train(
    train: &Dataset,
    dev: &Dataset,
    config: &TrainConfig,
    pretrained: Option<&(TokenVocab, EmbeddingTable)>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    if train.label_set != dev.label_set {
        return Err(Error::InvalidArgument("train and dev label sets differ".into()));
    }
    let pretrained = match (config.model.pretrained, pretrained) {
        (true, None) => {
            return Err(Error::InvalidArgument(
                "pretrained embeddings requested but no vectors given".into(),
            ))
        }
        (true, Some(p)) => Some(p),
        (false, _) => None,
    };
    let train = if config.train_fraction < 1.0 {
        subsample(train, config.train_fraction, config.seed)?
    } else {
        train.clone()
    };
    let (token_vocab, char_vocab) = build_vocabularies(&train, pretrained.map(|p| &p.0));
    let mut rng = seeded_rng(config.seed);
    let mut tagger = Tagger::new(
        config.model.clone(),
        train.label_set.clone(),
        token_vocab,
        char_vocab,
        pretrained.map(|p| &p.1),
        &mut rng,
    )?;

    let encoded: Vec<_> = train
        .sequences
        .iter()
        .map(|s| tagger.encode(&s.texts().collect::<Vec<_>>()))
        .collect();
    let mut freq: HashMap<usize, usize> = HashMap::new();
    for e in &encoded {
        for &id in &e.token_ids {
            *freq.entry(id).or_default() += 1;
        }
    }

    let mut grads = Gradients::new(&tagger.params);
    let mut best = (tagger.params.clone(), f64::NEG_INFINITY, 0usize);
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut seq = encoded[i].clone();
            if config.singleton_unk > 0.0 {
                for id in &mut seq.token_ids {
                    if freq.get(id) == Some(&1) && rng.gen::<f64>() < config.singleton_unk {
                        *id = 0;
                    }
                }
            }
            grads.zero();
            let trace = tagger.forward_trace(&seq, Some((config.dropout, &mut rng)))?;
            let loss = tagger.backward(&seq, &trace, &train.sequences[i].labels, &mut grads)?;
            let norm = grads.clip(config.clip);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence {
                    note_id: train.sequences[i].note_id.clone(),
                    epoch,
                    loss,
                });
            }
            grads.apply_sgd(&mut tagger.params, config.learning_rate);
            total += loss;
        }
        let report = token_prf(dev, &predict_dataset(&tagger, dev)?, EvalMode::BinaryHipaa)?;
        if report.f1 > best.1 {
            best = (tagger.params.clone(), report.f1, epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / encoded.len() as f64,
            dev_precision: report.precision,
            dev_recall: report.recall,
            dev_f1: report.f1,
            best_dev_f1: best.1,
        };
        info!("{}", entry.to_line());
        on_epoch(&entry);
        log.push(entry);
        if since_best >= config.patience {
            break;
        }
    }

    let (params, best_dev_f1, best_epoch) = best;
    tagger.params = params;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            train_config: config.clone(),
            tagger,
            best_dev_f1,
            epoch: best_epoch,
        },
        log,
    })
}
