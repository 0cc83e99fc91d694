//! Self-contained model files: a text header of `key<TAB>value` lines ending
//! in `end`, then every parameter array as little-endian `f64` in header
//! order.

use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::embeddings::{CharVocab, TokenVocab};
use crate::error::{Error, Result};
use crate::format::{escape, label_lines, parse_value, push_f64s, read_entries, read_label_lines, split_header, PayloadReader};
use crate::numerics::seeded_rng;
use crate::sequence_model::{ModelParameters, Tagger};

pub const CHECKPOINT_MAGIC: &str = "DEID-MODEL v1";
const FAMILY: &str = "DEID-MODEL ";

/// A trained tagger plus the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub tagger: Tagger,
    pub best_dev_f1: f64,
    /// Epoch whose parameters were kept.
    pub epoch: usize,
}

fn config_lines(c: &TrainConfig) -> Vec<(&'static str, String)> {
    let m = &c.model;
    vec![
        ("train.learning_rate", c.learning_rate.to_string()),
        ("train.clip", c.clip.to_string()),
        ("train.max_epochs", c.max_epochs.to_string()),
        ("train.patience", c.patience.to_string()),
        ("train.dropout", c.dropout.to_string()),
        ("train.seed", c.seed.to_string()),
        ("train.train_fraction", c.train_fraction.to_string()),
        ("train.singleton_unk", c.singleton_unk.to_string()),
        ("model.char_dim", m.char_dim.to_string()),
        ("model.char_hidden", m.char_hidden.to_string()),
        ("model.token_dim", m.token_dim.to_string()),
        ("model.label_hidden", m.label_hidden.to_string()),
        ("model.ff_hidden", m.ff_hidden.to_string()),
        ("model.seq_opt", m.seq_opt.to_string()),
        ("model.token_emb", m.token_emb.to_string()),
        ("model.char_emb", m.char_emb.to_string()),
        ("model.pretrained", m.pretrained.to_string()),
        ("model.output_gate", m.output_gate.as_str().to_string()),
        ("model.raw_score_emissions", m.raw_score_emissions.to_string()),
    ]
}

impl Checkpoint {
    /// The complete file contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.tagger;
        let mut h = format!("{CHECKPOINT_MAGIC}\n");
        for (k, v) in config_lines(&self.train_config) {
            h += &format!("{k}\t{v}\n");
        }
        h += &format!("best_dev_f1\t{}\nepoch\t{}\n", self.best_dev_f1, self.epoch);
        h += &label_lines(&t.label_set);
        h += &format!("tokens\t{}\n", t.token_vocab.entries().len());
        for tok in t.token_vocab.entries() {
            h += &format!("token\t{}\n", escape(tok));
        }
        h += &format!("chars\t{}\n", t.char_vocab.entries().len());
        for c in t.char_vocab.entries() {
            h += &format!("char\t{}\n", escape(&c.to_string()));
        }
        let arrays = t.params.arrays();
        for a in &arrays {
            h += &format!("array\t{}\t{}\t{}\n", a.name, a.rows, a.cols);
        }
        h += "end\n";
        let mut bytes = h.into_bytes();
        for a in &arrays {
            push_f64s(&mut bytes, a.values);
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
        let first = String::from_utf8_lossy(first);
        if first != CHECKPOINT_MAGIC {
            return Err(match first.strip_prefix(FAMILY) {
                Some(v) => Error::Version(v.to_string()),
                None => Error::checkpoint("magic", format!("expected `{CHECKPOINT_MAGIC}`")),
            });
        }
        let (header, payload) = split_header(bytes)?;
        let mut lines = header.lines().skip(1).peekable();

        let mut cfg = TrainConfig::default();
        let mut best_dev_f1 = None;
        let mut epoch = None;
        for (key, _) in config_lines(&cfg).into_iter().chain([("best_dev_f1", String::new()), ("epoch", String::new())]) {
            let line = lines
                .next()
                .ok_or_else(|| Error::checkpoint("config", format!("missing `{key}`")))?;
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::checkpoint("config", format!("malformed line `{line}`")))?;
            if k != key {
                return Err(Error::checkpoint("config", format!("expected `{key}`, found `{k}`")));
            }
            let m = &mut cfg.model;
            let s = "config";
            match key {
                "train.learning_rate" => cfg.learning_rate = parse_value(v, k, s)?,
                "train.clip" => cfg.clip = parse_value(v, k, s)?,
                "train.max_epochs" => cfg.max_epochs = parse_value(v, k, s)?,
                "train.patience" => cfg.patience = parse_value(v, k, s)?,
                "train.dropout" => cfg.dropout = parse_value(v, k, s)?,
                "train.seed" => cfg.seed = parse_value(v, k, s)?,
                "train.train_fraction" => cfg.train_fraction = parse_value(v, k, s)?,
                "train.singleton_unk" => cfg.singleton_unk = parse_value(v, k, s)?,
                "model.char_dim" => m.char_dim = parse_value(v, k, s)?,
                "model.char_hidden" => m.char_hidden = parse_value(v, k, s)?,
                "model.token_dim" => m.token_dim = parse_value(v, k, s)?,
                "model.label_hidden" => m.label_hidden = parse_value(v, k, s)?,
                "model.ff_hidden" => m.ff_hidden = parse_value(v, k, s)?,
                "model.seq_opt" => m.seq_opt = parse_value(v, k, s)?,
                "model.token_emb" => m.token_emb = parse_value(v, k, s)?,
                "model.char_emb" => m.char_emb = parse_value(v, k, s)?,
                "model.pretrained" => m.pretrained = parse_value(v, k, s)?,
                "model.output_gate" => m.output_gate = parse_value(v, k, s)?,
                "model.raw_score_emissions" => m.raw_score_emissions = parse_value(v, k, s)?,
                "best_dev_f1" => best_dev_f1 = Some(parse_value::<f64>(v, k, s)?),
                "epoch" => epoch = Some(parse_value::<usize>(v, k, s)?),
                _ => unreachable!("every configured key is handled"),
            }
        }
        cfg.model
            .validate()
            .map_err(|e| Error::checkpoint("config", e.to_string()))?;

        let label_set = read_label_lines(&mut lines)?;

        let token_vocab = TokenVocab::from_tokens(
            read_entries(&mut lines, "tokens", "token")?
                .iter()
                .map(String::as_str)
                .collect::<Vec<_>>(),
        );
        let char_entries = read_entries(&mut lines, "chars", "char")?;
        let mut char_vocab = CharVocab::default();
        for e in &char_entries {
            let mut it = e.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => {
                    char_vocab.insert(c);
                }
                _ => return Err(Error::checkpoint("chars", format!("`{e}` is not one character"))),
            }
        }
        if char_vocab.len() != char_entries.len() + 1 {
            return Err(Error::checkpoint("chars", "duplicate entry"));
        }

        let mut params = ModelParameters::init(
            &cfg.model,
            token_vocab.len(),
            char_vocab.len(),
            label_set.len(),
            None,
            &mut seeded_rng(0),
        )
        .map_err(|e| Error::checkpoint("arrays", e.to_string()))?;
        let expected: Vec<(String, usize, usize)> = params
            .arrays()
            .iter()
            .map(|a| (a.name.clone(), a.rows, a.cols))
            .collect();
        for (name, rows, cols) in &expected {
            let line = lines
                .next()
                .ok_or_else(|| Error::checkpoint("arrays", format!("missing header for `{name}`")))?;
            if line != format!("array\t{name}\t{rows}\t{cols}") {
                return Err(Error::checkpoint(
                    "arrays",
                    format!("expected `{name}` {rows}x{cols}, found `{line}`"),
                ));
            }
        }
        if let Some(extra) = lines.next() {
            return Err(Error::checkpoint("header", format!("unexpected line `{extra}`")));
        }
        let mut reader = PayloadReader::new(payload);
        for ((name, _, _), dst) in expected.iter().zip(params.arrays_mut()) {
            let values = reader.take(dst.len(), name)?;
            dst.copy_from_slice(&values);
        }
        reader.finish()?;

        Ok(Checkpoint {
            train_config: cfg.clone(),
            tagger: Tagger {
                config: cfg.model,
                label_set,
                token_vocab,
                char_vocab,
                params,
            },
            best_dev_f1: best_dev_f1.expect("parsed above"),
            epoch: epoch.expect("parsed above"),
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, LabelSet};
    use crate::recurrent::OutputGate;
    use crate::sequence_model::ModelConfig;
    use crate::corpus::{Dataset, LabeledSequence};
    use crate::training::{predict_dataset, train};

    fn data() -> Dataset {
        let ls = LabelSet::new([
            ("O", Category::O, false),
            ("PATIENT", Category::Name, true),
            ("HOSPITAL", Category::Location, false),
        ])
        .unwrap();
        let seqs = ["Ann at Mercy", "Bo\tat\\Mercy General", "x y"]
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let words: Vec<&str> = s.split(' ').collect();
                let labels = words
                    .iter()
                    .map(|w| match w.chars().next() {
                        Some('A' | 'B') => 1,
                        Some('M' | 'G') => 2,
                        _ => 0,
                    })
                    .collect();
                LabeledSequence::from_words(format!("n{i}"), &words, labels).unwrap()
            })
            .collect();
        Dataset::new(seqs, ls).unwrap()
    }

    fn trained(model: ModelConfig) -> Checkpoint {
        let d = data();
        let c = TrainConfig {
            max_epochs: 2,
            seed: 3,
            model: ModelConfig {
                char_dim: 3,
                char_hidden: 2,
                token_dim: 4,
                label_hidden: 3,
                ff_hidden: 3,
                ..model
            },
            ..TrainConfig::default()
        };
        train(&d, &d, &c, None, |_| {}).unwrap().checkpoint
    }

    #[test]
    fn round_trip_is_exact() {
        for model in [
            ModelConfig::default(),
            ModelConfig { seq_opt: false, ..ModelConfig::default() },
            ModelConfig { char_emb: false, ..ModelConfig::default() },
            ModelConfig { token_emb: false, output_gate: OutputGate::Literal, ..ModelConfig::default() },
        ] {
            let ck = trained(model);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
            let d = data();
            assert_eq!(predict_dataset(&back.tagger, &d).unwrap(), predict_dataset(&ck.tagger, &d).unwrap());
        }
    }

    #[test]
    fn ablations_persist() {
        let ck = Checkpoint::from_bytes(&trained(ModelConfig { char_emb: false, ..ModelConfig::default() }).to_bytes()).unwrap();
        assert!(!ck.tagger.config.char_emb);
        assert!(ck.tagger.params.char_embeddings.is_none());
        assert!(ck.tagger.params.char_encoder.is_none());
        let ck = trained(ModelConfig { seq_opt: false, ..ModelConfig::default() });
        let text = String::from_utf8_lossy(&ck.to_bytes()).into_owned();
        assert!(text.contains("model.seq_opt\tfalse\n"));
        assert!(!text.contains("array\ttransitions"));
    }

    #[test]
    fn corruption_names_the_section() {
        let bytes = trained(ModelConfig::default()).to_bytes();
        let section = |b: &[u8]| match Checkpoint::from_bytes(b) {
            Err(Error::Checkpoint { section, .. }) => section,
            other => panic!("expected checkpoint error, got {other:?}"),
        };
        assert_eq!(section(&bytes[..bytes.len() - 5]), "transitions");
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(section(&extra), "arrays");
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let header_end = text.find("\nend\n").unwrap();
        assert_eq!(section(&bytes[..header_end]), "header");
        let bad = text.replacen("model.token_dim\t4", "model.token_dim\tfour", 1);
        assert_eq!(section(bad.as_bytes()), "config");
        let bad = text.replacen("label\tPATIENT\tNAME", "label\tPATIENT\tNOPE", 1);
        assert_eq!(section(bad.as_bytes()), "labels");
        assert_eq!(section(b"garbage\n"), "magic");
        assert_eq!(section(b""), "magic");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let bytes = trained(ModelConfig::default()).to_bytes();
        let text = String::from_utf8_lossy(&bytes).replacen("DEID-MODEL v1", "DEID-MODEL v9", 1);
        assert!(matches!(Checkpoint::from_bytes(text.as_bytes()), Err(Error::Version(v)) if v == "v9"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = trained(ModelConfig::default());
        save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
