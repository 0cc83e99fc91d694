//! The `deid` command line. Every subcommand composes library operations
//! and records a [`RunManifest`] next to its outputs.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::corpus::{read_token_file, write_token_file, Dataset, LabelSet};
use crate::embeddings::{load_pretrained, EmbeddingTable, TokenVocab};
use crate::error::{Error, Result};
use crate::evaluation::{approx_randomization, ensemble_union, token_prf, EvalMode, Metric};
use crate::feature_crf::{
    builtin_gazetteers, default_templates, parse_templates, train_baseline, BaselineConfig, BaselineModel, Gazetteer,
    BASELINE_MAGIC,
};
use crate::numerics::seeded_rng;
use crate::synth_corpus::{corpus_stats, generate_split, write_standoff, GenConfig, PART_NAMES};
use crate::training::{
    predict_dataset, save_checkpoint, sweep, sweep_table, train, EpochLog, TrainConfig,
    CHECKPOINT_MAGIC,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "deid", version, about = "Detect protected health information in clinical notes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic annotated corpus with train/dev/test splits.
    Generate(GenerateArgs),
    /// Train the neural tagger or the feature CRF baseline.
    Train(TrainArgs),
    /// Label a token file with a trained model.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Combine two prediction files by PHI union.
    Ensemble(EnsembleArgs),
    /// Approximate-randomization test between two prediction files.
    Significance(SignificanceArgs),
    /// Train at several training-set fractions and tabulate test scores.
    Sweep(SweepArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// `key = value` generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    notes: Option<usize>,
    /// Train/dev/test fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    split: Vec<f64>,
    /// Draw names for each split from its own part of the name lists.
    #[arg(long)]
    disjoint_names: bool,
    /// Also write `<id>.txt` / `<id>.ann` stand-off files per split.
    #[arg(long)]
    standoff: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Ann,
    Crf,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    /// `key = value` training settings; flags below override them.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Label inventory file; the built-in i2b2 set otherwise.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Pretrained token vectors (`token v1 … vd` per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Drop the label sequence optimization layer.
    #[arg(long)]
    no_seq_opt: bool,
    /// Ignore pretrained vectors.
    #[arg(long)]
    no_pretrain: bool,
    /// Drop token embeddings.
    #[arg(long)]
    no_token_emb: bool,
    /// Drop character-based token embeddings.
    #[arg(long)]
    no_char_emb: bool,
    /// Feed pre-softmax scores to the chain layer.
    #[arg(long)]
    raw_score_emissions: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "ann")]
    model: ModelKind,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Feature template file (baseline only).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Gazetteer files (baseline only); the built-in lists otherwise.
    #[arg(long = "gazetteer")]
    gazetteers: Vec<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint or baseline model file.
    #[arg(long)]
    model: PathBuf,
    /// Token file; its labels are ignored.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ReportFormat {
    Text,
    Kv,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// `binary-hipaa`, `per-type`, `per-category` or `all`.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Primary predictions; their type wins conflicts between PHI types of
    /// equal standing.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SignificanceArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "binary-hipaa")]
    mode: String,
    #[arg(long, default_value = "f1")]
    metric: String,
    #[arg(long, default_value_t = 9999)]
    shuffles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Scored set; the dev set when absent.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.5,1.0")]
    fractions: Vec<f64>,
    /// Output directory for the checkpoints and table.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance record written beside every run's outputs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<PathBuf>,
}

pub const MANIFEST_MAGIC: &str = "DEID-MANIFEST v1";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            ..Self::default()
        }
    }

    /// Renders the manifest, hashing every listed file. Output paths are
    /// resolved against `dir`.
    pub fn render(&self, dir: &Path) -> Result<String> {
        let mut s = format!("{MANIFEST_MAGIC}\nsubcommand\t{}\n", self.subcommand);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed\t{seed}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config\t{k}\t{v}");
        }
        for p in &self.inputs {
            let _ = writeln!(s, "input\t{}\t{}", p.display(), sha256_file(p)?);
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output\t{}\t{}", p.display(), sha256_file(&dir.join(p))?);
        }
        Ok(s)
    }

    /// Writes the manifest to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::write(path, self.render(dir)?).map_err(|e| Error::io(path, e))
    }
}

/// Manifest path for a single-file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn file_name(p: &Path) -> PathBuf {
    p.file_name().map(PathBuf::from).unwrap_or_else(|| p.to_path_buf())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: no + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn label_set(path: Option<&Path>) -> Result<LabelSet> {
    path.map_or_else(|| Ok(LabelSet::i2b2()), LabelSet::load)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Train(a) => cmd_train(a, err),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Significance(a) => cmd_significance(a, out),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Stats(a) => cmd_stats(a, out),
    }
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut cfg = GenConfig::default();
    let mut manifest = RunManifest::new("generate");
    if let Some(path) = &a.config {
        for (k, v) in read_key_values(path)? {
            cfg.set(&k, &v)?;
            manifest.config.push((k, v));
        }
        manifest.inputs.push(path.clone());
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.notes {
        cfg.notes = n;
    }
    cfg.disjoint_names |= a.disjoint_names;
    let fractions: [f64; 3] = a
        .split
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidArgument("--split takes three fractions".into()))?;
    manifest.seed = Some(cfg.seed);
    manifest.config.extend([
        ("notes".to_string(), cfg.notes.to_string()),
        ("min_tokens".to_string(), cfg.min_tokens.to_string()),
        ("max_tokens".to_string(), cfg.max_tokens.to_string()),
        ("disjoint_names".to_string(), cfg.disjoint_names.to_string()),
        ("split".to_string(), format!("{},{},{}", fractions[0], fractions[1], fractions[2])),
    ]);
    for (c, d) in crate::corpus::Category::PHI.iter().zip(cfg.densities) {
        manifest.config.push((format!("density.{c}"), d.to_string()));
    }

    let split = generate_split(&cfg, fractions)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut all: Option<Dataset> = None;
    for (name, (notes, ds)) in PART_NAMES.iter().zip(&split.parts) {
        let file = PathBuf::from(format!("{name}.tok"));
        write_token_file(ds, &a.out.join(&file))?;
        manifest.outputs.push(file);
        if a.standoff {
            let dir = a.out.join("standoff").join(name);
            write_standoff(notes, &dir)?;
            for n in notes {
                for ext in ["txt", "ann"] {
                    manifest.outputs.push(PathBuf::from(format!("standoff/{name}/{}.{ext}", n.note_id)));
                }
            }
        }
        all = Some(match all {
            None => ds.clone(),
            Some(acc) => acc.concat(ds)?,
        });
    }
    let all = all.expect("three parts");
    write_token_file(&all, &a.out.join("all.tok"))?;
    manifest.outputs.insert(0, PathBuf::from("all.tok"));
    let stats = corpus_stats(&all).to_tsv();
    write_file(&a.out.join("stats.tsv"), &stats)?;
    manifest.outputs.push(PathBuf::from("stats.tsv"));
    manifest.write(&a.out.join("manifest.tsv"))?;
    let _ = out.write_all(stats.as_bytes());
    Ok(())
}

/// Resolved ANN settings plus any pretrained vectors.
struct AnnSetup {
    config: TrainConfig,
    pretrained: Option<(TokenVocab, EmbeddingTable)>,
    settings: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
}

fn ann_setup(opts: &TrainOpts, train_fraction: Option<f64>) -> Result<AnnSetup> {
    let mut cfg = TrainConfig::default();
    let mut settings = Vec::new();
    let mut inputs = Vec::new();
    let mut embeddings = opts.embeddings.clone();
    if let Some(path) = &opts.config {
        for (k, v) in read_key_values(path)? {
            if k == "embeddings" {
                embeddings = embeddings.or_else(|| Some(PathBuf::from(&v)));
            } else {
                cfg.set(&k, &v)?;
            }
            settings.push((k, v));
        }
        inputs.push(path.clone());
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = opts.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = opts.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = opts.patience {
        cfg.patience = v;
    }
    if let Some(v) = opts.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = train_fraction {
        cfg.train_fraction = v;
    }
    let m = &mut cfg.model;
    m.seq_opt &= !opts.no_seq_opt;
    m.token_emb &= !opts.no_token_emb;
    m.char_emb &= !opts.no_char_emb;
    m.raw_score_emissions |= opts.raw_score_emissions;
    m.pretrained = embeddings.is_some() && !opts.no_pretrain && m.token_emb;
    let pretrained = if m.pretrained {
        let path = embeddings.expect("checked above");
        let loaded = load_pretrained(&path, m.token_dim, &mut seeded_rng(cfg.seed))?;
        inputs.push(path);
        Some(loaded)
    } else {
        None
    };
    cfg.validate()?;
    Ok(AnnSetup {
        config: cfg,
        pretrained,
        settings,
        inputs,
    })
}

fn resolved_train_settings(cfg: &TrainConfig) -> Vec<(String, String)> {
    let m = &cfg.model;
    [
        ("learning_rate", cfg.learning_rate.to_string()),
        ("clip", cfg.clip.to_string()),
        ("max_epochs", cfg.max_epochs.to_string()),
        ("patience", cfg.patience.to_string()),
        ("dropout", cfg.dropout.to_string()),
        ("train_fraction", cfg.train_fraction.to_string()),
        ("singleton_unk", cfg.singleton_unk.to_string()),
        ("char_dim", m.char_dim.to_string()),
        ("char_hidden", m.char_hidden.to_string()),
        ("token_dim", m.token_dim.to_string()),
        ("label_hidden", m.label_hidden.to_string()),
        ("ff_hidden", m.ff_hidden.to_string()),
        ("seq_opt", m.seq_opt.to_string()),
        ("token_emb", m.token_emb.to_string()),
        ("char_emb", m.char_emb.to_string()),
        ("pretrained", m.pretrained.to_string()),
        ("output_gate", m.output_gate.as_str().to_string()),
        ("raw_score_emissions", m.raw_score_emissions.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn log_lines(log: &[EpochLog]) -> String {
    log.iter().map(|l| l.to_line() + "\n").collect()
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, err: &mut dyn std::io::Write) -> Result<()> {
    let ls = label_set(a.opts.labels.as_deref())?;
    let train_set = read_token_file(&a.train, &ls)?;
    let dev = read_token_file(&a.dev, &ls)?;
    let mut manifest = RunManifest::new("train");
    manifest.inputs.extend([a.train.clone(), a.dev.clone()]);
    if let Some(l) = &a.opts.labels {
        manifest.inputs.push(l.clone());
    }
    let (model_bytes, log) = match a.model {
        ModelKind::Ann => {
            let setup = ann_setup(&a.opts, a.train_fraction)?;
            manifest.seed = Some(setup.config.seed);
            manifest.config.push(("model".into(), "ann".into()));
            manifest.config.extend(resolved_train_settings(&setup.config));
            manifest.inputs.extend(setup.inputs.iter().cloned());
            let outcome = train(&train_set, &dev, &setup.config, setup.pretrained.as_ref(), |l| {
                let _ = writeln!(err, "{}", l.to_line());
            })?;
            (outcome.checkpoint.to_bytes(), outcome.log)
        }
        ModelKind::Crf => {
            let mut cfg = BaselineConfig::default();
            if let Some(path) = &a.opts.config {
                for (k, v) in read_key_values(path)? {
                    cfg.set(&k, &v)?;
                }
                manifest.inputs.push(path.clone());
            }
            if let Some(v) = a.opts.seed {
                cfg.seed = v;
            }
            if let Some(v) = a.opts.epochs {
                cfg.max_epochs = v;
            }
            if let Some(v) = a.opts.learning_rate {
                cfg.learning_rate = v;
            }
            if let Some(v) = a.opts.patience {
                cfg.patience = v;
            }
            let templates = match &a.templates {
                Some(p) => {
                    manifest.inputs.push(p.clone());
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    parse_templates(&text, &p.display().to_string())?
                }
                None => default_templates(),
            };
            let gazetteers = if a.gazetteers.is_empty() {
                builtin_gazetteers()
            } else {
                manifest.inputs.extend(a.gazetteers.iter().cloned());
                a.gazetteers.iter().map(|p| Gazetteer::load(p)).collect::<Result<Vec<_>>>()?
            };
            manifest.seed = Some(cfg.seed);
            manifest.config.extend([
                ("model".to_string(), "crf".to_string()),
                ("learning_rate".to_string(), cfg.learning_rate.to_string()),
                ("l2".to_string(), cfg.l2.to_string()),
                ("max_epochs".to_string(), cfg.max_epochs.to_string()),
                ("patience".to_string(), cfg.patience.to_string()),
            ]);
            let outcome = train_baseline(&train_set, &dev, &templates, &gazetteers, &cfg, |l| {
                let _ = writeln!(err, "{}", l.to_line());
            })?;
            (outcome.model.to_bytes(), outcome.log)
        }
    };
    write_file(&a.out, model_bytes)?;
    let log_file = log_path(&a.out);
    write_file(&log_file, log_lines(&log))?;
    manifest.outputs.extend([file_name(&a.out), file_name(&log_file)]);
    manifest.write(&manifest_path_for(&a.out))
}

/// A model file of either kind.
pub enum AnyModel {
    Ann(Box<crate::training::Checkpoint>),
    Crf(Box<BaselineModel>),
}

impl AnyModel {
    /// Loads by magic line.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"DEID-CRF ") {
            Ok(Self::Crf(Box::new(BaselineModel::from_bytes(&bytes)?)))
        } else if bytes.starts_with(b"DEID-MODEL ") {
            Ok(Self::Ann(Box::new(crate::training::Checkpoint::from_bytes(&bytes)?)))
        } else {
            Err(Error::checkpoint(
                "magic",
                format!("expected `{CHECKPOINT_MAGIC}` or `{BASELINE_MAGIC}`"),
            ))
        }
    }

    pub fn label_set(&self) -> &LabelSet {
        match self {
            Self::Ann(c) => &c.tagger.label_set,
            Self::Crf(m) => &m.label_set,
        }
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<Vec<usize>>> {
        match self {
            Self::Ann(c) => predict_dataset(&c.tagger, data),
            Self::Crf(m) => m.predict_dataset(data),
        }
    }
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = AnyModel::load(&a.model)?;
    let input = read_token_file(&a.input, model.label_set())?;
    let pred = model.predict(&input)?;
    let out = input.with_labels(pred)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_token_file(&out, &a.out)?;
    let mut manifest = RunManifest::new("predict");
    manifest.inputs.extend([a.model.clone(), a.input.clone()]);
    manifest.outputs.push(file_name(&a.out));
    manifest.write(&manifest_path_for(&a.out))
}

fn read_aligned(gold: &Dataset, path: &Path) -> Result<Vec<Vec<usize>>> {
    let pred = read_token_file(path, &gold.label_set)?;
    if pred.len() != gold.len() {
        return Err(Error::Misaligned(format!(
            "{} has {} sequences, gold has {}",
            path.display(),
            pred.len(),
            gold.len()
        )));
    }
    for (p, g) in pred.sequences.iter().zip(&gold.sequences) {
        if p.len() != g.len() || p.texts().ne(g.texts()) {
            return Err(Error::Misaligned(format!(
                "note `{}` in {} does not match gold note `{}`",
                p.note_id,
                path.display(),
                g.note_id
            )));
        }
    }
    Ok(pred.labels())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let modes: Vec<EvalMode> = if a.mode == "all" {
        EvalMode::ALL.to_vec()
    } else {
        vec![a.mode.parse()?]
    };
    let gold = read_token_file(&a.gold, &label_set(a.labels.as_deref())?)?;
    let pred = read_aligned(&gold, &a.pred)?;
    let mut text = String::new();
    for m in modes {
        let r = token_prf(&gold, &pred, m)?;
        text += &match a.format {
            ReportFormat::Text => r.to_text(),
            ReportFormat::Kv => r.to_key_values(),
        };
        text.push('\n');
    }
    write_file(&a.out, &text)?;
    let _ = out.write_all(text.as_bytes());
    let mut manifest = RunManifest::new("evaluate");
    manifest.config.push(("mode".into(), a.mode.clone()));
    manifest.inputs.extend([a.gold.clone(), a.pred.clone()]);
    manifest.outputs.push(file_name(&a.out));
    manifest.write(&manifest_path_for(&a.out))
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<()> {
    let ls = label_set(a.labels.as_deref())?;
    let da = read_token_file(&a.a, &ls)?;
    let pb = read_aligned(&da, &a.b)?;
    let union = ensemble_union(&da.labels(), &pb, &ls)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_token_file(&da.with_labels(union)?, &a.out)?;
    let mut manifest = RunManifest::new("ensemble");
    manifest.inputs.extend([a.a.clone(), a.b.clone()]);
    manifest.outputs.push(file_name(&a.out));
    manifest.write(&manifest_path_for(&a.out))
}

fn cmd_significance(a: SignificanceArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mode: EvalMode = a.mode.parse()?;
    let metric: Metric = a.metric.parse()?;
    let gold = read_token_file(&a.gold, &label_set(a.labels.as_deref())?)?;
    let pa = read_aligned(&gold, &a.a)?;
    let pb = read_aligned(&gold, &a.b)?;
    let p = approx_randomization(&pa, &pb, &gold, mode, metric, a.shuffles, a.seed)?;
    let ra = token_prf(&gold, &pa, mode)?;
    let rb = token_prf(&gold, &pb, mode)?;
    let text = format!(
        "mode\t{}\nmetric\t{}\nshuffles\t{}\nseed\t{}\nmetric_a\t{:.6}\nmetric_b\t{:.6}\np_value\t{p}\n",
        mode.as_str(),
        a.metric,
        a.shuffles,
        a.seed,
        ra.counts.metric(metric),
        rb.counts.metric(metric)
    );
    write_file(&a.out, &text)?;
    let _ = out.write_all(text.as_bytes());
    let mut manifest = RunManifest::new("significance");
    manifest.seed = Some(a.seed);
    manifest.config.extend([
        ("mode".to_string(), a.mode.clone()),
        ("metric".to_string(), a.metric.clone()),
        ("shuffles".to_string(), a.shuffles.to_string()),
    ]);
    manifest.inputs.extend([a.gold.clone(), a.a.clone(), a.b.clone()]);
    manifest.outputs.push(file_name(&a.out));
    manifest.write(&manifest_path_for(&a.out))
}

fn cmd_sweep(a: SweepArgs, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    if a.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidArgument("sweep fractions must lie in (0, 1]".into()));
    }
    let ls = label_set(a.opts.labels.as_deref())?;
    let train_set = read_token_file(&a.train, &ls)?;
    let dev = read_token_file(&a.dev, &ls)?;
    let eval = match &a.test {
        Some(p) => read_token_file(p, &ls)?,
        None => dev.clone(),
    };
    let setup = ann_setup(&a.opts, None)?;
    let rows = sweep(&train_set, &dev, &eval, &setup.config, &a.fractions, setup.pretrained.as_ref(), |f, l| {
        let _ = writeln!(err, "{f}\t{}", l.to_line());
    })?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut manifest = RunManifest::new("sweep");
    manifest.seed = Some(setup.config.seed);
    manifest.config.extend(setup.settings.iter().cloned());
    manifest.config.extend(resolved_train_settings(&setup.config));
    manifest.config.push((
        "fractions".into(),
        a.fractions.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    ));
    manifest.inputs.extend([a.train.clone(), a.dev.clone()]);
    manifest.inputs.extend(a.test.iter().cloned());
    manifest.inputs.extend(setup.inputs.iter().cloned());
    for r in &rows {
        let name = PathBuf::from(format!("model_{}.ckpt", r.fraction));
        save_checkpoint(&r.checkpoint, &a.out.join(&name))?;
        manifest.outputs.push(name);
    }
    let table = sweep_table(&rows);
    write_file(&a.out.join("sweep.tsv"), &table)?;
    manifest.outputs.push(PathBuf::from("sweep.tsv"));
    manifest.write(&a.out.join("manifest.tsv"))?;
    let _ = out.write_all(table.as_bytes());
    Ok(())
}

fn cmd_stats(a: StatsArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let data = read_token_file(&a.data, &label_set(a.labels.as_deref())?)?;
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let text = corpus_stats(&data).to_tsv();
    write_file(&a.out, &text)?;
    let _ = out.write_all(text.as_bytes());
    let mut manifest = RunManifest::new("stats");
    manifest.inputs.push(a.data.clone());
    manifest.outputs.push(file_name(&a.out));
    manifest.write(&manifest_path_for(&a.out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("deid").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["stats", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
        assert_eq!(run_args(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn missing_file_exits_two_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.tsv");
        let (code, _, err) = run_args(&["stats", "--data", "/no/such/file.tok", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("/no/such/file.tok"), "{err}");
    }

    #[test]
    fn key_value_config_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "# settings\nnotes = 12\n\nseed=3 # trailing\n").unwrap();
        assert_eq!(
            read_key_values(&p).unwrap(),
            vec![("notes".to_string(), "12".to_string()), ("seed".to_string(), "3".to_string())]
        );
        fs::write(&p, "notes 12\n").unwrap();
        assert!(matches!(read_key_values(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn manifest_lists_checksums() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "abc").unwrap();
        let m = RunManifest {
            subcommand: "stats".into(),
            seed: Some(4),
            config: vec![("k".into(), "v".into())],
            inputs: vec![],
            outputs: vec![PathBuf::from("a.txt")],
        };
        let text = m.render(dir.path()).unwrap();
        assert_eq!(
            text,
            "DEID-MANIFEST v1\nsubcommand\tstats\nseed\t4\nconfig\tk\tv\n\
             output\ta.txt\tba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad\n"
        );
    }
}
