//! The full tagger: character-enhanced token embeddings, a label-prediction
//! BiLSTM, a one-hidden-layer feed-forward network producing per-token label
//! probabilities, and the optional chain layer on top.
//!
//! With the chain layer on, the training objective is the negative log
//! probability of the gold label sequence and decoding is Viterbi. Without
//! it, the objective is per-token cross-entropy and decoding is a per-token
//! argmax.

use std::collections::BTreeSet;

use crate::chain_crf::{log_partition, posterior_marginals, sequence_score, viterbi, TransitionMatrix};
use crate::corpus::LabelSet;
use crate::embeddings::{dropout_mask, random_table, CharVocab, EmbeddingTable, TokenVocab};
use crate::error::{Error, Result};
use crate::numerics::{argmax, axpy, logsumexp_unchecked, softmax_unchecked, Mat64, Rng, Vec64};
use crate::recurrent::{
    bilstm_backward_per_element, bilstm_backward_summary, bilstm_trace, BiLstmParams, BiLstmTrace, OutputGate,
};

/// Architecture and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub char_dim: usize,
    pub char_hidden: usize,
    pub token_dim: usize,
    pub label_hidden: usize,
    pub ff_hidden: usize,
    /// Label sequence optimization (chain layer).
    pub seq_opt: bool,
    pub token_emb: bool,
    pub char_emb: bool,
    /// Token table seeded from pretrained vectors.
    pub pretrained: bool,
    pub output_gate: OutputGate,
    /// Feed pre-softmax scores to the chain layer instead of probabilities.
    pub raw_score_emissions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            char_dim: 25,
            char_hidden: 25,
            token_dim: 100,
            label_hidden: 100,
            ff_hidden: 100,
            seq_opt: true,
            token_emb: true,
            char_emb: true,
            pretrained: false,
            output_gate: OutputGate::Cell,
            raw_score_emissions: false,
        }
    }
}

impl ModelConfig {
    /// Width of `e_i`.
    pub fn embedding_dim(&self) -> usize {
        usize::from(self.token_emb) * self.token_dim + usize::from(self.char_emb) * 2 * self.char_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if !self.token_emb && !self.char_emb {
            return Err(Error::InvalidArgument(
                "token and character embeddings cannot both be disabled".into(),
            ));
        }
        let dims = [
            (self.token_emb, self.token_dim, "token_dim"),
            (self.char_emb, self.char_dim, "char_dim"),
            (self.char_emb, self.char_hidden, "char_hidden"),
            (true, self.label_hidden, "label_hidden"),
            (true, self.ff_hidden, "ff_hidden"),
        ];
        for (used, d, name) in dims {
            if used && d == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.pretrained && !self.token_emb {
            return Err(Error::InvalidArgument("pretrained vectors need token embeddings".into()));
        }
        Ok(())
    }

    /// Closed-form trainable value count for vocabularies of the given sizes
    /// (each including its unknown row) and `labels` output labels.
    pub fn parameter_count(&self, token_vocab: usize, char_vocab: usize, labels: usize) -> usize {
        let mut n = 0;
        if self.token_emb {
            n += token_vocab * self.token_dim;
        }
        if self.char_emb {
            n += char_vocab * self.char_dim + BiLstmParams::count(self.char_dim, self.char_hidden);
        }
        n += BiLstmParams::count(self.embedding_dim(), self.label_hidden);
        n += self.ff_hidden * 2 * self.label_hidden + self.ff_hidden;
        n += labels * self.ff_hidden + labels;
        if self.seq_opt {
            n += labels * labels;
        }
        n
    }
}

/// Every trainable array. Absent components are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub token_embeddings: Option<EmbeddingTable>,
    pub char_embeddings: Option<EmbeddingTable>,
    pub char_encoder: Option<BiLstmParams>,
    pub label_lstm: BiLstmParams,
    /// `ff_hidden × 2·label_hidden`
    pub hidden_w: Mat64,
    pub hidden_b: Vec64,
    /// `labels × ff_hidden`
    pub output_w: Mat64,
    pub output_b: Vec64,
    pub transitions: Option<TransitionMatrix>,
}

/// A named view of one parameter array.
pub struct ArrayView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

impl ModelParameters {
    /// Randomly initialized parameters. When `pretrained` is given, its rows
    /// seed the first rows of the token table.
    pub fn init(
        config: &ModelConfig,
        token_vocab: usize,
        char_vocab: usize,
        labels: usize,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let token_embeddings = if config.token_emb {
            let mut table = random_table(token_vocab, config.token_dim, rng);
            if let Some(p) = pretrained {
                if p.cols() != config.token_dim || p.rows() > token_vocab {
                    return Err(Error::Dimension(format!(
                        "pretrained table is {}x{}, model expects at most {}x{}",
                        p.rows(),
                        p.cols(),
                        token_vocab,
                        config.token_dim
                    )));
                }
                for r in 0..p.rows() {
                    table.row_mut(r).copy_from_slice(p.row(r));
                }
            }
            Some(table)
        } else {
            None
        };
        let (char_embeddings, char_encoder) = if config.char_emb {
            (
                Some(random_table(char_vocab, config.char_dim, rng)),
                Some(BiLstmParams::init(config.char_dim, config.char_hidden, config.output_gate, rng)),
            )
        } else {
            (None, None)
        };
        let label_lstm = BiLstmParams::init(config.embedding_dim(), config.label_hidden, config.output_gate, rng);
        Ok(Self {
            token_embeddings,
            char_embeddings,
            char_encoder,
            label_lstm,
            hidden_w: Mat64::xavier(config.ff_hidden, 2 * config.label_hidden, rng),
            hidden_b: vec![0.0; config.ff_hidden],
            output_w: Mat64::xavier(labels, config.ff_hidden, rng),
            output_b: vec![0.0; labels],
            transitions: config.seq_opt.then(|| TransitionMatrix::zeros(labels)),
        })
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat64| Mat64::zeros(m.rows(), m.cols());
        Self {
            token_embeddings: self.token_embeddings.as_ref().map(z),
            char_embeddings: self.char_embeddings.as_ref().map(z),
            char_encoder: self.char_encoder.as_ref().map(BiLstmParams::zeros_like),
            label_lstm: self.label_lstm.zeros_like(),
            hidden_w: z(&self.hidden_w),
            hidden_b: vec![0.0; self.hidden_b.len()],
            output_w: z(&self.output_w),
            output_b: vec![0.0; self.output_b.len()],
            transitions: self.transitions.as_ref().map(|t| TransitionMatrix(z(&t.0))),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.output_b.len()
    }

    /// All arrays in serialization order.
    pub fn arrays(&self) -> Vec<ArrayView<'_>> {
        fn view<'a>(name: &str, rows: usize, cols: usize, values: &'a [f64]) -> ArrayView<'a> {
            ArrayView {
                name: name.to_string(),
                rows,
                cols,
                values,
            }
        }
        fn mat<'a>(name: &str, m: &'a Mat64) -> ArrayView<'a> {
            view(name, m.rows(), m.cols(), m.as_slice())
        }
        fn lstm<'a>(prefix: &str, p: &'a BiLstmParams, out: &mut Vec<ArrayView<'a>>) {
            for (dir, q) in [("fwd", &p.forward), ("bwd", &p.backward)] {
                for (name, rows, cols, values) in q.arrays() {
                    out.push(view(&format!("{prefix}.{dir}.{name}"), rows, cols, values));
                }
            }
        }
        let mut out = Vec::new();
        if let Some(t) = &self.token_embeddings {
            out.push(mat("token_embeddings", t));
        }
        if let Some(t) = &self.char_embeddings {
            out.push(mat("char_embeddings", t));
        }
        if let Some(p) = &self.char_encoder {
            lstm("char_lstm", p, &mut out);
        }
        lstm("label_lstm", &self.label_lstm, &mut out);
        out.push(mat("hidden_w", &self.hidden_w));
        out.push(view("hidden_b", self.hidden_b.len(), 1, &self.hidden_b));
        out.push(mat("output_w", &self.output_w));
        out.push(view("output_b", self.output_b.len(), 1, &self.output_b));
        if let Some(t) = &self.transitions {
            out.push(mat("transitions", &t.0));
        }
        out
    }

    /// Mutable arrays in the same order as [`ModelParameters::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let (tok, chr, dense) = self.split_mut();
        tok.into_iter()
            .chain(chr)
            .map(Mat64::as_mut_slice)
            .chain(dense)
            .collect()
    }

    fn dense_arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.split_mut().2
    }

    /// The two embedding tables and every other array, borrowed disjointly.
    fn split_mut(&mut self) -> (Option<&mut Mat64>, Option<&mut Mat64>, Vec<&mut [f64]>) {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(p) = &mut self.char_encoder {
            out.extend(p.forward.arrays_mut());
            out.extend(p.backward.arrays_mut());
        }
        out.extend(self.label_lstm.forward.arrays_mut());
        out.extend(self.label_lstm.backward.arrays_mut());
        out.push(self.hidden_w.as_mut_slice());
        out.push(&mut self.hidden_b);
        out.push(self.output_w.as_mut_slice());
        out.push(&mut self.output_b);
        if let Some(t) = &mut self.transitions {
            out.push(t.0.as_mut_slice());
        }
        (self.token_embeddings.as_mut(), self.char_embeddings.as_mut(), out)
    }

    pub fn count(&self) -> usize {
        self.arrays().iter().map(|a| a.values.len()).sum()
    }

    /// All values concatenated in serialization order.
    pub fn to_flat(&self) -> Vec64 {
        self.arrays().iter().flat_map(|a| a.values.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.count()
            )));
        }
        let mut off = 0;
        for a in self.arrays_mut() {
            let n = a.len();
            a.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.values.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffer shaped like [`ModelParameters`]. Embedding rows are
/// tracked sparsely so zeroing, norms, and updates touch only used rows.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub values: ModelParameters,
    token_rows: BTreeSet<usize>,
    char_rows: BTreeSet<usize>,
}

impl Gradients {
    pub fn new(params: &ModelParameters) -> Self {
        Self {
            values: params.zeros_like(),
            token_rows: BTreeSet::new(),
            char_rows: BTreeSet::new(),
        }
    }

    pub fn zero(&mut self) {
        for a in self.values.dense_arrays_mut() {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(t) = &mut self.values.token_embeddings {
            for &r in &self.token_rows {
                t.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if let Some(t) = &mut self.values.char_embeddings {
            for &r in &self.char_rows {
                t.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.token_rows.clear();
        self.char_rows.clear();
    }

    /// Rows of the token table with a (possibly) nonzero gradient.
    pub fn touched_token_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.token_rows.iter().copied()
    }

    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for a in self.values.arrays() {
            if a.name == "token_embeddings" || a.name == "char_embeddings" {
                continue;
            }
            sq += crate::numerics::l2_norm_sq(a.values);
        }
        if let Some(t) = &self.values.token_embeddings {
            sq += self.token_rows.iter().map(|&r| crate::numerics::l2_norm_sq(t.row(r))).sum::<f64>();
        }
        if let Some(t) = &self.values.char_embeddings {
            sq += self.char_rows.iter().map(|&r| crate::numerics::l2_norm_sq(t.row(r))).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.values.dense_arrays_mut() {
            a.iter_mut().for_each(|v| *v *= factor);
        }
        if let Some(t) = &mut self.values.token_embeddings {
            for &r in &self.token_rows {
                t.row_mut(r).iter_mut().for_each(|v| *v *= factor);
            }
        }
        if let Some(t) = &mut self.values.char_embeddings {
            for &r in &self.char_rows {
                t.row_mut(r).iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    /// `params -= lr · grad`.
    pub fn apply_sgd(&mut self, params: &mut ModelParameters, lr: f64) {
        let mut dst = params.dense_arrays_mut();
        let src = self.values.dense_arrays_mut();
        for (p, g) in dst.iter_mut().zip(src) {
            axpy(-lr, g, p);
        }
        drop(dst);
        if let (Some(p), Some(g)) = (&mut params.token_embeddings, &self.values.token_embeddings) {
            for &r in &self.token_rows {
                axpy(-lr, g.row(r), p.row_mut(r));
            }
        }
        if let (Some(p), Some(g)) = (&mut params.char_embeddings, &self.values.char_embeddings) {
            for &r in &self.char_rows {
                axpy(-lr, g.row(r), p.row_mut(r));
            }
        }
    }
}

/// A sequence mapped to vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSeq {
    pub token_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
}

impl EncodedSeq {
    pub fn len(&self) -> usize {
        self.token_ids.len().max(self.char_ids.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    char_traces: Vec<BiLstmTrace>,
    /// `e_i` after dropout.
    inputs: Vec<Vec64>,
    masks: Option<Vec<Vec64>>,
    label_trace: BiLstmTrace,
    label_out: Vec<Vec64>,
    hidden: Vec<Vec64>,
    /// Pre-softmax label scores.
    pub scores: Vec<Vec64>,
    /// Label probabilities `a_i`.
    pub probs: Vec<Vec64>,
}

/// Architecture, label set, vocabularies and parameters: everything needed to
/// tag a token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: ModelConfig,
    pub label_set: LabelSet,
    pub token_vocab: TokenVocab,
    pub char_vocab: CharVocab,
    pub params: ModelParameters,
}

impl Tagger {
    pub fn new(
        config: ModelConfig,
        label_set: LabelSet,
        token_vocab: TokenVocab,
        char_vocab: CharVocab,
        pretrained: Option<&EmbeddingTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let params = ModelParameters::init(
            &config,
            token_vocab.len(),
            char_vocab.len(),
            label_set.len(),
            pretrained,
            rng,
        )?;
        Ok(Self {
            config,
            label_set,
            token_vocab,
            char_vocab,
            params,
        })
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> EncodedSeq {
        EncodedSeq {
            token_ids: if self.config.token_emb {
                tokens.iter().map(|t| self.token_vocab.lookup(t.as_ref())).collect()
            } else {
                Vec::new()
            },
            char_ids: if self.config.char_emb {
                tokens.iter().map(|t| self.char_vocab.encode(t.as_ref())).collect()
            } else {
                Vec::new()
            },
        }
    }

    /// Runs the network. `dropout` is `(p, rng)` in training mode.
    pub fn forward_trace(&self, seq: &EncodedSeq, dropout: Option<(f64, &mut Rng)>) -> Result<ForwardTrace> {
        let n = seq.len();
        if n == 0 {
            return Err(Error::Empty("token sequence"));
        }
        let p = &self.params;
        let mut inputs: Vec<Vec64> = vec![Vec::with_capacity(self.config.embedding_dim()); n];
        if let Some(table) = &p.token_embeddings {
            for (e, &id) in inputs.iter_mut().zip(&seq.token_ids) {
                e.extend_from_slice(table.row(id));
            }
        }
        let mut char_traces = Vec::new();
        if let (Some(table), Some(enc)) = (&p.char_embeddings, &p.char_encoder) {
            for (e, ids) in inputs.iter_mut().zip(&seq.char_ids) {
                if ids.is_empty() {
                    return Err(Error::Empty("token"));
                }
                let xs: Vec<&[f64]> = ids.iter().map(|&c| table.row(c)).collect();
                let tr = bilstm_trace(&xs, enc)?;
                e.extend(tr.summary());
                char_traces.push(tr);
            }
        }
        let masks = match dropout {
            Some((prob, rng)) if prob > 0.0 => {
                let masks = inputs
                    .iter()
                    .map(|e| dropout_mask(e.len(), prob, rng))
                    .collect::<Result<Vec<_>>>()?;
                for (e, m) in inputs.iter_mut().zip(&masks) {
                    e.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
                }
                Some(masks)
            }
            _ => None,
        };
        let xs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let label_trace = bilstm_trace(&xs, &p.label_lstm)?;
        let label_out = label_trace.per_element();
        let k = p.num_labels();
        let mut hidden = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for d in &label_out {
            let mut h = vec![0.0; p.hidden_b.len()];
            p.hidden_w.matvec(d, &mut h);
            for (v, b) in h.iter_mut().zip(&p.hidden_b) {
                *v = (*v + b).tanh();
            }
            let mut s = vec![0.0; k];
            p.output_w.matvec(&h, &mut s);
            for (v, b) in s.iter_mut().zip(&p.output_b) {
                *v += b;
            }
            probs.push(softmax_unchecked(&s));
            scores.push(s);
            hidden.push(h);
        }
        Ok(ForwardTrace {
            char_traces,
            inputs,
            masks,
            label_trace,
            label_out,
            hidden,
            scores,
            probs,
        })
    }

    /// Per-token label probabilities `a_1..a_n` (inference mode).
    pub fn forward(&self, seq: &EncodedSeq) -> Result<Vec<Vec64>> {
        Ok(self.forward_trace(seq, None)?.probs)
    }

    /// What the chain layer consumes.
    pub fn emissions<'a>(&self, trace: &'a ForwardTrace) -> &'a [Vec64] {
        if self.config.raw_score_emissions {
            &trace.scores
        } else {
            &trace.probs
        }
    }

    fn check_gold(&self, n: usize, gold: &[usize]) -> Result<()> {
        if gold.len() != n {
            return Err(Error::Misaligned(format!("{} gold labels for {n} tokens", gold.len())));
        }
        let k = self.params.num_labels();
        if let Some(&bad) = gold.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("gold label {bad} out of range")));
        }
        Ok(())
    }

    /// Training loss of a finished forward pass.
    pub fn loss(&self, trace: &ForwardTrace, gold: &[usize]) -> Result<f64> {
        self.check_gold(trace.probs.len(), gold)?;
        match &self.params.transitions {
            Some(t) => {
                let em = self.emissions(trace);
                Ok(log_partition(em, t)? - sequence_score(em, t, gold)?)
            }
            None => Ok(trace
                .scores
                .iter()
                .zip(gold)
                .map(|(s, &y)| logsumexp_unchecked(s) - s[y])
                .sum()),
        }
    }

    pub fn neg_log_likelihood(&self, seq: &EncodedSeq, gold: &[usize]) -> Result<f64> {
        let trace = self.forward_trace(seq, None)?;
        self.loss(&trace, gold)
    }

    /// Accumulates the loss gradient into `grads` and returns the loss.
    pub fn backward(&self, seq: &EncodedSeq, trace: &ForwardTrace, gold: &[usize], grads: &mut Gradients) -> Result<f64> {
        let n = trace.probs.len();
        self.check_gold(n, gold)?;
        let p = &self.params;
        let k = p.num_labels();

        // gradient with respect to the pre-softmax scores
        let (loss, dscores): (f64, Vec<Vec64>) = match &p.transitions {
            Some(t) => {
                let em = self.emissions(trace);
                let (log_z, marg) = posterior_marginals(em, t)?;
                let loss = log_z - sequence_score(em, t, gold)?;
                let gt = grads
                    .values
                    .transitions
                    .as_mut()
                    .expect("gradient buffer mirrors parameters");
                for (i, pw) in marg.pairwise.iter().enumerate() {
                    for (from, row) in pw.iter().enumerate() {
                        for (to, &v) in row.iter().enumerate() {
                            let cur = gt.0.get(from, to);
                            gt.0.set(from, to, cur + v);
                        }
                    }
                    let (from, to) = (gold[i], gold[i + 1]);
                    gt.0.set(from, to, gt.0.get(from, to) - 1.0);
                }
                let dem: Vec<Vec64> = marg
                    .unary
                    .into_iter()
                    .zip(gold)
                    .map(|(mut u, &y)| {
                        u[y] -= 1.0;
                        u
                    })
                    .collect();
                let ds = if self.config.raw_score_emissions {
                    dem
                } else {
                    // back through the softmax: a ⊙ (g - a·g)
                    dem.iter()
                        .zip(&trace.probs)
                        .map(|(g, a)| {
                            let ag: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
                            a.iter().zip(g).map(|(x, y)| x * (y - ag)).collect()
                        })
                        .collect()
                };
                (loss, ds)
            }
            None => {
                let loss = trace
                    .scores
                    .iter()
                    .zip(gold)
                    .map(|(s, &y)| logsumexp_unchecked(s) - s[y])
                    .sum();
                let ds = trace
                    .probs
                    .iter()
                    .zip(gold)
                    .map(|(a, &y)| {
                        let mut d = a.clone();
                        d[y] -= 1.0;
                        d
                    })
                    .collect();
                (loss, ds)
            }
        };

        // feed-forward layers
        let g = &mut grads.values;
        let mut dlabel_out: Vec<Vec64> = Vec::with_capacity(n);
        let mut dh = vec![0.0; p.hidden_b.len()];
        for i in 0..n {
            debug_assert_eq!(dscores[i].len(), k);
            g.output_w.add_outer(&dscores[i], &trace.hidden[i]);
            axpy(1.0, &dscores[i], &mut g.output_b);
            dh.iter_mut().for_each(|v| *v = 0.0);
            p.output_w.matvec_t_acc(&dscores[i], &mut dh);
            for (d, h) in dh.iter_mut().zip(&trace.hidden[i]) {
                *d *= 1.0 - h * h;
            }
            g.hidden_w.add_outer(&dh, &trace.label_out[i]);
            axpy(1.0, &dh, &mut g.hidden_b);
            let mut dd = vec![0.0; 2 * p.label_lstm.hidden_dim()];
            p.hidden_w.matvec_t_acc(&dh, &mut dd);
            dlabel_out.push(dd);
        }

        // label-prediction BiLSTM
        let xs: Vec<&[f64]> = trace.inputs.iter().map(Vec::as_slice).collect();
        let mut dinputs = vec![vec![0.0; self.config.embedding_dim()]; n];
        bilstm_backward_per_element(&xs, &p.label_lstm, &trace.label_trace, &dlabel_out, &mut g.label_lstm, &mut dinputs);
        if let Some(masks) = &trace.masks {
            for (d, m) in dinputs.iter_mut().zip(masks) {
                d.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
            }
        }

        // embeddings
        let mut offset = 0;
        if let (Some(gt), Some(_)) = (&mut g.token_embeddings, &p.token_embeddings) {
            let dim = self.config.token_dim;
            for (d, &id) in dinputs.iter().zip(&seq.token_ids) {
                axpy(1.0, &d[..dim], gt.row_mut(id));
                grads.token_rows.insert(id);
            }
            offset = dim;
        }
        if let (Some(table), Some(enc), Some(gc), Some(genc)) = (
            &p.char_embeddings,
            &p.char_encoder,
            &mut g.char_embeddings,
            &mut g.char_encoder,
        ) {
            for ((d, ids), tr) in dinputs.iter().zip(&seq.char_ids).zip(&trace.char_traces) {
                let xs: Vec<&[f64]> = ids.iter().map(|&c| table.row(c)).collect();
                let mut dchars = vec![vec![0.0; self.config.char_dim]; ids.len()];
                bilstm_backward_summary(&xs, enc, tr, &d[offset..], genc, &mut dchars);
                for (&c, dc) in ids.iter().zip(&dchars) {
                    axpy(1.0, dc, gc.row_mut(c));
                    grads.char_rows.insert(c);
                }
            }
        }
        Ok(loss)
    }

    /// Most likely labels: Viterbi with the chain layer, per-token argmax
    /// without it.
    pub fn predict_encoded(&self, seq: &EncodedSeq) -> Result<Vec<usize>> {
        let trace = self.forward_trace(seq, None)?;
        match &self.params.transitions {
            Some(t) => Ok(viterbi(self.emissions(&trace), t)?.0),
            None => Ok(trace.probs.iter().map(|a| argmax(a)).collect()),
        }
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        self.predict_encoded(&self.encode(tokens))
    }
}
