//! Coupled input/forget LSTM with peephole connections, its bidirectional
//! composition, and exact backward passes.
//!
//! One step computes
//!
//! ```text
//! i_t = σ(W_i [x_t; h_{t-1}; c_{t-1}] + b_i)
//! c_t = (1 - i_t) ⊙ c_{t-1} + i_t ⊙ tanh(W_c [x_t; h_{t-1}] + b_c)
//! o_t = σ(W_o [x_t; h_{t-1}; c_t] + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! with `h_0 = c_0 = 0`. There is no separate forget gate: the cell keeps
//! exactly `1 - i_t` of its previous content. [`OutputGate::Literal`] feeds
//! `h_{t-1}` into the third block of `W_o` instead of `c_t`.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Mat64, Rng, Vec64};

/// What the third column block of `W_o` reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputGate {
    /// Peephole on the freshly updated cell `c_t`.
    #[default]
    Cell,
    /// `[x_t; h_{t-1}; h_{t-1}]`, the output gate input read verbatim.
    Literal,
}

impl OutputGate {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cell => "cell",
            Self::Literal => "literal",
        }
    }
}

impl std::str::FromStr for OutputGate {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "cell" => Ok(Self::Cell),
            "literal" => Ok(Self::Literal),
            _ => Err(crate::error::Error::InvalidArgument(format!("unknown output gate `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `d_h × (d_in + 2 d_h)`
    pub w_i: Mat64,
    /// `d_h × (d_in + d_h)`
    pub w_c: Mat64,
    /// `d_h × (d_in + 2 d_h)`
    pub w_o: Mat64,
    pub b_i: Vec64,
    pub b_c: Vec64,
    pub b_o: Vec64,
    pub output_gate: OutputGate,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_gate: OutputGate) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            w_i: Mat64::zeros(h, d + 2 * h),
            w_c: Mat64::zeros(h, d + h),
            w_o: Mat64::zeros(h, d + 2 * h),
            b_i: vec![0.0; h],
            b_c: vec![0.0; h],
            b_o: vec![0.0; h],
            output_gate,
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, output_gate: OutputGate, rng: &mut Rng) -> Self {
        let (d, h) = (input_dim, hidden_dim);
        Self {
            w_i: Mat64::xavier(h, d + 2 * h, rng),
            w_c: Mat64::xavier(h, d + h, rng),
            w_o: Mat64::xavier(h, d + 2 * h, rng),
            ..Self::zeros(d, h, output_gate)
        }
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.output_gate)
    }

    /// Trainable value count for the given dimensions.
    pub fn count(input_dim: usize, hidden_dim: usize) -> usize {
        let (d, h) = (input_dim, hidden_dim);
        2 * h * (d + 2 * h) + h * (d + h) + 3 * h
    }

    /// `(name, rows, cols, values)` in serialization order.
    pub fn arrays(&self) -> [(&'static str, usize, usize, &[f64]); 6] {
        let h = self.hidden_dim;
        [
            ("w_i", self.w_i.rows(), self.w_i.cols(), self.w_i.as_slice()),
            ("w_c", self.w_c.rows(), self.w_c.cols(), self.w_c.as_slice()),
            ("w_o", self.w_o.rows(), self.w_o.cols(), self.w_o.as_slice()),
            ("b_i", h, 1, &self.b_i),
            ("b_c", h, 1, &self.b_c),
            ("b_o", h, 1, &self.b_o),
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w_i.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.w_o.as_mut_slice(),
            &mut self.b_i,
            &mut self.b_c,
            &mut self.b_o,
        ]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "LSTM expects inputs of dim {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec64,
    pub c: Vec64,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Cached activations of one step, enough to run the step backwards.
#[derive(Clone, Debug)]
struct StepCache {
    i: Vec64,
    g: Vec64,
    o: Vec64,
    tanh_c: Vec64,
    state: LstmState,
}

fn step_cached(x: &[f64], prev: &LstmState, p: &LstmParams) -> StepCache {
    let h = p.hidden_dim;
    let mut i = vec![0.0; h];
    p.w_i.matvec_blocks(&[x, &prev.h, &prev.c], &mut i);
    for (v, b) in i.iter_mut().zip(&p.b_i) {
        *v = sigmoid_scalar(*v + b);
    }
    let mut g = vec![0.0; h];
    p.w_c.matvec_blocks(&[x, &prev.h], &mut g);
    for (v, b) in g.iter_mut().zip(&p.b_c) {
        *v = (*v + b).tanh();
    }
    let c: Vec64 = (0..h)
        .map(|k| (1.0 - i[k]) * prev.c[k] + i[k] * g[k])
        .collect();
    let mut o = vec![0.0; h];
    let third: &[f64] = match p.output_gate {
        OutputGate::Cell => &c,
        OutputGate::Literal => &prev.h,
    };
    p.w_o.matvec_blocks(&[x, &prev.h, third], &mut o);
    for (v, b) in o.iter_mut().zip(&p.b_o) {
        *v = sigmoid_scalar(*v + b);
    }
    let tanh_c: Vec64 = c.iter().map(|v| v.tanh()).collect();
    let hs: Vec64 = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
    StepCache {
        i,
        g,
        o,
        tanh_c,
        state: LstmState { h: hs, c },
    }
}

/// One LSTM step from `prev`.
pub fn lstm_step(x: &[f64], prev: &LstmState, params: &LstmParams) -> Result<LstmState> {
    params.check_input(x)?;
    if prev.h.len() != params.hidden_dim || prev.c.len() != params.hidden_dim {
        return Err(Error::Dimension(format!(
            "LSTM state must have dim {}",
            params.hidden_dim
        )));
    }
    Ok(step_cached(x, prev, params).state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Original position processed at step `s` of `n`.
    #[inline]
    fn position(self, s: usize, n: usize) -> usize {
        match self {
            Direction::Forward => s,
            Direction::Backward => n - 1 - s,
        }
    }
}

/// Forward activations for a whole sequence, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    direction: Direction,
    hidden_dim: usize,
    /// In processing order.
    steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Hidden state at original position `t`.
    pub fn h(&self, t: usize) -> &[f64] {
        let n = self.steps.len();
        let s = self.direction.position(t, n);
        &self.steps[s].state.h
    }

    /// Hidden state after the last processed element.
    pub fn last_h(&self) -> &[f64] {
        &self.steps.last().expect("trace is non-empty").state.h
    }

    /// States reported in original token order.
    pub fn states(&self) -> Vec<LstmState> {
        let n = self.steps.len();
        (0..n)
            .map(|t| self.steps[self.direction.position(t, n)].state.clone())
            .collect()
    }
}

/// Runs the LSTM over `xs` from the zero state, caching every step.
pub fn forward_trace(xs: &[&[f64]], params: &LstmParams, direction: Direction) -> Result<LstmTrace> {
    if xs.is_empty() {
        return Err(Error::Empty("LSTM input sequence"));
    }
    for x in xs {
        params.check_input(x)?;
    }
    let n = xs.len();
    let mut steps: Vec<StepCache> = Vec::with_capacity(n);
    let zero = LstmState::zeros(params.hidden_dim);
    for s in 0..n {
        let prev = steps.last().map_or(&zero, |c| &c.state);
        let cache = step_cached(xs[direction.position(s, n)], prev, params);
        steps.push(cache);
    }
    Ok(LstmTrace {
        direction,
        hidden_dim: params.hidden_dim,
        steps,
    })
}

/// States for every element, in original order. The backward direction
/// consumes `xs` from last to first.
pub fn run_sequence(xs: &[&[f64]], params: &LstmParams, direction: Direction) -> Result<Vec<LstmState>> {
    Ok(forward_trace(xs, params, direction)?.states())
}

/// Accumulates parameter gradients into `grads` and input gradients into
/// `dxs` given `dh[t]`, the loss gradient with respect to the hidden state at
/// original position `t`.
pub fn accumulate_backward(
    xs: &[&[f64]],
    params: &LstmParams,
    trace: &LstmTrace,
    dh: &[Vec64],
    grads: &mut LstmParams,
    dxs: &mut [Vec64],
) {
    let n = trace.steps.len();
    let h = trace.hidden_dim;
    let d = params.input_dim;
    debug_assert_eq!(xs.len(), n);
    debug_assert_eq!(dh.len(), n);
    debug_assert_eq!(dxs.len(), n);

    let zeros = vec![0.0; h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dzi = vec![0.0; h];
    let mut dzc = vec![0.0; h];
    let mut dzo = vec![0.0; h];
    let mut dc = vec![0.0; h];
    let mut dh_prev = vec![0.0; h];
    let mut dc_prev = vec![0.0; h];
    let mut dthird = vec![0.0; h];

    for s in (0..n).rev() {
        let pos = trace.direction.position(s, n);
        let x = xs[pos];
        let cache = &trace.steps[s];
        let (h_prev, c_prev): (&[f64], &[f64]) = if s == 0 {
            (&zeros, &zeros)
        } else {
            let p = &trace.steps[s - 1].state;
            (&p.h, &p.c)
        };

        for k in 0..h {
            let dhk = dh[pos][k] + dh_next[k];
            let o = cache.o[k];
            let tc = cache.tanh_c[k];
            dzo[k] = dhk * tc * o * (1.0 - o);
            dc[k] = dc_next[k] + dhk * o * (1.0 - tc * tc);
        }

        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        let dx = &mut dxs[pos];
        debug_assert_eq!(dx.len(), d);

        match params.output_gate {
            OutputGate::Cell => {
                // c_t feeds the output gate through the third block of W_o
                dthird.iter_mut().for_each(|v| *v = 0.0);
                params
                    .w_o
                    .matvec_t_acc_blocks(&dzo, &mut [&mut dx[..], &mut dh_prev[..], &mut dthird[..]]);
                for k in 0..h {
                    dc[k] += dthird[k];
                }
                grads.w_o.add_outer_blocks(&dzo, &[x, h_prev, &cache.state.c]);
            }
            OutputGate::Literal => {
                dthird.iter_mut().for_each(|v| *v = 0.0);
                params
                    .w_o
                    .matvec_t_acc_blocks(&dzo, &mut [&mut dx[..], &mut dh_prev[..], &mut dthird[..]]);
                for k in 0..h {
                    dh_prev[k] += dthird[k];
                }
                grads.w_o.add_outer_blocks(&dzo, &[x, h_prev, h_prev]);
            }
        }
        for k in 0..h {
            grads.b_o[k] += dzo[k];
        }

        for k in 0..h {
            let i = cache.i[k];
            let g = cache.g[k];
            dzi[k] = dc[k] * (g - c_prev[k]) * i * (1.0 - i);
            dzc[k] = dc[k] * i * (1.0 - g * g);
            dc_prev[k] = dc[k] * (1.0 - i);
        }

        params
            .w_i
            .matvec_t_acc_blocks(&dzi, &mut [&mut dx[..], &mut dh_prev[..], &mut dc_prev[..]]);
        grads.w_i.add_outer_blocks(&dzi, &[x, h_prev, c_prev]);
        params.w_c.matvec_t_acc_blocks(&dzc, &mut [&mut dx[..], &mut dh_prev[..]]);
        grads.w_c.add_outer_blocks(&dzc, &[x, h_prev]);
        for k in 0..h {
            grads.b_i[k] += dzi[k];
            grads.b_c[k] += dzc[k];
        }

        std::mem::swap(&mut dh_next, &mut dh_prev);
        std::mem::swap(&mut dc_next, &mut dc_prev);
    }
}

/// Gradients of a scalar function of the hidden states, given its gradient
/// `dh[t]` at each original position. Returns `(parameter grads, input grads)`.
pub fn lstm_backward(
    xs: &[&[f64]],
    params: &LstmParams,
    trace: &LstmTrace,
    dh: &[Vec64],
) -> Result<(LstmParams, Vec<Vec64>)> {
    if dh.len() != trace.len() || xs.len() != trace.len() {
        return Err(Error::Dimension("upstream gradient length differs from trace".into()));
    }
    let mut grads = params.zeros_like();
    let mut dxs = vec![vec![0.0; params.input_dim]; xs.len()];
    accumulate_backward(xs, params, trace, dh, &mut grads, &mut dxs);
    Ok((grads, dxs))
}

/// Forward and backward LSTMs over the same input.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn init(input_dim: usize, hidden_dim: usize, gate: OutputGate, rng: &mut Rng) -> Self {
        Self {
            forward: LstmParams::init(input_dim, hidden_dim, gate, rng),
            backward: LstmParams::init(input_dim, hidden_dim, gate, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn count(input_dim: usize, hidden_dim: usize) -> usize {
        2 * LstmParams::count(input_dim, hidden_dim)
    }
}

/// Which bidirectional output to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiMode {
    /// `(→h_t; ←h_t)` for every position.
    PerElement,
    /// `(→h_n; ←h_1)`: the final state of each direction.
    Summary,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BiLstmOutput {
    PerElement(Vec<Vec64>),
    Summary(Vec64),
}

#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    pub forward: LstmTrace,
    pub backward: LstmTrace,
}

impl BiLstmTrace {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn per_element(&self) -> Vec<Vec64> {
        (0..self.len())
            .map(|t| [self.forward.h(t), self.backward.h(t)].concat())
            .collect()
    }

    pub fn summary(&self) -> Vec64 {
        [self.forward.last_h(), self.backward.last_h()].concat()
    }
}

pub fn bilstm_trace(xs: &[&[f64]], params: &BiLstmParams) -> Result<BiLstmTrace> {
    Ok(BiLstmTrace {
        forward: forward_trace(xs, &params.forward, Direction::Forward)?,
        backward: forward_trace(xs, &params.backward, Direction::Backward)?,
    })
}

pub fn bilstm_outputs(xs: &[&[f64]], params: &BiLstmParams, mode: BiMode) -> Result<BiLstmOutput> {
    let trace = bilstm_trace(xs, params)?;
    Ok(match mode {
        BiMode::PerElement => BiLstmOutput::PerElement(trace.per_element()),
        BiMode::Summary => BiLstmOutput::Summary(trace.summary()),
    })
}

/// Backward pass for per-element outputs: `dout[t]` has length `2 d_h`.
pub fn bilstm_backward_per_element(
    xs: &[&[f64]],
    params: &BiLstmParams,
    trace: &BiLstmTrace,
    dout: &[Vec64],
    grads: &mut BiLstmParams,
    dxs: &mut [Vec64],
) {
    let h = params.hidden_dim();
    let (dfw, dbw): (Vec<Vec64>, Vec<Vec64>) = dout
        .iter()
        .map(|d| (d[..h].to_vec(), d[h..].to_vec()))
        .unzip();
    accumulate_backward(xs, &params.forward, &trace.forward, &dfw, &mut grads.forward, dxs);
    accumulate_backward(xs, &params.backward, &trace.backward, &dbw, &mut grads.backward, dxs);
}

/// Backward pass for the summary output: `dout` has length `2 d_h`.
pub fn bilstm_backward_summary(
    xs: &[&[f64]],
    params: &BiLstmParams,
    trace: &BiLstmTrace,
    dout: &[f64],
    grads: &mut BiLstmParams,
    dxs: &mut [Vec64],
) {
    let h = params.hidden_dim();
    let n = trace.len();
    let mut dfw = vec![vec![0.0; h]; n];
    let mut dbw = vec![vec![0.0; h]; n];
    dfw[n - 1].copy_from_slice(&dout[..h]);
    dbw[0].copy_from_slice(&dout[h..]);
    accumulate_backward(xs, &params.forward, &trace.forward, &dfw, &mut grads.forward, dxs);
    accumulate_backward(xs, &params.backward, &trace.backward, &dbw, &mut grads.backward, dxs);
}
