//! Dense f64 primitives shared by the learned components: a row-major
//! matrix, stable nonlinearities, seeded randomness, and a central-difference
//! gradient checker.
//!
//! Matrix products that consume concatenated inputs (`W [x; h; c]`) take the
//! input as a list of blocks so callers never materialize the concatenation.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A dense vector of 64-bit floats.
pub type Vec64 = Vec<f64>;

/// Seedable deterministic generator used everywhere randomness is needed.
pub type Rng = ChaCha8Rng;

/// Creates the generator for `seed`. Identical seeds give identical streams.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    /// Xavier/Glorot uniform initialization, `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        Self::uniform(rows, cols, xavier_bound(cols, rows), rng)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Appends a row of zeros.
    pub fn push_zero_row(&mut self) {
        self.data.resize(self.data.len() + self.cols, 0.0);
        self.rows += 1;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out = W x` where `x` is the concatenation of `blocks`.
    pub fn matvec_blocks(&self, blocks: &[&[f64]], out: &mut [f64]) {
        debug_assert_eq!(blocks.iter().map(|b| b.len()).sum::<usize>(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            let mut off = 0;
            for b in blocks {
                acc += dot(&row[off..off + b.len()], b);
                off += b.len();
            }
            *o = acc;
        }
    }

    /// `out = W x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        self.matvec_blocks(&[x], out);
    }

    /// `outs += Wᵀ g`, with the result split across `outs` by column blocks.
    pub fn matvec_t_acc_blocks(&self, g: &[f64], outs: &mut [&mut [f64]]) {
        debug_assert_eq!(g.len(), self.rows);
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = self.row(r);
            let mut off = 0;
            for out in outs.iter_mut() {
                let n = out.len();
                axpy(gr, &row[off..off + n], out);
                off += n;
            }
        }
    }

    /// `out += Wᵀ g`.
    pub fn matvec_t_acc(&self, g: &[f64], out: &mut [f64]) {
        self.matvec_t_acc_blocks(g, &mut [out]);
    }

    /// `W += u vᵀ` where `v` is the concatenation of `blocks`.
    pub fn add_outer_blocks(&mut self, u: &[f64], blocks: &[&[f64]]) {
        debug_assert_eq!(u.len(), self.rows);
        for (r, &ur) in u.iter().enumerate() {
            if ur == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            let mut off = 0;
            for b in blocks {
                axpy(ur, b, &mut row[off..off + b.len()]);
                off += b.len();
            }
        }
    }

    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        self.add_outer_blocks(u, &[v]);
    }
}

/// Xavier bound for a layer with the given fan-in and fan-out.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let (ra, rb) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec64 {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh(v: &[f64]) -> Vec64 {
    v.iter().map(|x| x.tanh()).collect()
}

/// `ln Σ exp(v)`, computed around the maximum.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("logsumexp of an empty vector"));
    }
    Ok(logsumexp_unchecked(v))
}

#[inline]
pub(crate) fn logsumexp_unchecked(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if v.len() == 1 {
        return v[0];
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn softmax(v: &[f64]) -> Result<Vec64> {
    if v.is_empty() {
        return Err(Error::Empty("softmax of an empty vector"));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec64 = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn l2_norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Compares an analytic gradient against central differences with step `h`.
///
/// Returns the largest coordinate-wise relative error
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(mut f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != theta.len() {
        return Err(Error::Dimension(format!(
            "gradient has {} entries, parameters have {}",
            analytic.len(),
            theta.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let f0 = f(theta);
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("objective at θ is {f0}")));
    }
    let mut point = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + h;
        let fp = f(&point);
        point[i] = orig - h;
        let fm = f(&point);
        point[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
