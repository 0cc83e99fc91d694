//! Linear-chain label sequence layer.
//!
//! A label sequence `y` over emissions `a_1..a_n` scores
//! `s(y) = Σ_i a_i[y_i] + Σ_{i≥2} T[y_{i-1}, y_i]`; there are no start or
//! stop transitions. Sequence probabilities are the softmax of `s` over all
//! `k^n` sequences. Everything here runs in log space.

use crate::error::{Error, Result};
use crate::numerics::{logsumexp_unchecked, Mat64};

/// Square matrix of unconstrained transition scores, `T[from, to]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(pub Mat64);

impl TransitionMatrix {
    pub fn zeros(labels: usize) -> Self {
        Self(Mat64::zeros(labels, labels))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Mat64::from_rows(rows)?;
        if m.rows() != m.cols() {
            return Err(Error::Dimension("transition matrix must be square".into()));
        }
        Ok(Self(m))
    }

    pub fn labels(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0.get(from, to)
    }
}

/// Posterior marginals of the chain distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    /// `unary[i][l] = P(y_i = l)`
    pub unary: Vec<Vec<f64>>,
    /// `pairwise[i-1][l][l'] = P(y_{i-1} = l, y_i = l')` for `i = 1..n`.
    pub pairwise: Vec<Vec<Vec<f64>>>,
}

fn check(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<usize> {
    let Some(first) = emissions.first() else {
        return Err(Error::Empty("emission sequence"));
    };
    let k = first.len();
    if k == 0 || emissions.iter().any(|a| a.len() != k) {
        return Err(Error::Dimension("emission rows must share a nonzero length".into()));
    }
    if t.labels() != k {
        return Err(Error::Dimension(format!(
            "{k} labels in emissions but transition matrix is {0}x{0}",
            t.labels()
        )));
    }
    Ok(k)
}

/// Score of one label sequence.
pub fn sequence_score(emissions: &[Vec<f64>], t: &TransitionMatrix, labels: &[usize]) -> Result<f64> {
    let k = check(emissions, t)?;
    if labels.len() != emissions.len() {
        return Err(Error::Misaligned(format!(
            "{} labels for {} positions",
            labels.len(),
            emissions.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} labels")));
    }
    let mut s = 0.0;
    for (i, (&y, a)) in labels.iter().zip(emissions).enumerate() {
        s += a[y];
        if i > 0 {
            s += t.get(labels[i - 1], y);
        }
    }
    Ok(s)
}

/// `alpha[i][l]`: log-sum of scores of all prefixes ending at `(i, l)`.
fn forward_table(emissions: &[Vec<f64>], t: &TransitionMatrix, k: usize) -> Vec<Vec<f64>> {
    let mut alpha = Vec::with_capacity(emissions.len());
    alpha.push(emissions[0].clone());
    let mut buf = vec![0.0; k];
    for a in &emissions[1..] {
        let prev: &Vec<f64> = alpha.last().unwrap();
        let row = (0..k)
            .map(|to| {
                for (from, b) in buf.iter_mut().enumerate() {
                    *b = prev[from] + t.get(from, to);
                }
                logsumexp_unchecked(&buf) + a[to]
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// `beta[i][l]`: log-sum of scores of all suffixes after `(i, l)`.
fn backward_table(emissions: &[Vec<f64>], t: &TransitionMatrix, k: usize) -> Vec<Vec<f64>> {
    let n = emissions.len();
    let mut beta = vec![vec![0.0; k]; n];
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for from in 0..k {
            for (to, b) in buf.iter_mut().enumerate() {
                *b = t.get(from, to) + emissions[i + 1][to] + beta[i + 1][to];
            }
            beta[i][from] = logsumexp_unchecked(&buf);
        }
    }
    beta
}

/// Log of the partition function by the forward recursion.
pub fn log_partition(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<f64> {
    let k = check(emissions, t)?;
    let alpha = forward_table(emissions, t, k);
    Ok(logsumexp_unchecked(alpha.last().unwrap()))
}

/// Log partition plus unary and pairwise posterior marginals.
pub fn posterior_marginals(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<(f64, Marginals)> {
    let k = check(emissions, t)?;
    let n = emissions.len();
    let alpha = forward_table(emissions, t, k);
    let beta = backward_table(emissions, t, k);
    let log_z = logsumexp_unchecked(&alpha[n - 1]);
    let unary = (0..n)
        .map(|i| (0..k).map(|l| (alpha[i][l] + beta[i][l] - log_z).exp()).collect())
        .collect();
    let pairwise = (1..n)
        .map(|i| {
            (0..k)
                .map(|from| {
                    (0..k)
                        .map(|to| {
                            (alpha[i - 1][from] + t.get(from, to) + emissions[i][to] + beta[i][to] - log_z)
                                .exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((log_z, Marginals { unary, pairwise }))
}

/// Highest-scoring label sequence and its score.
///
/// Ties go to the lower label index, both for the final label and for every
/// back-pointer.
pub fn viterbi(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<(Vec<usize>, f64)> {
    let k = check(emissions, t)?;
    let n = emissions.len();
    let mut delta = emissions[0].clone();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n.saturating_sub(1));
    for a in &emissions[1..] {
        let mut next = vec![0.0; k];
        let mut ptr = vec![0usize; k];
        for to in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + t.get(0, to);
            for (from, d) in delta.iter().enumerate().skip(1) {
                let s = d + t.get(from, to);
                if s > best_score {
                    best_score = s;
                    best = from;
                }
            }
            next[to] = best_score + a[to];
            ptr[to] = best;
        }
        back.push(ptr);
        delta = next;
    }
    let mut last = 0;
    for l in 1..k {
        if delta[l] > delta[last] {
            last = l;
        }
    }
    let score = delta[last];
    let mut path = vec![0; n];
    path[n - 1] = last;
    for i in (1..n).rev() {
        path[i - 1] = back[i - 1][path[i]];
    }
    Ok((path, score))
}

/// Exhaustive reference implementations for small instances.
pub mod oracle {
    use super::*;

    /// Largest `k^n` the oracles will enumerate.
    pub const MAX_SEQUENCES: u64 = 1_000_000;

    fn guard(n: usize, k: usize) -> Result<()> {
        let total = (k as u64).checked_pow(n as u32);
        match total {
            Some(c) if c <= MAX_SEQUENCES => Ok(()),
            _ => Err(Error::TooLarge { labels: k, len: n }),
        }
    }

    /// Calls `f` on every label sequence in lexicographic order.
    pub fn for_each_sequence(n: usize, k: usize, mut f: impl FnMut(&[usize])) -> Result<()> {
        guard(n, k)?;
        let mut y = vec![0usize; n];
        loop {
            f(&y);
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(());
                }
                i -= 1;
                y[i] += 1;
                if y[i] < k {
                    break;
                }
                y[i] = 0;
            }
        }
    }

    /// Best sequence by enumeration; among equal scores the lexicographically
    /// smallest sequence wins.
    pub fn brute_force_best(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<(Vec<usize>, f64)> {
        let k = check(emissions, t)?;
        let mut best: Option<(Vec<usize>, f64)> = None;
        for_each_sequence(emissions.len(), k, |y| {
            let s = sequence_score(emissions, t, y).expect("valid sequence");
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((y.to_vec(), s));
            }
        })?;
        Ok(best.expect("at least one sequence"))
    }

    /// Log partition by enumeration.
    pub fn brute_force_log_z(emissions: &[Vec<f64>], t: &TransitionMatrix) -> Result<f64> {
        let k = check(emissions, t)?;
        let mut scores = Vec::new();
        for_each_sequence(emissions.len(), k, |y| {
            scores.push(sequence_score(emissions, t, y).expect("valid sequence"));
        })?;
        Ok(logsumexp_unchecked(&scores))
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::numerics::{seeded_rng, softmax};
    use rand::Rng as _;

    #[test]
    fn score_examples() {
        let t = TransitionMatrix::zeros(2);
        assert_eq!(sequence_score(&[vec![0.1, 0.9]], &t, &[1]).unwrap(), 0.9);
        let a = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        let t = TransitionMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        assert!((sequence_score(&a, &t, &[1, 0]).unwrap() - 2.2).abs() < 1e-12);
        assert!(sequence_score(&a, &t, &[1, 2]).is_err());
        assert!(sequence_score(&a, &t, &[1]).is_err());
    }

    #[test]
    fn partition_degenerate_cases() {
        let a = vec![vec![0.3, -1.0, 2.0]];
        let t = TransitionMatrix::zeros(3);
        let lz = log_partition(&a, &t).unwrap();
        assert!((lz - crate::numerics::logsumexp(&a[0]).unwrap()).abs() < 1e-12);

        let a = vec![vec![0.3], vec![-0.7], vec![1.1]];
        let t = TransitionMatrix::from_rows(&[vec![0.25]]).unwrap();
        let lz = log_partition(&a, &t).unwrap();
        assert!((lz - sequence_score(&a, &t, &[0, 0, 0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn decoupled_chain() {
        let mut rng = seeded_rng(1);
        let a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let t = TransitionMatrix::zeros(4);
        let (path, _) = viterbi(&a, &t).unwrap();
        let greedy: Vec<usize> = a.iter().map(|r| crate::numerics::argmax(r)).collect();
        assert_eq!(path, greedy);
        let (_, m) = posterior_marginals(&a, &t).unwrap();
        for (u, r) in m.unary.iter().zip(&a) {
            let s = softmax(r).unwrap();
            for (x, y) in u.iter().zip(&s) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_domination() {
        let a = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.3, 0.7]];
        let t = TransitionMatrix::from_rows(&[vec![0.0, -1e6], vec![-1e6, 0.0]]).unwrap();
        let (path, _) = viterbi(&a, &t).unwrap();
        assert!(path.iter().all(|&l| l == path[0]));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let a = vec![vec![0.0; 3]; 4];
        let t = TransitionMatrix::zeros(3);
        assert_eq!(viterbi(&a, &t).unwrap().0, vec![0; 4]);
    }

    #[test]
    fn oracle_guard() {
        let a = vec![vec![0.0; 5]; 20];
        let t = TransitionMatrix::zeros(5);
        assert!(matches!(brute_force_best(&a, &t), Err(Error::TooLarge { .. })));
        assert!(matches!(brute_force_log_z(&a, &t), Err(Error::TooLarge { .. })));
        let a = vec![vec![0.2, 1.5, -0.3]];
        let t = TransitionMatrix::zeros(3);
        assert_eq!(brute_force_best(&a, &t).unwrap().0, vec![1]);
    }

    #[test]
    fn shift_covariance() {
        let mut rng = seeded_rng(6);
        let n = 5;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let t = TransitionMatrix::from_rows(&rows).unwrap();
        let base = log_partition(&a, &t).unwrap();
        let c = 1.7;
        let mut a2 = a.clone();
        a2[2].iter_mut().for_each(|v| *v += c);
        assert!((log_partition(&a2, &t).unwrap() - base - c).abs() < 1e-10);
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        let t2 = TransitionMatrix::from_rows(&shifted).unwrap();
        assert!((log_partition(&a, &t2).unwrap() - base - (n as f64 - 1.0) * c).abs() < 1e-10);

        // constant shifts of all emissions and all transitions keep the argmax
        let a3: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v - 3.0).collect()).collect();
        assert_eq!(viterbi(&a, &t).unwrap().0, viterbi(&a3, &t2).unwrap().0);
    }
}
