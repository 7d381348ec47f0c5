//! Connectionist temporal classification: loss and gradient via the
//! forward-backward algorithm over the blank-augmented label sequence, greedy
//! decoding, label scoring for hybrid rescoring, and an enumeration oracle for
//! small instances. All dynamic programming is done in log space.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{log_sum_exp, lse2, Scalar};

/// Target label sequence for CTC (no blanks). The blank-augmented form of
/// length 2L+1 is computed internally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtcTarget {
    labels: Vec<usize>,
}

impl CtcTarget {
    pub fn new(labels: Vec<usize>, blank: usize) -> Result<Self> {
        if labels.iter().any(|&l| l == blank) {
            return Err(Error::Schema("target may not contain the blank".into()));
        }
        Ok(CtcTarget { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Minimum number of frames required by any admissible path:
    /// L plus one separating blank per adjacent repeat.
    pub fn min_frames(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }

    fn augmented(&self, blank: usize) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.labels.len() + 1);
        ext.push(blank);
        for &l in &self.labels {
            ext.push(l);
            ext.push(blank);
        }
        ext
    }
}

fn check_rows_normalized<S: Scalar>(log_probs: &Matrix<S>) -> Result<()> {
    for t in 0..log_probs.rows() {
        let z = log_sum_exp(log_probs.row(t)).to_f64_lossy();
        if z.abs() > 1e-3 {
            return Err(Error::Numeric(format!(
                "log-prob row {t} is not normalized (logsumexp = {z:.3e})"
            )));
        }
    }
    Ok(())
}

struct Lattice<S> {
    ext: Vec<usize>,
    alpha: Matrix<S>,
    log_p: S,
}

/// Forward pass over the blank-augmented lattice. Returns None when no
/// admissible path exists (infeasible target).
fn forward_lattice<S: Scalar>(
    log_probs: &Matrix<S>,
    target: &CtcTarget,
    blank: usize,
) -> Option<Lattice<S>> {
    let t_len = log_probs.rows();
    if t_len < target.min_frames() {
        return None;
    }
    let ext = target.augmented(blank);
    let n = ext.len();
    let mut alpha = Matrix::zeros(t_len, n);
    alpha.fill(S::neg_infinity());
    alpha.set(0, 0, log_probs.get(0, ext[0]));
    if n > 1 {
        alpha.set(0, 1, log_probs.get(0, ext[1]));
    }
    for t in 1..t_len {
        for i in 0..n {
            let mut acc = alpha.get(t - 1, i);
            if i >= 1 {
                acc = lse2(acc, alpha.get(t - 1, i - 1));
            }
            if i >= 2 && ext[i] != blank && ext[i] != ext[i - 2] {
                acc = lse2(acc, alpha.get(t - 1, i - 2));
            }
            if acc != S::neg_infinity() {
                alpha.set(t, i, acc + log_probs.get(t, ext[i]));
            }
        }
    }
    let last = alpha.get(t_len - 1, n - 1);
    let log_p = if n > 1 {
        lse2(last, alpha.get(t_len - 1, n - 2))
    } else {
        last
    };
    if log_p == S::neg_infinity() {
        return None;
    }
    Some(Lattice { ext, alpha, log_p })
}

/// CTC loss (-log P of the target) and its gradient with respect to the
/// per-frame log probabilities.
pub fn ctc_forward_backward<S: Scalar>(
    log_probs: &Matrix<S>,
    target: &CtcTarget,
    blank: usize,
) -> Result<(S, Matrix<S>)> {
    if blank >= log_probs.cols() {
        return Err(Error::Shape("blank index out of vocabulary".into()));
    }
    check_rows_normalized(log_probs)?;
    let t_len = log_probs.rows();
    let lat = forward_lattice(log_probs, target, blank).ok_or_else(|| {
        Error::InfeasibleTarget(format!(
            "target needs at least {} frames, got {}",
            target.min_frames(),
            t_len
        ))
    })?;
    let ext = &lat.ext;
    let n = ext.len();

    // beta[t][i]: log prob of completing from state i at t, excluding the
    // emission at t, so alpha + beta counts each emission exactly once.
    let mut beta = Matrix::zeros(t_len, n);
    beta.fill(S::neg_infinity());
    beta.set(t_len - 1, n - 1, S::zero());
    if n > 1 {
        beta.set(t_len - 1, n - 2, S::zero());
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..n {
            let mut acc = beta.get(t + 1, i) + log_probs.get(t + 1, ext[i]);
            if i + 1 < n {
                acc = lse2(
                    acc,
                    beta.get(t + 1, i + 1) + log_probs.get(t + 1, ext[i + 1]),
                );
            }
            if i + 2 < n && ext[i + 2] != blank && ext[i + 2] != ext[i] {
                acc = lse2(
                    acc,
                    beta.get(t + 1, i + 2) + log_probs.get(t + 1, ext[i + 2]),
                );
            }
            beta.set(t, i, acc);
        }
    }

    // d(-logP)/d y_{t,k} = -exp(lse_{i: ext[i]=k}(alpha+beta) - logP)
    let mut grad = Matrix::zeros(t_len, log_probs.cols());
    let mut per_label: Vec<S> = Vec::new();
    for t in 0..t_len {
        for k in 0..log_probs.cols() {
            per_label.clear();
            for i in 0..n {
                if ext[i] == k {
                    let mass = lat.alpha.get(t, i) + beta.get(t, i);
                    if mass != S::neg_infinity() {
                        per_label.push(mass);
                    }
                }
            }
            if !per_label.is_empty() {
                grad.set(t, k, -(log_sum_exp(&per_label) - lat.log_p).exp());
            }
        }
    }
    Ok((-lat.log_p, grad))
}

/// log P_CTC of a label sequence. Infeasible targets score -inf instead of
/// failing so that hypothesis rescoring never crashes.
pub fn ctc_label_logprob<S: Scalar>(
    log_probs: &Matrix<S>,
    target: &CtcTarget,
    blank: usize,
) -> Result<S> {
    if blank >= log_probs.cols() {
        return Err(Error::Shape("blank index out of vocabulary".into()));
    }
    check_rows_normalized(log_probs)?;
    Ok(forward_lattice(log_probs, target, blank).map_or(S::neg_infinity(), |lat| lat.log_p))
}

/// Per-frame argmax, collapse repeats, drop blanks.
pub fn ctc_greedy_decode<S: Scalar>(log_probs: &Matrix<S>, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let best = (0..row.len())
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Enumeration oracle: sums the probability of every length-T path that
/// collapses to the target. Exponential in T; guarded for small instances.
pub fn ctc_brute_force<S: Scalar>(
    log_probs: &Matrix<S>,
    target: &CtcTarget,
    blank: usize,
) -> Result<S> {
    let t_len = log_probs.rows() as u32;
    let v = log_probs.cols();
    if (v as f64).powi(t_len as i32) > 1e6 {
        return Err(Error::Config("instance too large for enumeration".into()));
    }
    let mut terms: Vec<S> = Vec::new();
    let mut path = vec![0usize; t_len as usize];
    loop {
        if collapse_path(&path, blank) == target.labels() {
            let lp: S = path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs.get(t, k))
                .sum();
            terms.push(lp);
        }
        // odometer increment over V^T
        let mut pos = 0;
        loop {
            if pos == path.len() {
                let log_p = log_sum_exp(&terms);
                return Ok(-log_p);
            }
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
