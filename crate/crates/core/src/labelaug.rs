//! Label augmentation: unigram estimation over training transcripts, CBOW
//! phone embeddings, the cosine-similarity-derived distribution, linear
//! interpolation of the two, and the KL penalty consumed by the training
//! objective.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::inventory::Vocab;
use crate::matrix::Matrix;
use crate::num::Scalar;
use crate::numcore::softmax_row;
use crate::seed::rng_from;

/// Default add-k smoothing constant for unseen symbols.
pub const UNIGRAM_ADD_K: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Uniform,
    Unigram,
    Cbow,
    Interpolated(f64),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Uniform => write!(f, "uniform"),
            Provenance::Unigram => write!(f, "unigram"),
            Provenance::Cbow => write!(f, "cbow"),
            Provenance::Interpolated(b) => write!(f, "interpolated({b})"),
        }
    }
}

/// Probability vector over the attention output vocabulary, used as the label
/// smoothing target.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingDistribution {
    pub symbols: Vec<String>,
    pub probs: Vec<f64>,
    pub provenance: Provenance,
}

impl SmoothingDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.symbols.len() != self.probs.len() {
            return Err(Error::Shape("symbols and probs differ in length".into()));
        }
        if self.probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Numeric("negative or non-finite probability".into()));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    pub fn uniform(vocab: &Vocab) -> Self {
        let n = vocab.len();
        SmoothingDistribution {
            symbols: vocab.symbols().to_vec(),
            probs: vec![1.0 / n as f64; n],
            provenance: Provenance::Uniform,
        }
    }

    /// Text serialization: a provenance header line then `symbol<TAB>prob`.
    pub fn to_text(&self) -> String {
        let mut out = format!("#smoothing\t{}\n", self.provenance);
        for (sym, p) in self.symbols.iter().zip(&self.probs) {
            out.push_str(&format!("{sym}\t{p:.17e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty smoothing file".into()))?;
        let tag = header
            .strip_prefix("#smoothing\t")
            .ok_or_else(|| Error::Parse("missing smoothing header".into()))?;
        let provenance = if tag == "uniform" {
            Provenance::Uniform
        } else if tag == "unigram" {
            Provenance::Unigram
        } else if tag == "cbow" {
            Provenance::Cbow
        } else if let Some(b) = tag
            .strip_prefix("interpolated(")
            .and_then(|s| s.strip_suffix(')'))
        {
            Provenance::Interpolated(
                b.parse()
                    .map_err(|_| Error::Parse(format!("bad beta '{b}'")))?,
            )
        } else {
            return Err(Error::Parse(format!("unknown provenance '{tag}'")));
        };
        let mut symbols = Vec::new();
        let mut probs = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (sym, p) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("smoothing line {}", i + 2)))?;
            symbols.push(sym.to_string());
            probs.push(
                p.parse()
                    .map_err(|_| Error::Parse(format!("bad probability on line {}", i + 2)))?,
            );
        }
        let dist = SmoothingDistribution {
            symbols,
            probs,
            provenance,
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Relative-frequency unigram over the vocabulary with add-k smoothing so the
/// KL penalty stays finite for unseen symbols. One eos is counted per
/// transcript; sos and blank only ever receive the smoothing floor.
pub fn unigram_distribution(
    transcripts: &[Vec<String>],
    vocab: &Vocab,
    add_k: f64,
) -> Result<SmoothingDistribution> {
    if transcripts.is_empty() {
        return Err(Error::Config(
            "no transcripts for unigram estimation".into(),
        ));
    }
    let mut counts = vec![0u64; vocab.len()];
    let mut total = 0u64;
    for t in transcripts {
        for sym in t {
            counts[vocab.index_of(sym)?] += 1;
            total += 1;
        }
        if let Some(eos) = vocab.eos() {
            counts[eos] += 1;
            total += 1;
        }
    }
    let denom = total as f64 + add_k * vocab.len() as f64;
    let probs: Vec<f64> = counts.iter().map(|&c| (c as f64 + add_k) / denom).collect();
    let dist = SmoothingDistribution {
        symbols: vocab.symbols().to_vec(),
        probs,
        provenance: Provenance::Unigram,
    };
    dist.validate()?;
    Ok(dist)
}

/// CBOW configuration and the trained embedding matrix (one row per
/// vocabulary symbol).
#[derive(Debug, Clone)]
pub struct PhoneEmbeddings {
    pub symbols: Vec<String>,
    pub vectors: Matrix<f64>,
    pub window: usize,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Trains CBOW embeddings with a full-softmax output layer over the small
/// phone vocabulary. Context is the mean of the window embeddings on both
/// sides of the center. Deterministic given the seed.
pub fn train_cbow(
    transcripts: &[Vec<String>],
    vocab: &Vocab,
    window: usize,
    dim: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<PhoneEmbeddings> {
    if dim < 2 {
        return Err(Error::Config("embedding dimension must be >= 2".into()));
    }
    if window < 1 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    // Encode transcripts, terminating each with eos when the vocabulary has
    // one; sos/blank never appear in contexts.
    let mut encoded: Vec<Vec<usize>> = Vec::new();
    for t in transcripts {
        let mut ids = vocab.encode(t)?;
        if let Some(eos) = vocab.eos() {
            ids.push(eos);
        }
        encoded.push(ids);
    }
    let mut examples: Vec<(usize, usize)> = Vec::new(); // (transcript, center)
    for (ti, ids) in encoded.iter().enumerate() {
        if ids.len() < 2 {
            continue;
        }
        for c in 0..ids.len() {
            examples.push((ti, c));
        }
    }
    if examples.is_empty() {
        return Err(Error::Config(
            "transcripts too short for the chosen window".into(),
        ));
    }

    let v = vocab.len();
    let mut rng = rng_from(seed);
    let mut input = Matrix::zeros(v, dim);
    let mut output = Matrix::zeros(v, dim);
    let scale = 0.5 / dim as f64;
    for x in input.data_mut() {
        *x = rng.gen_range(-scale..scale);
    }
    for x in output.data_mut() {
        *x = rng.gen_range(-scale..scale);
    }

    let mut ctx = Vec::new();
    for _epoch in 0..epochs {
        let mut order = examples.clone();
        order.shuffle(&mut rng);
        for (ti, c) in order {
            let ids = &encoded[ti];
            ctx.clear();
            let lo = c.saturating_sub(window);
            let hi = (c + window).min(ids.len() - 1);
            for p in lo..=hi {
                if p != c {
                    ctx.push(ids[p]);
                }
            }
            if ctx.is_empty() {
                continue;
            }
            let target = ids[c];
            // mean of context embeddings
            let mut h = vec![0.0f64; dim];
            for &ci in &ctx {
                for (hk, &ek) in h.iter_mut().zip(input.row(ci)) {
                    *hk += ek;
                }
            }
            let inv = 1.0 / ctx.len() as f64;
            for hk in &mut h {
                *hk *= inv;
            }
            // full softmax over output vectors
            let scores: Vec<f64> = (0..v)
                .map(|j| output.row(j).iter().zip(&h).map(|(&o, &hk)| o * hk).sum())
                .collect();
            let probs = softmax_row(&scores);
            // gradient of -log p(target)
            let mut dh = vec![0.0f64; dim];
            for j in 0..v {
                let err = probs[j] - if j == target { 1.0 } else { 0.0 };
                for k in 0..dim {
                    dh[k] += err * output.get(j, k);
                    let upd = output.get(j, k) - lr * err * h[k];
                    output.set(j, k, upd);
                }
            }
            let g = lr * inv;
            for &ci in &ctx {
                for (k, &dk) in dh.iter().enumerate() {
                    let upd = input.get(ci, k) - g * dk;
                    input.set(ci, k, upd);
                }
            }
        }
    }
    if !input.all_finite() {
        return Err(Error::Numeric("CBOW training diverged".into()));
    }
    Ok(PhoneEmbeddings {
        symbols: vocab.symbols().to_vec(),
        vectors: input,
        window,
        dim,
        epochs,
        lr,
        seed,
    })
}

impl PhoneEmbeddings {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#embeddings\t{}\t{}\t{}\t{}\t{}\n",
            self.window, self.dim, self.epochs, self.lr, self.seed
        );
        for (i, sym) in self.symbols.iter().enumerate() {
            out.push_str(sym);
            for &v in self.vectors.row(i) {
                out.push_str(&format!("\t{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("#embeddings\t"))
            .ok_or_else(|| Error::Parse("missing embeddings header".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse("bad embeddings header".into()));
        }
        let window = fields[0]
            .parse()
            .map_err(|_| Error::Parse("window".into()))?;
        let dim: usize = fields[1].parse().map_err(|_| Error::Parse("dim".into()))?;
        let epochs = fields[2]
            .parse()
            .map_err(|_| Error::Parse("epochs".into()))?;
        let lr = fields[3].parse().map_err(|_| Error::Parse("lr".into()))?;
        let seed = fields[4].parse().map_err(|_| Error::Parse("seed".into()))?;
        let mut symbols = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            symbols.push(
                parts
                    .next()
                    .ok_or_else(|| Error::Parse("empty embedding line".into()))?
                    .to_string(),
            );
            let row: Vec<f64> = parts
                .map(|p| p.parse().map_err(|_| Error::Parse("bad value".into())))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::Schema("embedding row width mismatch".into()));
            }
            rows.push(row);
        }
        Ok(PhoneEmbeddings {
            vectors: Matrix::from_rows(&rows)?,
            symbols,
            window,
            dim,
            epochs,
            lr,
            seed,
        })
    }
}

/// Cosine-similarity profile of symbol i against every vocabulary symbol.
pub fn similarity_profile(emb: &PhoneEmbeddings, i: usize) -> Result<Vec<f64>> {
    let norms: Vec<f64> = (0..emb.vectors.rows())
        .map(|j| emb.vectors.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Numeric("zero-norm embedding row".into()));
    }
    let vi = emb.vectors.row(i);
    Ok((0..emb.vectors.rows())
        .map(|j| {
            let dot: f64 = emb
                .vectors
                .row(j)
                .iter()
                .zip(vi)
                .map(|(&a, &b)| a * b)
                .sum();
            dot / (norms[i] * norms[j])
        })
        .collect())
}

/// One global distribution over the vocabulary: softmax across symbols of the
/// Euclidean norms of their similarity profiles.
pub fn cbow_distribution(emb: &PhoneEmbeddings) -> Result<SmoothingDistribution> {
    let n = emb.vectors.rows();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let u = similarity_profile(emb, i)?;
        norms.push(u.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let probs = softmax_row(&norms);
    let dist = SmoothingDistribution {
        symbols: emb.symbols.clone(),
        probs,
        provenance: Provenance::Cbow,
    };
    dist.validate()?;
    Ok(dist)
}

/// beta * D_CBOW + (1 - beta) * D_Uni.
pub fn interpolate_distributions(
    d_cbow: &SmoothingDistribution,
    d_uni: &SmoothingDistribution,
    beta: f64,
) -> Result<SmoothingDistribution> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    if d_cbow.symbols != d_uni.symbols {
        return Err(Error::Shape(
            "distributions over different vocabularies".into(),
        ));
    }
    let probs = d_cbow
        .probs
        .iter()
        .zip(&d_uni.probs)
        .map(|(&c, &u)| beta * c + (1.0 - beta) * u)
        .collect();
    let dist = SmoothingDistribution {
        symbols: d_uni.symbols.clone(),
        probs,
        provenance: Provenance::Interpolated(beta),
    };
    dist.validate()?;
    Ok(dist)
}

/// KL(target ‖ exp(predicted_log)) = sum_i target_i (log target_i - predicted_log_i)
/// plus its gradient with respect to the predicted log distribution, which is
/// simply -target; the softmax coupling is the caller's chain rule.
pub fn kl_penalty<S: Scalar>(target: &[f64], predicted_log: &[S]) -> Result<(S, Vec<S>)> {
    if target.len() != predicted_log.len() {
        return Err(Error::Shape("KL supports differ in length".into()));
    }
    if target.iter().any(|&p| p <= 0.0) {
        return Err(Error::Config(
            "KL target must be strictly positive (use add-k smoothing)".into(),
        ));
    }
    let mut kl = S::zero();
    let mut grad = Vec::with_capacity(target.len());
    for (&p, &lq) in target.iter().zip(predicted_log) {
        let ps = S::from_f64(p).unwrap();
        kl += ps * (S::from_f64(p.ln()).unwrap() - lq);
        grad.push(-ps);
    }
    Ok((kl, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inventory::PhoneInventory;

    fn small_vocab() -> Vocab {
        let inv = PhoneInventory::build().unwrap();
        Vocab::attention(&inv)
    }

    fn seqs(xs: &[&[&str]]) -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.iter().map(|p| p.to_string()).collect())
            .collect()
    }

    #[test]
    fn unigram_counts_without_smoothing() {
        let inv = PhoneInventory::build().unwrap();
        // restrict to a 2-symbol vocabulary via direct construction
        let _ = inv;
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa", "aa", "b"]]);
        let d = unigram_distribution(&transcripts, &vocab, 0.0).unwrap();
        let ia = vocab.index_of("aa").unwrap();
        let ib = vocab.index_of("b").unwrap();
        let ie = vocab.eos().unwrap();
        // counts: aa=2, b=1, eos=1, N=4
        assert!((d.probs[ia] - 0.5).abs() < 1e-12);
        assert!((d.probs[ib] - 0.25).abs() < 1e-12);
        assert!((d.probs[ie] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unseen_symbols_get_positive_floor() {
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa"]]);
        let d = unigram_distribution(&transcripts, &vocab, UNIGRAM_ADD_K).unwrap();
        let floor = UNIGRAM_ADD_K / (2.0 + UNIGRAM_ADD_K * vocab.len() as f64);
        let iz = vocab.index_of("zh").unwrap();
        assert!((d.probs[iz] - floor).abs() < 1e-15);
        assert!(d.probs.iter().all(|&p| p > 0.0));
        d.validate().unwrap();
    }

    #[test]
    fn empty_transcripts_is_config_error() {
        let vocab = small_vocab();
        assert!(matches!(
            unigram_distribution(&[], &vocab, 0.01),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cbow_is_deterministic() {
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa", "b", "d", "aa", "b"], &["d", "aa", "b", "d"]]);
        let a = train_cbow(&transcripts, &vocab, 2, 8, 5, 0.05, 42).unwrap();
        let b = train_cbow(&transcripts, &vocab, 2, 8, 5, 0.05, 42).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.vectors.rows(), vocab.len());
        assert_eq!(a.vectors.cols(), 8);
    }

    #[test]
    fn shared_contexts_yield_closer_embeddings() {
        // x and y occur in identical contexts; z in disjoint contexts.
        let vocab = small_vocab();
        let mut transcripts = Vec::new();
        for _ in 0..30 {
            transcripts.push(vec!["k".to_string(), "aa".to_string(), "t".to_string()]);
            transcripts.push(vec!["k".to_string(), "ae".to_string(), "t".to_string()]);
            transcripts.push(vec!["sh".to_string(), "uw".to_string(), "m".to_string()]);
        }
        let emb = train_cbow(&transcripts, &vocab, 1, 8, 40, 0.1, 7).unwrap();
        let ix = vocab.index_of("aa").unwrap();
        let iy = vocab.index_of("ae").unwrap();
        let iz = vocab.index_of("uw").unwrap();
        let ux = similarity_profile(&emb, ix).unwrap();
        assert!(
            ux[iy] > ux[iz],
            "cos(x,y)={} should exceed cos(x,z)={}",
            ux[iy],
            ux[iz]
        );
    }

    #[test]
    fn similarity_profile_properties() {
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa", "b", "d", "eh", "f"]]);
        let emb = train_cbow(&transcripts, &vocab, 2, 4, 3, 0.05, 1).unwrap();
        for i in [0, 5, 20] {
            let u = similarity_profile(&emb, i).unwrap();
            assert!((u[i] - 1.0).abs() < 1e-12);
            assert!(u.iter().all(|&c| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&c)));
        }
        let u0 = similarity_profile(&emb, 0).unwrap();
        let u7 = similarity_profile(&emb, 7).unwrap();
        assert!((u0[7] - u7[0]).abs() < 1e-12);
    }

    #[test]
    fn identical_embeddings_give_uniform_cbow() {
        let vocab = small_vocab();
        let n = vocab.len();
        let mut vectors = Matrix::zeros(n, 3);
        for i in 0..n {
            vectors.row_mut(i).copy_from_slice(&[0.5, -1.0, 2.0]);
        }
        let emb = PhoneEmbeddings {
            symbols: vocab.symbols().to_vec(),
            vectors,
            window: 2,
            dim: 3,
            epochs: 0,
            lr: 0.0,
            seed: 0,
        };
        let d = cbow_distribution(&emb).unwrap();
        for &p in &d.probs {
            assert!((p - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints_and_hand_value() {
        let mk = |probs: Vec<f64>, prov| SmoothingDistribution {
            symbols: vec!["a".into(), "b".into()],
            probs,
            provenance: prov,
        };
        let c = mk(vec![0.5, 0.5], Provenance::Cbow);
        let u = mk(vec![0.8, 0.2], Provenance::Unigram);
        let at0 = interpolate_distributions(&c, &u, 0.0).unwrap();
        assert_eq!(at0.probs, u.probs);
        let at1 = interpolate_distributions(&c, &u, 1.0).unwrap();
        assert_eq!(at1.probs, c.probs);
        let mid = interpolate_distributions(&c, &u, 0.1).unwrap();
        assert!((mid.probs[0] - 0.77).abs() < 1e-12);
        assert!((mid.probs[1] - 0.23).abs() < 1e-12);
        assert_eq!(mid.provenance, Provenance::Interpolated(0.1));
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.3f64, 0.45, 0.25];
        let logq: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let (kl, grad) = kl_penalty(&p, &logq).unwrap();
        assert!(kl.abs() < 1e-12);
        assert_eq!(grad, vec![-0.3, -0.45, -0.25]);
    }

    #[test]
    fn kl_near_point_mass_vs_uniform_is_ln2() {
        let kp = 1e-6;
        let p = [1.0 - kp, kp];
        let logq = [(0.5f64).ln(), (0.5f64).ln()];
        let (kl, _) = kl_penalty(&p, &logq).unwrap();
        assert!((kl - 2.0f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = rng_from(123);
        for _ in 0..1000 {
            let n = rng.gen_range(2..6);
            let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let sp: f64 = p.iter().sum();
            let sq: f64 = q.iter().sum();
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let logq: Vec<f64> = q.iter().map(|v| v.ln()).collect();
            let (kl, _) = kl_penalty(&p, &logq).unwrap();
            assert!(kl >= -1e-12);
        }
    }

    #[test]
    fn kl_zero_target_entry_is_config_error() {
        assert!(matches!(
            kl_penalty(&[0.0, 1.0], &[0.5f64.ln(), 0.5f64.ln()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cbow_distribution_rotation_invariant_at_d2() {
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa", "b", "d", "eh", "f", "g", "hh"]]);
        let emb = train_cbow(&transcripts, &vocab, 2, 2, 10, 0.05, 3).unwrap();
        let base = cbow_distribution(&emb).unwrap();
        let theta: f64 = 0.83;
        let (c, s) = (theta.cos(), theta.sin());
        let mut rotated = emb.clone();
        for i in 0..rotated.vectors.rows() {
            let x = emb.vectors.get(i, 0);
            let y = emb.vectors.get(i, 1);
            rotated.vectors.set(i, 0, c * x - s * y);
            rotated.vectors.set(i, 1, s * x + c * y);
        }
        let rot = cbow_distribution(&rotated).unwrap();
        for (a, b) in base.probs.iter().zip(&rot.probs) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothing_text_roundtrip() {
        let vocab = small_vocab();
        let transcripts = seqs(&[&["aa", "b", "zh"]]);
        let d = unigram_distribution(&transcripts, &vocab, UNIGRAM_ADD_K).unwrap();
        let back = SmoothingDistribution::from_text(&d.to_text()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn short_transcripts_are_config_error() {
        let vocab = small_vocab();
        // Without eos this would have no context at all; with a single symbol
        // plus eos there is still a valid pair, so use an empty transcript.
        let transcripts: Vec<Vec<String>> = vec![vec![]];
        // empty transcript + eos has length 1 -> no (center, context) pairs
        assert!(matches!(
            train_cbow(&transcripts, &vocab, 2, 4, 1, 0.05, 0),
            Err(Error::Config(_))
        ));
    }
}
