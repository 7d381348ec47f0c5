//! Frame-level phone classifier, posteriorgram extraction, Viterbi forced
//! alignment, and GOP (goodness of pronunciation) scoring with dev-set
//! threshold calibration.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::ckpt::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::corpus::{ErrorKind, Utterance};
use crate::error::{Error, Result};
use crate::inventory::PhoneInventory;
use crate::matrix::Matrix;
use crate::num::Scalar;
use crate::numcore::{log_softmax_backward, log_softmax_rows, Linear, OptimizerState, ParamStore};
use crate::seed::{derive_indexed_seed, derive_seed, rng_from};

/// Magic for posteriorgram files (same binary layout as feature files).
pub const PPG_MAGIC: &[u8; 4] = b"MDPG";

/// Rows must be nonnegative and sum to 1 within this tolerance.
pub const PPG_ROW_TOLERANCE: f64 = 1e-6;

pub fn validate_posteriorgram<S: Scalar>(ppg: &Matrix<S>) -> Result<()> {
    for t in 0..ppg.rows() {
        let mut sum = 0.0f64;
        for &p in ppg.row(t) {
            let p = p.to_f64_lossy();
            if !(p >= 0.0) {
                return Err(Error::Numeric(format!(
                    "posteriorgram row {t} has a negative entry"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PPG_ROW_TOLERANCE {
            return Err(Error::Numeric(format!(
                "posteriorgram row {t} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Two-hidden-layer tanh MLP over single frames.
#[derive(Debug, Clone)]
pub struct FrameClassifier<S: Scalar> {
    pub params: ParamStore<S>,
    pub in_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

fn layer_descriptors(in_dim: usize, hidden: usize, n_classes: usize) -> [Linear; 3] {
    let lin = |prefix: &str, i, o| Linear {
        w: format!("{prefix}.w"),
        b: format!("{prefix}.b"),
        in_dim: i,
        out_dim: o,
    };
    [
        lin("fc1", in_dim, hidden),
        lin("fc2", hidden, hidden),
        lin("out", hidden, n_classes),
    ]
}

fn tanh_rows<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    m.map(|v| v.tanh())
}

struct MlpCache<S: Scalar> {
    h1: Matrix<S>,
    h2: Matrix<S>,
    log_probs: Matrix<S>,
}

fn mlp_forward<S: Scalar>(
    ps: &ParamStore<S>,
    layers: &[Linear; 3],
    x: &Matrix<S>,
) -> Result<MlpCache<S>> {
    let h1 = tanh_rows(&layers[0].forward(ps, x)?);
    let h2 = tanh_rows(&layers[1].forward(ps, &h1)?);
    let logits = layers[2].forward(ps, &h2)?;
    Ok(MlpCache {
        h1,
        h2,
        log_probs: log_softmax_rows(&logits),
    })
}

fn mlp_backward<S: Scalar>(
    ps: &mut ParamStore<S>,
    layers: &[Linear; 3],
    x: &Matrix<S>,
    cache: &MlpCache<S>,
    d_log_probs: &Matrix<S>,
) -> Result<()> {
    let d_logits = log_softmax_backward(&cache.log_probs, d_log_probs);
    let dh2 = layers[2].backward(ps, &cache.h2, &d_logits)?;
    let mut dpre2 = dh2;
    for (d, &h) in dpre2.data_mut().iter_mut().zip(cache.h2.data()) {
        *d *= S::one() - h * h;
    }
    let dh1 = layers[1].backward(ps, &cache.h1, &dpre2)?;
    let mut dpre1 = dh1;
    for (d, &h) in dpre1.data_mut().iter_mut().zip(cache.h1.data()) {
        *d *= S::one() - h * h;
    }
    layers[0].backward(ps, x, &dpre1)?;
    Ok(())
}

/// Mean cross-entropy over the batch; accumulates gradients into `ps`.
fn mlp_loss_and_grad<S: Scalar>(
    ps: &mut ParamStore<S>,
    layers: &[Linear; 3],
    x: &Matrix<S>,
    labels: &[usize],
) -> Result<S> {
    let cache = mlp_forward(ps, layers, x)?;
    let n = labels.len();
    let inv_n = S::one() / crate::num::s::<S>(n as f64);
    let mut loss = S::zero();
    let mut d_logp = Matrix::zeros(cache.log_probs.rows(), cache.log_probs.cols());
    for (i, &y) in labels.iter().enumerate() {
        loss -= cache.log_probs.get(i, y) * inv_n;
        d_logp.set(i, y, -inv_n);
    }
    mlp_backward(ps, layers, x, &cache, &d_logp)?;
    Ok(loss)
}

impl<S: Scalar> FrameClassifier<S> {
    fn layers(&self) -> [Linear; 3] {
        layer_descriptors(self.in_dim, self.hidden, self.n_classes)
    }

    /// Per-frame posteriors (rows sum to 1).
    pub fn posteriors(&self, features: &Matrix<S>) -> Result<Matrix<S>> {
        if features.cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "classifier expects {} features per frame, got {}",
                self.in_dim,
                features.cols()
            )));
        }
        let cache = mlp_forward(&self.params, &self.layers(), features)?;
        let mut p = cache.log_probs.map(|v| v.exp());
        // renormalize each row: exp of an f32 log-softmax can drift past the
        // posteriorgram sum tolerance
        for t in 0..p.rows() {
            let row = p.row_mut(t);
            let s: S = row.iter().copied().sum();
            for v in row {
                *v = *v / s;
            }
        }
        Ok(p)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint>
    where
        S: Scalar,
    {
        let ps32: ParamStore<f32> = self.params.cast();
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "frame-classifier".to_string());
        meta.insert("in_dim".to_string(), self.in_dim.to_string());
        meta.insert("hidden".to_string(), self.hidden.to_string());
        meta.insert("n_classes".to_string(), self.n_classes.to_string());
        Checkpoint::from_params(&ps32, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_checkpoint()?)
    }
}

impl FrameClassifier<f32> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta_get("kind")? != "frame-classifier" {
            return Err(Error::Schema(format!(
                "checkpoint kind '{}' is not a frame classifier",
                ckpt.meta_get("kind")?
            )));
        }
        Ok(FrameClassifier {
            params: ckpt.to_params()?,
            in_dim: ckpt.meta_parse("in_dim")?,
            hidden: ckpt.meta_parse("hidden")?,
            n_classes: ckpt.meta_parse("n_classes")?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&read_checkpoint(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            epochs: 4,
            lr: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Trains the frame classifier on all frames of the given utterances.
/// Distorted frames already carry their base-phone label in the corpus.
pub fn train_frame_classifier(
    utts: &[&Utterance],
    inv: &PhoneInventory,
    cfg: &ClassifierConfig,
) -> Result<FrameClassifier<f32>> {
    let n_classes = inv.base_phones().len();
    let mut rows: Vec<&[f32]> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut in_dim = None;
    for u in utts {
        if in_dim.is_none() && u.features.cols() > 0 {
            in_dim = Some(u.features.cols());
        }
        for (t, &l) in u.frame_labels.iter().enumerate() {
            rows.push(u.features.row(t));
            labels.push(l);
        }
    }
    let in_dim = in_dim.ok_or_else(|| Error::Config("no labeled frames to train on".into()))?;
    if rows.is_empty() {
        return Err(Error::Config("no labeled frames to train on".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be > 0".into()));
    }

    let mut ps = ParamStore::<f32>::new();
    let mut rng = rng_from(derive_seed(cfg.seed, "frame-classifier-init"));
    let layers = [
        Linear::init(&mut ps, "fc1", in_dim, cfg.hidden, &mut rng)?,
        Linear::init(&mut ps, "fc2", cfg.hidden, cfg.hidden, &mut rng)?,
        Linear::init(&mut ps, "out", cfg.hidden, n_classes, &mut rng)?,
    ];
    let mut opt = OptimizerState::new(&ps, cfg.lr);

    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut erng = rng_from(derive_indexed_seed(
            cfg.seed,
            "frame-classifier-epoch",
            epoch as u64,
        ));
        order.shuffle(&mut erng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut x = Matrix::zeros(chunk.len(), in_dim);
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(rows[i]);
            }
            ps.zero_grads();
            let loss = mlp_loss_and_grad(&mut ps, &layers, &x, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "classifier loss diverged in epoch {epoch}"
                )));
            }
            opt.step(&mut ps)?;
        }
    }
    Ok(FrameClassifier {
        params: ps,
        in_dim,
        hidden: cfg.hidden,
        n_classes,
    })
}

/// Posteriorgram for one utterance.
pub fn extract_ppg(clf: &FrameClassifier<f32>, features: &Matrix<f32>) -> Result<Matrix<f32>> {
    let ppg = clf.posteriors(features)?;
    validate_posteriorgram(&ppg)?;
    Ok(ppg)
}

/// One segment per canonical phone: [start, end) frame range.
pub type Segmentation = Vec<(usize, usize)>;

pub fn validate_segmentation(seg: &Segmentation, t: usize) -> Result<()> {
    if seg.is_empty() {
        return Err(Error::Schema("empty segmentation".into()));
    }
    if seg[0].0 != 0 || seg[seg.len() - 1].1 != t {
        return Err(Error::Schema("segmentation does not cover [0, T)".into()));
    }
    for w in seg.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::Schema("segmentation has a gap or overlap".into()));
        }
    }
    if seg.iter().any(|&(s, e)| e <= s) {
        return Err(Error::Schema("zero-length segment".into()));
    }
    Ok(())
}

/// Monotone Viterbi alignment of `canonical` (as base-phone indices) to the
/// posteriorgram, maximizing the summed log posterior of the aligned phones.
/// Ties break toward the earliest boundary.
pub fn forced_align<S: Scalar>(ppg: &Matrix<S>, canonical: &[usize]) -> Result<Segmentation> {
    let t_len = ppg.rows();
    let l_len = canonical.len();
    if l_len == 0 {
        return Err(Error::Config(
            "cannot align an empty canonical sequence".into(),
        ));
    }
    if l_len > t_len {
        return Err(Error::InfeasibleTarget(format!(
            "{l_len} phones cannot align to {t_len} frames"
        )));
    }
    if canonical.iter().any(|&p| p >= ppg.cols()) {
        return Err(Error::Shape(
            "phone index outside posteriorgram width".into(),
        ));
    }
    let lp = |t: usize, i: usize| ppg.get(t, canonical[i]).to_f64_lossy().max(1e-300).ln();

    // score[t][i]: best log score ending at frame t in phone i.
    // from_prev[t][i]: whether the best path advanced from phone i-1 at t.
    let mut score = vec![vec![f64::NEG_INFINITY; l_len]; t_len];
    let mut from_prev = vec![vec![false; l_len]; t_len];
    score[0][0] = lp(0, 0);
    for t in 1..t_len {
        for i in 0..l_len {
            let stay = score[t - 1][i];
            let advance = if i > 0 {
                score[t - 1][i - 1]
            } else {
                f64::NEG_INFINITY
            };
            // Preferring "stay" on ties starts each phone as early as the
            // optimum allows, which is the earliest-boundary convention.
            let (best, adv) = if advance > stay {
                (advance, true)
            } else {
                (stay, false)
            };
            if best > f64::NEG_INFINITY {
                score[t][i] = best + lp(t, i);
                from_prev[t][i] = adv;
            }
        }
    }
    if !score[t_len - 1][l_len - 1].is_finite() {
        return Err(Error::Numeric(
            "all alignment paths have zero probability".into(),
        ));
    }
    let mut starts = vec![0usize; l_len];
    let mut i = l_len - 1;
    for t in (1..t_len).rev() {
        if from_prev[t][i] {
            starts[i] = t;
            i -= 1;
        }
    }
    let mut seg = Vec::with_capacity(l_len);
    for (k, &s) in starts.iter().enumerate() {
        let e = if k + 1 < l_len { starts[k + 1] } else { t_len };
        seg.push((s, e));
    }
    validate_segmentation(&seg, t_len)?;
    Ok(seg)
}

/// Exhaustive-enumeration alignment oracle for tiny instances. Returns the
/// same segmentation as `forced_align` including tie-breaking (maximal
/// score, then lexicographically smallest start vector).
pub fn forced_align_brute_force<S: Scalar>(
    ppg: &Matrix<S>,
    canonical: &[usize],
) -> Result<Segmentation> {
    let t_len = ppg.rows();
    let l_len = canonical.len();
    if l_len == 0 || l_len > t_len {
        return Err(Error::Config("bad brute-force alignment instance".into()));
    }
    if t_len > 12 || l_len > 4 {
        return Err(Error::Config(
            "brute-force alignment instance too large".into(),
        ));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut starts = vec![0usize; l_len];
    fn rec(
        k: usize,
        prev: usize,
        starts: &mut Vec<usize>,
        t_len: usize,
        l_len: usize,
        score_of: &dyn Fn(&[usize]) -> f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if k == l_len {
            let s = score_of(starts);
            let better = match best {
                None => true,
                Some((bs, bstarts)) => s > *bs || (s == *bs && starts < bstarts),
            };
            if better {
                *best = Some((s, starts.clone()));
            }
            return;
        }
        let lo = if k == 0 { 0 } else { prev + 1 };
        for s in lo..=t_len - (l_len - k) {
            if k == 0 && s != 0 {
                break;
            }
            starts[k] = s;
            rec(k + 1, s, starts, t_len, l_len, score_of, best);
        }
    }
    let score_of = |starts: &[usize]| -> f64 {
        let mut total = 0.0;
        for (k, &s) in starts.iter().enumerate() {
            let e = if k + 1 < l_len { starts[k + 1] } else { t_len };
            for t in s..e {
                total += ppg.get(t, canonical[k]).to_f64_lossy().max(1e-300).ln();
            }
        }
        total
    };
    rec(0, 0, &mut starts, t_len, l_len, &score_of, &mut best);
    let (_, starts) = best.ok_or_else(|| Error::Numeric("no segmentation found".into()))?;
    let mut seg = Vec::with_capacity(l_len);
    for (k, &s) in starts.iter().enumerate() {
        let e = if k + 1 < l_len { starts[k + 1] } else { t_len };
        seg.push((s, e));
    }
    Ok(seg)
}

/// Duration-normalized GOP score per canonical phone:
/// mean over segment frames of log(p_canonical) - log(max_q p_q).
pub fn gop_score<S: Scalar>(
    ppg: &Matrix<S>,
    seg: &Segmentation,
    canonical: &[usize],
) -> Result<Vec<f64>> {
    if seg.len() != canonical.len() {
        return Err(Error::Shape(
            "segmentation and canonical lengths differ".into(),
        ));
    }
    validate_segmentation(seg, ppg.rows())?;
    let mut scores = Vec::with_capacity(canonical.len());
    for (&(s, e), &p) in seg.iter().zip(canonical) {
        let mut sum = 0.0;
        for t in s..e {
            let row = ppg.row(t);
            let canon = row[p].to_f64_lossy().max(1e-300);
            let max = row
                .iter()
                .map(|v| v.to_f64_lossy())
                .fold(f64::NEG_INFINITY, f64::max)
                .max(1e-300);
            sum += canon.ln() - max.ln();
        }
        scores.push(sum / (e - s) as f64);
    }
    Ok(scores)
}

/// Decision per phone: mispronounced iff score < threshold.
pub fn gop_detect(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s < threshold).collect()
}

/// Ground-truth mispronunciation flags per canonical phone. Insertion
/// entries are extra phones and carry no canonical position.
pub fn canonical_truth(utt: &Utterance) -> Vec<bool> {
    utt.actual
        .iter()
        .filter(|a| a.kind != ErrorKind::Insertion)
        .map(|a| a.kind != ErrorKind::Correct)
        .collect()
}

/// GOP scores paired with ground truth for a set of utterances.
pub fn gop_dev_scores(
    clf: &FrameClassifier<f32>,
    utts: &[&Utterance],
    inv: &PhoneInventory,
) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for u in utts {
        if u.features.rows() < u.canonical.len() {
            continue; // too short to align; skip for calibration
        }
        let canonical: Vec<usize> = u
            .canonical
            .iter()
            .map(|p| inv.base_index(p).expect("validated corpus"))
            .collect();
        let ppg = extract_ppg(clf, &u.features)?;
        let seg = forced_align(&ppg, &canonical)?;
        let scores = gop_score(&ppg, &seg, &canonical)?;
        let truth = canonical_truth(u);
        if truth.len() != scores.len() {
            return Err(Error::Schema(format!(
                "utterance {}: truth/score length mismatch",
                u.id
            )));
        }
        out.extend(scores.into_iter().zip(truth));
    }
    Ok(out)
}

fn f1_at(scored: &[(f64, bool)], threshold: f64) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for &(s, truth) in scored {
        let flagged = s < threshold;
        match (flagged, truth) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let pr = tp / (tp + fp);
    let re = tp / (tp + fn_);
    2.0 * pr * re / (pr + re)
}

/// F1-maximizing threshold over the dev scores. Candidates are the smallest
/// score (flags nothing), midpoints between adjacent distinct scores, and one
/// past the largest score (flags everything). Ties pick the smaller value.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::Config("cannot calibrate on an empty dev set".into()));
    }
    let mut values: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut candidates = vec![values[0]];
    for w in values.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(values[values.len() - 1] + 1.0);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &c in &candidates {
        let f1 = f1_at(scored, c);
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        default_confusion_graph, generate_corpus, split_of, ErrorModel, GenConfig, Split,
    };
    use crate::numcore::grad_check;
    use crate::seed::rng_from;
    use rand::Rng;

    fn inv() -> PhoneInventory {
        PhoneInventory::build().unwrap()
    }

    fn train_corpus(seed: u64) -> (PhoneInventory, Vec<Utterance>) {
        let inv = inv();
        let em = ErrorModel {
            p_sub: 0.08,
            p_del: 0.04,
            p_ins: 0.04,
            p_distort: 0.06,
            confusion_graph: default_confusion_graph(&inv),
            prototype_shift: 0.5,
        };
        let cfg = GenConfig {
            n_l1_train: 10,
            n_train: 40,
            n_dev: 16,
            n_test: 8,
            feature_dim: 8,
            frames_per_phone: 4,
            min_phones: 4,
            max_phones: 8,
            seed,
            ..GenConfig::default()
        };
        let utts = generate_corpus(&inv, &cfg, &em).unwrap();
        (inv, utts)
    }

    fn trained(seed: u64) -> (PhoneInventory, Vec<Utterance>, FrameClassifier<f32>) {
        let (inv, utts) = train_corpus(seed);
        let train = split_of(&utts, Split::Train);
        let clf = train_frame_classifier(
            &train,
            &inv,
            &ClassifierConfig {
                epochs: 8,
                ..ClassifierConfig::default()
            },
        )
        .unwrap();
        (inv, utts, clf)
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(5);
        let layers = [
            Linear::init(&mut ps, "fc1", 3, 4, &mut rng).unwrap(),
            Linear::init(&mut ps, "fc2", 4, 4, &mut rng).unwrap(),
            Linear::init(&mut ps, "out", 4, 5, &mut rng).unwrap(),
        ];
        let x = Matrix::from_vec(2, 3, vec![0.5, -1.0, 0.3, 1.2, 0.1, -0.7]).unwrap();
        let labels = vec![2usize, 4];
        ps.zero_grads();
        mlp_loss_and_grad(&mut ps, &layers, &x, &labels).unwrap();
        let max_rel = grad_check(
            &mut ps,
            |p| {
                let cache = mlp_forward(p, &layers, &x)?;
                let mut loss = 0.0;
                for (i, &y) in labels.iter().enumerate() {
                    loss -= cache.log_probs.get(i, y) / labels.len() as f64;
                }
                Ok(loss)
            },
            1e-5,
        )
        .unwrap();
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn heldout_frame_accuracy_above_90_percent() {
        let (_inv, utts, clf) = trained(17);
        let mut correct = 0usize;
        let mut total = 0usize;
        for u in split_of(&utts, Split::Dev) {
            let ppg = extract_ppg(&clf, &u.features).unwrap();
            for (t, &label) in u.frame_labels.iter().enumerate() {
                let row = ppg.row(t);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                total += 1;
                if argmax == label {
                    correct += 1;
                }
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc >= 0.90, "held-out frame accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_roundtrip() {
        let (_i1, u1) = train_corpus(23);
        let (_i2, u2) = train_corpus(23);
        let inv = inv();
        let cfg = ClassifierConfig {
            epochs: 2,
            ..ClassifierConfig::default()
        };
        let a = train_frame_classifier(&split_of(&u1, Split::Train), &inv, &cfg).unwrap();
        let b = train_frame_classifier(&split_of(&u2, Split::Train), &inv, &cfg).unwrap();
        for name in a.params.names() {
            assert_eq!(a.params.value(name).unwrap(), b.params.value(name).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("am.ckpt");
        a.save(&path).unwrap();
        let back = FrameClassifier::load(&path).unwrap();
        for name in a.params.names() {
            assert_eq!(
                a.params.value(name).unwrap(),
                back.params.value(name).unwrap()
            );
        }
        let u = &u1[0];
        assert_eq!(
            extract_ppg(&a, &u.features).unwrap(),
            extract_ppg(&back, &u.features).unwrap()
        );
    }

    #[test]
    fn ppg_rows_are_distributions() {
        let (_inv, utts, clf) = trained(29);
        let u = &utts[0];
        let ppg = extract_ppg(&clf, &u.features).unwrap();
        assert_eq!(ppg.rows(), u.features.rows());
        assert_eq!(ppg.cols(), 48);
        validate_posteriorgram(&ppg).unwrap();
    }

    #[test]
    fn wrong_feature_dim_is_shape_error() {
        let (_inv, _utts, clf) = trained(31);
        let bad = Matrix::<f32>::zeros(3, clf.in_dim + 1);
        assert!(matches!(extract_ppg(&clf, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn single_phone_alignment_spans_everything() {
        let ppg = Matrix::from_vec(4, 2, vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4]).unwrap();
        assert_eq!(forced_align(&ppg, &[0]).unwrap(), vec![(0, 4)]);
    }

    #[test]
    fn peaked_ppg_puts_boundary_at_the_peak_change() {
        let ppg = Matrix::from_vec(3, 2, vec![0.9, 0.1, 0.9, 0.1, 0.1, 0.9]).unwrap();
        assert_eq!(forced_align(&ppg, &[0, 1]).unwrap(), vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn l_equals_t_forces_unit_segments() {
        let ppg =
            Matrix::from_vec(3, 3, vec![0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5]).unwrap();
        assert_eq!(
            forced_align(&ppg, &[2, 0, 1]).unwrap(),
            vec![(0, 1), (1, 2), (2, 3)]
        );
    }

    #[test]
    fn too_many_phones_is_infeasible() {
        let ppg = Matrix::from_vec(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(
            forced_align(&ppg, &[0, 1, 0]),
            Err(Error::InfeasibleTarget(_))
        ));
    }

    #[test]
    fn viterbi_matches_exhaustive_enumeration() {
        let mut rng = rng_from(77);
        for case in 0..300 {
            let t = rng.gen_range(2..=8);
            let l = rng.gen_range(1..=3.min(t));
            let p = 3;
            let mut ppg = Matrix::<f64>::zeros(t, p);
            for ti in 0..t {
                let mut row: Vec<f64> = (0..p).map(|_| rng.gen_range(0.05..1.0)).collect();
                // occasional exact ties to exercise the tie-break
                if rng.gen_bool(0.3) {
                    row[1] = row[0];
                }
                let sum: f64 = row.iter().sum();
                for (j, v) in row.iter().enumerate() {
                    ppg.set(ti, j, v / sum);
                }
            }
            let canonical: Vec<usize> = (0..l).map(|_| rng.gen_range(0..p)).collect();
            let fast = forced_align(&ppg, &canonical).unwrap();
            let slow = forced_align_brute_force(&ppg, &canonical).unwrap();
            assert_eq!(fast, slow, "case {case}: T={t} L={l} canon={canonical:?}");
        }
    }

    #[test]
    fn gop_is_zero_on_perfect_posteriors() {
        let mut ppg = Matrix::<f64>::zeros(4, 3);
        for t in 0..4 {
            ppg.set(t, 1, 1.0);
        }
        let scores = gop_score(&ppg, &vec![(0, 4)], &[1]).unwrap();
        assert_eq!(scores, vec![0.0]);
    }

    #[test]
    fn gop_hand_value_ln_half() {
        let ppg = Matrix::from_vec(2, 3, vec![0.25, 0.5, 0.25, 0.25, 0.5, 0.25]).unwrap();
        let scores = gop_score(&ppg, &vec![(0, 2)], &[0]).unwrap();
        assert!((scores[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gop_never_positive_on_random_posteriorgrams() {
        let mut rng = rng_from(101);
        for _ in 0..1000 {
            let t = rng.gen_range(1..=6);
            let p = rng.gen_range(2..=5);
            let mut ppg = Matrix::<f64>::zeros(t, p);
            for ti in 0..t {
                let row: Vec<f64> = (0..p).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = row.iter().sum();
                for (j, v) in row.iter().enumerate() {
                    ppg.set(ti, j, v / sum);
                }
            }
            let l = rng.gen_range(1..=t);
            let canonical: Vec<usize> = (0..l).map(|_| rng.gen_range(0..p)).collect();
            let seg = forced_align(&ppg, &canonical).unwrap();
            for s in gop_score(&ppg, &seg, &canonical).unwrap() {
                assert!(s <= 1e-12, "positive GOP score {s}");
            }
        }
    }

    #[test]
    fn detect_endpoints() {
        let scores = vec![-0.5, -3.0, 0.0];
        assert_eq!(
            gop_detect(&scores, f64::NEG_INFINITY),
            vec![false, false, false]
        );
        assert_eq!(gop_detect(&scores, f64::INFINITY), vec![true, true, true]);
    }

    #[test]
    fn calibration_separates_constructed_dev_set() {
        let mut scored = Vec::new();
        for s in [-3.0, -2.8, -2.4, -2.2] {
            scored.push((s, true));
        }
        for s in [-0.9, -0.6, -0.4, -0.2] {
            scored.push((s, false));
        }
        let thr = calibrate_threshold(&scored).unwrap();
        assert!(thr > -2.0 && thr <= -1.0, "threshold {thr}");
        assert!((f1_at(&scored, thr) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_tie_prefers_smaller_threshold() {
        // one positive at -2, one negative at 0: F1=1 at any threshold in
        // (-2, 0]; the midpoint -1 is the only interior candidate, and the
        // "flag everything" candidate 1.0 scores lower.
        let scored = vec![(-2.0, true), (0.0, false)];
        let thr = calibrate_threshold(&scored).unwrap();
        assert_eq!(thr, -1.0);
    }

    #[test]
    fn empty_dev_set_is_config_error() {
        assert!(matches!(calibrate_threshold(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn pipeline_calibration_reaches_perfect_f1_on_separable_corpus() {
        let (inv, utts, clf) = trained(41);
        let dev = split_of(&utts, Split::Dev);
        let scored = gop_dev_scores(&clf, &dev, &inv).unwrap();
        assert!(scored.iter().any(|&(_, t)| t), "dev set has no positives");
        let thr = calibrate_threshold(&scored).unwrap();
        let f1 = f1_at(&scored, thr);
        assert!(f1 >= 0.75, "calibrated dev F1 {f1}");
    }
}
