//! Corpus schema and deterministic synthetic generation: canonical and
//! actually-pronounced phone sequences with controlled mispronunciations,
//! prototype-based frame features with ground-truth alignment, manifest and
//! feature-file formats, and SpecAugment feature masking.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::inventory::PhoneInventory;
use crate::io::{atomic_write, read_matrix_file, write_matrix_file};
use crate::matrix::Matrix;
use crate::seed::{derive_indexed_seed, rng_from};

/// Magic for binary feature files.
pub const FEATURE_MAGIC: &[u8; 4] = b"MDFT";
/// Manifest file name inside a corpus directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

/// Mother tongues used for the synthetic L2 speakers.
pub const L2_TONGUES: [&str; 6] = [
    "hindi",
    "korean",
    "mandarin",
    "spanish",
    "arabic",
    "vietnamese",
];
/// Tag for native speakers.
pub const L1_TONGUE: &str = "native";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse(format!("unknown split '{s}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Correct,
    Substitution,
    Deletion,
    Insertion,
    Distortion,
}

impl ErrorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorKind::Correct => "cor",
            ErrorKind::Substitution => "sub",
            ErrorKind::Deletion => "del",
            ErrorKind::Insertion => "ins",
            ErrorKind::Distortion => "dis",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cor" => Ok(ErrorKind::Correct),
            "sub" => Ok(ErrorKind::Substitution),
            "del" => Ok(ErrorKind::Deletion),
            "ins" => Ok(ErrorKind::Insertion),
            "dis" => Ok(ErrorKind::Distortion),
            _ => Err(Error::Parse(format!("unknown error kind '{s}'"))),
        }
    }
}

/// One realized entry of the pronounced sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActualPhone {
    pub symbol: String,
    pub kind: ErrorKind,
}

/// A single utterance: prompt, realization, frame features, and the synthetic
/// ground-truth frame alignment.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub mother_tongue: String,
    pub split: Split,
    pub canonical: Vec<String>,
    pub actual: Vec<ActualPhone>,
    pub features: Matrix<f32>,
    pub frame_labels: Vec<usize>,
}

impl Utterance {
    /// Pronounced sequence with deletion placeholders removed.
    pub fn pronounced(&self) -> Vec<String> {
        self.actual
            .iter()
            .filter(|a| a.kind != ErrorKind::Deletion)
            .map(|a| a.symbol.clone())
            .collect()
    }

    pub fn validate(&self, inv: &PhoneInventory) -> Result<()> {
        let pronounced = self.pronounced();
        if self.features.rows() < pronounced.len() {
            return Err(Error::Schema(format!(
                "utterance {}: {} frames for {} pronounced phones",
                self.id,
                self.features.rows(),
                pronounced.len()
            )));
        }
        if self.frame_labels.len() != self.features.rows() {
            return Err(Error::Schema(format!(
                "utterance {}: {} frame labels for {} frames",
                self.id,
                self.frame_labels.len(),
                self.features.rows()
            )));
        }
        for c in &self.canonical {
            if !inv.is_base(c) {
                return Err(Error::Schema(format!(
                    "utterance {}: canonical symbol '{c}' is not a base phone",
                    self.id
                )));
            }
        }
        for a in &self.actual {
            match a.kind {
                ErrorKind::Distortion => {
                    if !inv.is_anti(&a.symbol) {
                        return Err(Error::Schema(format!(
                            "utterance {}: distortion entry '{}' is not an anti-phone",
                            self.id, a.symbol
                        )));
                    }
                }
                _ => {
                    if !inv.is_base(&a.symbol) {
                        return Err(Error::Schema(format!(
                            "utterance {}: entry '{}' is not a base phone",
                            self.id, a.symbol
                        )));
                    }
                }
            }
        }
        let n_base = inv.base_phones().len();
        if self.frame_labels.iter().any(|&l| l >= n_base) {
            return Err(Error::Schema(format!(
                "utterance {}: frame label out of range",
                self.id
            )));
        }
        if !self.features.all_finite() {
            return Err(Error::Schema(format!(
                "utterance {}: non-finite feature value",
                self.id
            )));
        }
        Ok(())
    }
}

/// Synthetic mispronunciation statistics: per-phone error probabilities, the
/// confusability graph, and the distortion severity.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub p_distort: f64,
    /// For each base phone, indices of plausible substitutes (never itself).
    pub confusion_graph: Vec<Vec<usize>>,
    /// How far distorted frames move toward a confusable prototype, in [0, 1].
    pub prototype_shift: f64,
}

impl ErrorModel {
    /// All-zero error probabilities (native speech).
    pub fn zero(inv: &PhoneInventory) -> Self {
        ErrorModel {
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
            p_distort: 0.0,
            confusion_graph: default_confusion_graph(inv),
            prototype_shift: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.p_sub + self.p_del + self.p_ins + self.p_distort;
        for p in [self.p_sub, self.p_del, self.p_ins, self.p_distort] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("error probability outside [0, 1]".into()));
            }
        }
        if total > 1.0 {
            return Err(Error::Config(format!(
                "error probabilities sum to {total} > 1"
            )));
        }
        if self.confusion_graph.iter().any(|c| c.is_empty()) {
            return Err(Error::Config(
                "every phone needs at least one confusable neighbor".into(),
            ));
        }
        for (i, c) in self.confusion_graph.iter().enumerate() {
            if c.contains(&i) {
                return Err(Error::Config(format!(
                    "phone {i} lists itself as a confusable"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.prototype_shift) {
            return Err(Error::Config("prototype_shift outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Three circular neighbors per phone.
pub fn default_confusion_graph(inv: &PhoneInventory) -> Vec<Vec<usize>> {
    let n = inv.base_phones().len();
    (0..n)
        .map(|i| vec![(i + 1) % n, (i + 2) % n, (i + n - 1) % n])
        .collect()
}

/// SpecAugment policy: counts and maximum widths of the zeroed bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecAugmentPolicy {
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    pub max_time_width: usize,
}

impl SpecAugmentPolicy {
    pub fn validate(&self, t: usize, f: usize) -> Result<()> {
        if self.max_freq_width > f || self.max_time_width > t {
            return Err(Error::Config(format!(
                "mask widths ({}, {}) exceed feature dimensions ({t}, {f})",
                self.max_time_width, self.max_freq_width
            )));
        }
        Ok(())
    }
}

/// Zeroes `n_freq_masks` contiguous frequency bands and `n_time_masks`
/// contiguous time spans; identical input elsewhere; deterministic in seed.
pub fn spec_augment(
    features: &Matrix<f32>,
    policy: &SpecAugmentPolicy,
    seed: u64,
) -> Result<Matrix<f32>> {
    let (t, f) = (features.rows(), features.cols());
    policy.validate(t, f)?;
    let mut out = features.clone();
    let mut rng = rng_from(seed);
    for _ in 0..policy.n_freq_masks {
        if policy.max_freq_width == 0 || f == 0 {
            continue;
        }
        let width = rng.gen_range(0..=policy.max_freq_width);
        let start = rng.gen_range(0..=f - width);
        for ti in 0..t {
            for j in start..start + width {
                out.set(ti, j, 0.0);
            }
        }
    }
    for _ in 0..policy.n_time_masks {
        if policy.max_time_width == 0 || t == 0 {
            continue;
        }
        let width = rng.gen_range(0..=policy.max_time_width);
        let start = rng.gen_range(0..=t - width);
        for ti in start..start + width {
            out.row_mut(ti).fill(0.0);
        }
    }
    Ok(out)
}

/// Generation settings for the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_l1_train: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub frames_per_phone: usize,
    pub noise_std: f64,
    pub min_phones: usize,
    pub max_phones: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_l1_train: 100,
            n_train: 300,
            n_dev: 60,
            n_test: 120,
            feature_dim: 16,
            frames_per_phone: 6,
            noise_std: 0.3,
            min_phones: 6,
            max_phones: 12,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be >= 2".into()));
        }
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return Err(Error::Config("all L2 split counts must be > 0".into()));
        }
        if self.min_phones == 0 || self.min_phones > self.max_phones {
            return Err(Error::Config("bad phone-count range".into()));
        }
        Ok(())
    }
}

/// Per-phone acoustic prototypes, a pure function of (seed, dims).
pub fn phone_prototypes(inv: &PhoneInventory, feature_dim: usize, seed: u64) -> Matrix<f32> {
    let mut rng = rng_from(crate::seed::derive_seed(seed, "prototypes"));
    let n = inv.base_phones().len();
    let mut protos = Matrix::zeros(n, feature_dim);
    for v in protos.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = (z * 2.0) as f32;
    }
    protos
}

struct UttPlan {
    actual: Vec<ActualPhone>,
    /// For each non-deleted entry: the base-phone index emitted in
    /// frame_labels and the feature source (prototype index plus optional
    /// distortion target).
    frames: Vec<(usize, Option<usize>)>,
}

fn plan_utterance(
    inv: &PhoneInventory,
    canonical: &[usize],
    errors: &ErrorModel,
    rng: &mut impl Rng,
) -> Result<UttPlan> {
    let base = inv.base_phones();
    let mut actual = Vec::new();
    let mut frames = Vec::new();
    for &c in canonical {
        let u: f64 = rng.gen();
        if u < errors.p_sub {
            let subs = &errors.confusion_graph[c];
            let s = subs[rng.gen_range(0..subs.len())];
            actual.push(ActualPhone {
                symbol: base[s].clone(),
                kind: ErrorKind::Substitution,
            });
            frames.push((s, None));
        } else if u < errors.p_sub + errors.p_del {
            actual.push(ActualPhone {
                symbol: base[c].clone(),
                kind: ErrorKind::Deletion,
            });
        } else if u < errors.p_sub + errors.p_del + errors.p_ins {
            actual.push(ActualPhone {
                symbol: base[c].clone(),
                kind: ErrorKind::Correct,
            });
            frames.push((c, None));
            let subs = &errors.confusion_graph[c];
            let s = subs[rng.gen_range(0..subs.len())];
            actual.push(ActualPhone {
                symbol: base[s].clone(),
                kind: ErrorKind::Insertion,
            });
            frames.push((s, None));
        } else if u < errors.p_sub + errors.p_del + errors.p_ins + errors.p_distort {
            let subs = &errors.confusion_graph[c];
            let toward = subs[rng.gen_range(0..subs.len())];
            actual.push(ActualPhone {
                symbol: inv.anti_of(&base[c])?,
                kind: ErrorKind::Distortion,
            });
            frames.push((c, Some(toward)));
        } else {
            actual.push(ActualPhone {
                symbol: base[c].clone(),
                kind: ErrorKind::Correct,
            });
            frames.push((c, None));
        }
    }
    Ok(UttPlan { actual, frames })
}

/// Realized base-phone indices must have no adjacent repeats, otherwise the
/// run-length-collapsed frame labels could not reproduce the pronounced
/// sequence.
fn has_adjacent_repeats(plan: &UttPlan) -> bool {
    plan.frames.windows(2).any(|w| w[0].0 == w[1].0)
}

fn generate_utterance(
    inv: &PhoneInventory,
    cfg: &GenConfig,
    errors: &ErrorModel,
    protos: &Matrix<f32>,
    id: String,
    speaker: String,
    mother_tongue: String,
    split: Split,
    utt_seed: u64,
) -> Result<Utterance> {
    let n_phones = inv.base_phones().len();
    for attempt in 0u64.. {
        let mut rng = rng_from(utt_seed.wrapping_add(attempt.wrapping_mul(0x9e3779b97f4a7c15)));
        let len = rng.gen_range(cfg.min_phones..=cfg.max_phones);
        let mut canonical = Vec::with_capacity(len);
        for _ in 0..len {
            loop {
                let p = rng.gen_range(0..n_phones);
                if canonical.last() != Some(&p) {
                    canonical.push(p);
                    break;
                }
            }
        }
        let plan = plan_utterance(inv, &canonical, errors, &mut rng)?;
        if has_adjacent_repeats(&plan) {
            continue; // reroll deterministically
        }
        let mut rows: Vec<Vec<f32>> = Vec::new();
        let mut frame_labels = Vec::new();
        for &(label, toward) in &plan.frames {
            let lo = cfg.frames_per_phone.saturating_sub(2).max(1);
            let hi = cfg.frames_per_phone + 2;
            let n_frames = rng.gen_range(lo..=hi);
            let mut center: Vec<f32> = protos.row(label).to_vec();
            if let Some(t) = toward {
                let shift = errors.prototype_shift as f32;
                for (c, &p) in center.iter_mut().zip(protos.row(t)) {
                    *c += shift * (p - *c);
                }
            }
            for _ in 0..n_frames {
                let row: Vec<f32> = center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + (z * cfg.noise_std) as f32
                    })
                    .collect();
                rows.push(row);
                frame_labels.push(label);
            }
        }
        let features = if rows.is_empty() {
            Matrix::zeros(0, cfg.feature_dim)
        } else {
            Matrix::from_rows(&rows)?
        };
        let utt = Utterance {
            id,
            speaker,
            mother_tongue,
            split,
            canonical: canonical
                .iter()
                .map(|&c| inv.base_phones()[c].clone())
                .collect(),
            actual: plan.actual,
            features,
            frame_labels,
        };
        utt.validate(inv)?;
        return Ok(utt);
    }
    unreachable!()
}

/// Generates the full synthetic corpus in memory. L1 utterances use zero
/// error probabilities. Deterministic: per-utterance seeds are derived from
/// (seed, utterance index), so results do not depend on evaluation order.
pub fn generate_corpus(
    inv: &PhoneInventory,
    cfg: &GenConfig,
    errors: &ErrorModel,
) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    errors.validate()?;
    let protos = phone_prototypes(inv, cfg.feature_dim, cfg.seed);
    let l1_errors = ErrorModel {
        p_sub: 0.0,
        p_del: 0.0,
        p_ins: 0.0,
        p_distort: 0.0,
        ..errors.clone()
    };
    let mut utts = Vec::new();
    let mut index = 0u64;
    let push = |utts: &mut Vec<Utterance>,
                index: &mut u64,
                split: Split,
                tongue: String,
                speaker: String,
                em: &ErrorModel,
                tag: &str,
                k: usize|
     -> Result<()> {
        let id = format!("{tag}-{}-{k:04}", split.as_str());
        let seed = derive_indexed_seed(cfg.seed, "utterance", *index);
        *index += 1;
        utts.push(generate_utterance(
            inv, cfg, em, &protos, id, speaker, tongue, split, seed,
        )?);
        Ok(())
    };
    for k in 0..cfg.n_l1_train {
        push(
            &mut utts,
            &mut index,
            Split::Train,
            L1_TONGUE.to_string(),
            format!("l1spk{:02}", k % 10),
            &l1_errors,
            "l1",
            k,
        )?;
    }
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::Test, cfg.n_test),
    ] {
        for k in 0..count {
            let tongue = L2_TONGUES[k % L2_TONGUES.len()].to_string();
            let speaker = format!("{}-spk{:02}", tongue, k % 12);
            push(
                &mut utts, &mut index, split, tongue, speaker, errors, "l2", k,
            )?;
        }
    }
    Ok(utts)
}

fn manifest_line(utt: &Utterance, feature_file: &str) -> String {
    let canonical = utt.canonical.join(" ");
    let actual = utt
        .actual
        .iter()
        .map(|a| format!("{}:{}", a.symbol, a.kind.as_str()))
        .collect::<Vec<_>>()
        .join(" ");
    let labels = utt
        .frame_labels
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        utt.id,
        utt.speaker,
        utt.mother_tongue,
        utt.split.as_str(),
        canonical,
        actual,
        feature_file,
        utt.features.rows(),
        labels
    )
}

/// Writes the corpus to `dir`: one feature file per utterance plus the
/// manifest. All writes are atomic.
pub fn write_corpus(dir: &Path, utts: &[Utterance]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for utt in utts {
        let fname = format!("{}.mdft", utt.id);
        write_matrix_file(&dir.join(&fname), FEATURE_MAGIC, &utt.features)?;
        manifest.push_str(&manifest_line(utt, &fname));
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_NAME);
    atomic_write(&path, manifest.as_bytes())?;
    Ok(path)
}

fn parse_manifest_line(line: &str, lineno: usize, dir: &Path) -> Result<Utterance> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 9 {
        return Err(Error::Parse(format!(
            "manifest line {lineno}: expected 9 fields, got {}",
            fields.len()
        )));
    }
    let split = Split::parse(fields[3])
        .map_err(|e| Error::Parse(format!("manifest line {lineno}: {e}")))?;
    let canonical: Vec<String> = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4].split(' ').map(str::to_string).collect()
    };
    let mut actual = Vec::new();
    if !fields[5].is_empty() {
        for entry in fields[5].split(' ') {
            let (sym, kind) = entry.split_once(':').ok_or_else(|| {
                Error::Parse(format!(
                    "manifest line {lineno}: bad actual entry '{entry}'"
                ))
            })?;
            actual.push(ActualPhone {
                symbol: sym.to_string(),
                kind: ErrorKind::parse(kind)
                    .map_err(|e| Error::Parse(format!("manifest line {lineno}: {e}")))?,
            });
        }
    }
    let n_frames: usize = fields[7]
        .parse()
        .map_err(|_| Error::Parse(format!("manifest line {lineno}: bad frame count")))?;
    let mut frame_labels = Vec::new();
    if !fields[8].is_empty() {
        for tok in fields[8].split(' ') {
            frame_labels.push(tok.parse().map_err(|_| {
                Error::Parse(format!("manifest line {lineno}: bad frame label '{tok}'"))
            })?);
        }
    }
    let feature_path = dir.join(fields[6]);
    let features = read_matrix_file(&feature_path, FEATURE_MAGIC)?;
    if features.rows() != n_frames {
        return Err(Error::Schema(format!(
            "manifest line {lineno}: feature file has {} frames, manifest says {n_frames}",
            features.rows()
        )));
    }
    Ok(Utterance {
        id: fields[0].to_string(),
        speaker: fields[1].to_string(),
        mother_tongue: fields[2].to_string(),
        split,
        canonical,
        actual,
        features,
        frame_labels,
    })
}

/// Loads a corpus from its manifest, validating every utterance.
pub fn load_corpus(manifest_path: &Path, inv: &PhoneInventory) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Io(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut utts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let utt = parse_manifest_line(line, i + 1, &dir)?;
        utt.validate(inv)?;
        utts.push(utt);
    }
    Ok(utts)
}

/// Utterances of one split.
pub fn split_of<'a>(utts: &'a [Utterance], split: Split) -> Vec<&'a Utterance> {
    utts.iter().filter(|u| u.split == split).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> PhoneInventory {
        PhoneInventory::build().unwrap()
    }

    fn small_cfg(seed: u64) -> GenConfig {
        GenConfig {
            n_l1_train: 4,
            n_train: 8,
            n_dev: 4,
            n_test: 6,
            feature_dim: 4,
            frames_per_phone: 4,
            min_phones: 3,
            max_phones: 6,
            seed,
            ..GenConfig::default()
        }
    }

    fn error_model(inv: &PhoneInventory) -> ErrorModel {
        ErrorModel {
            p_sub: 0.1,
            p_del: 0.05,
            p_ins: 0.05,
            p_distort: 0.08,
            confusion_graph: default_confusion_graph(inv),
            prototype_shift: 0.5,
        }
    }

    #[test]
    fn zero_errors_reproduce_canonical() {
        let inv = inv();
        let em = ErrorModel::zero(&inv);
        let utts = generate_corpus(&inv, &small_cfg(3), &em).unwrap();
        for u in &utts {
            let actual: Vec<String> = u.actual.iter().map(|a| a.symbol.clone()).collect();
            assert_eq!(actual, u.canonical, "utterance {}", u.id);
            assert!(u.actual.iter().all(|a| a.kind == ErrorKind::Correct));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let inv = inv();
        let em = error_model(&inv);
        let a = generate_corpus(&inv, &small_cfg(11), &em).unwrap();
        let b = generate_corpus(&inv, &small_cfg(11), &em).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.canonical, y.canonical);
            assert_eq!(x.actual, y.actual);
            assert_eq!(x.features, y.features);
            assert_eq!(x.frame_labels, y.frame_labels);
        }
    }

    #[test]
    fn substitution_rate_matches_binomial_oracle() {
        let inv = inv();
        let em = ErrorModel {
            p_sub: 0.1,
            p_del: 0.0,
            p_ins: 0.0,
            p_distort: 0.0,
            confusion_graph: default_confusion_graph(&inv),
            prototype_shift: 0.5,
        };
        let cfg = GenConfig {
            n_l1_train: 0,
            n_train: 1200,
            n_dev: 1,
            n_test: 1,
            feature_dim: 4,
            frames_per_phone: 3,
            min_phones: 8,
            max_phones: 12,
            seed: 5,
            ..GenConfig::default()
        };
        let utts = generate_corpus(&inv, &cfg, &em).unwrap();
        let mut total = 0usize;
        let mut subs = 0usize;
        for u in utts.iter().filter(|u| u.split == Split::Train) {
            for a in &u.actual {
                total += 1;
                if a.kind == ErrorKind::Substitution {
                    subs += 1;
                }
            }
        }
        assert!(total >= 10_000, "need a large sample, got {total}");
        let p_hat = subs as f64 / total as f64;
        let tol = 3.0 * (0.1 * 0.9 / total as f64).sqrt();
        assert!(
            (p_hat - 0.1).abs() < tol,
            "empirical {p_hat} outside 0.1 +- {tol}"
        );
    }

    #[test]
    fn frame_labels_collapse_to_pronounced_bases() {
        let inv = inv();
        let em = error_model(&inv);
        let utts = generate_corpus(&inv, &small_cfg(21), &em).unwrap();
        for u in &utts {
            let mut collapsed = Vec::new();
            for &l in &u.frame_labels {
                if collapsed.last() != Some(&l) {
                    collapsed.push(l);
                }
            }
            let expected: Vec<usize> = u
                .pronounced()
                .iter()
                .map(|s| inv.base_index(inv.base_of(s).unwrap()).unwrap())
                .collect();
            assert_eq!(collapsed, expected, "utterance {}", u.id);
        }
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let inv = inv();
        let em = error_model(&inv);
        let utts = generate_corpus(&inv, &small_cfg(9), &em).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &utts).unwrap();
        let loaded = load_corpus(&manifest, &inv).unwrap();
        assert_eq!(loaded.len(), utts.len());
        for (a, b) in utts.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(a.mother_tongue, b.mother_tongue);
            assert_eq!(a.split, b.split);
            assert_eq!(a.canonical, b.canonical);
            assert_eq!(a.actual, b.actual);
            assert_eq!(a.features, b.features);
            assert_eq!(a.frame_labels, b.frame_labels);
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let inv = inv();
        let em = error_model(&inv);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_corpus(
            d1.path(),
            &generate_corpus(&inv, &small_cfg(33), &em).unwrap(),
        )
        .unwrap();
        write_corpus(
            d2.path(),
            &generate_corpus(&inv, &small_cfg(33), &em).unwrap(),
        )
        .unwrap();
        let mut names: Vec<_> = fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = fs::read(d1.path().join(&name)).unwrap();
            let b = fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "file {name:?} differs");
        }
    }

    #[test]
    fn missing_feature_file_is_io_error_naming_it() {
        let inv = inv();
        let em = ErrorModel::zero(&inv);
        let utts = generate_corpus(&inv, &small_cfg(2), &em).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &utts).unwrap();
        let victim = format!("{}.mdft", utts[0].id);
        fs::remove_file(dir.path().join(&victim)).unwrap();
        match load_corpus(&manifest, &inv) {
            Err(Error::Io(msg)) => assert!(msg.contains(&victim), "message: {msg}"),
            other => panic!("expected IoError, got {other:?}"),
        }
    }

    #[test]
    fn truncated_feature_file_is_schema_error() {
        let inv = inv();
        let em = ErrorModel::zero(&inv);
        let utts = generate_corpus(&inv, &small_cfg(2), &em).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(dir.path(), &utts).unwrap();
        let victim = dir.path().join(format!("{}.mdft", utts[0].id));
        let mut bytes = fs::read(&victim).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            load_corpus(&manifest, &inv),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn malformed_manifest_line_reports_line_number() {
        let inv = inv();
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join(MANIFEST_NAME);
        fs::write(&manifest, "only\tthree\tfields\n").unwrap();
        match load_corpus(&manifest, &inv) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line 1"), "message: {msg}"),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn spec_augment_identity_and_bounds() {
        let inv = inv();
        let em = ErrorModel::zero(&inv);
        let utts = generate_corpus(&inv, &small_cfg(8), &em).unwrap();
        let feats = &utts[0].features;
        let off = SpecAugmentPolicy {
            n_freq_masks: 0,
            max_freq_width: 0,
            n_time_masks: 0,
            max_time_width: 0,
        };
        assert_eq!(&spec_augment(feats, &off, 1).unwrap(), feats);

        let policy = SpecAugmentPolicy {
            n_freq_masks: 2,
            max_freq_width: 2,
            n_time_masks: 2,
            max_time_width: 3,
        };
        let masked = spec_augment(feats, &policy, 7).unwrap();
        let changed = feats
            .data()
            .iter()
            .zip(masked.data())
            .filter(|(a, b)| a != b)
            .count();
        let bound = policy.n_freq_masks * policy.max_freq_width * feats.rows()
            + policy.n_time_masks * policy.max_time_width * feats.cols();
        assert!(changed <= bound);
        for (a, b) in feats.data().iter().zip(masked.data()) {
            assert!(a == b || *b == 0.0);
        }
        assert_eq!(masked, spec_augment(feats, &policy, 7).unwrap());
        assert_ne!(masked, spec_augment(feats, &policy, 8).unwrap());
    }

    #[test]
    fn oversized_mask_width_is_config_error() {
        let feats = Matrix::<f32>::zeros(4, 3);
        let policy = SpecAugmentPolicy {
            n_freq_masks: 1,
            max_freq_width: 5,
            n_time_masks: 0,
            max_time_width: 0,
        };
        assert!(matches!(
            spec_augment(&feats, &policy, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn test_split_covers_six_tongues() {
        let inv = inv();
        let em = ErrorModel::zero(&inv);
        let utts = generate_corpus(&inv, &small_cfg(4), &em).unwrap();
        let tongues: std::collections::BTreeSet<_> = utts
            .iter()
            .filter(|u| u.split == Split::Test)
            .map(|u| u.mother_tongue.clone())
            .collect();
        assert_eq!(tongues.len(), 6);
    }
}
