//! End-to-end orchestration shared by the command-line driver and the
//! integration tests: corpus assembly, smoothing-distribution estimation,
//! condition training, decoding, scoring, and the full experiment matrix.

use std::collections::BTreeMap;

use crate::acoustic::{
    calibrate_threshold, extract_ppg, forced_align, gop_detect, gop_score, train_frame_classifier,
    ClassifierConfig, FrameClassifier,
};
use crate::corpus::{
    default_confusion_graph, generate_corpus, split_of, ErrorModel, GenConfig, SpecAugmentPolicy,
    Split, Utterance,
};
use crate::error::{Error, Result};
use crate::inventory::{PhoneInventory, Vocab};
use crate::labelaug::{
    cbow_distribution, interpolate_distributions, train_cbow, unigram_distribution,
    SmoothingDistribution, UNIGRAM_ADD_K,
};
use crate::mdeval::{
    md_outcomes, phone_error_rate, prf_metrics, MdOutcome, MdOutcomeSet, MetricRow, Prf, Verdict,
    DELETION_MARKER,
};
use crate::mdmodel::{
    beam_decode, train, MdModel, ModelConfig, TrainOptions, TrainSummary, TrainUtt,
};
use crate::seed::derive_seed;

/// Every knob of a full experiment in one place. Serializes to a stable
/// key=value listing used for config hashing and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub p_distort: f64,
    pub prototype_shift: f64,
    pub am: ClassifierConfig,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub embed_dim: usize,
    pub downsample: usize,
    pub lambda_train: f64,
    pub lambda_decode: f64,
    pub alpha: f64,
    pub beta: f64,
    pub beam: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub cbow_window: usize,
    pub cbow_dim: usize,
    pub cbow_epochs: usize,
    pub cbow_lr: f64,
    pub sa_freq_masks: usize,
    pub sa_freq_width: usize,
    pub sa_time_masks: usize,
    pub sa_time_width: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut gen = GenConfig::default();
        gen.n_train = 600;
        ExperimentConfig {
            gen,
            p_sub: 0.10,
            p_del: 0.04,
            p_ins: 0.04,
            p_distort: 0.06,
            prototype_shift: 0.5,
            am: ClassifierConfig::default(),
            encoder_hidden: 24,
            decoder_hidden: 24,
            attention_dim: 16,
            embed_dim: 12,
            downsample: 2,
            lambda_train: 0.3,
            lambda_decode: 0.3,
            alpha: 0.1,
            beta: 0.1,
            beam: 4,
            max_epochs: 80,
            lr: 1.5e-3,
            patience: 12,
            cbow_window: 2,
            cbow_dim: 16,
            cbow_epochs: 30,
            cbow_lr: 0.05,
            sa_freq_masks: 1,
            sa_freq_width: 3,
            sa_time_masks: 1,
            sa_time_width: 4,
            seed: 0,
        }
    }
}

macro_rules! kv_fields {
    ($($key:ident : $field:expr),+ $(,)?) => {{
        let mut m = BTreeMap::new();
        $(m.insert(stringify!($key).to_string(), $field.to_string());)+
        m
    }};
}

impl ExperimentConfig {
    /// Stable key=value view, used for the config file, overrides, and the
    /// report-header hash.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        kv_fields![
            n_l1_train: self.gen.n_l1_train,
            n_train: self.gen.n_train,
            n_dev: self.gen.n_dev,
            n_test: self.gen.n_test,
            feature_dim: self.gen.feature_dim,
            frames_per_phone: self.gen.frames_per_phone,
            noise_std: self.gen.noise_std,
            min_phones: self.gen.min_phones,
            max_phones: self.gen.max_phones,
            p_sub: self.p_sub,
            p_del: self.p_del,
            p_ins: self.p_ins,
            p_distort: self.p_distort,
            prototype_shift: self.prototype_shift,
            am_hidden: self.am.hidden,
            am_epochs: self.am.epochs,
            am_lr: self.am.lr,
            am_batch_size: self.am.batch_size,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            attention_dim: self.attention_dim,
            embed_dim: self.embed_dim,
            downsample: self.downsample,
            lambda_train: self.lambda_train,
            lambda_decode: self.lambda_decode,
            alpha: self.alpha,
            beta: self.beta,
            beam: self.beam,
            max_epochs: self.max_epochs,
            lr: self.lr,
            patience: self.patience,
            cbow_window: self.cbow_window,
            cbow_dim: self.cbow_dim,
            cbow_epochs: self.cbow_epochs,
            cbow_lr: self.cbow_lr,
            sa_freq_masks: self.sa_freq_masks,
            sa_freq_width: self.sa_freq_width,
            sa_time_masks: self.sa_time_masks,
            sa_time_width: self.sa_time_width,
            seed: self.seed,
        ]
    }

    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for key '{key}'")))
        }
        match key {
            "n_l1_train" => self.gen.n_l1_train = p(key, value)?,
            "n_train" => self.gen.n_train = p(key, value)?,
            "n_dev" => self.gen.n_dev = p(key, value)?,
            "n_test" => self.gen.n_test = p(key, value)?,
            "feature_dim" => self.gen.feature_dim = p(key, value)?,
            "frames_per_phone" => self.gen.frames_per_phone = p(key, value)?,
            "noise_std" => self.gen.noise_std = p(key, value)?,
            "min_phones" => self.gen.min_phones = p(key, value)?,
            "max_phones" => self.gen.max_phones = p(key, value)?,
            "p_sub" => self.p_sub = p(key, value)?,
            "p_del" => self.p_del = p(key, value)?,
            "p_ins" => self.p_ins = p(key, value)?,
            "p_distort" => self.p_distort = p(key, value)?,
            "prototype_shift" => self.prototype_shift = p(key, value)?,
            "am_hidden" => self.am.hidden = p(key, value)?,
            "am_epochs" => self.am.epochs = p(key, value)?,
            "am_lr" => self.am.lr = p(key, value)?,
            "am_batch_size" => self.am.batch_size = p(key, value)?,
            "encoder_hidden" => self.encoder_hidden = p(key, value)?,
            "decoder_hidden" => self.decoder_hidden = p(key, value)?,
            "attention_dim" => self.attention_dim = p(key, value)?,
            "embed_dim" => self.embed_dim = p(key, value)?,
            "downsample" => self.downsample = p(key, value)?,
            "lambda_train" => self.lambda_train = p(key, value)?,
            "lambda_decode" => self.lambda_decode = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "beta" => self.beta = p(key, value)?,
            "beam" => self.beam = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "cbow_window" => self.cbow_window = p(key, value)?,
            "cbow_dim" => self.cbow_dim = p(key, value)?,
            "cbow_epochs" => self.cbow_epochs = p(key, value)?,
            "cbow_lr" => self.cbow_lr = p(key, value)?,
            "sa_freq_masks" => self.sa_freq_masks = p(key, value)?,
            "sa_freq_width" => self.sa_freq_width = p(key, value)?,
            "sa_time_masks" => self.sa_time_masks = p(key, value)?,
            "sa_time_width" => self.sa_time_width = p(key, value)?,
            "seed" => {
                self.seed = p(key, value)?;
                self.gen.seed = self.seed;
                self.am.seed = derive_seed(self.seed, "train-am");
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        // seed first so stage seeds derive before other keys are applied
        if let Some(v) = map.get("seed") {
            cfg.apply_override("seed", v)?;
        }
        for (k, v) in map {
            if k != "seed" {
                cfg.apply_override(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key=value", i + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(&map)
    }

    /// FNV hash of the canonical key=value listing.
    pub fn fingerprint(&self) -> u64 {
        crate::seed::fnv1a(self.to_text().as_bytes())
    }

    pub fn error_model(&self, inv: &PhoneInventory) -> ErrorModel {
        ErrorModel {
            p_sub: self.p_sub,
            p_del: self.p_del,
            p_ins: self.p_ins,
            p_distort: self.p_distort,
            confusion_graph: default_confusion_graph(inv),
            prototype_shift: self.prototype_shift,
        }
    }

    pub fn model_config(&self, inv: &PhoneInventory, use_ia: bool) -> ModelConfig {
        let mut mc = ModelConfig::for_inventory(inv, self.gen.feature_dim, use_ia);
        mc.encoder_hidden = self.encoder_hidden;
        mc.decoder_hidden = self.decoder_hidden;
        mc.attention_dim = self.attention_dim;
        mc.embed_dim = self.embed_dim;
        mc.downsample = self.downsample;
        mc.lambda_train = self.lambda_train;
        mc.lambda_decode = self.lambda_decode;
        mc.alpha = self.alpha;
        mc.beam = self.beam;
        mc
    }

    pub fn sa_policy(&self) -> SpecAugmentPolicy {
        SpecAugmentPolicy {
            n_freq_masks: self.sa_freq_masks,
            max_freq_width: self.sa_freq_width,
            n_time_masks: self.sa_time_masks,
            max_time_width: self.sa_time_width,
        }
    }
}

/// Generates the corpus for a config (seed flows from the global seed).
pub fn make_corpus(cfg: &ExperimentConfig, inv: &PhoneInventory) -> Result<Vec<Utterance>> {
    let mut gen = cfg.gen.clone();
    gen.seed = derive_seed(cfg.seed, "gen-corpus");
    generate_corpus(inv, &gen, &cfg.error_model(inv))
}

/// Trains the frame classifier on the train split.
pub fn make_frame_classifier(
    cfg: &ExperimentConfig,
    inv: &PhoneInventory,
    utts: &[Utterance],
) -> Result<FrameClassifier<f32>> {
    let mut am = cfg.am.clone();
    am.seed = derive_seed(cfg.seed, "train-am");
    train_frame_classifier(&split_of(utts, Split::Train), inv, &am)
}

/// Pronounced-sequence transcripts over the attention vocabulary.
fn transcripts(utts: &[&Utterance]) -> Vec<Vec<String>> {
    utts.iter().map(|u| u.pronounced()).collect()
}

/// The interpolated label-smoothing distribution estimated from the train
/// split transcripts.
pub fn make_smoothing(
    cfg: &ExperimentConfig,
    inv: &PhoneInventory,
    utts: &[Utterance],
) -> Result<SmoothingDistribution> {
    let vocab = Vocab::attention(inv);
    let train = split_of(utts, Split::Train);
    let texts = transcripts(&train);
    let uni = unigram_distribution(&texts, &vocab, UNIGRAM_ADD_K)?;
    let emb = train_cbow(
        &texts,
        &vocab,
        cfg.cbow_window,
        cfg.cbow_dim,
        cfg.cbow_epochs,
        cfg.cbow_lr,
        derive_seed(cfg.seed, "train-cbow"),
    )?;
    let cbow = cbow_distribution(&emb)?;
    interpolate_distributions(&cbow, &uni, cfg.beta)
}

/// Builds training items for one split: targets over the shared phone
/// indices, posteriorgrams attached when a classifier is supplied.
pub fn build_items(
    utts: &[&Utterance],
    inv: &PhoneInventory,
    clf: Option<&FrameClassifier<f32>>,
) -> Result<Vec<TrainUtt>> {
    let vocab = Vocab::ctc(inv);
    let mut items = Vec::with_capacity(utts.len());
    for u in utts {
        let pronounced = u.pronounced();
        if pronounced.is_empty() || u.features.rows() == 0 {
            continue; // degenerate utterance (everything deleted)
        }
        let target = vocab.encode(&pronounced)?;
        let ppg = match clf {
            Some(c) => Some(extract_ppg(c, &u.features)?),
            None => None,
        };
        items.push(TrainUtt {
            features: u.features.clone(),
            ppg,
            target,
        });
    }
    Ok(items)
}

/// Condition flags of one experiment row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition {
    pub input_aug: bool,
    pub label_aug: bool,
    pub spec_augment: bool,
}

impl Condition {
    pub fn label(&self) -> String {
        let mut parts = vec!["e2e"];
        if self.input_aug {
            parts.push("ia");
        }
        if self.label_aug {
            parts.push("la");
        }
        if self.spec_augment {
            parts.push("sa");
        }
        parts.join("+")
    }
}

/// Trains one E2E condition. The classifier is required iff input
/// augmentation is on; the smoothing distribution iff label augmentation is.
pub fn train_condition(
    cfg: &ExperimentConfig,
    inv: &PhoneInventory,
    utts: &[Utterance],
    cond: Condition,
    clf: Option<&FrameClassifier<f32>>,
    smoothing: Option<&SmoothingDistribution>,
) -> Result<(MdModel<f32>, TrainSummary)> {
    if cond.input_aug && clf.is_none() {
        return Err(Error::Config(
            "input augmentation requires a trained frame classifier".into(),
        ));
    }
    if cond.label_aug && smoothing.is_none() {
        return Err(Error::Config(
            "label augmentation requires a smoothing distribution artifact".into(),
        ));
    }
    let ia_clf = if cond.input_aug { clf } else { None };
    let train_items = build_items(&split_of(utts, Split::Train), inv, ia_clf)?;
    let dev_items = build_items(&split_of(utts, Split::Dev), inv, ia_clf)?;
    let mut mc = cfg.model_config(inv, cond.input_aug);
    if !cond.label_aug {
        mc.alpha = 0.0;
    }
    let opts = TrainOptions {
        max_epochs: cfg.max_epochs,
        lr: cfg.lr,
        patience: cfg.patience,
        seed: derive_seed(cfg.seed, &format!("train-md-{}", cond.label())),
        spec_augment: if cond.spec_augment {
            Some(cfg.sa_policy())
        } else {
            None
        },
    };
    let smooth = if cond.label_aug { smoothing } else { None };
    train(mc, &train_items, &dev_items, smooth, &opts)
}

/// Decoded hypothesis for one utterance, as symbol strings over the 48+48
/// inventory.
pub fn decode_utterance(
    model: &MdModel<f32>,
    inv: &PhoneInventory,
    u: &Utterance,
    clf: Option<&FrameClassifier<f32>>,
) -> Result<Vec<String>> {
    let vocab = Vocab::ctc(inv);
    if u.features.rows() == 0 {
        return Ok(Vec::new());
    }
    let ppg = match (model.config.use_input_augmentation, clf) {
        (true, Some(c)) => Some(extract_ppg(c, &u.features)?),
        (true, None) => {
            return Err(Error::Config(
                "model requires posteriorgram inputs but no classifier was supplied".into(),
            ))
        }
        _ => None,
    };
    let (best, _) = beam_decode(
        model,
        &u.features,
        ppg.as_ref(),
        model.config.lambda_decode,
        model.config.beam,
    )?;
    Ok(best
        .symbols
        .iter()
        .map(|&i| vocab.symbol(i).to_string())
        .collect())
}

/// Everything the report needs from evaluating one condition on one split.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub cd: Prf,
    pub md: Prf,
    pub per: f64,
    pub sets: Vec<MdOutcomeSet>,
    /// Per mother tongue: MD F1 in percent.
    pub groups: Vec<(String, f64)>,
}

/// Scores hypotheses against the corpus ground truth on the collapsed
/// inventory.
pub fn evaluate_hypotheses(
    inv: &PhoneInventory,
    utts: &[&Utterance],
    hyps: &[Vec<String>],
) -> Result<EvalResult> {
    if utts.len() != hyps.len() {
        return Err(Error::Shape(
            "utterances and hypotheses differ in count".into(),
        ));
    }
    if utts.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut sets = Vec::with_capacity(utts.len());
    let mut refs = Vec::with_capacity(utts.len());
    let mut hyp_seqs = Vec::with_capacity(utts.len());
    let mut by_group: BTreeMap<String, Vec<MdOutcome>> = BTreeMap::new();
    let mut all = Vec::new();
    for (u, hyp) in utts.iter().zip(hyps) {
        let canonical = inv.collapse_sequence(&u.canonical)?;
        let actual = inv.collapse_sequence(&u.pronounced())?;
        let hypothesis = inv.collapse_sequence(hyp)?;
        let set = md_outcomes(&canonical, &actual, &hypothesis);
        all.extend(set.outcomes.iter().cloned());
        by_group
            .entry(u.mother_tongue.clone())
            .or_default()
            .extend(set.outcomes.iter().cloned());
        sets.push(set);
        refs.push(actual);
        hyp_seqs.push(hypothesis);
    }
    let cd = prf_metrics(&all, Verdict::Correct)?;
    let md = prf_metrics(&all, Verdict::Mispronounced)?;
    let per = phone_error_rate(&refs, &hyp_seqs)?;
    let mut groups = Vec::new();
    for (g, outcomes) in by_group {
        let f1 = prf_metrics(&outcomes, Verdict::Mispronounced)?.f1 * 100.0;
        groups.push((g, f1));
    }
    Ok(EvalResult {
        cd,
        md,
        per,
        sets,
        groups,
    })
}

/// Decodes and scores one condition on a split.
pub fn evaluate_condition(
    model: &MdModel<f32>,
    inv: &PhoneInventory,
    utts: &[&Utterance],
    clf: Option<&FrameClassifier<f32>>,
) -> Result<EvalResult> {
    let mut hyps = Vec::with_capacity(utts.len());
    for u in utts {
        hyps.push(decode_utterance(model, inv, u, clf)?);
    }
    evaluate_hypotheses(inv, utts, &hyps)
}

/// GOP baseline: calibrates the threshold on the dev split, scores the test
/// split. The PER column is undefined for GOP (it produces no transcript).
pub fn evaluate_gop(
    clf: &FrameClassifier<f32>,
    inv: &PhoneInventory,
    dev: &[&Utterance],
    test: &[&Utterance],
) -> Result<(EvalResult, f64)> {
    let scored = crate::acoustic::gop_dev_scores(clf, dev, inv)?;
    let threshold = calibrate_threshold(&scored)?;
    let mut all = Vec::new();
    let mut sets = Vec::new();
    let mut by_group: BTreeMap<String, Vec<MdOutcome>> = BTreeMap::new();
    for u in test {
        if u.features.rows() < u.canonical.len() || u.canonical.is_empty() {
            continue;
        }
        let canon_ids: Vec<usize> = u
            .canonical
            .iter()
            .map(|p| inv.base_index(p).expect("validated corpus"))
            .collect();
        let ppg = extract_ppg(clf, &u.features)?;
        let seg = forced_align(&ppg, &canon_ids)?;
        let scores = gop_score(&ppg, &seg, &canon_ids)?;
        let flags = gop_detect(&scores, threshold);

        let canonical = inv.collapse_sequence(&u.canonical)?;
        let actual = inv.collapse_sequence(&u.pronounced())?;
        // human side via the same alignment rule as the E2E evaluation
        let human = md_outcomes(&canonical, &actual, &canonical);
        let mut outcomes = Vec::with_capacity(canonical.len());
        for (i, h) in human.outcomes.into_iter().enumerate() {
            let system_verdict = if flags[i] {
                Verdict::Mispronounced
            } else {
                Verdict::Correct
            };
            let system_symbol = if flags[i] {
                DELETION_MARKER.to_string() // GOP detects but cannot diagnose
            } else {
                h.canonical.clone()
            };
            outcomes.push(MdOutcome {
                canonical: h.canonical,
                human_verdict: h.human_verdict,
                human_symbol: h.human_symbol,
                system_verdict,
                system_symbol,
            });
        }
        all.extend(outcomes.iter().cloned());
        by_group
            .entry(u.mother_tongue.clone())
            .or_default()
            .extend(outcomes.iter().cloned());
        sets.push(MdOutcomeSet {
            outcomes,
            human_insertions: 0,
            system_insertions: 0,
        });
    }
    if all.is_empty() {
        return Err(Error::Config("no scorable test utterances for GOP".into()));
    }
    let cd = prf_metrics(&all, Verdict::Correct)?;
    let md = prf_metrics(&all, Verdict::Mispronounced)?;
    let mut groups = Vec::new();
    for (g, outcomes) in by_group {
        groups.push((
            g,
            prf_metrics(&outcomes, Verdict::Mispronounced)?.f1 * 100.0,
        ));
    }
    Ok((
        EvalResult {
            cd,
            md,
            per: f64::NAN,
            sets,
            groups,
        },
        threshold,
    ))
}

/// The full report: Table-2-shaped grid plus the per-mother-tongue breakdown
/// of the strongest condition.
#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub rows: Vec<MetricRow>,
    pub groups: Vec<(String, f64)>,
}

/// Trains and evaluates all eight E2E conditions plus the GOP baseline.
pub fn run_experiment_matrix(
    cfg: &ExperimentConfig,
    inv: &PhoneInventory,
    utts: &[Utterance],
) -> Result<MatrixReport> {
    let stage = |name: &str, e: Error| Error::from_stage(name, e);
    let clf = make_frame_classifier(cfg, inv, utts).map_err(|e| stage("train-am", e))?;
    let smoothing = make_smoothing(cfg, inv, utts).map_err(|e| stage("make-smoothing", e))?;
    let test = split_of(utts, Split::Test);
    let dev = split_of(utts, Split::Dev);
    let mut rows = Vec::new();
    let mut best_groups: Vec<(String, f64)> = Vec::new();
    for spec_augment in [false, true] {
        for (input_aug, label_aug) in [(false, false), (true, false), (false, true), (true, true)] {
            let cond = Condition {
                input_aug,
                label_aug,
                spec_augment,
            };
            let label = cond.label();
            let (model, _) = train_condition(cfg, inv, utts, cond, Some(&clf), Some(&smoothing))
                .map_err(|e| stage(&format!("train-md {label}"), e))?;
            let eval = evaluate_condition(&model, inv, &test, Some(&clf))
                .map_err(|e| stage(&format!("evaluate {label}"), e))?;
            if input_aug && label_aug && spec_augment {
                best_groups = eval.groups.clone();
            }
            rows.push(MetricRow::from_prf(
                &label,
                input_aug,
                label_aug,
                spec_augment,
                eval.cd,
                eval.md,
                eval.per,
            ));
        }
    }
    let (gop_eval, _thr) =
        evaluate_gop(&clf, inv, &dev, &test).map_err(|e| stage("score-gop", e))?;
    rows.push(MetricRow::from_prf(
        "gop",
        false,
        false,
        false,
        gop_eval.cd,
        gop_eval.md,
        gop_eval.per,
    ));
    Ok(MatrixReport {
        rows,
        groups: best_groups,
    })
}

impl Error {
    fn from_stage(stage: &str, e: Error) -> Error {
        match e {
            Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
            Error::Io(m) => Error::Io(format!("stage {stage}: {m}")),
            Error::Parse(m) => Error::Parse(format!("stage {stage}: {m}")),
            Error::Schema(m) => Error::Schema(format!("stage {stage}: {m}")),
            Error::Shape(m) => Error::Shape(format!("stage {stage}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("stage {stage}: {m}")),
            Error::InfeasibleTarget(m) => Error::InfeasibleTarget(format!("stage {stage}: {m}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_roundtrip_and_fingerprint() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("seed", "42").unwrap();
        cfg.apply_override("lambda_decode", "0.5").unwrap();
        let text = cfg.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());

        let mut other = cfg.clone();
        other.apply_override("beam", "8").unwrap();
        assert_ne!(other.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(
            cfg.apply_override("no_such_knob", "1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_text("lambda_train 0.3\n"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn condition_labels_are_stable() {
        assert_eq!(
            Condition {
                input_aug: false,
                label_aug: false,
                spec_augment: false
            }
            .label(),
            "e2e"
        );
        assert_eq!(
            Condition {
                input_aug: true,
                label_aug: true,
                spec_augment: true
            }
            .label(),
            "e2e+ia+la+sa"
        );
    }

    #[test]
    fn label_aug_without_smoothing_is_config_error() {
        let inv = PhoneInventory::build().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("n_l1_train", "2").unwrap();
        cfg.apply_override("n_train", "4").unwrap();
        cfg.apply_override("n_dev", "2").unwrap();
        cfg.apply_override("n_test", "2").unwrap();
        let utts = make_corpus(&cfg, &inv).unwrap();
        let cond = Condition {
            input_aug: false,
            label_aug: true,
            spec_augment: false,
        };
        match train_condition(&cfg, &inv, &utts, cond, None, None) {
            Err(Error::Config(msg)) => assert!(msg.contains("smoothing"), "message: {msg}"),
            other => panic!("expected ConfigError, got {other:?}"),
        }
    }

    #[test]
    fn perfect_hypotheses_score_perfectly() {
        let inv = PhoneInventory::build().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("n_l1_train", "0").unwrap();
        cfg.apply_override("n_train", "1").unwrap();
        cfg.apply_override("n_dev", "1").unwrap();
        cfg.apply_override("n_test", "8").unwrap();
        let utts = make_corpus(&cfg, &inv).unwrap();
        let test = split_of(&utts, Split::Test);
        let hyps: Vec<Vec<String>> = test.iter().map(|u| u.pronounced()).collect();
        let eval = evaluate_hypotheses(&inv, &test, &hyps).unwrap();
        assert_eq!(eval.per, 0.0);
        assert!((eval.md.f1 - 1.0).abs() < 1e-12 || eval.md.recall == 0.0);
        assert!((eval.cd.f1 - 1.0).abs() < 1e-12);
        assert_eq!(eval.groups.len(), 6);
    }
}
