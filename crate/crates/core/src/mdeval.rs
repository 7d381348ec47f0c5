//! Evaluation stack: Levenshtein alignment, per-segment verdicts for the
//! human and system sides, precision/recall/F1, phone error rate, confusion
//! tables, and report rendering.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Placeholder symbol for a deleted phone. Uppercase so it can never collide
/// with a base phone.
pub const DELETION_MARKER: &str = "SIL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Match,
    Substitution,
    Deletion,
    Insertion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentOp {
    pub kind: OpKind,
    pub ref_sym: Option<String>,
    pub hyp_sym: Option<String>,
}

impl AlignmentOp {
    pub fn cost(&self) -> usize {
        if self.kind == OpKind::Match {
            0
        } else {
            1
        }
    }
}

/// Minimal-cost Levenshtein alignment with unit costs. On ties the backtrace
/// prefers substitution, then deletion, then insertion.
pub fn align_sequences(r: &[String], h: &[String]) -> Vec<AlignmentOp> {
    let n = r.len();
    let m = h.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        d[i][0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[i - 1][j] + 1;
            let ins = d[i][j - 1] + 1;
            d[i][j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            ops.push(AlignmentOp {
                kind: if r[i - 1] == h[j - 1] {
                    OpKind::Match
                } else {
                    OpKind::Substitution
                },
                ref_sym: Some(r[i - 1].clone()),
                hyp_sym: Some(h[j - 1].clone()),
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(AlignmentOp {
                kind: OpKind::Deletion,
                ref_sym: Some(r[i - 1].clone()),
                hyp_sym: None,
            });
            i -= 1;
        } else {
            ops.push(AlignmentOp {
                kind: OpKind::Insertion,
                ref_sym: None,
                hyp_sym: Some(h[j - 1].clone()),
            });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn edit_distance(r: &[String], h: &[String]) -> usize {
    align_sequences(r, h).iter().map(AlignmentOp::cost).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Correct,
    Mispronounced,
}

/// Per-canonical-phone judgment from both the human reference and the system
/// hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdOutcome {
    pub canonical: String,
    pub human_verdict: Verdict,
    /// What was actually pronounced: base phone, anti-phone, or the deletion
    /// marker.
    pub human_symbol: String,
    pub system_verdict: Verdict,
    pub system_symbol: String,
}

/// Outcomes for one utterance plus insertion tallies, which carry no
/// canonical segment and are excluded from segment verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MdOutcomeSet {
    pub outcomes: Vec<MdOutcome>,
    pub human_insertions: usize,
    pub system_insertions: usize,
}

fn per_canonical(canonical: &[String], other: &[String]) -> (Vec<(Verdict, String)>, usize) {
    let ops = align_sequences(canonical, other);
    let mut verdicts = Vec::with_capacity(canonical.len());
    let mut insertions = 0;
    for op in ops {
        match op.kind {
            OpKind::Match => verdicts.push((Verdict::Correct, op.hyp_sym.unwrap())),
            OpKind::Substitution => verdicts.push((Verdict::Mispronounced, op.hyp_sym.unwrap())),
            OpKind::Deletion => {
                verdicts.push((Verdict::Mispronounced, DELETION_MARKER.to_string()))
            }
            OpKind::Insertion => insertions += 1,
        }
    }
    (verdicts, insertions)
}

/// Aligns both the pronounced sequence and the hypothesis against the
/// canonical prompt; emits one outcome per canonical phone.
pub fn md_outcomes(canonical: &[String], actual: &[String], hypothesis: &[String]) -> MdOutcomeSet {
    let (human, human_insertions) = per_canonical(canonical, actual);
    let (system, system_insertions) = per_canonical(canonical, hypothesis);
    let outcomes = canonical
        .iter()
        .zip(human)
        .zip(system)
        .map(|((c, h), s)| MdOutcome {
            canonical: c.clone(),
            human_verdict: h.0,
            human_symbol: h.1,
            system_verdict: s.0,
            system_symbol: s.1,
        })
        .collect();
    MdOutcomeSet {
        outcomes,
        human_insertions,
        system_insertions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn harmonic_f1(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// Precision/recall/F1 for one positive class over all outcomes.
/// Precision = |system ∩ human| / |system|, Recall = .. / |human|.
pub fn prf_metrics(outcomes: &[MdOutcome], positive: Verdict) -> Result<Prf> {
    if outcomes.is_empty() {
        return Err(Error::Config("no outcomes to score".into()));
    }
    let mut c_d = 0.0; // system says positive
    let mut c_h = 0.0; // human says positive
    let mut c_dh = 0.0;
    for o in outcomes {
        let sys = o.system_verdict == positive;
        let hum = o.human_verdict == positive;
        if sys {
            c_d += 1.0;
        }
        if hum {
            c_h += 1.0;
        }
        if sys && hum {
            c_dh += 1.0;
        }
    }
    let precision = if c_d == 0.0 { 0.0 } else { c_dh / c_d };
    let recall = if c_h == 0.0 { 0.0 } else { c_dh / c_h };
    Ok(Prf {
        recall,
        precision,
        f1: harmonic_f1(recall, precision),
    })
}

/// Total edit distance over total reference length, as a percentage.
pub fn phone_error_rate(refs: &[Vec<String>], hyps: &[Vec<String>]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Config("no utterances to score".into()));
    }
    if refs.len() != hyps.len() {
        return Err(Error::Shape("refs and hyps differ in length".into()));
    }
    let mut errors = 0usize;
    let mut total = 0usize;
    for (r, h) in refs.iter().zip(hyps) {
        errors += edit_distance(r, h);
        total += r.len();
    }
    if total == 0 {
        return Err(Error::Config("total reference length is zero".into()));
    }
    Ok(errors as f64 / total as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionRow {
    pub canonical: String,
    pub pronounced: String,
    /// "Del." for deletions, "Dist." for anti-phones, otherwise "Sub.".
    pub kind: String,
    pub count: usize,
    /// Fraction of occurrences the system flagged as mispronounced, in %.
    pub detection_pct: f64,
    /// Among flagged occurrences, fraction where the system named the
    /// pronounced symbol, in %.
    pub diagnosis_pct: f64,
}

/// Most frequent human mispronunciation pairs with detection and diagnosis
/// rates, sorted by count descending (ties by pair name).
pub fn confusion_table(sets: &[MdOutcomeSet], top_k: usize) -> Vec<ConfusionRow> {
    let mut groups: BTreeMap<(String, String), (usize, usize, usize)> = BTreeMap::new();
    for set in sets {
        for o in &set.outcomes {
            if o.human_verdict != Verdict::Mispronounced {
                continue;
            }
            let e = groups
                .entry((o.canonical.clone(), o.human_symbol.clone()))
                .or_default();
            e.0 += 1;
            if o.system_verdict == Verdict::Mispronounced {
                e.1 += 1;
                if o.system_symbol == o.human_symbol {
                    e.2 += 1;
                }
            }
        }
    }
    let mut rows: Vec<ConfusionRow> = groups
        .into_iter()
        .map(|((canonical, pronounced), (count, flagged, named))| {
            let kind = if pronounced == DELETION_MARKER {
                "Del."
            } else if pronounced.ends_with('*') {
                "Dist."
            } else {
                "Sub."
            };
            ConfusionRow {
                canonical,
                pronounced,
                kind: kind.to_string(),
                count,
                detection_pct: flagged as f64 / count as f64 * 100.0,
                diagnosis_pct: if flagged == 0 {
                    0.0
                } else {
                    named as f64 / flagged as f64 * 100.0
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.canonical.cmp(&b.canonical))
            .then_with(|| a.pronounced.cmp(&b.pronounced))
    });
    rows.truncate(top_k);
    rows
}

pub fn render_confusion_table(rows: &[ConfusionRow]) -> String {
    let mut out = String::from("pair\ttype\tcount\tdetection%\tdiagnosis%\n");
    for r in rows {
        out.push_str(&format!(
            "{}->{}\t{}\t{}\t{:.2}\t{:.2}\n",
            r.canonical, r.pronounced, r.kind, r.count, r.detection_pct, r.diagnosis_pct
        ));
    }
    out
}

/// One experimental condition's scores, all in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub label: String,
    pub input_aug: bool,
    pub label_aug: bool,
    pub spec_augment: bool,
    pub cd_recall: f64,
    pub cd_precision: f64,
    pub cd_f1: f64,
    pub md_recall: f64,
    pub md_precision: f64,
    pub md_f1: f64,
    pub per: f64,
}

impl MetricRow {
    pub fn from_prf(
        label: &str,
        input_aug: bool,
        label_aug: bool,
        spec_augment: bool,
        cd: Prf,
        md: Prf,
        per: f64,
    ) -> Self {
        MetricRow {
            label: label.to_string(),
            input_aug,
            label_aug,
            spec_augment,
            cd_recall: cd.recall * 100.0,
            cd_precision: cd.precision * 100.0,
            cd_f1: cd.f1 * 100.0,
            md_recall: md.recall * 100.0,
            md_precision: md.precision * 100.0,
            md_f1: md.f1 * 100.0,
            per,
        }
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Aligned plain-text grid: condition flags, CD and MD recall/precision/F1,
/// and PER, all with two decimals.
pub fn render_metric_table(rows: &[MetricRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Config("no metric rows to render".into()));
    }
    let mut lines = vec![vec![
        "model".to_string(),
        "IA".to_string(),
        "LA".to_string(),
        "SA".to_string(),
        "CD-RE".to_string(),
        "CD-PR".to_string(),
        "CD-F1".to_string(),
        "MD-RE".to_string(),
        "MD-PR".to_string(),
        "MD-F1".to_string(),
        "PER".to_string(),
    ]];
    for r in rows {
        lines.push(vec![
            r.label.clone(),
            flag(r.input_aug).to_string(),
            flag(r.label_aug).to_string(),
            flag(r.spec_augment).to_string(),
            format!("{:.2}", r.cd_recall),
            format!("{:.2}", r.cd_precision),
            format!("{:.2}", r.cd_f1),
            format!("{:.2}", r.md_recall),
            format!("{:.2}", r.md_precision),
            format!("{:.2}", r.md_f1),
            format!("{:.2}", r.per),
        ]);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for line in &lines {
        let mut parts = Vec::new();
        for (c, cell) in line.iter().enumerate() {
            parts.push(format!("{:>w$}", cell, w = widths[c]));
        }
        out.push_str(&parts.join("  "));
        out.push('\n');
    }
    Ok(out)
}

/// Machine-readable form; `metric_rows_from_tsv` re-parses it exactly.
pub fn metric_rows_to_tsv(rows: &[MetricRow]) -> String {
    let mut out = String::from(
        "label\tinput_aug\tlabel_aug\tspec_augment\tcd_recall\tcd_precision\tcd_f1\tmd_recall\tmd_precision\tmd_f1\tper\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.label,
            r.input_aug,
            r.label_aug,
            r.spec_augment,
            r.cd_recall,
            r.cd_precision,
            r.cd_f1,
            r.md_recall,
            r.md_precision,
            r.md_f1,
            r.per
        ));
    }
    out
}

pub fn metric_rows_from_tsv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty metric file".into()))?;
    if header.split('\t').count() != 11 {
        return Err(Error::Schema("metric header has wrong column count".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 11 {
            return Err(Error::Schema(format!(
                "metric line {}: expected 11 columns, got {}",
                i + 2,
                f.len()
            )));
        }
        let parse_bool = |s: &str| -> Result<bool> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad boolean '{s}'")))
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad number '{s}'")))
        };
        rows.push(MetricRow {
            label: f[0].to_string(),
            input_aug: parse_bool(f[1])?,
            label_aug: parse_bool(f[2])?,
            spec_augment: parse_bool(f[3])?,
            cd_recall: parse_f(f[4])?,
            cd_precision: parse_f(f[5])?,
            cd_f1: parse_f(f[6])?,
            md_recall: parse_f(f[7])?,
            md_precision: parse_f(f[8])?,
            md_f1: parse_f(f[9])?,
            per: parse_f(f[10])?,
        });
    }
    Ok(rows)
}

/// Per-group (e.g. mother tongue) MD F1 summary.
pub fn render_group_report(groups: &[(String, f64)]) -> String {
    let mut out = String::from("group\tmd_f1\n");
    for (name, f1) in groups {
        out.push_str(&format!("{name}\t{:.2}\n", f1));
    }
    out
}
