//! Experiment driver: each subcommand reads its prerequisites from the work
//! directory, writes one artifact atomically, and prints a deterministic
//! summary line. Exit codes: 0 success, 2 configuration error, 3 runtime
//! error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdx_core::acoustic::{extract_ppg, FrameClassifier, PPG_MAGIC};
use mdx_core::corpus::{load_corpus, split_of, write_corpus, Split, Utterance};
use mdx_core::io::{atomic_write, write_matrix_file};
use mdx_core::labelaug::SmoothingDistribution;
use mdx_core::mdeval::{
    confusion_table, metric_rows_from_tsv, metric_rows_to_tsv, render_confusion_table,
    render_group_report, render_metric_table, MetricRow,
};
use mdx_core::mdmodel::MdModel;
use mdx_core::pipeline::{
    evaluate_gop, evaluate_hypotheses, make_corpus, make_frame_classifier, make_smoothing,
    run_experiment_matrix, train_condition, Condition, EvalResult, ExperimentConfig,
};
use mdx_core::{Error, PhoneInventory, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "mdx",
    version,
    about = "mispronunciation-detection experiment driver"
)]
struct Cli {
    /// Key=value config file; defaults apply for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set lambda_decode=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Global seed shorthand, equivalent to --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct CondFlags {
    /// Concatenate acoustic-model posteriorgrams to the input features.
    #[arg(long)]
    input_aug: bool,
    /// Train with the interpolated label-smoothing distribution.
    #[arg(long)]
    label_aug: bool,
    /// Mask features with time and frequency blocks during training.
    #[arg(long)]
    spec_augment: bool,
}

impl CondFlags {
    fn condition(self) -> Condition {
        Condition {
            input_aug: self.input_aug,
            label_aug: self.label_aug,
            spec_augment: self.spec_augment,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write its manifest.
    GenCorpus,
    /// Train the frame-level phone classifier on the train split.
    TrainAm,
    /// Write a posteriorgram file per utterance.
    ExtractPpg,
    /// Estimate the label-smoothing distribution from train transcripts.
    FitSmoothing,
    /// Train the recognizer under one augmentation condition.
    TrainMd(CondFlags),
    /// Decode the test split with a trained recognizer.
    Decode {
        #[command(flatten)]
        flags: CondFlags,
        /// Checkpoint path; defaults to the one train-md writes for these flags.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score decoded hypotheses against the corpus ground truth.
    Evaluate {
        #[command(flatten)]
        flags: CondFlags,
        /// Hypothesis file; defaults to the one decode writes for these flags.
        #[arg(long)]
        hyp: Option<PathBuf>,
    },
    /// Calibrate and score the forced-alignment GOP baseline.
    ScoreGop,
    /// Assemble the metric grid from evaluated conditions, or run the full
    /// matrix from scratch with --matrix.
    Report {
        /// Train and evaluate all 8 conditions plus GOP from the one seed.
        #[arg(long)]
        matrix: bool,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    overrides: Vec<String>,
    work: PathBuf,
    inv: PhoneInventory,
}

impl Ctx {
    fn manifest(&self) -> PathBuf {
        self.work.join("corpus").join("manifest.txt")
    }

    fn load_utts(&self) -> Result<Vec<Utterance>> {
        let m = self.manifest();
        if !m.exists() {
            return Err(Error::Config(format!(
                "no corpus at {}; run gen-corpus first",
                m.display()
            )));
        }
        load_corpus(&m, &self.inv)
    }

    fn load_am(&self) -> Result<FrameClassifier<f32>> {
        let p = self.work.join("am.ckpt");
        if !p.exists() {
            return Err(Error::Config(format!(
                "no acoustic model at {}; run train-am first",
                p.display()
            )));
        }
        FrameClassifier::load(&p)
    }

    fn load_smoothing(&self) -> Result<SmoothingDistribution> {
        let p = self.work.join("smoothing.txt");
        if !p.exists() {
            return Err(Error::Config(format!(
                "no smoothing distribution at {}; run fit-smoothing first",
                p.display()
            )));
        }
        SmoothingDistribution::from_text(&std::fs::read_to_string(&p)?)
    }

    fn header(&self, mode: &str) -> String {
        let overrides = if self.overrides.is_empty() {
            "none".to_string()
        } else {
            self.overrides.join(" ")
        };
        format!(
            "mdx report\nversion: {VERSION}\nmode: {mode}\nconfig-hash: {:016x}\nseed: {}\noverrides: {}\n",
            self.cfg.fingerprint(),
            self.cfg.seed,
            overrides
        )
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, Vec<String>)> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_text(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        cfg.apply_override("seed", &seed.to_string())?;
        overrides.push(format!("seed={seed}"));
    }
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{s}'")))?;
        cfg.apply_override(k.trim(), v.trim())?;
        overrides.push(s.clone());
    }
    Ok((cfg, overrides))
}

fn model_path(work: &Path, cond: Condition) -> PathBuf {
    work.join(format!("md-{}.ckpt", cond.label()))
}

fn hyp_path(work: &Path, cond: Condition) -> PathBuf {
    work.join(format!("hyp-{}.tsv", cond.label()))
}

fn metrics_path(work: &Path, label: &str) -> PathBuf {
    work.join(format!("metrics-{label}.tsv"))
}

fn write_eval_artifacts(ctx: &Ctx, label: &str, row: &MetricRow, eval: &EvalResult) -> Result<()> {
    atomic_write(
        &metrics_path(&ctx.work, label),
        metric_rows_to_tsv(std::slice::from_ref(row)).as_bytes(),
    )?;
    let confusion = render_confusion_table(&confusion_table(&eval.sets, 10));
    atomic_write(
        &ctx.work.join(format!("confusion-{label}.txt")),
        confusion.as_bytes(),
    )?;
    atomic_write(
        &ctx.work.join(format!("groups-{label}.txt")),
        render_group_report(&eval.groups).as_bytes(),
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let (cfg, overrides) = load_config(cli)?;
    let ctx = Ctx {
        cfg,
        overrides,
        work: cli.work.clone(),
        inv: PhoneInventory::build()?,
    };
    std::fs::create_dir_all(&ctx.work)?;
    match &cli.command {
        Command::GenCorpus => {
            let utts = make_corpus(&ctx.cfg, &ctx.inv)?;
            let manifest = write_corpus(&ctx.work.join("corpus"), &utts)?;
            println!(
                "gen-corpus: {} utterances -> {}",
                utts.len(),
                manifest.display()
            );
        }
        Command::TrainAm => {
            let utts = ctx.load_utts()?;
            let clf = make_frame_classifier(&ctx.cfg, &ctx.inv, &utts)?;
            let p = ctx.work.join("am.ckpt");
            clf.save(&p)?;
            println!("train-am: {} classes -> {}", clf.n_classes, p.display());
        }
        Command::ExtractPpg => {
            let utts = ctx.load_utts()?;
            let clf = ctx.load_am()?;
            let dir = ctx.work.join("ppg");
            std::fs::create_dir_all(&dir)?;
            let mut n = 0usize;
            for u in &utts {
                if u.features.rows() == 0 {
                    continue;
                }
                let ppg = extract_ppg(&clf, &u.features)?;
                write_matrix_file(&dir.join(format!("{}.ppg", u.id)), &PPG_MAGIC, &ppg)?;
                n += 1;
            }
            println!("extract-ppg: {} posteriorgrams -> {}", n, dir.display());
        }
        Command::FitSmoothing => {
            let utts = ctx.load_utts()?;
            let smoothing = make_smoothing(&ctx.cfg, &ctx.inv, &utts)?;
            let p = ctx.work.join("smoothing.txt");
            atomic_write(&p, smoothing.to_text().as_bytes())?;
            println!(
                "fit-smoothing: {} symbols -> {}",
                smoothing.symbols.len(),
                p.display()
            );
        }
        Command::TrainMd(flags) => {
            let cond = flags.condition();
            let utts = ctx.load_utts()?;
            let clf = if cond.input_aug {
                Some(ctx.load_am()?)
            } else {
                None
            };
            let smoothing = if cond.label_aug {
                Some(ctx.load_smoothing()?)
            } else {
                None
            };
            let (model, summary) = train_condition(
                &ctx.cfg,
                &ctx.inv,
                &utts,
                cond,
                clf.as_ref(),
                smoothing.as_ref(),
            )?;
            let p = model_path(&ctx.work, cond);
            model.save(&p, summary.best_epoch, summary.dev_metric, ctx.cfg.seed)?;
            println!(
                "train-md {}: best epoch {} of {} dev-nll {:.6} -> {}",
                cond.label(),
                summary.best_epoch,
                summary.epochs_run,
                summary.dev_metric,
                p.display()
            );
        }
        Command::Decode { flags, model } => {
            let cond = flags.condition();
            let utts = ctx.load_utts()?;
            let mp = model.clone().unwrap_or_else(|| model_path(&ctx.work, cond));
            if !mp.exists() {
                return Err(Error::Config(format!(
                    "no recognizer at {}; run train-md first",
                    mp.display()
                )));
            }
            let model = MdModel::<f32>::load(&mp)?;
            let clf = if model.config.use_input_augmentation {
                Some(ctx.load_am()?)
            } else {
                None
            };
            let test = split_of(&utts, Split::Test);
            let mut out = String::new();
            for u in &test {
                let hyp = mdx_core::pipeline::decode_utterance(&model, &ctx.inv, u, clf.as_ref())?;
                out.push_str(&format!("{}\t{}\n", u.id, hyp.join(" ")));
            }
            let p = hyp_path(&ctx.work, cond);
            atomic_write(&p, out.as_bytes())?;
            println!(
                "decode {}: {} utterances -> {}",
                cond.label(),
                test.len(),
                p.display()
            );
        }
        Command::Evaluate { flags, hyp } => {
            let cond = flags.condition();
            let utts = ctx.load_utts()?;
            let hp = hyp.clone().unwrap_or_else(|| hyp_path(&ctx.work, cond));
            if !hp.exists() {
                return Err(Error::Config(format!(
                    "no hypotheses at {}; run decode first",
                    hp.display()
                )));
            }
            let mut by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for line in std::fs::read_to_string(&hp)?.lines() {
                let (id, syms) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::Parse("hypothesis line missing tab".into()))?;
                by_id.insert(
                    id.to_string(),
                    syms.split_whitespace().map(str::to_string).collect(),
                );
            }
            let test = split_of(&utts, Split::Test);
            let mut hyps = Vec::with_capacity(test.len());
            for u in &test {
                hyps.push(by_id.remove(&u.id).ok_or_else(|| {
                    Error::Schema(format!("hypothesis file lacks utterance {}", u.id))
                })?);
            }
            let eval = evaluate_hypotheses(&ctx.inv, &test, &hyps)?;
            let label = cond.label();
            let row = MetricRow::from_prf(
                &label,
                cond.input_aug,
                cond.label_aug,
                cond.spec_augment,
                eval.cd,
                eval.md,
                eval.per,
            );
            write_eval_artifacts(&ctx, &label, &row, &eval)?;
            println!(
                "evaluate {label}: cd-f1 {:.2} md-f1 {:.2} per {:.2} -> {}",
                row.cd_f1,
                row.md_f1,
                row.per,
                metrics_path(&ctx.work, &label).display()
            );
        }
        Command::ScoreGop => {
            let utts = ctx.load_utts()?;
            let clf = ctx.load_am()?;
            let dev = split_of(&utts, Split::Dev);
            let test = split_of(&utts, Split::Test);
            let (eval, threshold) = evaluate_gop(&clf, &ctx.inv, &dev, &test)?;
            let row = MetricRow::from_prf("gop", false, false, false, eval.cd, eval.md, eval.per);
            write_eval_artifacts(&ctx, "gop", &row, &eval)?;
            println!(
                "score-gop: threshold {:.6} cd-f1 {:.2} md-f1 {:.2} -> {}",
                threshold,
                row.cd_f1,
                row.md_f1,
                metrics_path(&ctx.work, "gop").display()
            );
        }
        Command::Report { matrix } => {
            let (body, mode) = if *matrix {
                let utts = ctx.load_utts()?;
                let report = run_experiment_matrix(&ctx.cfg, &ctx.inv, &utts)?;
                let mut body = render_metric_table(&report.rows)?;
                body.push('\n');
                body.push_str(&render_group_report(&report.groups));
                (body, "matrix")
            } else {
                let order = [
                    "e2e",
                    "e2e+ia",
                    "e2e+la",
                    "e2e+ia+la",
                    "e2e+sa",
                    "e2e+ia+sa",
                    "e2e+la+sa",
                    "e2e+ia+la+sa",
                    "gop",
                ];
                let mut rows = Vec::new();
                for label in order {
                    let p = metrics_path(&ctx.work, label);
                    if p.exists() {
                        rows.extend(metric_rows_from_tsv(&std::fs::read_to_string(&p)?)?);
                    }
                }
                if rows.is_empty() {
                    return Err(Error::Config(
                        "no evaluated conditions in the work directory; run evaluate or score-gop first"
                            .into(),
                    ));
                }
                (render_metric_table(&rows)?, "assemble")
            };
            let text = format!("{}\n{}", ctx.header(mode), body);
            let p = ctx.work.join("report.txt");
            atomic_write(&p, text.as_bytes())?;
            print!("{text}");
            println!("report: -> {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
