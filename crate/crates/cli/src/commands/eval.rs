use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use dpkws_core::corpus::{load_corpus, Split, TargetInventory};
use dpkws_core::eval::{det_curve, frr_at_fa_rate, score_eval_split};
use dpkws_core::io::load_checkpoint;
use dpkws_core::kws::estimate_transitions;

use crate::config::{resolve_out_dir, RunConfig};
use crate::svg::{line_chart, Series};

use super::ScoringArg;

#[derive(Args)]
pub struct EvalArgs {
    /// Corpus directory containing the eval split (and the train split the
    /// HMM transitions are estimated from).
    #[arg(long)]
    corpus: PathBuf,
    /// Model checkpoint produced by `dpkws train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for scores and metrics.
    #[arg(long)]
    out: PathBuf,
    /// False-alarm operating point, per hour of negative audio.
    #[arg(long)]
    fa_per_hour: Option<f64>,
    #[arg(long)]
    det_points: Option<usize>,
    #[arg(long, value_enum)]
    scoring: Option<ScoringArg>,
    /// Also render det.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Serialize)]
struct Metrics {
    frr: f64,
    threshold: f64,
    fa_per_hour_target: f64,
    fa_per_hour_achieved: f64,
    unreachable: bool,
    positives: usize,
    negatives: usize,
    negative_hours: f64,
}

pub fn run(args: EvalArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(v) = args.fa_per_hour {
        cfg.eval.fa_per_hour = v;
    }
    if let Some(v) = args.det_points {
        cfg.eval.det_points = v;
    }
    if let Some(s) = args.scoring {
        cfg.eval.scoring = s.into();
    }

    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus from {}", args.corpus.display()))?;
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;

    let inventory = TargetInventory::standard();
    let labels: Vec<&[usize]> = corpus
        .split_utterances(Split::Train)
        .map(|u| u.frame_labels.as_slice())
        .collect();
    let hmm = estimate_transitions(labels, &inventory)?;

    let trials = score_eval_split(&model, &corpus, &cfg.frames, &hmm, cfg.eval.scoring)?;

    let out = resolve_out_dir(&args.out);
    std::fs::create_dir_all(&out)?;
    cfg.echo_into(&out)?;

    let mut scores = BufWriter::new(File::create(out.join("scores.csv"))?);
    writeln!(scores, "utterance_id,score,is_positive")?;
    for t in &trials {
        writeln!(scores, "{},{},{}", t.utterance_id, t.score, t.is_positive)?;
    }
    scores.flush()?;

    let frr = frr_at_fa_rate(&trials, cfg.eval.fa_per_hour)?;
    let curve = det_curve(&trials, cfg.eval.det_points)?;

    let mut det = BufWriter::new(File::create(out.join("det.csv"))?);
    writeln!(det, "fa_per_hour,frr,threshold")?;
    for p in &curve {
        writeln!(det, "{},{},{}", p.fa_per_hour, p.frr, p.threshold)?;
    }
    det.flush()?;

    let negatives = trials.iter().filter(|t| !t.is_positive).count();
    let metrics = Metrics {
        frr: frr.frr,
        threshold: frr.threshold,
        fa_per_hour_target: cfg.eval.fa_per_hour,
        fa_per_hour_achieved: frr.fa_per_hour,
        unreachable: frr.unreachable,
        positives: trials.len() - negatives,
        negatives,
        negative_hours: trials
            .iter()
            .filter(|t| !t.is_positive)
            .map(|t| t.duration_seconds / 3600.0)
            .sum(),
    };
    serde_json::to_writer_pretty(File::create(out.join("metrics.json"))?, &metrics)?;

    if args.svg {
        let points: Vec<(f64, f64)> = curve
            .iter()
            .map(|p| (p.fa_per_hour.log10(), p.frr))
            .collect();
        let chart = line_chart(
            "Detection trade-off",
            "log10 false alarms per hour",
            "false reject ratio",
            &[Series {
                label: "model",
                color: "#1f6fb2",
                points,
            }],
        );
        std::fs::write(out.join("det.svg"), chart)?;
    }

    println!(
        "frr {:.4} at {} FA/hr (threshold {:.4}{})",
        frr.frr,
        cfg.eval.fa_per_hour,
        frr.threshold,
        if frr.unreachable {
            ", FA target unreachable"
        } else {
            ""
        }
    );
    Ok(())
}
