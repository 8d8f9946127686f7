use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use dpkws_core::corpus::{
    build_multicondition, carve_cv_split, generate_corpus, save_corpus, CorpusCounts, NoiseBank,
    Split,
};
use dpkws_core::features::{stack_context, MfccExtractor};
use dpkws_core::io::write_matrix;

use crate::config::{resolve_out_dir, RunConfig};

// fixed offsets deriving the per-stage seeds from the master seed
const EVAL_SEED_OFFSET: u64 = 999;
const BANK_SEED_OFFSET: u64 = 7;
const MIX_SEED_OFFSET: u64 = 13;

#[derive(Args)]
pub struct GenArgs {
    /// Corpus output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Train-split positive utterances.
    #[arg(long)]
    positives: Option<usize>,
    /// Train-split negative utterances.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    eval_positives: Option<usize>,
    #[arg(long)]
    eval_negatives: Option<usize>,
    /// Skip the multicondition augmentation (clean corpus only).
    #[arg(long)]
    clean_only: bool,
    /// Also dump stacked feature matrices under features/.
    #[arg(long)]
    dump_features: bool,
}

pub fn run(args: GenArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    if let Some(v) = args.positives {
        cfg.corpus.train_positives = v;
    }
    if let Some(v) = args.negatives {
        cfg.corpus.train_negatives = v;
    }
    if let Some(v) = args.eval_positives {
        cfg.corpus.eval_positives = v;
    }
    if let Some(v) = args.eval_negatives {
        cfg.corpus.eval_negatives = v;
    }
    if args.clean_only {
        cfg.corpus.clean_only = true;
    }

    let out = resolve_out_dir(&args.out);
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating corpus directory {}", out.display()))?;

    let frames = cfg.frames;
    let train = generate_corpus(
        seed,
        CorpusCounts {
            positives: cfg.corpus.train_positives,
            negatives: cfg.corpus.train_negatives,
        },
        &cfg.corpus.keyword,
        &frames,
        Split::Train,
        0,
    )?;
    let eval = generate_corpus(
        seed.wrapping_add(EVAL_SEED_OFFSET),
        CorpusCounts {
            positives: cfg.corpus.eval_positives,
            negatives: cfg.corpus.eval_negatives,
        },
        &cfg.corpus.eval_keyword,
        &frames,
        Split::Eval,
        train.next_id(),
    )?;
    let clean = train.concat(eval);

    let corpus = if cfg.corpus.clean_only {
        let mut c = clean;
        carve_cv_split(
            &mut c,
            cfg.corpus.cv_fraction,
            seed.wrapping_add(MIX_SEED_OFFSET),
        );
        c
    } else {
        let bank = NoiseBank::synthesize(
            seed.wrapping_add(BANK_SEED_OFFSET),
            cfg.corpus.noise_clips_per_kind,
            cfg.corpus.noise_clip_seconds,
            frames.sample_rate,
        );
        build_multicondition(
            clean,
            &bank,
            seed.wrapping_add(MIX_SEED_OFFSET),
            cfg.corpus.cv_fraction,
        )?
    };

    save_corpus(&corpus, &out)?;
    if args.dump_features {
        let feat_dir = out.join("features");
        std::fs::create_dir_all(&feat_dir)?;
        let extractor = MfccExtractor::new(frames)?;
        for u in &corpus.utterances {
            let mfcc = extractor.mfcc(&u.samples)?;
            let stacked = stack_context(mfcc.view(), &frames)?;
            write_matrix(&feat_dir.join(format!("{:06}.bin", u.id)), stacked.view())?;
        }
    }
    cfg.echo_into(&out)?;

    let n_train = corpus.split_utterances(Split::Train).count();
    let n_cv = corpus.split_utterances(Split::Cv).count();
    let n_eval = corpus.split_utterances(Split::Eval).count();
    println!(
        "wrote {} utterances ({n_train} train, {n_cv} cv, {n_eval} eval) to {}",
        corpus.utterances.len(),
        out.display()
    );
    Ok(())
}
