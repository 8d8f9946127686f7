use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde::Serialize;

use dpkws_core::corpus::{load_corpus, Split};
use dpkws_core::io::{save_checkpoint, sidecar_path};
use dpkws_core::trainer::{train, FeatureCache, TrainConfig};

use crate::config::{resolve_out_dir, RunConfig, RunLock};
use crate::ConfigError;

use super::{DataArg, ModeArg};

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus directory produced by `dpkws gen`.
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory for the checkpoint, logs and sigma snapshots.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Hyperparameter row to start from; `auto` follows corpus provenance.
    #[arg(long, value_enum)]
    data: Option<DataArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_utterances: Option<usize>,
    #[arg(long)]
    model_lr: Option<f64>,
    #[arg(long)]
    class_lr: Option<f64>,
    #[arg(long)]
    class_init: Option<f64>,
    #[arg(long)]
    instance_lr: Option<f64>,
    #[arg(long)]
    instance_init: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
}

#[derive(Serialize)]
struct CheckpointSidecar<'a> {
    frame_spec: &'a dpkws_core::features::FrameSpec,
    train: &'a TrainConfig,
    bn_eps: f64,
    bn_momentum: f64,
    epochs_run: usize,
    final_train_loss: f64,
    final_cv_loss: f64,
    stopped_early: bool,
    sigma_update_skips: u64,
}

pub fn run(args: TrainArgs, mut cfg: RunConfig) -> anyhow::Result<()> {
    if let Some(v) = args.seed {
        cfg.seed = Some(v);
    }
    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    if let Some(m) = args.mode {
        cfg.train.mode = m.into();
    }
    if let Some(v) = args.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.batch_utterances {
        cfg.train.batch_utterances = v;
    }
    if let Some(v) = args.model_lr {
        cfg.train.model_lr = v;
    }
    if let Some(v) = args.class_lr {
        cfg.train.class_lr = Some(v);
    }
    if let Some(v) = args.class_init {
        cfg.train.class_init = Some(v);
    }
    if let Some(v) = args.instance_lr {
        cfg.train.instance_lr = Some(v);
    }
    if let Some(v) = args.instance_init {
        cfg.train.instance_init = Some(v);
    }
    if let Some(v) = args.weight_decay {
        cfg.train.weight_decay = Some(v);
    }
    if let Some(v) = args.hidden_width {
        cfg.train.hidden_width = v;
    }
    if let Some(v) = args.hidden_layers {
        cfg.train.hidden_layers = v;
    }

    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus from {}", args.corpus.display()))?;
    let has_noise = corpus
        .split_utterances(Split::Train)
        .any(|u| u.provenance.is_noisy());
    let data_arg = args.data.unwrap_or(DataArg::Auto);
    let data_kind = match (args.data, cfg.train.data) {
        (Some(_), _) | (None, None) => data_arg.resolve(has_noise),
        (None, Some(kind)) => kind,
    };
    cfg.train.data = Some(data_kind);

    let train_cfg = cfg.train.resolve(data_kind, seed);
    train_cfg
        .validate()
        .map_err(|e| ConfigError(e.to_string()))
        .context("invalid training configuration")?;
    // write the fully-resolved values back into the echoed config
    cfg.train.class_lr = Some(train_cfg.data_params.class_lr);
    cfg.train.class_init = Some(train_cfg.data_params.class_init);
    cfg.train.instance_lr = Some(train_cfg.data_params.instance_lr);
    cfg.train.instance_init = Some(train_cfg.data_params.instance_init);
    cfg.train.weight_decay = Some(train_cfg.data_params.weight_decay);

    let out = resolve_out_dir(&args.out);
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating run directory {}", out.display()))?;
    let _lock = RunLock::acquire(&out)?;
    cfg.echo_into(&out)?;

    let cache = FeatureCache::build(&corpus, &cfg.frames)?;
    let mut log_file = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let outcome = train(&train_cfg, &corpus, &cfg.frames, &cache, |e| {
        println!(
            "epoch {:>3}: train {:.5}  cv {:.5}  lr {:.5}{}",
            e.epoch,
            e.train_loss,
            e.cv_loss,
            e.model_lr,
            if e.stopped_early {
                "  (early stop)"
            } else {
                ""
            }
        );
        if let Ok(line) = serde_json::to_string(e) {
            let _ = writeln!(log_file, "{line}");
        }
    })?;
    log_file.flush()?;

    for snap in &outcome.sigma_snapshots {
        let path = out.join(format!("sigma_epoch_{:04}.csv", snap.epoch));
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,kind,id,sigma_value")?;
        for (id, sigma) in snap.class.iter().enumerate() {
            writeln!(w, "{},class,{id},{sigma}", snap.epoch)?;
        }
        for &(id, sigma) in &snap.instance {
            writeln!(w, "{},instance,{id},{sigma}", snap.epoch)?;
        }
        w.flush()?;
    }

    let ckpt = out.join("checkpoint.bin");
    save_checkpoint(&ckpt, &outcome.model)?;
    let last = outcome.log.last().expect("at least one epoch");
    let sidecar = CheckpointSidecar {
        frame_spec: &cfg.frames,
        train: &train_cfg,
        bn_eps: outcome.model.bn_eps,
        bn_momentum: outcome.model.bn_momentum,
        epochs_run: outcome.log.len(),
        final_train_loss: last.train_loss,
        final_cv_loss: last.cv_loss,
        stopped_early: last.stopped_early,
        sigma_update_skips: outcome.store.skipped_updates(),
    };
    serde_json::to_writer_pretty(File::create(sidecar_path(&ckpt))?, &sidecar)?;

    println!(
        "trained {} epochs (cv {:.5}); checkpoint at {}",
        outcome.log.len(),
        last.cv_loss,
        ckpt.display()
    );
    Ok(())
}
