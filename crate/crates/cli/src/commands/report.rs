use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;

use dpkws_core::corpus::load_manifest_entries;
use dpkws_core::eval::{sigma_report_from_manifest, SigmaSnapshot};

use crate::config::{resolve_out_dir, RunConfig};
use crate::svg::{line_chart, Series};

#[derive(Args)]
pub struct ReportArgs {
    /// Run directory holding sigma_epoch_*.csv snapshots.
    #[arg(long)]
    run: PathBuf,
    /// Corpus directory (manifest provides clean/noisy provenance).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render the distribution charts as SVG.
    #[arg(long)]
    svg: bool,
}

fn parse_snapshot_csv(path: &Path) -> anyhow::Result<SigmaSnapshot> {
    let text = std::fs::read_to_string(path)?;
    let mut epoch = None;
    let mut class: BTreeMap<usize, f64> = BTreeMap::new();
    let mut instance = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if no == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}: malformed row {no}", path.display());
        }
        let e: usize = fields[0].parse()?;
        epoch.get_or_insert(e);
        let sigma: f64 = fields[3].parse()?;
        match fields[1] {
            "class" => {
                class.insert(fields[2].parse()?, sigma);
            }
            "instance" => instance.push((fields[2].parse()?, sigma)),
            other => bail!("{}: unknown kind {other:?}", path.display()),
        }
    }
    Ok(SigmaSnapshot {
        epoch: epoch.unwrap_or(0),
        class: class.into_values().collect(),
        instance,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run(args: ReportArgs, cfg: RunConfig) -> anyhow::Result<()> {
    let mut snapshot_paths: Vec<PathBuf> = std::fs::read_dir(&args.run)
        .with_context(|| format!("reading run directory {}", args.run.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("sigma_epoch_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    snapshot_paths.sort();
    if snapshot_paths.is_empty() {
        bail!("no sigma_epoch_*.csv snapshots in {}", args.run.display());
    }
    let snapshots: Vec<SigmaSnapshot> = snapshot_paths
        .iter()
        .map(|p| parse_snapshot_csv(p))
        .collect::<anyhow::Result<_>>()?;

    let manifest = load_manifest_entries(&args.corpus)
        .with_context(|| format!("loading manifest from {}", args.corpus.display()))?;
    let stats = sigma_report_from_manifest(&snapshots, &manifest)?;

    let out = resolve_out_dir(&args.out);
    std::fs::create_dir_all(&out)?;
    cfg.echo_into(&out)?;

    let mut w = BufWriter::new(File::create(out.join("sigma_report.csv"))?);
    writeln!(
        w,
        "epoch,class_median,class_std,class_min,class_max,inst_clean_mean,inst_clean_std,inst_noisy_mean,inst_noisy_std"
    )?;
    for s in &stats {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.epoch,
            cell(s.class_median),
            cell(s.class_std),
            cell(s.class_min),
            cell(s.class_max),
            cell(s.inst_clean_mean),
            cell(s.inst_clean_std),
            cell(s.inst_noisy_mean),
            cell(s.inst_noisy_std),
        )?;
    }
    w.flush()?;

    if args.svg {
        let pick =
            |f: &dyn Fn(&dpkws_core::eval::EpochSigmaStats) -> Option<f64>| -> Vec<(f64, f64)> {
                stats
                    .iter()
                    .filter_map(|s| f(s).map(|v| (s.epoch as f64, v)))
                    .collect()
            };
        let class_series = vec![
            Series {
                label: "median",
                color: "#222222",
                points: pick(&|s| s.class_median),
            },
            Series {
                label: "median+std",
                color: "#1f6fb2",
                points: pick(&|s| s.class_median.zip(s.class_std).map(|(m, d)| m + d)),
            },
            Series {
                label: "median-std",
                color: "#1f6fb2",
                points: pick(&|s| s.class_median.zip(s.class_std).map(|(m, d)| m - d)),
            },
            Series {
                label: "min",
                color: "#999999",
                points: pick(&|s| s.class_min),
            },
            Series {
                label: "max",
                color: "#999999",
                points: pick(&|s| s.class_max),
            },
        ];
        if class_series.iter().any(|s| !s.points.is_empty()) {
            let chart = line_chart("Class sigma distribution", "epoch", "sigma", &class_series);
            std::fs::write(out.join("sigma_class.svg"), chart)?;
        }
        let inst_series = vec![
            Series {
                label: "clean mean",
                color: "#2a9d3a",
                points: pick(&|s| s.inst_clean_mean),
            },
            Series {
                label: "noisy mean",
                color: "#c23b22",
                points: pick(&|s| s.inst_noisy_mean),
            },
            Series {
                label: "clean mean+std",
                color: "#9fd6a5",
                points: pick(&|s| s.inst_clean_mean.zip(s.inst_clean_std).map(|(m, d)| m + d)),
            },
            Series {
                label: "noisy mean+std",
                color: "#e8a79b",
                points: pick(&|s| s.inst_noisy_mean.zip(s.inst_noisy_std).map(|(m, d)| m + d)),
            },
        ];
        if inst_series.iter().any(|s| !s.points.is_empty()) {
            let chart = line_chart(
                "Instance sigma by provenance",
                "epoch",
                "sigma",
                &inst_series,
            );
            std::fs::write(out.join("sigma_instance.svg"), chart)?;
        }
    }

    println!(
        "wrote sigma report for {} epochs to {}",
        stats.len(),
        out.display()
    );
    Ok(())
}
