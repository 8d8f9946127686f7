//! End-to-end tests of the `dpkws` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dpkws() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dpkws"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn dpkws");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen_small(dir: &Path, seed: u64, extra: &[&str]) {
    run_ok(
        dpkws()
            .arg("gen")
            .arg("--out")
            .arg(dir)
            .args(["--seed", &seed.to_string()])
            .args(["--positives", "6", "--negatives", "6"])
            .args(["--eval-positives", "4", "--eval-negatives", "6"])
            .args(extra),
    );
}

fn train_tiny(corpus: &Path, out: &Path, mode: &str, extra: &[&str]) {
    run_ok(
        dpkws()
            .arg("train")
            .arg("--corpus")
            .arg(corpus)
            .arg("--out")
            .arg(out)
            .args(["--mode", mode])
            .args(["--max-epochs", "2", "--batch-utterances", "8"])
            .args(["--hidden-width", "8", "--hidden-layers", "2"])
            .args(extra),
    );
}

#[test]
fn gen_is_deterministic_and_counts_match() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_small(&a, 7, &[]);
    gen_small(&b, 7, &[]);
    let ma = std::fs::read(a.join("manifest.jsonl")).unwrap();
    let mb = std::fs::read(b.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, mb, "same seed must give identical manifests");

    let text = String::from_utf8(ma).unwrap();
    // 12 train + 10 eval utterances, each doubled by augmentation
    assert_eq!(text.lines().count(), 44);
    let positives = text
        .lines()
        .filter(|l| l.contains("\"is_positive\":true"))
        .count();
    assert_eq!(positives, 20);

    // and at least one wav is bit-identical across runs
    let wav_a = std::fs::read(a.join("wav/000003.wav")).unwrap();
    let wav_b = std::fs::read(b.join("wav/000003.wav")).unwrap();
    assert_eq!(wav_a, wav_b);
}

#[test]
fn gen_clean_only_has_no_noisy_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("corpus");
    gen_small(&dir, 3, &["--clean-only"]);
    let text = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
    assert!(!text.contains("\"kind\":\"noisy\""));
    assert!(text.contains("\"kind\":\"clean\""));
}

#[test]
fn rerunning_from_echoed_config_reproduces_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    gen_small(&first, 21, &[]);
    let second = tmp.path().join("second");
    run_ok(
        dpkws()
            .arg("gen")
            .arg("--config")
            .arg(first.join("config.toml"))
            .arg("--out")
            .arg(&second),
    );
    assert_eq!(
        std::fs::read(first.join("manifest.jsonl")).unwrap(),
        std::fs::read(second.join("manifest.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(first.join("wav/000001.wav")).unwrap(),
        std::fs::read(second.join("wav/000001.wav")).unwrap()
    );
}

#[test]
fn baseline_training_emits_no_sigma_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 5, &[]);
    let run = tmp.path().join("run");
    train_tiny(&corpus, &run, "baseline", &[]);
    let sigma_files = std::fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("sigma_epoch_"))
        .count();
    assert_eq!(sigma_files, 0);
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("checkpoint.bin.json").exists());
    assert!(run.join("train_log.jsonl").exists());
    assert!(run.join("config.toml").exists());
    assert!(
        !run.join("run.lock").exists(),
        "lock released after training"
    );
}

#[test]
fn joint_clean_defaults_follow_the_tuned_table() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 11, &["--clean-only"]);
    let run = tmp.path().join("run");
    train_tiny(&corpus, &run, "joint", &["--data", "clean"]);
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(
        echoed.contains("class_lr = 0.001"),
        "echoed config: {echoed}"
    );
    assert!(echoed.contains("class_init = 1.0"));
    assert!(echoed.contains("instance_lr = 0.1"));
    assert!(echoed.contains("instance_init = 0.01"));
    assert!(echoed.contains("weight_decay = 0.01"));
    // joint runs emit one snapshot per epoch
    assert!(run.join("sigma_epoch_0000.csv").exists());
    assert!(run.join("sigma_epoch_0001.csv").exists());
}

#[test]
fn class_noisy_defaults_follow_the_tuned_table() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 13, &[]);
    let run = tmp.path().join("run");
    train_tiny(&corpus, &run, "class", &["--data", "noisy"]);
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(echoed.contains("class_lr = 0.001"));
    assert!(echoed.contains("class_init = 1.0"));
    assert!(echoed.contains("weight_decay = 0.01"));
}

#[test]
fn eval_defaults_to_ten_fa_per_hour_and_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 17, &[]);
    let run = tmp.path().join("run");
    train_tiny(&corpus, &run, "baseline", &[]);

    let eval10 = tmp.path().join("eval10");
    run_ok(
        dpkws()
            .arg("eval")
            .arg("--corpus")
            .arg(&corpus)
            .arg("--checkpoint")
            .arg(run.join("checkpoint.bin"))
            .arg("--out")
            .arg(&eval10),
    );
    let metrics10: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval10.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics10["fa_per_hour_target"], 10.0);

    let eval1 = tmp.path().join("eval1");
    run_ok(
        dpkws()
            .arg("eval")
            .arg("--corpus")
            .arg(&corpus)
            .arg("--checkpoint")
            .arg(run.join("checkpoint.bin"))
            .arg("--out")
            .arg(&eval1)
            .args(["--fa-per-hour", "1"]),
    );
    let metrics1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval1.join("metrics.json")).unwrap())
            .unwrap();
    let frr1 = metrics1["frr"].as_f64().unwrap();
    let frr10 = metrics10["frr"].as_f64().unwrap();
    assert!(
        frr1 >= frr10,
        "stricter FA target cannot lower FRR ({frr1} vs {frr10})"
    );

    assert!(eval10.join("scores.csv").exists());
    assert!(eval10.join("det.csv").exists());
    let det = std::fs::read_to_string(eval10.join("det.csv")).unwrap();
    assert!(det.lines().count() > 2);
}

#[test]
fn report_produces_stats_for_every_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 19, &[]);
    let run = tmp.path().join("run");
    train_tiny(&corpus, &run, "instance", &[]);
    let report = tmp.path().join("report");
    run_ok(
        dpkws()
            .arg("report")
            .arg("--run")
            .arg(&run)
            .arg("--corpus")
            .arg(&corpus)
            .arg("--out")
            .arg(&report)
            .arg("--svg"),
    );
    let text = std::fs::read_to_string(report.join("sigma_report.csv")).unwrap();
    assert_eq!(text.lines().count(), 3); // header + 2 epochs
    assert!(report.join("sigma_instance.svg").exists());
}

#[test]
fn run_root_env_prefixes_relative_out_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(
        dpkws()
            .env("DPKWS_RUN_ROOT", tmp.path())
            .arg("gen")
            .arg("--out")
            .arg("nested/corpus")
            .args(["--seed", "1", "--positives", "2", "--negatives", "2"])
            .args(["--eval-positives", "1", "--eval-negatives", "1"]),
    );
    assert!(tmp.path().join("nested/corpus/manifest.jsonl").exists());
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 23, &[]);
    let run = tmp.path().join("run");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("run.lock"), b"").unwrap();
    let out = dpkws()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(&run)
        .args(["--mode", "baseline", "--max-epochs", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn exit_codes_distinguish_config_from_runtime_faults() {
    let tmp = tempfile::tempdir().unwrap();

    // unknown config key -> 2
    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "definitely_not_a_key = 1\n").unwrap();
    let out = dpkws()
        .arg("gen")
        .arg("--config")
        .arg(&bad_cfg)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "unknown key should be a config error"
    );

    // missing corpus -> runtime fault -> 1
    let out = dpkws()
        .arg("train")
        .arg("--corpus")
        .arg(tmp.path().join("missing"))
        .arg("--out")
        .arg(tmp.path().join("run"))
        .args(["--mode", "baseline"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "missing corpus is a runtime fault"
    );

    // invalid hyperparameters -> 2
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 29, &[]);
    let out = dpkws()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .arg("--out")
        .arg(tmp.path().join("run2"))
        .args(["--mode", "joint", "--instance-init", "9.0"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "joint init sum violation is a config error"
    );
}

#[test]
fn feature_dump_writes_readable_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen_small(&corpus, 31, &["--dump-features", "--clean-only"]);
    let feat: Vec<PathBuf> = std::fs::read_dir(corpus.join("features"))
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    assert_eq!(feat.len(), 22); // 12 train + 10 eval, clean only
    let m = dpkws_core::io::read_matrix(&feat[0]).unwrap();
    assert_eq!(m.ncols(), 247);
    assert!(m.nrows() > 0);
}
