use std::path::Path;
use std::process::Command;

use attnlab::{run_pipeline, PipelineConfig, Stage};

fn small(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.participants = 8;
    cfg.out_dir = out.to_path_buf();
    cfg.dataset.per_condition = 6;
    cfg.dataset.image_size = 16;
    cfg.train.model.image_size = 16;
    cfg.train.max_epochs = 2;
    cfg.analysis.reliability_iterations = 2;
    cfg
}

#[test]
fn default_config_file_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(
        PipelineConfig::load(&path).unwrap(),
        PipelineConfig::default()
    );
}

#[test]
fn full_pipeline_is_reproducible_and_hashed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_pipeline(&small(a.path()), Stage::Export).unwrap();
    let mb = run_pipeline(&small(b.path()), Stage::Export).unwrap();
    assert_eq!(ma.stages.len(), Stage::ALL.len());
    // The echoed config differs only in its output directory.
    let outputs = |m: &attnlab::Manifest| -> Vec<_> {
        m.artifacts
            .iter()
            .filter(|x| x.path != "config.toml")
            .cloned()
            .collect()
    };
    assert_eq!(outputs(&ma), outputs(&mb));
    for art in &ma.artifacts {
        let bytes = std::fs::read(a.path().join(&art.path)).unwrap();
        assert_eq!(
            attnlab::pipeline::sha256_hex(&bytes),
            art.sha256,
            "{}",
            art.path
        );
    }
    for rel in [
        "train/tran_enc_task.hism",
        "eval/report.csv",
        "stats/tests.csv",
        "export/ns_highlight.svg",
        "export/fixation_highlight.png",
    ] {
        assert!(ma.artifacts.iter().any(|x| x.path == rel), "missing {rel}");
    }

    // Report rows partition the held-out trials by condition.
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("eval/report.json")).unwrap()).unwrap();
    let ids = |k: &str| -> Vec<u64> {
        report["trials"][k]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect()
    };
    let (h, n, all) = (ids("highlight"), ids("no_highlight"), ids("all"));
    assert!(!h.is_empty() && !n.is_empty());
    assert!(h.iter().all(|t| !n.contains(t)));
    let mut joined = [h, n].concat();
    joined.sort_unstable();
    assert_eq!(joined, all);
}

#[test]
fn default_dataset_has_expected_pair_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.analysis.reliability_iterations = 1;
    run_pipeline(&cfg, Stage::Dataset).unwrap();
    let s: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("dataset/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s["pairs"], 1920);
    assert_eq!(s["highlighted_pairs"], 800);
    assert_eq!(s["trials"], 32);
}

#[test]
fn failing_stage_is_named_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(
        &cfg_path,
        "participants = 2\n[dataset]\nper_condition = 500\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_attnlab"))
        .args(["dataset", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage dataset failed"), "{err}");
    // Earlier stages still left a manifest behind.
    let m = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(m.contains("\"itti\""));
}

#[test]
fn cli_rejects_unknown_stage_and_prints_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_attnlab"))
        .args(["pipeline", "--stage", "render"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_attnlab"))
        .args(["print-config", "--seed", "99"])
        .output()
        .unwrap();
    let cfg = PipelineConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 99);
}
