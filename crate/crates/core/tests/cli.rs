use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

fn actrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actrecon"))
        .args(args)
        .env_remove("ACTRECON_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_fixture(stage: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = fixture().join("config.json");
    let mut args = vec![stage, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    actrecon(&args)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const ARTIFACTS: &[(&str, &[&str])] = &[
    ("ingest", &["summary.json", "kept_days.csv"]),
    ("stays", &["stays.jsonl"]),
    ("label", &["user_profiles.jsonl", "labeled_stays.jsonl", "chains.jsonl"]),
    ("profiles", &["temporal_profiles.csv"]),
    ("infer", &["inferred_chains.jsonl", "professions.csv"]),
    ("validate", &["validation_report.json", "series.csv", "mape_per_hour.csv"]),
    ("sweep", &["sweep.csv"]),
    ("lda", &["model.json", "groups.csv", "document_groups.csv", "topics.csv"]),
    (
        "analytics",
        &[
            "location_counts.csv",
            "travel_distance.csv",
            "trip_purpose_hourly.csv",
            "transitions_0800_1200.csv",
            "transitions_1600_2000.csv",
            "time_use.csv",
            "group_profiles.csv",
            "arrival_duration_Work.csv",
            "arrival_duration_DrinkEat.csv",
            "od_flows.csv",
            "lognormal_fits.json",
        ],
    ),
];

#[test]
fn all_on_tiny_fixture_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fixture("all", tmp.path(), &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is one JSON summary");
    assert_eq!(summary["ingest"]["users"], 30);
    for (stage, files) in ARTIFACTS {
        let dir = tmp.path().join(stage);
        for f in files.iter().chain(&["resolved_config.json", "manifest.json"]) {
            assert!(dir.join(f).is_file(), "{stage}/{f} missing");
        }
        let m = manifest(&dir);
        assert_eq!(m["stage"], *stage);
        assert_eq!(m["inputs"].as_object().unwrap().len(), 4);
        for f in *files {
            assert!(m["outputs"].get(*f).is_some(), "{stage} manifest lacks {f}");
        }
    }
    let resolved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("lda/resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["lda"]["k"], 4);
    assert_eq!(resolved["bayes"]["candidate_buffer_m"], 900.0);
}

#[test]
fn identical_runs_have_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_fixture("all", a.path(), &[]).status.success());
    assert!(run_fixture("all", b.path(), &["--threads", "2"]).status.success());
    for (stage, _) in ARTIFACTS {
        let (ma, mb) = (manifest(&a.path().join(stage)), manifest(&b.path().join(stage)));
        assert_eq!(ma["inputs"], mb["inputs"], "{stage} inputs");
        assert_eq!(ma["outputs"], mb["outputs"], "{stage} outputs");
        let outputs: BTreeMap<String, String> = serde_json::from_value(ma["outputs"].clone()).unwrap();
        for f in outputs.keys() {
            let (x, y) = (std::fs::read(a.path().join(stage).join(f)).unwrap(), std::fs::read(b.path().join(stage).join(f)).unwrap());
            assert!(x == y, "{stage}/{f} differs");
        }
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"stays": {"burst_gap": 600}}"#).unwrap();
    let out = actrecon(&["ingest", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("burst_gap"));

    let out = run_fixture("ingest", tmp.path(), &["--set", "label.no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fixture("stays", tmp.path(), &["--set", "inputs.xdr=does_not_exist.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does_not_exist.csv"));
    let out = actrecon(&["ingest", "--config", tmp.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validation_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fixture("validate", tmp.path(), &["--set", "validate.min_accuracy=0.999"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_stage_writes_only_its_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_fixture("label", tmp.path(), &[]);
    assert!(out.status.success());
    let dirs: Vec<String> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(dirs, vec!["label".to_string()]);
}

#[test]
fn config_env_var_supplies_default_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_actrecon"))
        .args(["ingest", "--out", tmp.path().to_str().unwrap()])
        .env("ACTRECON_CONFIG", fixture().join("config.json"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("ingest/summary.json").is_file());
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run_fixture("synth", d.path(), &["--set", "synth.n_agents=5"]);
        assert!(out.status.success());
    }
    for f in ["stations.csv", "pois.csv", "xdr.csv", "checkins.csv", "truth.jsonl"] {
        let (x, y) = (std::fs::read(a.path().join("synth").join(f)).unwrap(), std::fs::read(b.path().join("synth").join(f)).unwrap());
        assert!(!x.is_empty() && x == y, "{f}");
    }
}
