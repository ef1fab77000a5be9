use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use saf_lab::pipeline::{read_session, LabelMode, PipelineConfig, SessionEntry, Workspace, STAGES};
use saf_lab_cli::server::{LabelRequest, LabelSession};

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.toml")
}

fn saf_lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saf-lab"))
        .args(args)
        .arg("--config")
        .arg(small_config())
        .arg("--output-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn verbs_run_stages_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let verbs = [
        "simulate",
        "instantiate",
        "track",
        "features",
        "prototypes",
        "teach",
        "match",
        "student",
        "eval",
    ];
    for v in verbs {
        ok(&saf_lab(&out, &[v]));
    }
    let ws = Workspace::new(&out);
    for s in STAGES {
        assert!(ws.summary(s).is_file(), "{s}");
    }
    let recorded = PipelineConfig::load(&ws.config()).unwrap();
    assert_eq!(recorded.sim.width, 128);
    assert_eq!(recorded.seed, 5);
}

#[test]
fn stage_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // tubes need instances that were never produced
    ok(&saf_lab(&out, &["simulate"]));
    let o = saf_lab(&out, &["track"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage `tubes` failed"), "{err}");
    assert!(err.contains("dataset"), "{err}");
}

#[test]
fn bad_flag_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = saf_lab(dir.path(), &["run", "--weak-mode", "hourly"]);
    assert!(!o.status.success());
    let o = saf_lab(dir.path(), &["run", "--grid", "7"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn sweep_prints_requested_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let table = ok(&saf_lab(&out, &["sweep", "--sweep", "grid=8,16 eps=1,5"]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].contains("eps=1") && lines[0].contains("eps=5"));
    assert!(lines[1].trim_start().starts_with('8'));
    assert!(lines[2].trim_start().starts_with("16"));
    assert!(out.join("sweep/sweep.json").is_file());
}

/// Labels posted through the service, equal to the automatic ones, give
/// byte-identical downstream artifacts.
#[test]
fn human_session_matches_auto_labels() {
    let dir = tempfile::tempdir().unwrap();
    let auto = dir.path().join("auto");
    let human = dir.path().join("human");
    ok(&saf_lab(&auto, &["run", "--label-mode", "auto"]));

    let o = saf_lab(&human, &["run", "--label-mode", "human"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `teacher` failed"));

    let auto_session = read_session(&Workspace::new(&auto).session()).unwrap();
    let ws = Workspace::new(&human);
    let pending: Vec<SessionEntry> = read_session(&ws.session()).unwrap();
    assert_eq!(pending.len(), 8);
    assert!(pending.iter().all(|e| e.label.is_none()));
    let strip = |v: &[SessionEntry]| {
        v.iter()
            .map(|e| (e.cluster_id, e.frame_index, e.instance_index))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&pending), strip(&auto_session));

    let cfg = PipelineConfig::load(&ws.config()).unwrap();
    assert_eq!(cfg.label_mode, LabelMode::Human);
    let session = Arc::new(LabelSession::open(&cfg, &ws).unwrap());
    let rt = tokio::runtime::Runtime::new().unwrap();
    for e in &auto_session {
        let req = LabelRequest {
            cluster_id: e.cluster_id,
            label: e.label.expect("auto prototypes overlap a tool"),
        };
        rt.block_on(session.set_label(req)).unwrap();
    }
    ok(&saf_lab(
        &human,
        &["run", "--resume", "--label-mode", "human"],
    ));

    for file in [
        "teacher/teacher.json",
        "match/matched.json",
        "student/student.json",
        "eval/metrics.json",
    ] {
        let a = std::fs::read(auto.join(file)).unwrap();
        let b = std::fs::read(human.join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn resume_rejects_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&saf_lab(&out, &["simulate"]));
    let o = saf_lab(&out, &["run", "--resume", "--seed", "6"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("different configuration"));
}
