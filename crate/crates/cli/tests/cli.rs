use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use organichar::sensor::{load_session, ActivityScript, ScriptStep};

fn organichar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_organichar"))
        .args(args)
        .env_remove("ORGANIC_CONFIG")
        .env_remove("ORGANIC_SEED")
        .env_remove("ORGANIC_DESCRIBER_URL")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_scripted_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let script = ActivityScript {
        session_id: "kitchen".into(),
        duration_s: 60.0,
        steps: vec![
            ScriptStep::new("making coffee", "coffee machine area", 2.0, 25.0),
            ScriptStep::new("washing hands", "sink area", 32.0, 20.0),
        ],
    };
    let script_path = tmp.path().join("script.json");
    fs::write(&script_path, serde_json::to_string(&script).unwrap()).unwrap();
    let out = tmp.path().join("kitchen");
    let run = organichar(&["simulate", "--script", path(&script_path), "--out", path(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let session = load_session(&out).unwrap();
    assert_eq!(session.session_id, "kitchen");
    assert_eq!(session.modalities.len(), 6);
    let truth = session.ground_truth.unwrap();
    let spans: Vec<(f64, f64, &str)> = truth.iter().map(|g| (g.start_s, g.end_s, g.activity.as_str())).collect();
    assert_eq!(spans, vec![(2.0, 27.0, "making coffee"), (32.0, 52.0, "washing hands")]);
}

#[test]
fn missing_modality_is_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    assert!(organichar(&["simulate", "--demo", "2", "--out", path(&corpus)]).status.success());
    fs::remove_file(corpus.join("s01/thermal.csv")).unwrap();
    assert_eq!(load_session(corpus.join("s01")).unwrap().modalities.len(), 5);
    let disc = tmp.path().join("disc");
    let run = organichar(&["discover", path(&corpus.join("s01")), path(&corpus.join("s02")), "--out", path(&disc)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(disc.join("summary.json").exists());
}

#[test]
fn usage_errors_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--out".into(), path(tmp.path()).into()],
        vec!["discover".into(), "--out".into(), path(tmp.path()).into()],
        vec!["discover".into(), path(&tmp.path().join("absent")).into(), "--out".into(), path(&tmp.path().join("o")).into()],
        vec!["incremental".into(), path(tmp.path()).into(), "--out".into(), path(&tmp.path().join("o")).into()],
    ];
    for args in cases {
        let run = organichar(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(!run.status.success(), "{args:?} succeeded");
        assert!(!run.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}
