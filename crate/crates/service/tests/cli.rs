use std::process::Command;

use practice_core::session::Take;
use practice_core::CalibrationFile;

fn practice() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_practice"));
    cmd.env("RUST_LOG", "warn").env_remove("PRACTICE_ROOT");
    cmd
}

const EXERCISE: &str = r#"{"id":"two","title":"two","instrument":"drums","tempo_bpm":60,"loops":1,
  "notes":[{"beat":0,"target":{"pad":"kick"}},{"beat":1,"target":{"pad":"snare"}}]}"#;

#[test]
fn calibrate_writes_a_usable_file() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    let out = dir.path().join("cal.json");
    let pts: Vec<_> = [(0.0, 0.0), (100.0, 0.0), (100.0, 80.0), (0.0, 80.0), (50.0, 40.0)]
        .iter()
        .map(|&(x, y): &(f64, f64)| serde_json::json!({"world": [x, y], "pixel": [2.0 * x + 10.0, 2.0 * y - 5.0]}))
        .collect();
    std::fs::write(&points, serde_json::to_string(&pts).unwrap()).unwrap();
    let run = practice().args(["calibrate", "--points"]).arg(&points).arg("--out").arg(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let file: CalibrationFile = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(file.max < 1e-6);
    let p = file.matrix.apply((30.0, 30.0)).unwrap();
    assert!((p.0 - 70.0).abs() < 1e-6 && (p.1 - 55.0).abs() < 1e-6);
}

#[test]
fn calibrate_rejects_degenerate_points() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.json");
    std::fs::write(&points, r#"[{"world":[0,0],"pixel":[0,0]},{"world":[1,1],"pixel":[1,1]}]"#).unwrap();
    let run = practice()
        .args(["calibrate", "--points"])
        .arg(&points)
        .arg("--out")
        .arg(dir.path().join("cal.json"))
        .output()
        .unwrap();
    assert!(!run.status.success());
}

#[test]
fn analyze_reproduces_a_replayed_take() {
    let dir = tempfile::tempdir().unwrap();
    let ex = dir.path().join("ex.json");
    std::fs::write(&ex, EXERCISE).unwrap();
    let take_in = dir.path().join("in.json");
    let recorded = serde_json::json!({
        "version": 1, "take_id": "t1", "exercise_id": "two", "tempo_bpm": 60.0,
        "started_at": "2026-01-02T03:04:05Z",
        "hits": [{"t_ms": 20.0, "key": 36, "vel": 90}, {"t_ms": 1100.0, "key": 38, "vel": 30}]
    });
    std::fs::write(&take_in, recorded.to_string()).unwrap();

    let replayed = dir.path().join("replayed.json");
    let run = practice()
        .args(["replay", "--no-realtime", "--input"])
        .arg(&take_in)
        .arg("--exercise")
        .arg(&ex)
        .arg("--out")
        .arg(&replayed)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("2 matched, 0 missed, 0 extra"));

    let analyzed = dir.path().join("analyzed.json");
    let run = practice()
        .args(["analyze", "--take"])
        .arg(&replayed)
        .arg("--exercise")
        .arg(&ex)
        .arg("--out")
        .arg(&analyzed)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let a: Take = serde_json::from_str(&std::fs::read_to_string(&replayed).unwrap()).unwrap();
    let b: Take = serde_json::from_str(&std::fs::read_to_string(&analyzed).unwrap()).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.take_id, b.take_id);
}

#[test]
fn analyze_refuses_a_foreign_exercise() {
    let dir = tempfile::tempdir().unwrap();
    let ex = dir.path().join("ex.json");
    std::fs::write(&ex, EXERCISE).unwrap();
    let take = dir.path().join("t.json");
    std::fs::write(
        &take,
        r#"{"version":1,"take_id":"x","exercise_id":"other","tempo_bpm":60,"started_at":"2026-01-02T03:04:05Z","hits":[]}"#,
    )
    .unwrap();
    let run = practice()
        .args(["analyze", "--take"])
        .arg(&take)
        .arg("--exercise")
        .arg(&ex)
        .arg("--out")
        .arg(dir.path().join("o.json"))
        .output()
        .unwrap();
    assert!(!run.status.success());
}
