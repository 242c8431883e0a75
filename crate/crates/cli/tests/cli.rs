use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn comrades(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comrades")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "seed": 2,
  "duration": 300,
  "clients": [{"count": 8, "config": {"min_wait": 30, "max_wait": 120, "min_comrades": 3}}],
  "target_sites": [{"url": "http://pills.example/", "base_latency": 100, "capacity": 20,
     "timeout": 10000, "request_bytes": 2048, "cost_per_gib": 0.05, "visitor_rate": 5,
     "revenue_per_visit": 1.0, "patience": 1000}],
  "spam_injections": [{"minute": 0, "spread": 10, "email": {"body": "buy at http://pills.example/"}}]
}"#;

#[test]
fn baseline_run_reports_a_launch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ndjson");
    let o = comrades(&["run", &scenario("baseline.json"), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("launched 1"), "{table}");
    let stream = fs::read_to_string(&out).unwrap();
    let last: serde_json::Value = serde_json::from_str(stream.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "summary");
}

#[test]
fn fixed_seeds_reproduce_the_stream() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    fs::write(&file, SMALL).unwrap();
    let (a, b) = (dir.path().join("a.ndjson"), dir.path().join("b.ndjson"));
    for out in [&a, &b] {
        let o = comrades(&["run", path(&file), "--seed", "77", "--out", path(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::read_to_string(&a).unwrap().contains(r#""seed":77"#));
}

#[test]
fn sweeps_write_one_stream_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    fs::write(&file, SMALL).unwrap();
    let out = dir.path().join("m.ndjson");
    let o = comrades(&["run", path(&file), "--sweep", "10..14", "--out", path(&out), "--summary", "json-lines"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.iter().map(|r| r["seed"].as_u64().unwrap()).collect::<Vec<_>>(), vec![10, 11, 12, 13, 14]);
    for seed in 10..=14 {
        assert!(dir.path().join(format!("m.seed-{seed}.ndjson")).exists());
    }

    let o = comrades(&["run", path(&file), "--sweep", "3..4", "--out", path(&out)]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
}

#[test]
fn malformed_files_exit_2_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(&file, "{\n  \"seed\": 1,\n  \"duration\": oops\n}").unwrap();
    let out = dir.path().join("m");
    for args in [vec!["run", path(&file), "--out", path(&out)], vec!["validate", path(&file)]] {
        let o = comrades(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
    }
}

#[test]
fn validate_names_the_broken_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    fs::write(&file, SMALL.replace(r#""max_wait": 120"#, r#""max_wait": 30"#)).unwrap();
    let o = comrades(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_wait"), "{}", stderr(&o));

    let o = comrades(&["run", path(&file), "--out", path(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn unknown_strategies_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    let text = SMALL.replacen(
        "\"seed\": 2,",
        r#""seed": 2, "adversaries": [{"strategy": "teleport", "url": "http://pills.example/"}],"#,
        1,
    );
    fs::write(&file, text).unwrap();
    let o = comrades(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("teleport"), "{}", stderr(&o));
}

#[test]
fn validate_prints_the_normalized_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    fs::write(&file, SMALL).unwrap();
    let o = comrades(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let normalized: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(normalized["opt_out_rate"], 6);
    assert_eq!(normalized["clients"][0]["config"]["poll_interval"], 10);

    // The printed form is itself accepted.
    let again = dir.path().join("again.json");
    fs::write(&again, &o.stdout).unwrap();
    let o2 = comrades(&["validate", path(&again)]);
    assert_eq!(o2.stdout, o.stdout);
}

#[test]
fn every_bundled_scenario_validates() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let o = comrades(&["validate", path(&p)]);
        assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
    }
}
