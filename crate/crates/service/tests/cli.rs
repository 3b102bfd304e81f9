use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use base64::Engine as _;

fn evote(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evote"))
        .args(args)
        .env_remove("WEATHER_MODE")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_turnout_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = evote(&["generate-data", "--kind", "turnout", "--n", "500", "--seed", "42", "--out", path(&out)]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 501);
    assert_eq!(lines[0], evote_core::turnout::CSV_HEADER);

    let again = evote(&["generate-data", "--kind", "turnout", "--n", "500", "--seed", "42"]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn train_prints_metrics_and_saves_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let model = dir.path().join("v.json");
    let o = evote(&["generate-data", "--kind", "violence", "--n", "200", "--seed", "3", "--separable", "--out", path(&csv)]);
    assert!(o.status.success());
    let o = evote(&["train", "--kind", "violence", "--in", path(&csv), "--out-model", path(&model), "--trees", "20"]);
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["kind"], "violence");
    assert!(report["holdout"]["accuracy"].as_f64().unwrap() > 0.9);
    let loaded = evote_core::violence::ViolenceModel::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(report["model_id"], loaded.model_id);

    let o = evote(&["train", "--kind", "turnout", "--in", path(&csv), "--out-model", path(&model)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn verify_audit_on_untouched_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = evote(&["verify-audit", "--data-dir", path(dir.path())]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "chain valid (0 entries)");
    let o = evote(&["verify-audit", "--data-dir", path(&dir.path().join("missing"))]);
    assert!(!o.status.success());
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

#[test]
fn enroll_batch_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let csv = dir.path().join("voters.csv");
    let mut body = String::from("nic,full_name,area_code,fingerprint_b64,face_b64\n");
    for i in 0..5u8 {
        body.push_str(&format!(
            "19900000000{i},Voter {i},AREA-1,{},{}\n",
            b64(&[i; 64]),
            b64(&[i + 100; 64])
        ));
    }
    body.push_str("bad-nic,Nobody,AREA-1,AAAA,AAAA\n");
    std::fs::write(&csv, body).unwrap();

    let o = evote(&["enroll-batch", "--csv", path(&csv), "--data-dir", path(&data)]);
    assert!(!o.status.success(), "one row is invalid");
    assert_eq!(stdout(&o).trim(), "enrolled 5, failed 1");

    let o = evote(&["verify-audit", "--data-dir", path(&data)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "chain valid (5 entries)");

    let o = evote(&["enroll-batch", "--csv", path(&csv), "--data-dir", path(&data)]);
    assert_eq!(stdout(&o).trim(), "enrolled 0, failed 6");
}

#[test]
fn simulation_is_reproducible() {
    let args = ["simulate-election", "--voters", "120", "--areas", "3", "--seed", "5"];
    let a = evote(&args);
    let b = evote(&args);
    assert!(a.status.success(), "{a:?}");
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    for t in ["0.25", "0.50", "0.75"] {
        assert!(text.contains(&format!("projection t={t}")), "{text}");
    }
    assert!(text.trim_end().lines().last().unwrap().starts_with("chain valid ("));
}

#[test]
fn serve_answers_health_checks() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("evote.toml");
    std::fs::write(
        &config,
        format!(
            "listen = \"127.0.0.1:0\"\ndata_dir = {:?}\n\n[weather]\nmode = \"fixture\"\nfixture_dir = {:?}\n",
            dir.path().join("data"),
            dir.path()
        ),
    )
    .unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_evote"))
        .args(["serve", "--config", path(&config)])
        .env_remove("WEATHER_MODE")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let text = rt.block_on(async {
        reqwest::get(format!("http://{addr}/api/health")).await.unwrap().text().await.unwrap()
    });
    let body: serde_json::Value = serde_json::from_str(&text).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(body["ok"], true);
    assert_eq!(body["weather"]["mode"], "fixture");
}

#[test]
fn bad_arguments_fail() {
    assert!(!evote(&["generate-data", "--kind", "rainfall"]).status.success());
    assert!(!evote(&["no-such-command"]).status.success());
}

#[test]
fn example_config_parses() {
    let text = include_str!("../../../evote.example.toml");
    let config = evote_service::config::ServiceConfig::from_toml(text).unwrap();
    assert_eq!(config.staff.len(), 3);
    assert_eq!(config.tokens.match_threshold, 0.90);
}
