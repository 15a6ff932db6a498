use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use sigmine_core::config::PipelineConfig;
use sigmine_core::overlap::{Encoder, HttpEncoder};

fn sigmine(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigmine"))
        .current_dir(dir)
        .env_remove("SIGMINE_ENCODER")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic dataset with a short bootstrap so the tests stay fast.
fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = sigmine(dir.path(), &["synth", "--out", ".", "--n-docs", "30", "--world-seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg_path = dir.path().join("sigmine.toml");
    let mut cfg = PipelineConfig::load(&cfg_path).unwrap();
    cfg.overlap.replicates = 20;
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    dir
}

#[test]
fn print_defaults_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = sigmine(dir.path(), &["config", "--print-defaults"]);
    assert!(out.status.success());
    let cfg = PipelineConfig::from_toml(&stdout(&out)).unwrap();
    assert_eq!(cfg.ingest.window, 30);
    assert_eq!(cfg.ingest.downsample_rate, 0.02);
    assert_eq!(cfg.screen.alpha, 0.01);
    assert_eq!(cfg.mine.delta, 0.0);
    assert_eq!(cfg.overlap.replicates, 1000);
    assert_eq!(cfg.analyze.clique_threshold, 0.5);
}

#[test]
fn stages_run_in_order_with_one_summary_line_each() {
    let dir = dataset();
    let d = dir.path();
    for stage in ["ingest", "screen", "mine", "overlap", "analyze", "report"] {
        let out = sigmine(d, &["--config", "sigmine.toml", stage]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
        let lines: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
        assert_eq!(lines.len(), 1);
        let v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(v["stage"], stage);
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 16);
    }
    for f in [
        "out/ingest/contexts.tsv",
        "out/screening/math_atlas_0.tsv",
        "out/signatures/math_atlas_0.json",
        "out/overlap/semantic.tsv",
        "out/overlap/performance.tsv",
        "out/overlap/signature.tsv",
        "out/analysis/report.json",
        "out/report/report.json",
        "out/report/heatmap_signature.svg",
        "out/report/heatmap_signature.tsv",
        "out/manifest.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"].as_object().unwrap().len(), 6);
}

#[test]
fn mine_single_benchmark() {
    let dir = dataset();
    let d = dir.path();
    let run = sigmine(d, &["--config", "sigmine.toml", "run", "--stages", "ingest,screen"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let out = sigmine(d, &["--config", "sigmine.toml", "mine", "--benchmark", "code_delta_0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(d.join("out/signatures/code_delta_0.json").exists());
    assert!(!d.join("out/signatures/math_atlas_0.json").exists());

    let bad = sigmine(d, &["--config", "sigmine.toml", "mine", "--benchmark", "nope"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("not in the performance panel"));
}

#[test]
fn signature_overlap_without_signatures_exits_2() {
    let dir = dataset();
    let out = sigmine(dir.path(), &["--config", "sigmine.toml", "overlap", "--level", "signature"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run 'mine' first"), "{}", stderr(&out));
}

#[test]
fn mine_without_screening_names_the_stage() {
    let dir = dataset();
    let out = sigmine(dir.path(), &["--config", "sigmine.toml", "mine"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run 'screen' first"));
}

#[test]
fn report_refuses_mixed_configs_unless_forced() {
    let dir = dataset();
    let d = dir.path();
    let run = sigmine(d, &["--config", "sigmine.toml", "run", "--stages", "ingest,screen,mine,overlap,analyze"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let other = sigmine(d, &["--config", "sigmine.toml", "--seed", "99", "report"]);
    assert_eq!(other.status.code(), Some(1));
    assert!(stderr(&other).contains("--force"));
    let forced = sigmine(d, &["--config", "sigmine.toml", "--seed", "99", "report", "--force"]);
    assert!(forced.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&forced).trim()).unwrap();
    assert!(v["mixed_artifacts"].as_u64().unwrap() > 0);
    let same = sigmine(d, &["--config", "sigmine.toml", "report"]);
    assert!(same.status.success(), "{}", stderr(&same));
}

#[test]
fn workers_and_output_dir_do_not_change_the_hash() {
    let dir = dataset();
    let d = dir.path();
    let a = sigmine(d, &["--config", "sigmine.toml", "ingest"]);
    let b = sigmine(d, &["--config", "sigmine.toml", "--workers", "2", "--output-dir", "elsewhere", "ingest"]);
    assert!(a.status.success() && b.status.success());
    let hash = |o: &Output| serde_json::from_str::<serde_json::Value>(stdout(o).trim()).unwrap()["config_hash"].clone();
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(
        std::fs::read(d.join("out/ingest/contexts.tsv")).unwrap(),
        std::fs::read(d.join("elsewhere/ingest/contexts.tsv")).unwrap()
    );
}

#[test]
fn encoder_env_var_overrides_endpoint() {
    let dir = dataset();
    let out = Command::new(env!("CARGO_BIN_EXE_sigmine"))
        .current_dir(dir.path())
        .env("SIGMINE_ENCODER", "carrier-pigeon://nowhere")
        .args(["--config", "sigmine.toml", "overlap", "--level", "semantic"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("carrier-pigeon"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[screen]\nalpah = 0.1\n").unwrap();
    let out = sigmine(dir.path(), &["--config", "c.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alpah"));
}

#[test]
fn mock_encoder_over_stdio() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sigmine"))
        .args(["mock-encoder", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        writeln!(stdin, r#"{{"op":"info"}}"#).unwrap();
        writeln!(stdin, r#"{{"texts":["a b","a c"]}}"#).unwrap();
        writeln!(stdin, "not json").unwrap();
    }
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["dim"], 256);
    assert_eq!(lines[1]["vectors"].as_array().unwrap().len(), 2);
    assert!(lines[2]["error"].is_string());
}

#[test]
fn mock_encoder_over_http() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sigmine"))
        .args(["mock-encoder", "--http", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut url = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut url).unwrap();
    let enc = HttpEncoder::new(url.trim());
    let info = enc.info().unwrap();
    assert_eq!((info.dim, info.max_length), (256, 8192));
    let v = enc.embed(&["a b".to_string()]).unwrap();
    assert_eq!(v.len(), 1);
    child.kill().unwrap();
    let _ = child.wait();
}
