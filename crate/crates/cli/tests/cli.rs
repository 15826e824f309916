use std::path::Path;
use std::process::{Command, Output};

fn amot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amot"))
        .args(args)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str = r#"
[env]
n_cameras = 2
n_targets = 3
court_half_x = 1500.0
court_half_y = 800.0
episode_length = 10

[trainer]
batch_size = 4
checkpoint_every_episodes = 0

[network]
encoder1 = 8
encoder2 = 8
trunk = 8
hidden = 8
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn train(config: &str, outdir: &Path, extra: &[&str]) -> Output {
    let out = outdir.to_string_lossy().into_owned();
    let mut args = vec!["train", "--config", config, "--outdir", &out];
    args.extend_from_slice(extra);
    amot(&args)
}

#[test]
fn missing_config_names_the_path() {
    let out = amot(&["train", "--config", "/definitely/not/here.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/definitely/not/here.toml"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[env]\nbogus = 1\n");
    let out = amot(&["ipt-bench", "--config", &config, "--steps", "1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn total_steps_override_limits_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[trainer]\nbatch_size = 2\n[network]\nencoder1 = 4\nencoder2 = 4\ntrunk = 4\nhidden = 4\n");
    let outdir = dir.path().join("run");
    let out = train(&config, &outdir, &["--total-steps", "1000"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = std::fs::read_to_string(outdir.join("metrics.log")).unwrap();
    let episodes: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["kind"] == "episode")
        .collect();
    assert!(!episodes.is_empty() && episodes.len() <= 10);
    assert!(episodes.iter().all(|e| e["step"].as_u64().unwrap() <= 1000));
    assert!(outdir.join("config.echo").exists());
    assert!(outdir.join("report").exists());
    assert!(outdir.join("checkpoints/step-1000.ckpt").exists());
    let echo = std::fs::read_to_string(outdir.join("config.echo")).unwrap();
    assert!(echo.contains("total_steps = 1000"));
    // The echo is itself a valid config.
    let echo_path = outdir.join("config.echo").to_string_lossy().into_owned();
    assert!(amot(&["ipt-bench", "--config", &echo_path, "--steps", "1"]).status.success());
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for outdir in [&a, &b] {
        let out = train(&config, outdir, &["--total-steps", "200", "--seed", "9"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "checkpoints/step-200.ckpt"), read(&b, "checkpoints/step-200.ckpt"));
    assert_eq!(read(&a, "metrics.log"), read(&b, "metrics.log"));
}

#[test]
fn ablation_changes_the_logged_composition() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    for (flag, team, individual) in [("team", 0.0, 1.0), ("all-individual", 1.0, 0.0)] {
        let outdir = dir.path().join(flag);
        let out = train(&config, &outdir, &["--total-steps", "50", "--ablate", flag]);
        assert!(out.status.success(), "{}", stderr(&out));
        let log = std::fs::read_to_string(outdir.join("metrics.log")).unwrap();
        let header: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(header["kind"], "header");
        assert_eq!(header["team_weight"].as_f64().unwrap(), team);
        assert_eq!(header["individual_weight"].as_f64().unwrap(), individual);
    }
    let out = train(&config, &dir.path().join("bad"), &["--total-steps", "50", "--ablate", "nonsense"]);
    assert!(!out.status.success());
}

#[test]
fn eval_checkpoint_baseline_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let outdir = dir.path().join("run");
    assert!(train(&config, &outdir, &["--total-steps", "100"]).status.success());
    let ckpt = outdir.join("checkpoints/step-100.ckpt").to_string_lossy().into_owned();
    let evaldir = dir.path().join("eval").to_string_lossy().into_owned();

    let out = amot(&["eval", "--config", &config, "--checkpoint", &ckpt, "--runs", "1", "--outdir", &evaldir]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/report")).unwrap()).unwrap();
    assert_eq!(report["runs"], 1);
    assert_eq!(report["std"].as_f64().unwrap(), 0.0);

    let out = amot(&["eval", "--config", &config, "--baseline", "--runs", "3", "--outdir", &evaldir]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("baseline"));

    let other = write_config(dir.path(), &SMALL.replace("hidden = 8", "hidden = 6"));
    let out = amot(&["eval", "--config", &other, "--checkpoint", &ckpt, "--outdir", &evaldir]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("hidden=8") && err.contains("hidden=6"), "{err}");

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[40] ^= 0xff;
    let corrupt = dir.path().join("corrupt.ckpt");
    std::fs::write(&corrupt, bytes).unwrap();
    let corrupt = corrupt.to_string_lossy().into_owned();
    let out = amot(&["eval", "--config", &config, "--checkpoint", &corrupt, "--outdir", &evaldir]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("corrupt"));
}

#[test]
fn gradcheck_passes_fails_and_warns() {
    let out = amot(&["gradcheck", "--trials", "3", "--seed", "5"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("PASS"));

    let out = amot(&["gradcheck", "--trials", "3", "--seed", "5", "--fault", "0.01"]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("FAIL"));

    let out = amot(&["gradcheck", "--trials", "0"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning"));
}

#[test]
fn ipt_bench_runs_and_reports() {
    let out = amot(&["ipt-bench", "--steps", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("unclipped"));
    let mean = |out: &Output| -> f64 {
        let text = stdout(out);
        let line = text.lines().find(|l| l.starts_with("all")).unwrap().to_string();
        line.split_whitespace().nth(2).unwrap().parse().unwrap()
    };
    let clean = amot(&["ipt-bench", "--steps", "50", "--seed", "3"]);
    let noisy = amot(&["ipt-bench", "--steps", "50", "--seed", "3", "--noise"]);
    assert!(mean(&noisy) > mean(&clean));
}
