//! Command-line behavior: exit codes, overrides, and seed resolution.

use std::path::Path;
use std::process::Command;

use pezlab_core::harness::EvalReport;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pezlab"))
}

fn write_tiny_config(dir: &Path) {
    let config = r#"{
  "schema": 1,
  "task": "invert",
  "vocab": {"v": 8, "d": 4},
  "d_f": 4,
  "m": 2,
  "m_target": 2,
  "methods": ["pez"],
  "seeds": [3],
  "opt": {"steps": 40},
  "eval_every": 20,
  "out": "out.csv"
}"#;
    std::fs::write(dir.join("cfg.json"), config).unwrap();
}

#[test]
fn gen_vocab_writes_both_files_and_prints_paths() {
    let dir = tempfile::tempdir().unwrap();
    let output = binary()
        .current_dir(dir.path())
        .args([
            "gen-vocab",
            "--V",
            "16",
            "--d",
            "3",
            "--seed",
            "5",
            "--out",
            "v.emb1",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("v.emb1"));
    assert!(stdout.contains("v.tokens"));
    // 12-byte header + 16*3 f32 payload
    assert_eq!(
        std::fs::read(dir.path().join("v.emb1")).unwrap().len(),
        12 + 16 * 3 * 4
    );
    let tokens = std::fs::read_to_string(dir.path().join("v.tokens")).unwrap();
    assert_eq!(tokens.lines().count(), 16);
}

#[test]
fn invert_prints_tokens_then_report_path() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    let output = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "cfg.json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].split(' ').all(|t| t.starts_with('t')));
    assert_eq!(lines[1], "out.csv");
    let report = EvalReport::read(&dir.path().join("out.csv")).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].seed, 3);
}

#[test]
fn unparsable_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let status = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "bad.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("typo.json"),
        r#"{"schema": 1, "vocab": {"v": 8, "d": 4}, "gamma": 0.1}"#,
    )
    .unwrap();
    let status = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "typo.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn task_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    let status = binary()
        .current_dir(dir.path())
        .args(["distill", "--config", "cfg.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn unknown_subcommand_and_bad_flag_exit_1() {
    let status = binary().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = binary()
        .args(["invert", "--no-such-flag"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn missing_vocab_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"schema": 1, "vocab": {"path": "nope.emb1"}, "d_f": 4, "m": 2, "m_target": 2,
            "methods": ["pez"], "seeds": [0], "opt": {"steps": 10}, "eval_every": 5,
            "out": "out.csv"}"#,
    )
    .unwrap();
    let status = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "cfg.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn set_overrides_win_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    let output = binary()
        .current_dir(dir.path())
        .args([
            "invert",
            "--config",
            "cfg.json",
            "--set",
            "opt.steps=7",
            "--set",
            "out=elsewhere.csv",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report = EvalReport::read(&dir.path().join("elsewhere.csv")).unwrap();
    assert_eq!(report.rows[0].steps, 7);
}

#[test]
fn seed_priority_is_flag_then_config_then_env() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());

    // flag beats config
    let output = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "cfg.json", "--seed", "11"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        EvalReport::read(&dir.path().join("out.csv")).unwrap().rows[0].seed,
        11
    );

    // config beats env
    let output = binary()
        .current_dir(dir.path())
        .env("PEZLAB_SEED", "99")
        .args(["invert", "--config", "cfg.json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        EvalReport::read(&dir.path().join("out.csv")).unwrap().rows[0].seed,
        3
    );

    // env fills in when the config has no seed list
    let no_seeds = r#"{
  "schema": 1, "task": "invert", "vocab": {"v": 8, "d": 4}, "d_f": 4,
  "m": 2, "m_target": 2, "methods": ["pez"],
  "opt": {"steps": 40}, "eval_every": 20, "out": "out.csv"
}"#;
    std::fs::write(dir.path().join("noseeds.json"), no_seeds).unwrap();
    let output = binary()
        .current_dir(dir.path())
        .env("PEZLAB_SEED", "99")
        .args(["invert", "--config", "noseeds.json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        EvalReport::read(&dir.path().join("out.csv")).unwrap().rows[0].seed,
        99
    );
}

#[test]
fn banned_file_excludes_tokens_from_the_result() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    // ban half the vocabulary; the run must still succeed and avoid them
    std::fs::write(dir.path().join("banned.txt"), "t0\nt1\nt2\nt3\n").unwrap();
    let output = binary()
        .current_dir(dir.path())
        .args(["invert", "--config", "cfg.json", "--banned", "banned.txt"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let tokens: Vec<&str> = stdout.lines().next().unwrap().split(' ').collect();
    for token in tokens {
        assert!(
            !["t0", "t1", "t2", "t3"].contains(&token),
            "banned token {token} emitted"
        );
    }
}

#[test]
fn check_grads_small_run_succeeds() {
    let output = binary()
        .args(["check-grads", "--instances", "5", "--seed", "1"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().count(), 5);
    assert!(stdout.lines().all(|l| l.contains("ok")));
}

#[test]
fn compare_runs_a_matrix_and_prints_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "schema": 1,
  "task": "invert",
  "vocab": {"v": 8, "d": 4},
  "d_f": 4,
  "m": [1, 2],
  "m_target": 2,
  "methods": ["pez", "oracle"],
  "seeds": [0, 1],
  "opt": {"steps": 30},
  "eval_every": 10,
  "out": "matrix.csv"
}"#;
    std::fs::write(dir.path().join("cfg.json"), config).unwrap();
    let output = binary()
        .current_dir(dir.path())
        .args(["compare", "--config", "cfg.json", "--jobs", "2"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "matrix.csv");
    let report = EvalReport::read(&dir.path().join("matrix.csv")).unwrap();
    assert_eq!(report.rows.len(), 8);
}
