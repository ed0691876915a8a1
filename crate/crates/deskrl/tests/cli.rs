//! End-to-end tests of the command-line interface, exercised through the
//! real binary: exit codes, error categories, manifests, file outputs, and
//! the determinism contract across runs and worker counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_deskrl")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/train_demo.toml")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_lines(path: &Path, lines: &[&str]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn train_demo_config_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let output = run(&[
        "train",
        "--config",
        demo_config().to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--steps",
        "20",
        "--tbs",
        "16",
        "--orm",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("curves.csv").exists());
    assert!(out_dir.join("params_final.json").exists());
    let curves = std::fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 21, "header plus one row per step");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(
        manifest["end_unix"].is_u64(),
        "completed run finalizes the manifest"
    );
    assert_eq!(
        manifest["config"]["trainer"]["total_steps"], 20,
        "flag overrides file"
    );
    assert_eq!(
        manifest["config"]["trainer"]["tbs"], 16,
        "flag overrides file batch size"
    );
    assert_eq!(
        manifest["config"]["trainer"]["filters"]["orm"], true,
        "filter flag applies"
    );
}

#[test]
fn failed_train_still_leaves_parseable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[dataset]\npath = \"/nonexistent/data.jsonl\"\n").unwrap();
    let output = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(
        manifest["end_unix"].is_null(),
        "crash leaves the start manifest"
    );
}

#[test]
fn train_is_deterministic_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out_dir = dir.path().join(name);
        let output = run(&[
            "train",
            "--config",
            demo_config().to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--steps",
            "25",
            "--workers",
            workers,
        ]);
        assert!(output.status.success(), "stderr: {}", stderr_of(&output));
        outputs.push((
            std::fs::read(out_dir.join("curves.csv")).unwrap(),
            std::fs::read(out_dir.join("params_final.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1], "same seed, same bytes");
    assert_eq!(
        outputs[0], outputs[2],
        "worker count must not change outputs"
    );
}

#[test]
fn missing_config_file_fails_with_config_category() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&[
        "train",
        "--config",
        "/nonexistent/config.toml",
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let err = stderr_of(&output);
    assert!(err.contains("\"category\":\"config\""), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("typo.toml");
    std::fs::write(&config, "[trainer]\ntbz = 1024\n").unwrap();
    let output = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let err = stderr_of(&output);
    assert!(
        err.contains("tbz"),
        "error must name the unknown key: {err}"
    );
}

fn write_dataset(path: &Path) {
    write_lines(
        path,
        &[
            r#"{"id":"q1","prompt":"2 + 3 = ?","answer":"5","source":"t"}"#,
            r#"{"id":"q2","prompt":"1 + 1 = ?","answer":"2","source":"t"}"#,
        ],
    );
}

#[test]
fn score_writes_breakdowns() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("data.jsonl");
    let responses = dir.path().join("resp.jsonl");
    let out = dir.path().join("scored.jsonl");
    write_dataset(&dataset);
    write_lines(
        &responses,
        &[
            r#"{"id":"q1","text":"so \\boxed{5}","length":3}"#,
            r#"{"id":"q2","text":"\\boxed{7}","length":2}"#,
        ],
    );
    let output = run(&[
        "score",
        "--dataset",
        dataset.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "outcome-only",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let scored = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<serde_json::Value> = scored
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["breakdown"]["total"], 1.0);
    assert_eq!(rows[1]["breakdown"]["total"], 0.0);
}

#[test]
fn score_id_mismatch_has_its_own_category() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("data.jsonl");
    let responses = dir.path().join("resp.jsonl");
    write_dataset(&dataset);
    write_lines(&responses, &[r#"{"id":"ghost","text":"\\boxed{1}"}"#]);
    let output = run(&[
        "score",
        "--dataset",
        dataset.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--out",
        dir.path().join("scored.jsonl").to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    let err = stderr_of(&output);
    assert!(
        err.contains("\"category\":\"id-mismatch\""),
        "stderr: {err}"
    );
    assert!(err.contains("ghost"));
}

#[test]
fn analyze_on_empty_input_produces_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("empty.jsonl");
    std::fs::write(&responses, "").unwrap();
    let out_dir = dir.path().join("analysis");
    let output = run(&[
        "analyze",
        "--responses",
        responses.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("analysis.json")).unwrap())
            .unwrap();
    assert_eq!(parsed["response_count"], 0);
    assert_eq!(parsed["keyword_ratios"]["self-verification"], 0.0);
    let curves = std::fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    assert_eq!(
        curves.trim(),
        "step,reward,length,completion_ratio,accuracy,kl,entropy"
    );
}

#[test]
fn curate_filters_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    let output_path = dir.path().join("curated.jsonl");
    write_lines(
        &input,
        &[
            r#"{"id":"a","prompt":"1 + 1 = ?","answer":"2","source":"t"}"#,
            r#"{"id":"b","prompt":"prove it","answer":"x+1","source":"t"}"#,
            r#"{"id":"c","prompt":"2 + 2 = ?","answer":"\\frac{8}{2}","source":"t"}"#,
        ],
    );
    let output = run(&[
        "curate",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output_path.to_str().unwrap(),
        "--skip-difficulty",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let err = stderr_of(&output);
    assert!(err.contains("\"removed_unverifiable\":1"), "stderr: {err}");
    let curated = std::fs::read_to_string(&output_path).unwrap();
    assert_eq!(curated.lines().count(), 2);
    assert!(output_path
        .with_file_name("curated.jsonl.manifest.json")
        .exists());
}

#[test]
fn toolrun_splices_results_into_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("transcript.txt");
    let output_path = dir.path().join("final.txt");
    let log = dir.path().join("log.jsonl");
    std::fs::write(&input, "compute\n```python\nprint(3*3)\n```\ndone\n").unwrap();
    let output = run(&[
        "toolrun",
        "--runner",
        "python3",
        "--in",
        input.to_str().unwrap(),
        "--out",
        output_path.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let transcript = std::fs::read_to_string(&output_path).unwrap();
    assert!(transcript.contains("<output>\n9\n</output>"));
    let log_line: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(&log)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(log_line["stdout"], "9\n");
    assert_eq!(log_line["status"]["kind"], "exited");
}

#[test]
fn nonsense_limit_flags_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("t.txt");
    std::fs::write(&input, "```python\nprint(1)\n```\n").unwrap();
    let output = run(&[
        "toolrun",
        "--runner",
        "python3",
        "--timeout=-1",
        "--in",
        input.to_str().unwrap(),
    ]);
    assert!(!output.status.success());
    assert!(
        stderr_of(&output).contains("\"category\":\"usage\""),
        "got: {}",
        stderr_of(&output)
    );

    let dataset = dir.path().join("d.jsonl");
    let responses = dir.path().join("r.jsonl");
    write_dataset(&dataset);
    write_lines(&responses, &[r#"{"id":"q1","text":"x"}"#]);
    let output = run(&[
        "score",
        "--dataset",
        dataset.to_str().unwrap(),
        "--responses",
        responses.to_str().unwrap(),
        "--out",
        dir.path().join("s.jsonl").to_str().unwrap(),
        "--l-max",
        "0",
    ]);
    assert!(!output.status.success());
    assert!(stderr_of(&output).contains("\"category\":\"usage\""));
}

#[test]
fn snapshots_reload_as_identical_policies() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let output = run(&[
        "train",
        "--config",
        demo_config().to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--steps",
        "10",
    ]);
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));
    let path = out_dir.join("params_final.json");
    let params = deskrl::policy::PolicyParams::load(&path).unwrap();
    let copy = dir.path().join("copy.json");
    params.save(&copy).unwrap();
    let reloaded = deskrl::policy::PolicyParams::load(&copy).unwrap();
    assert_eq!(params, reloaded);
}
