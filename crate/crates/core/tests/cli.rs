//! End-to-end tests that drive the compiled `middo` binary the way a user
//! would: real processes, real run directories, real exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn middo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_middo"))
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is utf-8")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is utf-8")
}

fn code_of(output: &Output) -> i32 {
    output.status.code().expect("process was not killed by a signal")
}

/// Twenty varied instruction records as a JSON array, the shape `ingest`
/// accepts from `.json` inputs.
fn write_seed_json(dir: &Path) -> PathBuf {
    let mut rows = Vec::new();
    for i in 0..20 {
        let input = if i % 5 == 0 {
            format!("Region {}", i % 4)
        } else {
            String::new()
        };
        rows.push(serde_json::json!({
            "instruction": format!("Describe landmark number {i} and why travelers visit it."),
            "input": input,
            "output": format!(
                "Landmark {i} is notable for its history and draws visitors for {} main reasons.",
                i % 3 + 1
            ),
        }));
    }
    let path = dir.join("seed.json");
    fs::write(&path, serde_json::to_string_pretty(&rows).unwrap()).unwrap();
    path
}

/// Every file under `root`, keyed by its relative path.
fn file_map(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                map.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    map
}

#[test]
fn help_matches_the_golden_transcript() {
    let output = middo().arg("--help").output().unwrap();
    assert_eq!(code_of(&output), 0);
    assert_eq!(stdout_of(&output), include_str!("golden/help.txt"));
}

#[test]
fn version_reports_the_package_version() {
    let output = middo().arg("--version").output().unwrap();
    assert_eq!(code_of(&output), 0);
    assert!(stdout_of(&output).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_problems_exit_with_code_two() {
    let unknown_command = middo().arg("frobnicate").output().unwrap();
    assert_eq!(code_of(&unknown_command), 2);

    let unknown_flag = middo().args(["loop", "--run-dir", "x", "--zeal"]).output().unwrap();
    assert_eq!(code_of(&unknown_flag), 2);

    let missing_required = middo().arg("loop").output().unwrap();
    assert_eq!(code_of(&missing_required), 2);
    assert!(stderr_of(&missing_required).contains("--run-dir"));
}

#[test]
fn an_empty_run_dir_without_input_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    fs::create_dir(&run_dir).unwrap();
    let output = middo()
        .args(["loop", "--mock", "--run-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 2);
    assert!(stderr_of(&output).contains("pass --input or run ingest first"));
}

#[test]
fn ingest_canonicalizes_and_is_a_fixpoint() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let first = tmp.path().join("first.jsonl");
    let second = tmp.path().join("second.jsonl");

    let output = middo()
        .args(["ingest", "--input"])
        .arg(&seed)
        .arg("--output")
        .arg(&first)
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("ingested 20 samples"));

    let text = fs::read_to_string(&first).unwrap();
    assert_eq!(text.lines().count(), 21, "header line plus one row per sample");
    assert!(text.lines().next().unwrap().contains("_middo_dataset"));

    let again = middo()
        .args(["ingest", "--input"])
        .arg(&first)
        .arg("--output")
        .arg(&second)
        .output()
        .unwrap();
    assert_eq!(code_of(&again), 0);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn a_mock_loop_is_reproducible_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run_dir = tmp.path().join(name);
        let output = middo()
            .args(["loop", "--mock", "--iterations", "2", "--input"])
            .arg(&seed)
            .arg("--run-dir")
            .arg(&run_dir)
            .output()
            .unwrap();
        assert_eq!(code_of(&output), 0, "stderr: {}", stderr_of(&output));
        outputs.push(output);
    }
    assert_eq!(stdout_of(&outputs[0]), stdout_of(&outputs[1]));

    let a = file_map(&tmp.path().join("a"));
    let b = file_map(&tmp.path().join("b"));
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "both runs produced the same artifact tree"
    );
    for (path, bytes) in &a {
        assert_eq!(Some(bytes), b.get(path), "{} differs between runs", path.display());
    }
    assert!(a.contains_key(Path::new("iter2/manifest.json")));
}

#[test]
fn staged_commands_match_a_composed_iteration() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let staged = tmp.path().join("staged");
    let composed = tmp.path().join("composed");

    let ingest = middo()
        .args(["ingest", "--input"])
        .arg(&seed)
        .arg("--output")
        .arg(staged.join("iter0/dataset.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code_of(&ingest), 0, "stderr: {}", stderr_of(&ingest));

    for stage in ["signals", "select", "refine"] {
        let output = middo()
            .args([stage, "--mock", "--iteration", "1", "--run-dir"])
            .arg(&staged)
            .output()
            .unwrap();
        assert_eq!(code_of(&output), 0, "{stage} stderr: {}", stderr_of(&output));
        assert!(stdout_of(&output).starts_with("iter1:"));
    }

    let iterate = middo()
        .args(["iterate", "--mock", "--input"])
        .arg(&seed)
        .arg("--run-dir")
        .arg(&composed)
        .output()
        .unwrap();
    assert_eq!(code_of(&iterate), 0, "stderr: {}", stderr_of(&iterate));

    for rel in ["iter1/manifest.json", "iter1/dataset.jsonl", "iter1/selection.json"] {
        assert_eq!(
            fs::read(staged.join(rel)).unwrap(),
            fs::read(composed.join(rel)).unwrap(),
            "{rel} differs between staged and composed runs"
        );
    }
}

#[test]
fn offline_mode_without_paths_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        "[run]\nmode = \"offline\"\n\n[signals]\nloss = \"file\"\nembeddings = \"file\"\nquality = \"file\"\n",
    )
    .unwrap();
    let output = middo()
        .args(["iterate", "--mock", "--config"])
        .arg(&config)
        .arg("--run-dir")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("signals.loss_path"), "stderr: {stderr}");
}

#[test]
fn a_missing_signal_file_is_a_signal_error() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        concat!(
            "[run]\nmode = \"offline\"\niterations = 1\n\n",
            "[signals]\nloss = \"file\"\nembeddings = \"file\"\nquality = \"file\"\n",
            "loss_path = \"missing/loss.jsonl\"\n",
            "embeddings_path = \"missing/embeddings.jsonl\"\n",
            "quality_path = \"missing/quality.jsonl\"\n",
        ),
    )
    .unwrap();
    let output = middo()
        .args(["iterate", "--mock", "--config"])
        .arg(&config)
        .arg("--run-dir")
        .arg(tmp.path().join("run"))
        .arg("--input")
        .arg(&seed)
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 3, "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("does not exist"));
}

#[test]
fn a_failing_trainer_is_a_trainer_error() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        "[trainer]\ncommand = \"echo training {dataset_in} {signals_out}; exit 7\"\n",
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    let output = middo()
        .args(["loop", "--mock", "--iterations", "1", "--config"])
        .arg(&config)
        .arg("--run-dir")
        .arg(&run_dir)
        .arg("--input")
        .arg(&seed)
        .output()
        .unwrap();
    assert_eq!(code_of(&output), 4, "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("trainer"));
    let log = fs::read_to_string(run_dir.join("trainer.log")).unwrap();
    assert!(log.contains("training"));
}

#[test]
fn report_summarizes_a_finished_run() {
    let tmp = TempDir::new().unwrap();
    let seed = write_seed_json(tmp.path());
    let run_dir = tmp.path().join("run");
    let looped = middo()
        .args(["loop", "--mock", "--iterations", "2", "--input"])
        .arg(&seed)
        .arg("--run-dir")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert_eq!(code_of(&looped), 0, "stderr: {}", stderr_of(&looped));

    let output = middo().args(["report", "--run-dir"]).arg(&run_dir).output().unwrap();
    assert_eq!(code_of(&output), 0, "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("report over 2 iterations"));

    let report_dir = run_dir.join("report");
    for name in [
        "loss_before.csv",
        "loss_after.csv",
        "quality_density.csv",
        "selection_table.csv",
        "projection.csv",
        "report.json",
    ] {
        assert!(report_dir.join(name).is_file(), "{name} is missing");
    }

    let table = fs::read_to_string(report_dir.join("selection_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5, "header, init row, two iteration rows, footnote");
    assert!(lines[0].starts_with("label,"));
    assert!(lines[1].starts_with("\"init"));
    assert!(lines[4].starts_with("# "));

    let projection = fs::read_to_string(report_dir.join("projection.csv")).unwrap();
    assert_eq!(projection.lines().next(), Some("id,x,y,flag"));
    assert!(projection.lines().count() > 20);

    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert!(parsed.get("loss").is_some());
    assert!(parsed.get("densities").is_some());
    assert!(parsed.get("table").is_some());
}

#[test]
fn report_on_an_empty_run_dir_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let output = middo().args(["report", "--run-dir"]).arg(tmp.path()).output().unwrap();
    assert_eq!(code_of(&output), 1);
    assert!(stderr_of(&output).contains("no completed iterations"));
}
