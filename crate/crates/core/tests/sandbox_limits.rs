mod common;

use std::fs;
use std::time::Duration;

use common::*;
use devagents::sandbox::{execute, run_command, run_tests, ExecutionLimits, ExitStatus, SandboxError, TestOutcome};
use devagents::store::WorkspaceLayout;

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

fn cmd(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

#[test]
fn sleeping_child_is_killed_at_the_timeout() {
    let tmp = tempfile::tempdir().unwrap();
    let limits = ExecutionLimits { timeout: Duration::from_secs(1), ..Default::default() };
    let result = run_command(tmp.path(), &cmd(&["sleep", "10"]), limits).unwrap();
    assert!(result.timed_out);
    assert!(result.duration >= Duration::from_secs(1));
    assert!(result.duration <= Duration::from_millis(1500), "{:?}", result.duration);
    assert!(!result.success());
}

#[test]
fn chatty_child_is_capped_at_one_mebibyte() {
    let tmp = tempfile::tempdir().unwrap();
    let limits = ExecutionLimits::default();
    assert_eq!(limits.max_captured_bytes, 1 << 20);
    let result = run_command(
        tmp.path(),
        &sh("head -c 10485760 /dev/zero | tr '\\0' 'y'; head -c 3000000 /dev/zero | tr '\\0' 'z' >&2"),
        limits,
    )
    .unwrap();
    assert_eq!(result.exit_status, ExitStatus::Code(0));
    assert!(result.stdout.len() <= 1 << 20);
    assert!(result.stderr.len() <= 1 << 20);
    assert!(result.stdout_truncated && result.stderr_truncated);
}

#[test]
fn execute_runs_in_the_bundle_and_records_evidence() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path());
    let layout = WorkspaceLayout::open(tmp.path(), GOLDEN_RUN_ID).unwrap();
    let result = execute(&layout, &sh("ls; printf ok"), ExecutionLimits::default()).unwrap();
    assert_eq!(result.stdout, "snake_game.py\ntest_snake_game.py\nok");
    assert!(!result.timed_out);
    let stored = fs::read_to_string(layout.execution_path()).unwrap();
    assert!(stored.contains("\"timed_out\": false"));

    let err = execute(&layout, &cmd(&["no-such-interpreter-here"]), ExecutionLimits::default()).unwrap_err();
    assert!(matches!(err, SandboxError::SpawnError { .. }));
}

#[test]
fn generated_game_runs_headless() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path());
    let layout = WorkspaceLayout::open(tmp.path(), GOLDEN_RUN_ID).unwrap();
    let result =
        execute(&layout, &cmd(&["python3", "-B", "snake_game.py", "--headless", "20"]), ExecutionLimits::default())
            .unwrap();
    assert_eq!(result.exit_status, ExitStatus::Code(0), "{}", result.stderr);
    assert!(result.stdout.starts_with("ticks=20 "));

    let outcome =
        run_tests(&layout, Some(&cmd(&["python3", "-B", "-m", "unittest"])), ExecutionLimits::default()).unwrap();
    assert!(matches!(outcome, TestOutcome::Passed { .. }), "{outcome:?}");
}

#[test]
fn test_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path());
    let layout = WorkspaceLayout::open(tmp.path(), GOLDEN_RUN_ID).unwrap();
    let limits = ExecutionLimits::default();

    let skipped = run_tests(&layout, None, limits).unwrap();
    assert!(matches!(skipped, TestOutcome::Skipped { .. }));

    assert!(matches!(run_tests(&layout, Some(&sh("exit 0")), limits).unwrap(), TestOutcome::Passed { .. }));

    match run_tests(&layout, Some(&sh("echo 'AssertionError: boom' >&2; exit 1")), limits).unwrap() {
        TestOutcome::Failed { result: Some(result), .. } => {
            assert_eq!(result.exit_status, ExitStatus::Code(1));
            assert_eq!(result.stderr, "AssertionError: boom\n");
        }
        other => panic!("{other:?}"),
    }
    let stored = fs::read_to_string(layout.test_run_path()).unwrap();
    assert!(stored.contains("\"outcome\": \"failed\""));

    // A bundle without any test files is skipped even with a command.
    fs::remove_dir_all(layout.src_dir(devagents::Stage::Testing)).unwrap();
    fs::remove_file(layout.src_dir(devagents::Stage::Development).join("test_snake_game.py")).unwrap();
    let outcome = run_tests(&layout, Some(&sh("exit 0")), limits).unwrap();
    assert!(matches!(outcome, TestOutcome::Skipped { .. }));
}

#[test]
fn no_writes_outside_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    golden_copy(tmp.path());
    fs::write(tmp.path().join("sibling.txt"), "untouched").unwrap();
    let layout = WorkspaceLayout::open(tmp.path(), GOLDEN_RUN_ID).unwrap();
    let before: Vec<String> = snapshot(tmp.path()).into_keys().filter(|k| !k.starts_with("run-")).collect();
    execute(&layout, &sh("echo scratch > scratch.txt"), ExecutionLimits::default()).unwrap();
    let after: Vec<String> = snapshot(tmp.path()).into_keys().filter(|k| !k.starts_with("run-")).collect();
    assert_eq!(before, after);
    assert!(layout.src_dir(devagents::Stage::Development).join("scratch.txt").exists());
}
