//! Plain-text views of the JSON documents.

use std::io::{self, Write};

use devagents::domain::VerificationStatus;
use devagents::metrics::{BaselineRecord, Comparison, Metrics};
use devagents::pipeline::{RunManifest, RunOutcome};
use devagents::sandbox::{ExecutionResult, ExitStatus, TestOutcome};
use devagents::ArtifactStatus;

fn opt(value: Option<u64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn seconds(ms: u128) -> String {
    format!("{}.{:03} s", ms / 1000, ms % 1000)
}

pub fn status_label(status: VerificationStatus) -> &'static str {
    match status {
        VerificationStatus::FullyMet => "fully met",
        VerificationStatus::PartiallyMet => "partially met",
        VerificationStatus::NotMet => "not met",
        VerificationStatus::NotVerified => "not verified",
    }
}

pub fn run_summary(out: &mut dyn Write, manifest: &RunManifest, run_dir: &str) -> io::Result<()> {
    writeln!(out, "run_id: {}", manifest.run_id)?;
    writeln!(out, "directory: {run_dir}")?;
    let outcome = match &manifest.outcome {
        RunOutcome::InProgress => "in progress".to_string(),
        RunOutcome::Completed => "completed".to_string(),
        RunOutcome::Failed { stage, error } => format!("failed at {stage}: {error}"),
    };
    writeln!(out, "outcome: {outcome}")?;
    writeln!(out)?;
    writeln!(out, "{:<18} {:<8} {:>6} {:>7} {:>6} {:>10}", "stage", "agents", "rounds", "status", "calls", "tokens")?;
    for record in &manifest.stages {
        let status = match record.final_status {
            Some(ArtifactStatus::Final) => "final",
            Some(ArtifactStatus::Unapproved) => "unappr",
            Some(_) => "draft",
            None => "failed",
        };
        writeln!(
            out,
            "{:<18} {:<8} {:>6} {:>7} {:>6} {:>10}",
            record.stage.key(),
            format!("{}/{}", record.producer_agent, record.reviewer_agent),
            record.rounds_used,
            status,
            record.calls,
            record.usage.total()
        )?;
    }
    writeln!(
        out,
        "total: {} calls, {} prompt + {} completion tokens, {}",
        manifest.total_calls,
        manifest.total_usage.prompt_tokens,
        manifest.total_usage.completion_tokens,
        seconds(manifest.total_duration.as_millis())
    )?;
    let unapproved: Vec<&str> = manifest
        .stages
        .iter()
        .filter(|r| r.final_status == Some(ArtifactStatus::Unapproved))
        .map(|r| r.stage.key())
        .collect();
    if !unapproved.is_empty() {
        writeln!(out, "unapproved: {}", unapproved.join(", "))?;
    }
    Ok(())
}

pub fn metrics(out: &mut dyn Write, m: &Metrics) -> io::Result<()> {
    let rc = &m.requirement_counts;
    let s = &m.status_summary;
    writeln!(out, "metrics for run {}", m.run_id)?;
    writeln!(out, "  words          {}", m.total_words)?;
    writeln!(
        out,
        "  requirements   FR {}  NFR {}  PR {}  SR {}  C {}  (total {})",
        rc.functional,
        rc.non_functional,
        rc.performance,
        rc.security,
        rc.constraint,
        rc.total()
    )?;
    writeln!(out, "  lines of code  {}", m.loc)?;
    writeln!(
        out,
        "  verification   fully {}  partial {}  not verified {}  not met {}  (total {})",
        s.fully_met, s.partially_met, s.not_verified, s.not_met, s.total
    )?;
    writeln!(out, "  duration       {}", seconds(m.wall_duration.as_millis()))?;
    writeln!(
        out,
        "  tokens         prompt {}  completion {}",
        m.token_usage.prompt_tokens, m.token_usage.completion_tokens
    )
}

pub fn comparison(out: &mut dyn Write, c: &Comparison) -> io::Result<()> {
    writeln!(out, "against {}", c.experiment_id)?;
    writeln!(out, "  {:<16} {:>8} {:>9} {:>8} {:>7}", "field", "run", "baseline", "delta", "ratio")?;
    for f in &c.fields {
        writeln!(
            out,
            "  {:<16} {:>8} {:>9} {:>8} {:>7}",
            f.field,
            f.run,
            opt(f.baseline),
            f.delta.map_or_else(|| "-".to_string(), |d| format!("{d:+}")),
            f.ratio.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"))
        )?;
    }
    Ok(())
}

pub fn baseline(out: &mut dyn Write, r: &BaselineRecord) -> io::Result<()> {
    let rc = &r.requirement_counts;
    let s = &r.status_counts;
    writeln!(out, "experiment     {}", r.experiment_id)?;
    writeln!(out, "model          {}", r.model_id)?;
    writeln!(out, "prompt         {}", r.prompt)?;
    writeln!(out, "words          {}", r.words)?;
    writeln!(
        out,
        "requirements   FR {}  NFR {}  PR {}  SR {}  C {}",
        rc.functional, rc.non_functional, rc.performance, rc.security, rc.constraint
    )?;
    writeln!(
        out,
        "verification   fully {}  partial {}  not verified {}  not met {}",
        opt(s.fully_met),
        opt(s.partially_met),
        opt(s.not_verified),
        opt(s.not_met)
    )?;
    writeln!(out, "loc            {}", r.loc)?;
    match r.duration_upper_bound_secs {
        Some(secs) => writeln!(out, "duration       < {secs} s")?,
        None => writeln!(out, "duration       -")?,
    }
    writeln!(out, "ran unaided    {}", if r.ran_without_human_debugging { "yes" } else { "no" })?;
    if !r.notes.is_empty() {
        writeln!(out, "notes          {}", r.notes)?;
    }
    Ok(())
}

fn exit_text(status: ExitStatus) -> String {
    match status {
        ExitStatus::Code(code) => format!("exit {code}"),
        ExitStatus::Signalled(signal) => format!("signal {signal}"),
    }
}

pub fn execution(out: &mut dyn Write, r: &ExecutionResult) -> io::Result<()> {
    writeln!(
        out,
        "{} after {}{}",
        exit_text(r.exit_status),
        seconds(r.duration.as_millis()),
        if r.timed_out { " (timed out)" } else { "" }
    )?;
    for (name, text, truncated) in
        [("stdout", &r.stdout, r.stdout_truncated), ("stderr", &r.stderr, r.stderr_truncated)]
    {
        if text.is_empty() {
            continue;
        }
        writeln!(out, "--- {name}{}", if truncated { " (truncated)" } else { "" })?;
        write!(out, "{text}")?;
        if !text.ends_with('\n') {
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn test_outcome(out: &mut dyn Write, outcome: &TestOutcome) -> io::Result<()> {
    match outcome {
        TestOutcome::Passed { result } => {
            writeln!(out, "tests passed")?;
            execution(out, result)
        }
        TestOutcome::Failed { result, error } => {
            writeln!(out, "tests failed")?;
            if let Some(error) = error {
                writeln!(out, "{error}")?;
            }
            match result {
                Some(result) => execution(out, result),
                None => Ok(()),
            }
        }
        TestOutcome::Skipped { reason } => writeln!(out, "tests skipped: {reason}"),
    }
}
