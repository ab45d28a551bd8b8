//! Input builders shared by the benches.

use devagents::llm::MockScript;
use devagents::{RoleKind, Stage, StageArtifact};

/// `words` whitespace-separated tokens over `words / 12` lines.
pub fn document(words: usize) -> String {
    let mut out = String::with_capacity(words * 7);
    for i in 0..words {
        out.push_str(["snake", "grid", "food", "tick", "score", "wall"][i % 6]);
        out.push(if i % 12 == 11 { '\n' } else { ' ' });
    }
    out
}

/// A requirements document with `n` requirements across all categories,
/// interleaved with prose lines the parser must skip.
pub fn requirements_document(n: usize) -> String {
    let prefixes = ["FR", "NFR", "PR", "SR", "C"];
    let mut out = String::from("# Requirements\n\nThe list below was reviewed.\n");
    for i in 0..n {
        let prefix = prefixes[i % prefixes.len()];
        out.push_str(&format!("{prefix}-{}: The game handles case {i} within one tick.\n", i / prefixes.len() + 1));
        if i % 4 == 0 {
            out.push_str("Note: see design.\n");
        }
    }
    out
}

/// Finals for the first `stages` stages, each `words` tokens long.
pub fn upstream(stages: usize, words: usize) -> Vec<StageArtifact> {
    Stage::ALL.iter().take(stages).map(|s| StageArtifact::draft(*s, document(words), Vec::new())).collect()
}

/// A producer reply carrying `files` file fences and an artifact block.
pub fn reply_with_files(files: usize, lines: usize) -> String {
    let mut out = String::from("Here is the code.\n\n");
    for f in 0..files {
        out.push_str(&format!("```file:pkg/module_{f}.py\n"));
        for l in 0..lines {
            out.push_str(&format!("value_{l} = compute({l})  # step {l}\n"));
        }
        out.push_str("```\n\n");
    }
    out.push_str("```artifact\nRun with python3 pkg/module_0.py\n```\n");
    out
}

/// Every producer drafts once and every reviewer approves.
pub fn approve_all_script(words: usize) -> MockScript {
    let mut script = MockScript::new().with_default("VERDICT: APPROVE");
    for stage in Stage::ALL {
        script.insert(stage, RoleKind::Producer, 0, format!("```artifact\n{}\n```", document(words)));
    }
    script
}
