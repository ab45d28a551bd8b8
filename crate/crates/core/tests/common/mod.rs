#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use devagents::llm::{ManualClock, MockBackend, MockScript};
use devagents::pipeline::{run_pipeline, RunConfig, RunManifest};
use devagents::TemplateCatalog;

pub const PROMPT: &str = "Develop a snakegame";
pub const GOLDEN_RUN_ID: &str = "golden";
/// Script path as recorded in the golden manifest.
pub const SCRIPT_REF: &str = "fixtures/full.script";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn full_script() -> MockScript {
    MockScript::load(&fixtures().join("full.script")).expect("bundled script")
}

pub fn golden_clock() -> ManualClock {
    ManualClock::stepping(Duration::from_secs(1_700_000_000), Duration::from_millis(250))
}

pub fn golden_config() -> RunConfig {
    RunConfig::mock(PROMPT, SCRIPT_REF)
}

/// Runs the full mock script exactly the way the golden fixture was made.
pub fn golden_run(root: &Path) -> RunManifest {
    let backend = MockBackend::new(full_script());
    let clock = golden_clock();
    let catalog = TemplateCatalog::defaults();
    run_pipeline(&golden_config(), &backend, &clock, &catalog, root, GOLDEN_RUN_ID).expect("golden run")
}

/// Every file under `dir`, keyed by its `/`-joined relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(base, &path, out);
        } else {
            let rel = path
                .strip_prefix(base)
                .unwrap()
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}

/// Every directory under `dir` (relative, `/`-joined).
pub fn directories(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.push(path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
                stack.push(path);
            }
        }
    }
    out.sort();
    out
}

/// Copies the committed golden run under a fresh root.
pub fn golden_copy(root: &Path) {
    let from = fixtures().join("golden").join(format!("run-{GOLDEN_RUN_ID}"));
    let to = root.join(format!("run-{GOLDEN_RUN_ID}"));
    for (rel, bytes) in snapshot(&from) {
        let path = to.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, bytes).unwrap();
    }
}
