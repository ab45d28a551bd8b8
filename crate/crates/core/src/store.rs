//! On-disk run layout.
//!
//! ```text
//! <root>/run-<id>/
//!   manifest.json  metrics.json  ledger.json
//!   01-project-plan/  draft-0  review-1  draft-1  review-2  final
//!   02-requirements/  ...
//!   03-design/
//!   04-development/   ...  src/<attachments>
//!   05-testing/       ...  src/<attachments>  execution.json  test-run.json
//!   06-deployment/
//! ```
//!
//! Every file is written to a dot-prefixed temporary beside its target and
//! renamed into place. A `.lock` file marks the single writer of a run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{is_safe_relative_path, ArtifactStatus, Attachment, Stage, StageArtifact, VerificationLedger};
use crate::pipeline::{RunConfig, RunManifest};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LEDGER_FILE: &str = "ledger.json";
pub const LOCK_FILE: &str = ".lock";
pub const EXECUTION_FILE: &str = "execution.json";
pub const TEST_RUN_FILE: &str = "test-run.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run `{0}` already exists")]
    RunAlreadyExists(String),
    #[error("run `{0}` not found")]
    RunNotFound(String),
    #[error("invalid run id `{0}`: use letters, digits, `.`, `_` and `-`")]
    InvalidRunId(String),
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("corrupt document {path}: {reason}")]
    CorruptDocument { path: PathBuf, reason: String },
    #[error("attachment path `{0}` escapes the run directory")]
    PathEscape(String),
    #[error("run `{0}` is locked by another writer")]
    Locked(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Simulated crash for atomicity tests: the `nth` atomic write (1-based)
/// leaves half its bytes in the temporary file and fails before renaming.
#[derive(Debug)]
pub struct WriteFault {
    nth: usize,
    seen: AtomicUsize,
}

impl WriteFault {
    pub fn crash_on_write(nth: usize) -> Arc<Self> {
        Arc::new(Self { nth, seen: AtomicUsize::new(0) })
    }

    fn triggers(&self) -> bool {
        self.seen.fetch_add(1, Ordering::SeqCst) + 1 == self.nth
    }
}

#[derive(Debug, Clone)]
pub struct WorkspaceLayout {
    root: PathBuf,
    run_id: String,
    run_dir: PathBuf,
    fault: Option<Arc<WriteFault>>,
}

impl WorkspaceLayout {
    fn new(root: &Path, run_id: &str) -> Result<Self, StoreError> {
        let valid = !run_id.is_empty()
            && run_id != "."
            && run_id != ".."
            && run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
        if !valid {
            return Err(StoreError::InvalidRunId(run_id.to_string()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            run_id: run_id.to_string(),
            run_dir: root.join(format!("run-{run_id}")),
            fault: None,
        })
    }

    /// Layout of an existing run.
    pub fn open(root: &Path, run_id: &str) -> Result<Self, StoreError> {
        let layout = Self::new(root, run_id)?;
        if !layout.run_dir.is_dir() {
            return Err(StoreError::RunNotFound(run_id.to_string()));
        }
        Ok(layout)
    }

    pub fn with_fault(mut self, fault: Arc<WriteFault>) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir.join(stage.dir_name())
    }

    pub fn src_dir(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("src")
    }

    pub fn draft_path(&self, stage: Stage, round: u32) -> PathBuf {
        self.stage_dir(stage).join(format!("draft-{round}"))
    }

    pub fn review_path(&self, stage: Stage, round: u32) -> PathBuf {
        self.stage_dir(stage).join(format!("review-{round}"))
    }

    pub fn final_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("final")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.run_dir.join(MANIFEST_FILE)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join(METRICS_FILE)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.run_dir.join(LEDGER_FILE)
    }

    pub fn execution_path(&self) -> PathBuf {
        self.stage_dir(Stage::Testing).join(EXECUTION_FILE)
    }

    pub fn test_run_path(&self) -> PathBuf {
        self.stage_dir(Stage::Testing).join(TEST_RUN_FILE)
    }

    /// Run-relative path with `/` separators, as recorded in manifests.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.run_dir)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Writes `bytes` to `path` through a temporary file and a rename.
    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let parent = path.parent().expect("run paths have a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let name = path.file_name().expect("run paths have a file name").to_string_lossy();
        let tmp = parent.join(format!(".{name}.tmp"));
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        if self.fault.as_ref().is_some_and(|f| f.triggers()) {
            file.write_all(&bytes[..bytes.len() / 2]).map_err(io_err(&tmp))?;
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other("injected crash before rename"),
            });
        }
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        drop(file);
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        self.write_atomic(path, to_pretty_json(value).as_bytes())
    }
}

/// Pretty JSON with a trailing newline; field order follows the struct.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
    text.push('\n');
    text
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| StoreError::CorruptDocument { path: path.to_path_buf(), reason: e.to_string() })
}

/// Exclusive writer guard; the lock file is removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(layout: &WorkspaceLayout) -> Result<Self, StoreError> {
        let path = layout.run_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StoreError::Locked(layout.run_id.clone())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Creates `run-<run_id>` with its six stage directories and a manifest
/// stub holding the config snapshot.
pub fn init_run(root: &Path, run_id: &str, config: &RunConfig) -> Result<WorkspaceLayout, StoreError> {
    let layout = WorkspaceLayout::new(root, run_id)?;
    if !root.is_dir() {
        return Err(StoreError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "workspace root does not exist"),
        });
    }
    match fs::create_dir(&layout.run_dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(StoreError::RunAlreadyExists(run_id.to_string()))
        }
        Err(e) => return Err(io_err(&layout.run_dir)(e)),
    }
    for stage in Stage::ALL {
        let dir = layout.stage_dir(stage);
        fs::create_dir(&dir).map_err(io_err(&dir))?;
    }
    persist_manifest(&layout, &RunManifest::stub(run_id, config))?;
    Ok(layout)
}

/// Writes an artifact. Drafts go to `draft-<round>`; a Final or Unapproved
/// artifact goes to `final` and its attachments replace the stage's `src/`.
pub fn persist_artifact(layout: &WorkspaceLayout, artifact: &StageArtifact) -> Result<(), StoreError> {
    for attachment in &artifact.attachments {
        if !is_safe_relative_path(&attachment.path) {
            return Err(StoreError::PathEscape(attachment.path.clone()));
        }
    }
    if !artifact.status.is_terminal() {
        return layout.write_atomic(&layout.draft_path(artifact.stage, artifact.round), artifact.body.as_bytes());
    }
    let src = layout.src_dir(artifact.stage);
    if src.exists() {
        fs::remove_dir_all(&src).map_err(io_err(&src))?;
    }
    for attachment in &artifact.attachments {
        let target = src.join(&attachment.path);
        if !target.starts_with(&src) {
            return Err(StoreError::PathEscape(attachment.path.clone()));
        }
        layout.write_atomic(&target, attachment.content.as_bytes())?;
    }
    layout.write_atomic(&layout.final_path(artifact.stage), artifact.body.as_bytes())
}

pub fn persist_review(layout: &WorkspaceLayout, stage: Stage, round: u32, raw: &str) -> Result<(), StoreError> {
    layout.write_atomic(&layout.review_path(stage, round), raw.as_bytes())
}

pub fn persist_manifest(layout: &WorkspaceLayout, manifest: &RunManifest) -> Result<(), StoreError> {
    layout.write_json(&layout.manifest_path(), manifest)
}

pub fn read_manifest(layout: &WorkspaceLayout) -> Result<RunManifest, StoreError> {
    let path = layout.manifest_path();
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => StoreError::CorruptManifest("manifest.json is missing".into()),
        _ => io_err(&path)(e),
    })?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| StoreError::CorruptManifest(e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(StoreError::CorruptManifest(format!("unsupported schema_version {}", manifest.schema_version)));
    }
    if manifest.run_id != layout.run_id {
        return Err(StoreError::CorruptManifest(format!(
            "manifest run_id `{}` does not match directory `{}`",
            manifest.run_id, layout.run_id
        )));
    }
    Ok(manifest)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LedgerDocument {
    schema_version: u32,
    #[serde(flatten)]
    ledger: VerificationLedger,
}

/// Reads `ledger.json`; a run without one has an empty ledger.
pub fn read_ledger(layout: &WorkspaceLayout) -> Result<VerificationLedger, StoreError> {
    let path = layout.ledger_path();
    if !path.exists() {
        return Ok(VerificationLedger::new());
    }
    let doc: LedgerDocument = read_json(&path)?;
    Ok(doc.ledger)
}

pub fn write_ledger(layout: &WorkspaceLayout, ledger: &VerificationLedger) -> Result<(), StoreError> {
    let doc = LedgerDocument { schema_version: SCHEMA_VERSION, ledger: ledger.clone() };
    layout.write_json(&layout.ledger_path(), &doc)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedStage {
    pub stage: Stage,
    /// Draft bodies ordered by round. Attachments live only with the final.
    pub drafts: Vec<StageArtifact>,
    /// Raw reviewer replies ordered by round.
    pub reviews: Vec<(u32, String)>,
    pub final_artifact: Option<StageArtifact>,
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub layout: WorkspaceLayout,
    pub manifest: RunManifest,
    pub stages: Vec<LoadedStage>,
}

impl LoadedRun {
    pub fn stage(&self, stage: Stage) -> &LoadedStage {
        &self.stages[usize::from(stage.ordinal() - 1)]
    }

    pub fn final_artifact(&self, stage: Stage) -> Option<&StageArtifact> {
        self.stage(stage).final_artifact.as_ref()
    }

    pub fn finals(&self) -> Vec<&StageArtifact> {
        self.stages.iter().filter_map(|s| s.final_artifact.as_ref()).collect()
    }
}

fn round_files(dir: &Path, prefix: &str) -> Result<Vec<(u32, PathBuf)>, StoreError> {
    let mut found = Vec::new();
    if !dir.is_dir() {
        return Ok(found);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(round) = name.strip_prefix(prefix).and_then(|r| r.parse::<u32>().ok()) {
            found.push((round, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Reconstructs a run from disk. Finals take their status, round and
/// attachment list from the manifest.
pub fn load_run(root: &Path, run_id: &str) -> Result<LoadedRun, StoreError> {
    let layout = WorkspaceLayout::open(root, run_id)?;
    let manifest = read_manifest(&layout)?;
    let mut stages = Vec::with_capacity(Stage::ALL.len());
    for stage in Stage::ALL {
        let dir = layout.stage_dir(stage);
        let drafts = round_files(&dir, "draft-")?
            .into_iter()
            .map(|(round, path)| {
                Ok(StageArtifact {
                    stage,
                    body: read_text(&path)?,
                    attachments: Vec::new(),
                    round,
                    status: if round == 0 { ArtifactStatus::Draft } else { ArtifactStatus::Revised },
                })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        let reviews = round_files(&dir, "review-")?
            .into_iter()
            .map(|(round, path)| Ok((round, read_text(&path)?)))
            .collect::<Result<Vec<_>, StoreError>>()?;

        let record = manifest.stages.iter().find(|r| r.stage == stage);
        let final_artifact = match record.and_then(|r| r.final_status.map(|s| (r, s))) {
            Some((record, status)) => {
                let mut attachments = Vec::with_capacity(record.attachments.len());
                for rel in &record.attachments {
                    if !is_safe_relative_path(rel) {
                        return Err(StoreError::PathEscape(rel.clone()));
                    }
                    let content = read_text(&layout.src_dir(stage).join(rel))?;
                    attachments.push(Attachment::new(rel.clone(), content));
                }
                Some(StageArtifact {
                    stage,
                    body: read_text(&layout.final_path(stage))?,
                    attachments,
                    round: record.final_round,
                    status,
                })
            }
            None => None,
        };
        stages.push(LoadedStage { stage, drafts, reviews, final_artifact });
    }
    Ok(LoadedRun { layout, manifest, stages })
}
