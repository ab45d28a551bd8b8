//! Six-stage producer/reviewer run.
//!
//! Each stage drafts, is reviewed, and is revised until the reviewer
//! approves or the round budget runs out. Stages run strictly in
//! [`Stage::ALL`] order and each final artifact becomes upstream context for
//! every later stage. An unapproved artifact does not stop the run.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    assemble_prompt, extract_artifact, extract_verdict, AgentError, ContextBudget, Decision, ReviewVerdict,
    TemplateCatalog,
};
use crate::domain::{AgentRole, ArtifactStatus, Stage, StageArtifact};
use crate::llm::{
    complete, duration_ms, CallTag, ChatBackend, Clock, CompletionRequest, LlmError, RetryPolicy, TokenUsage,
    DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::store::{self, RunLock, StoreError, WorkspaceLayout, WriteFault, SCHEMA_VERSION};

pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_MAX_REVIEW_ROUNDS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSelector {
    /// OpenAI-compatible HTTP endpoint. The credential is never recorded.
    Live {
        base_url: String,
    },
    Mock {
        script: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub project_prompt: String,
    pub model_id: String,
    pub max_review_rounds: u32,
    pub context_budget: ContextBudget,
    pub backend: BackendSelector,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retry: RetryPolicy,
}

impl RunConfig {
    pub fn new(project_prompt: impl Into<String>, backend: BackendSelector) -> Self {
        Self {
            project_prompt: project_prompt.into(),
            model_id: DEFAULT_MODEL.to_string(),
            max_review_rounds: DEFAULT_MAX_REVIEW_ROUNDS,
            context_budget: ContextBudget::DEFAULT,
            backend,
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            retry: RetryPolicy::default(),
        }
    }

    pub fn mock(project_prompt: impl Into<String>, script: impl Into<PathBuf>) -> Self {
        Self::new(project_prompt, BackendSelector::Mock { script: script.into() })
    }

    pub fn with_max_review_rounds(mut self, rounds: u32) -> Self {
        self.max_review_rounds = rounds;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.project_prompt.trim().is_empty() {
            return Err(PipelineError::InvalidConfig("project prompt is empty".into()));
        }
        if self.max_review_rounds < 1 {
            return Err(PipelineError::InvalidConfig("max_review_rounds must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(PipelineError::InvalidConfig("model id is empty".into()));
        }
        Ok(())
    }

    /// Upper bound on completion calls for a whole run.
    pub fn max_calls(&self) -> u64 {
        let rounds = u64::from(self.max_review_rounds);
        Stage::ALL.len() as u64 * (1 + 2 * (rounds - 1) + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub stage: Stage,
    pub round: u32,
    pub verdict: ReviewVerdict,
    /// Run-relative path of the raw reviewer reply.
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub producer_agent: u8,
    pub reviewer_agent: u8,
    /// `None` when the stage failed before producing a final artifact.
    pub final_status: Option<ArtifactStatus>,
    pub final_round: u32,
    pub rounds_used: u32,
    /// Attachment paths of the final artifact, relative to the stage `src/`.
    pub attachments: Vec<String>,
    pub fallback_used: bool,
    pub reviews: Vec<ReviewReport>,
    pub calls: u32,
    pub usage: TokenUsage,
    #[serde(with = "duration_ms", rename = "duration_ms")]
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunOutcome {
    InProgress,
    Completed,
    Failed { stage: Stage, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub prompt: String,
    pub started_at_ms: u64,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub total_calls: u32,
    pub total_usage: TokenUsage,
    #[serde(with = "duration_ms", rename = "total_duration_ms")]
    pub total_duration: Duration,
    pub outcome: RunOutcome,
}

impl RunManifest {
    pub fn stub(run_id: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: run_id.to_string(),
            prompt: config.project_prompt.clone(),
            started_at_ms: 0,
            config: config.clone(),
            stages: Vec::new(),
            total_calls: 0,
            total_usage: TokenUsage::default(),
            total_duration: Duration::ZERO,
            outcome: RunOutcome::InProgress,
        }
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn push(&mut self, record: StageRecord) {
        self.total_calls += record.calls;
        self.total_usage += record.usage;
        self.stages.push(record);
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Extraction(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Receives intermediate drafts and raw reviews as a stage progresses.
pub trait StageSink {
    fn draft(&mut self, artifact: &StageArtifact) -> Result<(), StoreError>;
    fn review(&mut self, stage: Stage, round: u32, raw: &str) -> Result<(), StoreError>;
}

/// Sink that keeps nothing.
pub struct Discard;

impl StageSink for Discard {
    fn draft(&mut self, _: &StageArtifact) -> Result<(), StoreError> {
        Ok(())
    }

    fn review(&mut self, _: Stage, _: u32, _: &str) -> Result<(), StoreError> {
        Ok(())
    }
}

impl StageSink for WorkspaceLayout {
    fn draft(&mut self, artifact: &StageArtifact) -> Result<(), StoreError> {
        store::persist_artifact(self, artifact)
    }

    fn review(&mut self, stage: Stage, round: u32, raw: &str) -> Result<(), StoreError> {
        store::persist_review(self, stage, round, raw)
    }
}

/// Calls, usage and reviews accumulated by a stage, kept even when the stage
/// fails part-way.
#[derive(Debug, Clone, Default)]
pub struct StageProgress {
    pub calls: u32,
    pub usage: TokenUsage,
    pub reports: Vec<ReviewReport>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub artifact: StageArtifact,
    pub reports: Vec<ReviewReport>,
    pub rounds_used: u32,
    pub usage: TokenUsage,
    pub calls: u32,
    pub duration: Duration,
    pub fallback_used: bool,
}

/// Shared collaborators for one or more runs. Holds no per-run state.
pub struct Orchestrator<'a> {
    backend: &'a dyn ChatBackend,
    clock: &'a dyn Clock,
    catalog: &'a TemplateCatalog,
    fault: Option<Arc<WriteFault>>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, clock: &'a dyn Clock, catalog: &'a TemplateCatalog) -> Self {
        Self { backend, clock, catalog, fault: None }
    }

    /// Simulates a crash on one of the run's writes after the skeleton exists.
    pub fn with_write_fault(mut self, fault: Arc<WriteFault>) -> Self {
        self.fault = Some(fault);
        self
    }

    #[allow(clippy::too_many_arguments)]
    fn call(
        &self,
        config: &RunConfig,
        role: AgentRole,
        round: u32,
        upstream: &[StageArtifact],
        draft: Option<&StageArtifact>,
        findings: Option<&[String]>,
        progress: &mut StageProgress,
    ) -> Result<String, StageError> {
        let messages = assemble_prompt(
            self.catalog,
            role,
            &config.project_prompt,
            upstream,
            draft,
            findings,
            config.context_budget,
        )?;
        let request = CompletionRequest {
            model_id: config.model_id.clone(),
            messages,
            temperature: config.temperature,
            max_output_tokens: config.max_output_tokens,
            tag: Some(CallTag { stage: role.stage, kind: role.kind, round }),
        };
        progress.calls += 1;
        let response = complete(&request, self.backend, &config.retry, self.clock)?;
        progress.usage += response.usage;
        Ok(response.content)
    }

    fn produce(
        &self,
        config: &RunConfig,
        stage: Stage,
        round: u32,
        upstream: &[StageArtifact],
        previous: Option<(&StageArtifact, &[String])>,
        progress: &mut StageProgress,
    ) -> Result<StageArtifact, StageError> {
        let role = AgentRole::producer(stage);
        let raw =
            self.call(config, role, round, upstream, previous.map(|(d, _)| d), previous.map(|(_, f)| f), progress)?;
        let extracted = extract_artifact(role, &raw)?;
        progress.fallback_used = extracted.fallback_used;
        Ok(StageArtifact {
            stage,
            body: extracted.body,
            attachments: extracted.attachments,
            round,
            status: if round == 0 { ArtifactStatus::Draft } else { ArtifactStatus::Revised },
        })
    }

    /// Review, then revise on REVISE, until approval or `max_rounds`
    /// reviews. Returns the last draft marked Final or Unapproved and the
    /// number of review rounds used.
    pub fn review_loop(
        &self,
        config: &RunConfig,
        draft: StageArtifact,
        upstream: &[StageArtifact],
        max_rounds: u32,
        sink: &mut dyn StageSink,
        progress: &mut StageProgress,
    ) -> Result<(StageArtifact, u32), StageError> {
        let stage = draft.stage;
        let max_rounds = max_rounds.max(1);
        let mut current = draft;
        for round in 1..=max_rounds {
            let raw = self.call(config, AgentRole::reviewer(stage), round, upstream, Some(&current), None, progress)?;
            sink.review(stage, round, &raw)?;
            let verdict = extract_verdict(&raw)?;
            let decision = verdict.decision;
            let findings = verdict.findings.clone();
            progress.reports.push(ReviewReport {
                stage,
                round,
                verdict,
                raw_reply: format!("{}/review-{round}", stage.dir_name()),
            });
            if decision == Decision::Approve {
                return Ok((current.with_status(ArtifactStatus::Final), round));
            }
            if round == max_rounds {
                break;
            }
            let revised = self.produce(config, stage, round, upstream, Some((&current, &findings)), progress)?;
            sink.draft(&revised)?;
            current = revised;
        }
        Ok((current.with_status(ArtifactStatus::Unapproved), max_rounds))
    }

    /// Draft, then [`Self::review_loop`]. `upstream` must hold the finals of
    /// every earlier stage.
    pub fn run_stage(
        &self,
        stage: Stage,
        config: &RunConfig,
        upstream: &[StageArtifact],
        sink: &mut dyn StageSink,
        progress: &mut StageProgress,
    ) -> Result<StageOutput, StageError> {
        let started = self.clock.now();
        let draft = self.produce(config, stage, 0, upstream, None, progress)?;
        sink.draft(&draft)?;
        let (artifact, rounds_used) =
            self.review_loop(config, draft, upstream, config.max_review_rounds, sink, progress)?;
        Ok(StageOutput {
            artifact,
            reports: progress.reports.clone(),
            rounds_used,
            usage: progress.usage,
            calls: progress.calls,
            duration: self.clock.now().saturating_sub(started),
            fallback_used: progress.fallback_used,
        })
    }

    /// Executes all six stages into `run-<run_id>` under `root`.
    ///
    /// The manifest is rewritten after every stage. On a stage failure the
    /// manifest records `Failed` and everything finalized so far stays on
    /// disk.
    pub fn run_pipeline(&self, config: &RunConfig, root: &Path, run_id: &str) -> Result<RunManifest, PipelineError> {
        config.validate()?;
        let mut layout = store::init_run(root, run_id, config)?;
        if let Some(fault) = &self.fault {
            layout = layout.with_fault(Arc::clone(fault));
        }
        let _lock = RunLock::acquire(&layout)?;
        let run_started = self.clock.now();
        let mut manifest = RunManifest::stub(run_id, config);
        manifest.started_at_ms = run_started.as_millis() as u64;
        store::persist_manifest(&layout, &manifest)?;

        let mut finals: Vec<StageArtifact> = Vec::with_capacity(Stage::ALL.len());
        for stage in Stage::ALL {
            let stage_started = self.clock.now();
            let mut progress = StageProgress::default();
            let result = self.run_stage(stage, config, &finals, &mut layout, &mut progress).and_then(|output| {
                store::persist_artifact(&layout, &output.artifact)?;
                Ok(output)
            });
            match result {
                Ok(output) => {
                    manifest.push(StageRecord {
                        stage,
                        producer_agent: AgentRole::producer(stage).agent_number(),
                        reviewer_agent: AgentRole::reviewer(stage).agent_number(),
                        final_status: Some(output.artifact.status),
                        final_round: output.artifact.round,
                        rounds_used: output.rounds_used,
                        attachments: output.artifact.attachments.iter().map(|a| a.path.clone()).collect(),
                        fallback_used: output.fallback_used,
                        reviews: output.reports,
                        calls: output.calls,
                        usage: output.usage,
                        duration: output.duration,
                    });
                    manifest.total_duration = self.clock.now().saturating_sub(run_started);
                    store::persist_manifest(&layout, &manifest)?;
                    finals.push(output.artifact);
                }
                Err(source) => {
                    manifest.push(StageRecord {
                        stage,
                        producer_agent: AgentRole::producer(stage).agent_number(),
                        reviewer_agent: AgentRole::reviewer(stage).agent_number(),
                        final_status: None,
                        final_round: 0,
                        rounds_used: progress.reports.len() as u32,
                        attachments: Vec::new(),
                        fallback_used: progress.fallback_used,
                        reviews: progress.reports,
                        calls: progress.calls,
                        usage: progress.usage,
                        duration: self.clock.now().saturating_sub(stage_started),
                    });
                    manifest.total_duration = self.clock.now().saturating_sub(run_started);
                    manifest.outcome = RunOutcome::Failed { stage, error: source.to_string() };
                    // Best effort: the stage error is the one worth reporting.
                    let _ = store::persist_manifest(&layout, &manifest);
                    return Err(PipelineError::StageFailed { stage, source });
                }
            }
        }
        manifest.total_duration = self.clock.now().saturating_sub(run_started);
        manifest.outcome = RunOutcome::Completed;
        store::persist_manifest(&layout, &manifest)?;
        Ok(manifest)
    }
}

/// Convenience wrapper around [`Orchestrator::run_pipeline`].
pub fn run_pipeline(
    config: &RunConfig,
    backend: &dyn ChatBackend,
    clock: &dyn Clock,
    catalog: &TemplateCatalog,
    root: &Path,
    run_id: &str,
) -> Result<RunManifest, PipelineError> {
    Orchestrator::new(backend, clock, catalog).run_pipeline(config, root, run_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RoleKind;
    use crate::llm::{ManualClock, MockBackend, MockScript, RawCompletion};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn approve_all() -> MockScript {
        let mut script = MockScript::new().with_default("VERDICT: APPROVE");
        for stage in Stage::ALL {
            script.insert(stage, RoleKind::Producer, 0, format!("```artifact\n{} v0\n```", stage.title()));
        }
        script
    }

    fn config(rounds: u32) -> RunConfig {
        RunConfig::mock("Develop a snakegame", "inline").with_max_review_rounds(rounds)
    }

    #[test]
    fn immediate_approval_is_one_round() {
        let backend = MockBackend::new(approve_all());
        let clock = ManualClock::fixed(Duration::ZERO);
        let catalog = TemplateCatalog::defaults();
        let orch = Orchestrator::new(&backend, &clock, &catalog);
        let mut progress = StageProgress::default();
        let out = orch.run_stage(Stage::Design, &config(2), &[], &mut Discard, &mut progress).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.rounds_used, 1);
        assert_eq!(out.artifact.status, ArtifactStatus::Final);
        assert_eq!(out.artifact.body, "System design v0");
        assert_eq!(out.calls, 2);
    }

    #[test]
    fn revise_then_approve_keeps_the_revision() {
        let script = approve_all()
            .with(Stage::Design, RoleKind::Reviewer, 1, "VERDICT: REVISE\n- add a component diagram")
            .with(Stage::Design, RoleKind::Producer, 1, "```artifact\nSystem design v1 with diagram\n```")
            .with(Stage::Design, RoleKind::Reviewer, 2, "VERDICT: APPROVE");
        let backend = MockBackend::new(script);
        let clock = ManualClock::fixed(Duration::ZERO);
        let catalog = TemplateCatalog::defaults();
        let orch = Orchestrator::new(&backend, &clock, &catalog);
        let mut progress = StageProgress::default();
        let out = orch.run_stage(Stage::Design, &config(3), &[], &mut Discard, &mut progress).unwrap();
        assert_eq!(out.rounds_used, 2);
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.reports[0].verdict.findings, vec!["add a component diagram".to_string()]);
        assert_eq!(out.artifact.body, "System design v1 with diagram");
        assert_eq!(out.artifact.round, 1);
        assert_eq!(out.artifact.status, ArtifactStatus::Final);
    }

    #[test]
    fn always_revise_exhausts_the_budget() {
        let script = MockScript::new()
            .with_default("```artifact\nrevised\n```")
            .with(Stage::Testing, RoleKind::Reviewer, 1, "VERDICT: REVISE\n- r1")
            .with(Stage::Testing, RoleKind::Reviewer, 2, "VERDICT: REVISE\n- r2")
            .with(Stage::Testing, RoleKind::Reviewer, 3, "VERDICT: REVISE\n- r3");
        let backend = MockBackend::new(script);
        let clock = ManualClock::fixed(Duration::ZERO);
        let catalog = TemplateCatalog::defaults();
        let orch = Orchestrator::new(&backend, &clock, &catalog);
        let mut progress = StageProgress::default();
        let out = orch.run_stage(Stage::Testing, &config(3), &[], &mut Discard, &mut progress).unwrap();
        assert_eq!(out.rounds_used, 3);
        assert_eq!(out.reports.len(), 3);
        assert_eq!(out.artifact.status, ArtifactStatus::Unapproved);
        assert_eq!(out.calls, 6);
    }

    #[test]
    fn development_keeps_code_attachments() {
        let script = approve_all().with(
            Stage::Development,
            RoleKind::Producer,
            0,
            "```file:snake.py\nprint('snake')\n```\n```artifact\nRun python snake.py\n```",
        );
        let backend = MockBackend::new(script);
        let clock = ManualClock::fixed(Duration::ZERO);
        let catalog = TemplateCatalog::defaults();
        let orch = Orchestrator::new(&backend, &clock, &catalog);
        let mut progress = StageProgress::default();
        let out = orch.run_stage(Stage::Development, &config(2), &[], &mut Discard, &mut progress).unwrap();
        assert_eq!(out.artifact.attachments.len(), 1);
        assert_eq!(out.artifact.attachments[0].path, "snake.py");
    }

    struct Counting<B> {
        inner: B,
        calls: AtomicU32,
    }

    impl<B: ChatBackend> ChatBackend for Counting<B> {
        fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.send(request)
        }
    }

    #[test]
    fn missing_design_producer_fails_at_design() {
        let mut script = approve_all();
        script.entries.remove(&crate::llm::ScriptKey::new(Stage::Design, RoleKind::Producer, 0));
        let mut script = MockScript { default_response: None, ..script };
        for stage in Stage::ALL {
            script.insert(stage, RoleKind::Reviewer, 1, "VERDICT: APPROVE");
        }
        let backend = Counting { inner: MockBackend::new(script), calls: AtomicU32::new(0) };
        let clock = ManualClock::fixed(Duration::ZERO);
        let catalog = TemplateCatalog::defaults();
        let root = tempfile::tempdir().unwrap();
        let err = run_pipeline(&config(2), &backend, &clock, &catalog, root.path(), "f1").unwrap_err();
        assert!(matches!(err, PipelineError::StageFailed { stage: Stage::Design, .. }), "{err}");

        let run = store::load_run(root.path(), "f1").unwrap();
        assert!(matches!(run.manifest.outcome, RunOutcome::Failed { stage: Stage::Design, .. }));
        assert!(run.final_artifact(Stage::ProjectPlanning).is_some());
        assert!(run.final_artifact(Stage::Requirements).is_some());
        assert!(run.final_artifact(Stage::Design).is_none());
        // Two stages of two calls, plus the failed design draft attempt.
        assert_eq!(backend.calls.load(Ordering::SeqCst), 5);
        assert_eq!(run.manifest.total_calls, 5);
        assert!(!run.layout.run_dir().join(store::LOCK_FILE).exists());
    }

    #[test]
    fn config_validation() {
        assert!(config(0).validate().is_err());
        assert!(RunConfig::mock("  ", "s").validate().is_err());
        assert!(config(1).validate().is_ok());
        assert_eq!(config(1).max_calls(), 12);
        assert_eq!(config(3).max_calls(), 36);
    }
}
