//! Multi-agent software development pipeline.
//!
//! Six producer agents (plan, requirements, design, code, tests, deployment)
//! are each paired with a reviewer agent. One high-level prompt goes in; a
//! reviewed artifact per stage, a run manifest and a set of measurements
//! come out.
//!
//! Modules, bottom up:
//! - [`domain`]: stages, roles, artifacts, requirements, verification ledger
//! - [`llm`]: chat-completion backends, retry policy, clocks
//! - [`agents`]: prompt templates, output extraction, context budgeting
//! - [`store`]: run directory layout and persistence
//! - [`pipeline`]: the producer/reviewer orchestration
//! - [`metrics`]: word/LOC/requirement counts and published baselines
//! - [`sandbox`]: running the generated code under limits

pub mod agents;
pub mod domain;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod sandbox;
pub mod store;

pub use agents::{ContextBudget, Decision, ReviewVerdict, TemplateCatalog};
pub use domain::{
    AgentRole, ArtifactStatus, Attachment, Requirement, RequirementCategory, RequirementId, RequirementSet, RoleKind,
    Stage, StageArtifact, StatusSummary, VerificationLedger, VerificationStatus,
};
pub use llm::{
    ChatBackend, Clock, ManualClock, MockBackend, MockScript, OpenAiBackend, RetryPolicy, SystemClock, TokenUsage,
};
pub use metrics::{BaselineRecord, BaselineTable, Comparison, Metrics};
pub use pipeline::{BackendSelector, Orchestrator, PipelineError, RunConfig, RunManifest, RunOutcome};
pub use store::{LoadedRun, StoreError, WorkspaceLayout};
