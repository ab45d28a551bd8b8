//! Run measurements, the verification ledger and the published baselines.
//!
//! A word is a whitespace-separated token. A line of code is a non-blank
//! physical line in a Development attachment; comment lines count.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Attachment;
use crate::domain::{
    parse_requirements, summarize_verification, CategoryCounts, LedgerEntry, RequirementError, RequirementId,
    RequirementSet, Stage, StatusSummary, VerificationLedger, VerificationStatus,
};
use crate::llm::{duration_ms, TokenUsage};
use crate::store::{LoadedRun, StoreError, WorkspaceLayout, SCHEMA_VERSION};

const BUNDLED_BASELINES: &str = include_str!("../assets/baselines.json");

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run has no final {0} artifact")]
    MissingStage(Stage),
    #[error("requirement {0} is not in the run's requirement set")]
    UnknownRequirement(String),
    #[error("requirements document: {0}")]
    Requirements(#[from] RequirementError),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("baseline table: {0}")]
    BaselineTable(String),
}

pub fn count_words<S: AsRef<str>>(documents: &[S]) -> u64 {
    documents.iter().map(|d| d.as_ref().split_whitespace().count() as u64).sum()
}

pub fn count_loc(attachments: &[Attachment]) -> u64 {
    attachments.iter().map(|a| a.content.lines().filter(|l| !l.trim().is_empty()).count() as u64).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub run_id: String,
    pub total_words: u64,
    pub requirement_counts: CategoryCounts,
    pub loc: u64,
    pub status_summary: StatusSummary,
    #[serde(with = "duration_ms", rename = "wall_duration_ms")]
    pub wall_duration: Duration,
    pub token_usage: TokenUsage,
}

/// The requirement set parsed from the run's final requirements document.
pub fn run_requirements(run: &LoadedRun) -> Result<RequirementSet, MetricsError> {
    let doc = run.final_artifact(Stage::Requirements).ok_or(MetricsError::MissingStage(Stage::Requirements))?;
    Ok(parse_requirements(&doc.body)?)
}

/// Measures a loaded run. Words cover every draft, review and final body;
/// attachments only count toward lines of code.
pub fn collect_metrics(run: &LoadedRun, ledger: &VerificationLedger) -> Result<Metrics, MetricsError> {
    let requirements = run_requirements(run)?;
    let development = run.final_artifact(Stage::Development).ok_or(MetricsError::MissingStage(Stage::Development))?;
    if let Some(unknown) = ledger.unknown_ids(&requirements).first() {
        return Err(MetricsError::UnknownRequirement(unknown.to_string()));
    }

    let mut documents: Vec<&str> = Vec::new();
    for stage in &run.stages {
        documents.extend(stage.drafts.iter().map(|d| d.body.as_str()));
        documents.extend(stage.reviews.iter().map(|(_, raw)| raw.as_str()));
        documents.extend(stage.final_artifact.iter().map(|f| f.body.as_str()));
    }

    Ok(Metrics {
        schema_version: SCHEMA_VERSION,
        run_id: run.manifest.run_id.clone(),
        total_words: count_words(&documents),
        requirement_counts: requirements.category_counts(),
        loc: count_loc(&development.attachments),
        status_summary: summarize_verification(ledger),
        wall_duration: run.manifest.total_duration,
        token_usage: run.manifest.total_usage,
    })
}

/// Writes `metrics.json` at the run root.
pub fn persist_metrics(layout: &WorkspaceLayout, metrics: &Metrics) -> Result<(), StoreError> {
    layout.write_json(&layout.metrics_path(), metrics)
}

/// Upserts a ledger entry for a requirement that exists in `requirements`.
pub fn record_verification(
    ledger: &mut VerificationLedger,
    requirements: &RequirementSet,
    requirement_id: &str,
    status: VerificationStatus,
    note: impl Into<String>,
) -> Result<(), MetricsError> {
    let id: RequirementId =
        requirement_id.parse().map_err(|_| MetricsError::UnknownRequirement(requirement_id.to_string()))?;
    if !requirements.contains(id) {
        return Err(MetricsError::UnknownRequirement(id.to_string()));
    }
    ledger.entries.insert(id, LedgerEntry { status, note: note.into() });
    Ok(())
}

/// Published status split. `None` marks a count that was never reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineStatusCounts {
    pub fully_met: Option<u64>,
    pub partially_met: Option<u64>,
    pub not_verified: Option<u64>,
    pub not_met: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub experiment_id: String,
    pub model_id: String,
    pub prompt: String,
    pub words: u64,
    pub requirement_counts: CategoryCounts,
    pub status_counts: BaselineStatusCounts,
    pub loc: u64,
    pub duration_upper_bound_secs: Option<u64>,
    pub ran_without_human_debugging: bool,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub schema_version: u32,
    pub records: Vec<BaselineRecord>,
}

impl BaselineTable {
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let table: BaselineTable =
            serde_json::from_str(text).map_err(|e| MetricsError::BaselineTable(e.to_string()))?;
        for (i, record) in table.records.iter().enumerate() {
            if table.records[..i].iter().any(|r| r.experiment_id == record.experiment_id) {
                return Err(MetricsError::BaselineTable(format!("duplicate experiment id `{}`", record.experiment_id)));
            }
        }
        Ok(table)
    }

    /// The table shipped in `assets/baselines.json`.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_BASELINES).expect("bundled baseline table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::BaselineTable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, experiment_id: &str) -> Result<&BaselineRecord, MetricsError> {
        self.records
            .iter()
            .find(|r| r.experiment_id == experiment_id)
            .ok_or_else(|| MetricsError::UnknownExperiment(experiment_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.experiment_id.as_str())
    }
}

pub fn published_baseline(experiment_id: &str) -> Result<BaselineRecord, MetricsError> {
    BaselineTable::bundled().get(experiment_id).cloned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDelta {
    pub field: String,
    pub run: u64,
    pub baseline: Option<u64>,
    /// run − baseline
    pub delta: Option<i64>,
    /// run / baseline, only when the baseline is positive.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub run_id: String,
    pub experiment_id: String,
    pub fields: Vec<FieldDelta>,
}

impl Comparison {
    pub fn field(&self, name: &str) -> Option<&FieldDelta> {
        self.fields.iter().find(|f| f.field == name)
    }
}

fn delta(field: &str, run: u64, baseline: Option<u64>) -> FieldDelta {
    FieldDelta {
        field: field.to_string(),
        run,
        baseline,
        delta: baseline.map(|b| run as i64 - b as i64),
        ratio: baseline.filter(|b| *b > 0).map(|b| run as f64 / b as f64),
    }
}

/// Field-by-field description of how a run differs from a baseline.
pub fn compare(metrics: &Metrics, baseline: &BaselineRecord) -> Comparison {
    let rc = &metrics.requirement_counts;
    let brc = &baseline.requirement_counts;
    let ss = &metrics.status_summary;
    let bs = &baseline.status_counts;
    let fields = vec![
        delta("words", metrics.total_words, Some(baseline.words)),
        delta("functional", rc.functional, Some(brc.functional)),
        delta("non_functional", rc.non_functional, Some(brc.non_functional)),
        delta("performance", rc.performance, Some(brc.performance)),
        delta("security", rc.security, Some(brc.security)),
        delta("constraint", rc.constraint, Some(brc.constraint)),
        delta("fully_met", ss.fully_met, bs.fully_met),
        delta("partially_met", ss.partially_met, bs.partially_met),
        delta("not_verified", ss.not_verified, bs.not_verified),
        delta("not_met", ss.not_met, bs.not_met),
        delta("loc", metrics.loc, Some(baseline.loc)),
        delta("duration_secs", metrics.wall_duration.as_secs(), baseline.duration_upper_bound_secs),
    ];
    Comparison {
        schema_version: SCHEMA_VERSION,
        run_id: metrics.run_id.clone(),
        experiment_id: baseline.experiment_id.clone(),
        fields,
    }
}
