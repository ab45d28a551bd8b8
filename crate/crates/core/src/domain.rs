//! Core vocabulary: stages, agent roles, stage artifacts, requirements and
//! the verification ledger.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// One of the six pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ProjectPlanning,
    Requirements,
    Design,
    Development,
    Testing,
    Deployment,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::ProjectPlanning,
        Stage::Requirements,
        Stage::Design,
        Stage::Development,
        Stage::Testing,
        Stage::Deployment,
    ];

    /// Position in the execution order, 1 through 6.
    pub fn ordinal(self) -> u8 {
        match self {
            Stage::ProjectPlanning => 1,
            Stage::Requirements => 2,
            Stage::Design => 3,
            Stage::Development => 4,
            Stage::Testing => 5,
            Stage::Deployment => 6,
        }
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Stage> {
        Stage::ALL.get(usize::from(ordinal).checked_sub(1)?).copied()
    }

    /// Short kebab-case key used for template file names and mock scripts.
    pub fn key(self) -> &'static str {
        match self {
            Stage::ProjectPlanning => "project-planning",
            Stage::Requirements => "requirements",
            Stage::Design => "design",
            Stage::Development => "development",
            Stage::Testing => "testing",
            Stage::Deployment => "deployment",
        }
    }

    /// Directory name inside a run directory, e.g. `03-design`.
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::ProjectPlanning => "01-project-plan",
            Stage::Requirements => "02-requirements",
            Stage::Design => "03-design",
            Stage::Development => "04-development",
            Stage::Testing => "05-testing",
            Stage::Deployment => "06-deployment",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Stage::ProjectPlanning => "Project plan",
            Stage::Requirements => "Requirements specification",
            Stage::Design => "System design",
            Stage::Development => "Code",
            Stage::Testing => "Test plan",
            Stage::Deployment => "Deployment plan",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|stage| stage.key() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleKind {
    Producer,
    Reviewer,
}

impl RoleKind {
    pub fn key(self) -> &'static str {
        match self {
            RoleKind::Producer => "producer",
            RoleKind::Reviewer => "reviewer",
        }
    }
}

impl fmt::Display for RoleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RoleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "producer" => Ok(RoleKind::Producer),
            "reviewer" => Ok(RoleKind::Reviewer),
            other => Err(format!("unknown role kind `{other}`")),
        }
    }
}

/// One of the twelve agents: a stage paired with producer or reviewer duty.
///
/// Agent numbers follow the published pairing (Agent-1 planning, Agent-2
/// planning QA, ... Agent-11 deployment, Agent-12 deployment QA). Testing
/// keeps agents 7/8 and development keeps 9/10 even though development runs
/// first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentRole {
    pub stage: Stage,
    pub kind: RoleKind,
}

impl AgentRole {
    pub const fn new(stage: Stage, kind: RoleKind) -> Self {
        Self { stage, kind }
    }

    pub fn producer(stage: Stage) -> Self {
        Self::new(stage, RoleKind::Producer)
    }

    pub fn reviewer(stage: Stage) -> Self {
        Self::new(stage, RoleKind::Reviewer)
    }

    /// All twelve roles ordered by agent number.
    pub fn catalog() -> Vec<AgentRole> {
        let mut roles: Vec<AgentRole> =
            Stage::ALL.into_iter().flat_map(|stage| [Self::producer(stage), Self::reviewer(stage)]).collect();
        roles.sort_by_key(|role| role.agent_number());
        roles
    }

    pub fn agent_number(self) -> u8 {
        let pair = match self.stage {
            Stage::ProjectPlanning => 0,
            Stage::Requirements => 1,
            Stage::Design => 2,
            Stage::Testing => 3,
            Stage::Development => 4,
            Stage::Deployment => 5,
        };
        let offset = match self.kind {
            RoleKind::Producer => 1,
            RoleKind::Reviewer => 2,
        };
        pair * 2 + offset
    }

    pub fn display_name(self) -> &'static str {
        use RoleKind::*;
        use Stage::*;
        match (self.stage, self.kind) {
            (ProjectPlanning, Producer) => "Project planning",
            (ProjectPlanning, Reviewer) => "Project planning quality analysis",
            (Requirements, Producer) => "Requirements engineering",
            (Requirements, Reviewer) => "Requirements quality analysis",
            (Design, Producer) => "System design",
            (Design, Reviewer) => "Design quality analysis",
            (Testing, Producer) => "Test generation",
            (Testing, Reviewer) => "Testing quality analysis",
            (Development, Producer) => "Software development",
            (Development, Reviewer) => "Code quality analysis",
            (Deployment, Producer) => "Deployment planning",
            (Deployment, Reviewer) => "Deployment plan quality analysis",
        }
    }

    /// Template asset name, `<stage>-<producer|reviewer>`.
    pub fn template_name(self) -> String {
        format!("{}-{}", self.stage.key(), self.kind.key())
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Agent-{} ({})", self.agent_number(), self.display_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactStatus {
    Draft,
    Revised,
    Final,
    Unapproved,
}

impl ArtifactStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ArtifactStatus::Final | ArtifactStatus::Unapproved)
    }
}

/// A file carried by a stage artifact, path relative to the stage's `src/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub path: String,
    pub content: String,
}

impl Attachment {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        Self { path: path.into(), content: content.into() }
    }
}

/// Returns true when `path` is a non-empty relative path made only of
/// normal components.
pub fn is_safe_relative_path(path: &str) -> bool {
    if path.is_empty() || path.starts_with('/') || path.starts_with('\\') || path.contains('\0') {
        return false;
    }
    path.split(['/', '\\']).all(|part| !part.is_empty() && part != "." && part != ".." && !part.contains(':'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: Stage,
    pub body: String,
    pub attachments: Vec<Attachment>,
    /// 0 is the initial draft; each revision increments it.
    pub round: u32,
    pub status: ArtifactStatus,
}

impl StageArtifact {
    pub fn draft(stage: Stage, body: impl Into<String>, attachments: Vec<Attachment>) -> Self {
        Self { stage, body: body.into(), attachments, round: 0, status: ArtifactStatus::Draft }
    }

    pub fn with_status(mut self, status: ArtifactStatus) -> Self {
        self.status = status;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequirementCategory {
    Functional,
    NonFunctional,
    Performance,
    Security,
    Constraint,
}

impl RequirementCategory {
    pub const ALL: [RequirementCategory; 5] = [
        RequirementCategory::Functional,
        RequirementCategory::NonFunctional,
        RequirementCategory::Performance,
        RequirementCategory::Security,
        RequirementCategory::Constraint,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            RequirementCategory::Functional => "FR",
            RequirementCategory::NonFunctional => "NFR",
            RequirementCategory::Performance => "PR",
            RequirementCategory::Security => "SR",
            RequirementCategory::Constraint => "C",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.prefix() == prefix)
    }
}

/// A requirement identifier such as `NFR-3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequirementId {
    pub category: RequirementCategory,
    pub index: u32,
}

impl RequirementId {
    pub fn new(category: RequirementCategory, index: u32) -> Self {
        Self { category, index }
    }
}

impl fmt::Display for RequirementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.category.prefix(), self.index)
    }
}

impl FromStr for RequirementId {
    type Err = RequirementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (prefix, index) = s.split_once('-').ok_or_else(|| RequirementError::MalformedId(s.to_string()))?;
        let category =
            RequirementCategory::from_prefix(prefix).ok_or_else(|| RequirementError::MalformedId(s.to_string()))?;
        let index = parse_index(index).ok_or_else(|| RequirementError::MalformedId(s.to_string()))?;
        Ok(Self { category, index })
    }
}

impl Serialize for RequirementId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RequirementId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_index(raw: &str) -> Option<u32> {
    if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    raw.parse::<u32>().ok().filter(|n| *n >= 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub id: RequirementId,
    pub statement: String,
}

impl Requirement {
    pub fn category(&self) -> RequirementCategory {
        self.id.category
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequirementError {
    #[error("duplicate requirement id {0}")]
    DuplicateId(String),
    #[error("malformed requirement id `{0}`")]
    MalformedId(String),
    #[error("requirement {0} has an empty statement")]
    EmptyStatement(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RequirementList", into = "RequirementList")]
pub struct RequirementSet {
    requirements: Vec<Requirement>,
    ids: HashSet<RequirementId>,
}

#[derive(Clone, Serialize, Deserialize)]
struct RequirementList {
    requirements: Vec<Requirement>,
}

impl From<RequirementList> for RequirementSet {
    fn from(list: RequirementList) -> Self {
        let ids = list.requirements.iter().map(|r| r.id).collect();
        Self { requirements: list.requirements, ids }
    }
}

impl From<RequirementSet> for RequirementList {
    fn from(set: RequirementSet) -> Self {
        Self { requirements: set.requirements }
    }
}

impl RequirementSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting duplicate ids and empty statements.
    pub fn from_requirements(requirements: Vec<Requirement>) -> Result<Self, RequirementError> {
        let mut set = Self::new();
        for requirement in requirements {
            set.push(requirement)?;
        }
        Ok(set)
    }

    /// Appends a requirement. Statements are stored trimmed and must fit on
    /// one line.
    pub fn push(&mut self, mut requirement: Requirement) -> Result<(), RequirementError> {
        requirement.statement = requirement.statement.trim().to_string();
        if requirement.statement.is_empty() || requirement.statement.contains(['\n', '\r']) {
            return Err(RequirementError::EmptyStatement(requirement.id.to_string()));
        }
        if !self.ids.insert(requirement.id) {
            return Err(RequirementError::DuplicateId(requirement.id.to_string()));
        }
        self.requirements.push(requirement);
        Ok(())
    }

    pub fn contains(&self, id: RequirementId) -> bool {
        self.ids.contains(&id)
    }

    pub fn get(&self, id: RequirementId) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Requirement> {
        self.requirements.iter()
    }

    pub fn len(&self) -> usize {
        self.requirements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requirements.is_empty()
    }

    pub fn count(&self, category: RequirementCategory) -> usize {
        self.requirements.iter().filter(|r| r.category() == category).count()
    }

    pub fn category_counts(&self) -> CategoryCounts {
        CategoryCounts {
            functional: self.count(RequirementCategory::Functional) as u64,
            non_functional: self.count(RequirementCategory::NonFunctional) as u64,
            performance: self.count(RequirementCategory::Performance) as u64,
            security: self.count(RequirementCategory::Security) as u64,
            constraint: self.count(RequirementCategory::Constraint) as u64,
        }
    }
}

/// Requirement counts per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub functional: u64,
    pub non_functional: u64,
    pub performance: u64,
    pub security: u64,
    pub constraint: u64,
}

impl CategoryCounts {
    pub fn total(&self) -> u64 {
        self.functional + self.non_functional + self.performance + self.security + self.constraint
    }
}

fn requirement_line() -> &'static Regex {
    static LINE: OnceLock<Regex> = OnceLock::new();
    LINE.get_or_init(|| Regex::new(r"^(NFR|FR|PR|SR|C)-(-?[0-9]+): *(.*?)\s*$").expect("requirement grammar"))
}

/// Extracts every `<PREFIX>-<n>: <statement>` line from a document.
///
/// Lines that do not match the grammar are skipped so prose around the list
/// is tolerated. A line with a known prefix but an index of zero or below is
/// an error, as is a repeated id.
pub fn parse_requirements(doc: &str) -> Result<RequirementSet, RequirementError> {
    let mut set = RequirementSet::new();
    for line in doc.lines() {
        let Some(caps) = requirement_line().captures(line) else {
            continue;
        };
        let prefix = &caps[1];
        let raw_index = &caps[2];
        let statement = &caps[3];
        let category = RequirementCategory::from_prefix(prefix).expect("regex only admits known prefixes");
        let index =
            parse_index(raw_index).ok_or_else(|| RequirementError::MalformedId(format!("{prefix}-{raw_index}")))?;
        if statement.is_empty() {
            continue;
        }
        let id = RequirementId::new(category, index);
        if !set.ids.insert(id) {
            return Err(RequirementError::DuplicateId(id.to_string()));
        }
        set.requirements.push(Requirement { id, statement: statement.to_string() });
    }
    Ok(set)
}

pub fn render_requirements(set: &RequirementSet) -> String {
    set.iter().map(|r| format!("{}: {}\n", r.id, r.statement)).collect()
}

/// Next free id in `category`: one past the highest index in use.
pub fn next_requirement_id(set: &RequirementSet, category: RequirementCategory) -> RequirementId {
    let max = set.iter().filter(|r| r.category() == category).map(|r| r.id.index).max().unwrap_or(0);
    RequirementId::new(category, max + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationStatus {
    FullyMet,
    PartiallyMet,
    NotMet,
    NotVerified,
}

impl FromStr for VerificationStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fully" | "fully-met" => Ok(Self::FullyMet),
            "partial" | "partially-met" => Ok(Self::PartiallyMet),
            "notmet" | "not-met" => Ok(Self::NotMet),
            "notverified" | "not-verified" => Ok(Self::NotVerified),
            other => Err(format!("unknown verification status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub status: VerificationStatus,
    #[serde(default)]
    pub note: String,
}

/// Per-requirement verification outcomes, keyed by requirement id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationLedger {
    pub entries: BTreeMap<RequirementId, LedgerEntry>,
}

impl VerificationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids present in the ledger but absent from `set`.
    pub fn unknown_ids(&self, set: &RequirementSet) -> Vec<RequirementId> {
        self.entries.keys().filter(|id| !set.contains(**id)).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusSummary {
    pub fully_met: u64,
    pub partially_met: u64,
    pub not_verified: u64,
    pub not_met: u64,
    pub total: u64,
}

pub fn summarize_verification(ledger: &VerificationLedger) -> StatusSummary {
    let mut summary = StatusSummary::default();
    for entry in ledger.entries.values() {
        match entry.status {
            VerificationStatus::FullyMet => summary.fully_met += 1,
            VerificationStatus::PartiallyMet => summary.partially_met += 1,
            VerificationStatus::NotVerified => summary.not_verified += 1,
            VerificationStatus::NotMet => summary.not_met += 1,
        }
        summary.total += 1;
    }
    summary
}
