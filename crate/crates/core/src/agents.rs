//! The twelve agents: prompt templates, prompt assembly and the structured
//! output contract (tagged fences and `VERDICT:` lines).

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{is_safe_relative_path, AgentRole, Attachment, RoleKind, Stage, StageArtifact};
use crate::llm::{estimate_tokens, ChatMessage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("template for {role} needs `{{{{{placeholder}}}}}` but no value was supplied")]
    MissingPlaceholderInput { role: String, placeholder: String },
    #[error("template for {role} uses unknown placeholder `{{{{{placeholder}}}}}`")]
    UnknownPlaceholder { role: String, placeholder: String },
    #[error("template {name}: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("upstream artifact from {upstream} is not earlier than {stage}")]
    UpstreamOrder { stage: Stage, upstream: Stage },
    #[error("duplicate attachment path `{0}`")]
    DuplicateAttachmentPath(String),
    #[error("attachment path `{0}` is not a plain relative path")]
    InvalidAttachmentPath(String),
    #[error("malformed review: {0}")]
    MalformedReview(String),
    #[error("reading templates: {0}")]
    Io(String),
}

const PLACEHOLDERS: [&str; 4] = ["project_prompt", "upstream_context", "draft", "review_findings"];

/// Prompt text for one role. `revision_text` is appended to the user message
/// when a producer is asked to revise its draft.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: AgentRole,
    pub system_text: String,
    pub user_text: String,
    pub revision_text: Option<String>,
}

impl PromptTemplate {
    /// Parses a template asset. The file is split into sections by header
    /// lines `### system`, `### user` and (producers only) `### revision`.
    pub fn parse(role: AgentRole, text: &str) -> Result<Self, AgentError> {
        let name = role.template_name();
        let invalid = |reason: String| AgentError::InvalidTemplate { name: name.clone(), reason };
        let mut sections: HashMap<&str, String> = HashMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            if let Some(header) = line.strip_prefix("### ") {
                let header = header.trim();
                if !matches!(header, "system" | "user" | "revision") {
                    return Err(invalid(format!("unknown section `{header}`")));
                }
                if sections.insert(header, String::new()).is_some() {
                    return Err(invalid(format!("section `{header}` appears twice")));
                }
                current = Some(header);
                continue;
            }
            match current {
                Some(section) => {
                    let buf = sections.get_mut(section).expect("section exists");
                    buf.push_str(line);
                    buf.push('\n');
                }
                None if line.trim().is_empty() => {}
                None => return Err(invalid("text before the first section header".into())),
            }
        }
        let mut take = |key: &str| sections.remove(key).map(|s| s.trim().to_string());
        let template = PromptTemplate {
            role,
            system_text: take("system").ok_or_else(|| invalid("missing `### system`".into()))?,
            user_text: take("user").ok_or_else(|| invalid("missing `### user`".into()))?,
            revision_text: take("revision"),
        };
        template.check()?;
        Ok(template)
    }

    fn check(&self) -> Result<(), AgentError> {
        let invalid =
            |reason: &str| AgentError::InvalidTemplate { name: self.role.template_name(), reason: reason.to_string() };
        for text in [Some(&self.system_text), Some(&self.user_text), self.revision_text.as_ref()].into_iter().flatten()
        {
            for placeholder in placeholders_in(text) {
                if !PLACEHOLDERS.contains(&placeholder.as_str()) {
                    return Err(AgentError::UnknownPlaceholder { role: self.role.to_string(), placeholder });
                }
            }
        }
        let user = &self.user_text;
        match self.role.kind {
            RoleKind::Producer => {
                if !user.contains("{{project_prompt}}") || !user.contains("{{upstream_context}}") {
                    return Err(invalid("producer user text must use {{project_prompt}} and {{upstream_context}}"));
                }
                let revision = self
                    .revision_text
                    .as_deref()
                    .ok_or_else(|| invalid("producer template needs a `### revision` section"))?;
                if !revision.contains("{{draft}}") || !revision.contains("{{review_findings}}") {
                    return Err(invalid("revision text must use {{draft}} and {{review_findings}}"));
                }
            }
            RoleKind::Reviewer => {
                if !user.contains("{{draft}}") {
                    return Err(invalid("reviewer user text must use {{draft}}"));
                }
                if self.revision_text.is_some() {
                    return Err(invalid("reviewer templates have no revision section"));
                }
            }
        }
        Ok(())
    }
}

fn placeholders_in(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                found.push(after[..end].trim().to_string());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    found
}

macro_rules! default_templates {
    ($($stage:ident / $kind:ident => $file:literal),* $(,)?) => {
        &[$((Stage::$stage, RoleKind::$kind, include_str!(concat!("../assets/templates/", $file)))),*]
    };
}

const DEFAULT_TEMPLATES: &[(Stage, RoleKind, &str)] = default_templates![
    ProjectPlanning / Producer => "project-planning-producer.txt",
    ProjectPlanning / Reviewer => "project-planning-reviewer.txt",
    Requirements / Producer => "requirements-producer.txt",
    Requirements / Reviewer => "requirements-reviewer.txt",
    Design / Producer => "design-producer.txt",
    Design / Reviewer => "design-reviewer.txt",
    Development / Producer => "development-producer.txt",
    Development / Reviewer => "development-reviewer.txt",
    Testing / Producer => "testing-producer.txt",
    Testing / Reviewer => "testing-reviewer.txt",
    Deployment / Producer => "deployment-producer.txt",
    Deployment / Reviewer => "deployment-reviewer.txt",
];

/// All twelve templates. Immutable once built.
#[derive(Debug, Clone)]
pub struct TemplateCatalog {
    templates: HashMap<AgentRole, PromptTemplate>,
}

impl TemplateCatalog {
    /// The templates bundled with the crate.
    pub fn defaults() -> Self {
        let templates = DEFAULT_TEMPLATES
            .iter()
            .map(|(stage, kind, text)| {
                let role = AgentRole::new(*stage, *kind);
                let template = PromptTemplate::parse(role, text)
                    .unwrap_or_else(|e| panic!("bundled template {} is invalid: {e}", role.template_name()));
                (role, template)
            })
            .collect();
        Self { templates }
    }

    /// Defaults, overridden by any `<stage>-<producer|reviewer>.txt` found in
    /// `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, AgentError> {
        if !dir.is_dir() {
            return Err(AgentError::Io(format!("{} is not a directory", dir.display())));
        }
        let mut catalog = Self::defaults();
        for role in AgentRole::catalog() {
            let path = dir.join(format!("{}.txt", role.template_name()));
            if !path.exists() {
                continue;
            }
            let text =
                std::fs::read_to_string(&path).map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
            catalog.templates.insert(role, PromptTemplate::parse(role, &text)?);
        }
        Ok(catalog)
    }

    pub fn get(&self, role: AgentRole) -> &PromptTemplate {
        self.templates.get(&role).expect("catalog holds all twelve roles")
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

impl Default for TemplateCatalog {
    fn default() -> Self {
        Self::defaults()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub max_tokens: u64,
}

impl ContextBudget {
    pub const DEFAULT: ContextBudget = ContextBudget { max_tokens: 6000 };

    pub fn new(max_tokens: u64) -> Self {
        Self { max_tokens }
    }
}

impl Default for ContextBudget {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Text a downstream agent sees for an artifact: the body followed by each
/// attachment as a `file:` fence.
pub fn render_artifact(artifact: &StageArtifact) -> String {
    let mut out = artifact.body.clone();
    for attachment in &artifact.attachments {
        let fence = fence_for(&attachment.content);
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&format!("{fence}file:{}\n{}\n{fence}", attachment.path, attachment.content));
    }
    out
}

fn fence_for(content: &str) -> String {
    let longest = content
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && l.chars().all(|c| c == '`'))
        .map(str::len)
        .max()
        .unwrap_or(0);
    "`".repeat(longest.max(2) + 1)
}

fn render_findings(findings: &[String]) -> String {
    findings.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n")
}

/// Builds the system + user messages for one agent call.
///
/// `draft` and `findings` are supplied for producer revision calls and
/// `draft` alone for reviewer calls. Placeholder values are inserted in a
/// single pass and are never re-scanned.
pub fn assemble_prompt(
    catalog: &TemplateCatalog,
    role: AgentRole,
    project_prompt: &str,
    upstream: &[StageArtifact],
    draft: Option<&StageArtifact>,
    findings: Option<&[String]>,
    budget: ContextBudget,
) -> Result<Vec<ChatMessage>, AgentError> {
    if let Some(late) = upstream.iter().find(|a| a.stage >= role.stage) {
        return Err(AgentError::UpstreamOrder { stage: role.stage, upstream: late.stage });
    }
    let template = catalog.get(role);
    let context = budget_context(upstream, budget);
    let values = PlaceholderValues {
        project_prompt: Some(project_prompt.to_string()),
        upstream_context: Some(if context.is_empty() { "(none)".to_string() } else { context }),
        draft: draft.map(render_artifact),
        review_findings: findings.map(render_findings),
    };

    let system = substitute(&template.system_text, &values, role)?;
    let mut user = substitute(&template.user_text, &values, role)?;
    let revising = role.kind == RoleKind::Producer && (draft.is_some() || findings.is_some());
    if revising {
        let revision = template.revision_text.as_deref().unwrap_or_default();
        user.push_str("\n\n");
        user.push_str(&substitute(revision, &values, role)?);
    }
    Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
}

struct PlaceholderValues {
    project_prompt: Option<String>,
    upstream_context: Option<String>,
    draft: Option<String>,
    review_findings: Option<String>,
}

impl PlaceholderValues {
    fn get(&self, name: &str) -> Result<Option<&str>, ()> {
        let value = match name {
            "project_prompt" => &self.project_prompt,
            "upstream_context" => &self.upstream_context,
            "draft" => &self.draft,
            "review_findings" => &self.review_findings,
            _ => return Err(()),
        };
        Ok(value.as_deref())
    }
}

fn substitute(text: &str, values: &PlaceholderValues, role: AgentRole) -> Result<String, AgentError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(AgentError::InvalidTemplate { name: role.template_name(), reason: "unterminated `{{`".into() });
        };
        let name = after[..end].trim();
        match values.get(name) {
            Ok(Some(value)) => out.push_str(value),
            Ok(None) => {
                return Err(AgentError::MissingPlaceholderInput {
                    role: role.to_string(),
                    placeholder: name.to_string(),
                })
            }
            Err(()) => {
                return Err(AgentError::UnknownPlaceholder { role: role.to_string(), placeholder: name.to_string() })
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedArtifact {
    pub body: String,
    pub attachments: Vec<Attachment>,
    /// Set when the reply had no tagged fences and was taken whole.
    pub fallback_used: bool,
}

struct Fence<'a> {
    info: &'a str,
    content: String,
}

/// Splits a reply into fenced blocks and the text outside them. Closing
/// fences must be at least as long as the opening fence; an unclosed block
/// runs to the end of the reply.
fn split_fences(raw: &str) -> (Vec<Fence<'_>>, String) {
    let mut fences = Vec::new();
    let mut outside = String::new();
    let mut open: Option<(usize, &str, Vec<&str>)> = None;
    for line in raw.lines() {
        let trimmed = line.trim();
        let ticks = trimmed.chars().take_while(|c| *c == '`').count();
        match open.as_mut() {
            None if ticks >= 3 && line.starts_with("```") => {
                open = Some((ticks, trimmed[ticks..].trim(), Vec::new()));
            }
            None => {
                outside.push_str(line);
                outside.push('\n');
            }
            Some((width, info, lines)) => {
                if ticks >= *width && ticks == trimmed.len() {
                    fences.push(Fence { info, content: lines.join("\n") });
                    open = None;
                } else {
                    lines.push(line);
                }
            }
        }
    }
    if let Some((_, info, lines)) = open {
        fences.push(Fence { info, content: lines.join("\n") });
    }
    (fences, outside)
}

/// Pulls the artifact body and file attachments out of a producer reply.
///
/// The first fence tagged `artifact` is the body and each fence tagged
/// `file:<path>` becomes an attachment. Other fences are treated as prose.
/// Without any tagged fence the whole reply is the body.
pub fn extract_artifact(role: AgentRole, raw: &str) -> Result<ExtractedArtifact, AgentError> {
    let _ = role;
    let (fences, outside) = split_fences(raw);
    let mut body: Option<String> = None;
    let mut attachments: Vec<Attachment> = Vec::new();
    let mut untagged_outside = outside;
    let mut tagged = false;
    for fence in fences {
        if fence.info == "artifact" {
            tagged = true;
            if body.is_none() {
                body = Some(fence.content);
            }
        } else if let Some(path) = fence.info.strip_prefix("file:") {
            tagged = true;
            let path = path.trim();
            if !is_safe_relative_path(path) {
                return Err(AgentError::InvalidAttachmentPath(path.to_string()));
            }
            if attachments.iter().any(|a| a.path == path) {
                return Err(AgentError::DuplicateAttachmentPath(path.to_string()));
            }
            attachments.push(Attachment::new(path, fence.content));
        } else {
            untagged_outside.push_str(&format!("```{}\n{}\n```\n", fence.info, fence.content));
        }
    }
    if !tagged {
        return Ok(ExtractedArtifact { body: raw.to_string(), attachments, fallback_used: true });
    }
    Ok(ExtractedArtifact {
        body: body.unwrap_or_else(|| untagged_outside.trim().to_string()),
        attachments,
        fallback_used: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub decision: Decision,
    pub findings: Vec<String>,
}

fn verdict_line() -> &'static Regex {
    static LINE: OnceLock<Regex> = OnceLock::new();
    LINE.get_or_init(|| Regex::new(r"(?i)^\s*VERDICT:\s*(APPROVE|REVISE)\s*$").expect("verdict grammar"))
}

/// Reads a reviewer reply. The first `VERDICT: APPROVE|REVISE` line decides;
/// later lines starting with `- ` are findings. A REVISE without findings is
/// rejected as malformed.
pub fn extract_verdict(raw: &str) -> Result<ReviewVerdict, AgentError> {
    let mut lines = raw.lines();
    let decision = lines
        .by_ref()
        .find_map(|line| verdict_line().captures(line))
        .map(|caps| if caps[1].eq_ignore_ascii_case("approve") { Decision::Approve } else { Decision::Revise })
        .ok_or_else(|| AgentError::MalformedReview("no `VERDICT: APPROVE` or `VERDICT: REVISE` line".into()))?;
    let findings: Vec<String> = lines
        .filter_map(|line| line.trim_start().strip_prefix("- "))
        .map(|f| f.trim().to_string())
        .filter(|f| !f.is_empty())
        .collect();
    if decision == Decision::Revise && findings.is_empty() {
        return Err(AgentError::MalformedReview("REVISE verdict without any `- ` findings".into()));
    }
    Ok(ReviewVerdict { decision, findings })
}

#[derive(Clone, Copy)]
enum Section {
    Full,
    Elided,
    Truncated(usize),
}

fn render_section(artifact: &StageArtifact, text: &str, total: usize, section: Section) -> String {
    let header = format!("## {} (stage {})", artifact.stage.title(), artifact.stage.ordinal());
    match section {
        Section::Full => format!("{header}\n{text}"),
        Section::Elided => format!("{header} [elided, {total} tokens]"),
        Section::Truncated(0) => format!("{header} [truncated to 0 of {total} tokens]"),
        Section::Truncated(keep) => {
            format!("{header} [truncated to {keep} of {total} tokens]\n{}", head_tokens(text, keep))
        }
    }
}

/// Prefix of `text` holding its first `keep` whitespace tokens, original
/// spacing preserved.
fn head_tokens(text: &str, keep: usize) -> &str {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                in_token = false;
                if seen == keep {
                    return &text[..i];
                }
            }
        } else if !in_token {
            in_token = true;
            seen += 1;
        }
    }
    text
}

/// Concatenates upstream artifacts as stage-labelled sections, fitted to
/// `budget`.
///
/// When everything does not fit, the oldest stages collapse to one-line
/// headers first. If the newest stage still does not fit on its own, its
/// body is cut from the tail. Output exceeds the budget only when the
/// headers alone already do.
pub fn budget_context(upstream: &[StageArtifact], budget: ContextBudget) -> String {
    if upstream.is_empty() {
        return String::new();
    }
    let texts: Vec<String> = upstream.iter().map(render_artifact).collect();
    let totals: Vec<usize> = texts.iter().map(|t| estimate_tokens(t) as usize).collect();
    let mut sections = vec![Section::Full; upstream.len()];
    let render = |sections: &[Section]| -> String {
        upstream
            .iter()
            .zip(&texts)
            .zip(&totals)
            .zip(sections)
            .map(|(((artifact, text), total), section)| render_section(artifact, text, *total, *section))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let fits = |text: &str| estimate_tokens(text) <= budget.max_tokens;

    let mut out = render(&sections);
    let newest = upstream.len() - 1;
    for i in 0..newest {
        if fits(&out) {
            return out;
        }
        sections[i] = Section::Elided;
        out = render(&sections);
    }
    if fits(&out) {
        return out;
    }
    // Largest prefix of the newest body that fits; token count is monotone
    // in the prefix length.
    let (mut lo, mut hi) = (0usize, totals[newest]);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        sections[newest] = Section::Truncated(mid);
        if fits(&render(&sections)) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    sections[newest] = Section::Truncated(lo);
    render(&sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn artifact(stage: Stage, body: &str) -> StageArtifact {
        StageArtifact::draft(stage, body, vec![])
    }

    #[test]
    fn defaults_cover_every_role() {
        let catalog = TemplateCatalog::defaults();
        assert_eq!(catalog.len(), 12);
        for role in AgentRole::catalog() {
            assert_eq!(catalog.get(role).role, role);
        }
    }

    #[test]
    fn planning_prompt_carries_the_project_prompt() {
        let catalog = TemplateCatalog::defaults();
        let messages = assemble_prompt(
            &catalog,
            AgentRole::producer(Stage::ProjectPlanning),
            "Develop a snakegame",
            &[],
            None,
            None,
            ContextBudget::DEFAULT,
        )
        .unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, crate::llm::ChatRole::System);
        assert!(messages[1].content.contains("Develop a snakegame"));
        assert!(messages.iter().all(|m| !m.content.contains("{{")));
    }

    #[test]
    fn reviewer_prompt_carries_the_draft() {
        let catalog = TemplateCatalog::defaults();
        let draft = artifact(Stage::Requirements, "FR-1: Snake moves continuously\nNFR-1: 60 fps");
        let messages = assemble_prompt(
            &catalog,
            AgentRole::reviewer(Stage::Requirements),
            "Develop a snakegame",
            &[artifact(Stage::ProjectPlanning, "plan")],
            Some(&draft),
            None,
            ContextBudget::DEFAULT,
        )
        .unwrap();
        assert!(messages[1].content.contains(&draft.body));
    }

    #[test]
    fn revision_prompt_lists_findings_in_order() {
        let catalog = TemplateCatalog::defaults();
        let draft = artifact(Stage::Development, "code");
        let findings = vec!["missing restart option".to_string(), "no test cases".to_string()];
        let messages = assemble_prompt(
            &catalog,
            AgentRole::producer(Stage::Development),
            "Develop a snakegame",
            &[],
            Some(&draft),
            Some(&findings),
            ContextBudget::DEFAULT,
        )
        .unwrap();
        let user = &messages[1].content;
        let first = user.find("missing restart option").unwrap();
        let second = user.find("no test cases").unwrap();
        assert!(first < second);
    }

    #[test]
    fn reviewer_without_draft_is_missing_input() {
        let catalog = TemplateCatalog::defaults();
        let err =
            assemble_prompt(&catalog, AgentRole::reviewer(Stage::Design), "p", &[], None, None, ContextBudget::DEFAULT)
                .unwrap_err();
        assert!(matches!(err, AgentError::MissingPlaceholderInput { ref placeholder, .. } if placeholder == "draft"));
    }

    #[test]
    fn producer_revision_without_findings_is_missing_input() {
        let catalog = TemplateCatalog::defaults();
        let draft = artifact(Stage::Design, "d");
        let err = assemble_prompt(
            &catalog,
            AgentRole::producer(Stage::Design),
            "p",
            &[],
            Some(&draft),
            None,
            ContextBudget::DEFAULT,
        )
        .unwrap_err();
        assert!(
            matches!(err, AgentError::MissingPlaceholderInput { ref placeholder, .. } if placeholder == "review_findings")
        );
    }

    #[test]
    fn upstream_must_precede_the_stage() {
        let catalog = TemplateCatalog::defaults();
        let err = assemble_prompt(
            &catalog,
            AgentRole::producer(Stage::Design),
            "p",
            &[artifact(Stage::Testing, "t")],
            None,
            None,
            ContextBudget::DEFAULT,
        )
        .unwrap_err();
        assert_eq!(err, AgentError::UpstreamOrder { stage: Stage::Design, upstream: Stage::Testing });
    }

    #[test]
    fn template_parsing_rejects_bad_files() {
        let role = AgentRole::reviewer(Stage::Design);
        assert!(PromptTemplate::parse(role, "### system\nx\n### user\n{{draft}}\n").is_ok());
        assert!(matches!(
            PromptTemplate::parse(role, "### system\nx\n### user\nno draft here\n"),
            Err(AgentError::InvalidTemplate { .. })
        ));
        assert!(matches!(
            PromptTemplate::parse(role, "### system\n{{mood}}\n### user\n{{draft}}\n"),
            Err(AgentError::UnknownPlaceholder { .. })
        ));
        assert!(PromptTemplate::parse(role, "preamble\n### system\nx\n### user\n{{draft}}\n").is_err());
        let producer = AgentRole::producer(Stage::Design);
        assert!(PromptTemplate::parse(producer, "### system\nx\n### user\n{{project_prompt}} {{upstream_context}}\n")
            .is_err());
    }

    #[test]
    fn overrides_replace_only_present_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("design-reviewer.txt"),
            "### system\nStrict reviewer.\n### user\nJudge this:\n{{draft}}\n",
        )
        .unwrap();
        let catalog = TemplateCatalog::with_overrides(dir.path()).unwrap();
        assert_eq!(catalog.get(AgentRole::reviewer(Stage::Design)).system_text, "Strict reviewer.");
        assert_eq!(
            catalog.get(AgentRole::producer(Stage::Design)),
            TemplateCatalog::defaults().get(AgentRole::producer(Stage::Design))
        );
    }

    #[test]
    fn extract_artifact_block() {
        let role = AgentRole::producer(Stage::ProjectPlanning);
        let got = extract_artifact(role, "Here you go.\n```artifact\nPLAN\n```\nThanks").unwrap();
        assert_eq!(got, ExtractedArtifact { body: "PLAN".into(), attachments: vec![], fallback_used: false });
    }

    #[test]
    fn extract_file_blocks() {
        let role = AgentRole::producer(Stage::Development);
        let raw = "I wrote two files.\n\n```file:main.src\nfn main() {\n    run();\n}\n```\n\nAnd docs:\n```file:readme.txt\nRun it.\n```\n";
        let got = extract_artifact(role, raw).unwrap();
        assert!(!got.fallback_used);
        assert_eq!(
            got.attachments,
            vec![Attachment::new("main.src", "fn main() {\n    run();\n}"), Attachment::new("readme.txt", "Run it."),]
        );
        assert_eq!(got.body, "I wrote two files.\n\n\nAnd docs:");
    }

    #[test]
    fn extract_without_fences_falls_back() {
        let raw = "Just some prose\nwith no fences.";
        let got = extract_artifact(AgentRole::producer(Stage::Design), raw).unwrap();
        assert!(got.fallback_used);
        assert_eq!(got.body, raw);
        assert!(got.attachments.is_empty());
    }

    #[test]
    fn extract_rejects_duplicate_and_escaping_paths() {
        let role = AgentRole::producer(Stage::Development);
        let dup = "```file:a.py\n1\n```\n```file:a.py\n2\n```";
        assert_eq!(extract_artifact(role, dup), Err(AgentError::DuplicateAttachmentPath("a.py".into())));
        let escape = "```file:../../etc/x\n1\n```";
        assert_eq!(extract_artifact(role, escape), Err(AgentError::InvalidAttachmentPath("../../etc/x".into())));
    }

    #[test]
    fn longer_fences_may_contain_short_ones() {
        let raw = "````file:README.md\n# Title\n```\ncode\n```\n````";
        let got = extract_artifact(AgentRole::producer(Stage::Deployment), raw).unwrap();
        assert_eq!(got.attachments[0].content, "# Title\n```\ncode\n```");
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(
            extract_verdict("VERDICT: APPROVE").unwrap(),
            ReviewVerdict { decision: Decision::Approve, findings: vec![] }
        );
        assert_eq!(
            extract_verdict("VERDICT: REVISE\n- missing restart option\n- no test cases").unwrap(),
            ReviewVerdict {
                decision: Decision::Revise,
                findings: vec!["missing restart option".into(), "no test cases".into()],
            }
        );
        assert!(matches!(extract_verdict("looks good to me"), Err(AgentError::MalformedReview(_))));
    }

    #[test]
    fn verdict_is_case_insensitive_and_first_wins() {
        let v = extract_verdict("Review notes\nverdict: approve\nVERDICT: REVISE\n- x").unwrap();
        assert_eq!(v.decision, Decision::Approve);
        assert_eq!(v.findings, vec!["x".to_string()]);
        assert!(matches!(extract_verdict("VERDICT: REVISE\nplease fix"), Err(AgentError::MalformedReview(_))));
    }

    #[test]
    fn budget_large_keeps_everything() {
        let upstream = [artifact(Stage::ProjectPlanning, "plan text"), artifact(Stage::Requirements, "FR-1: moves")];
        let out = budget_context(&upstream, ContextBudget::new(10_000));
        assert!(out.contains("plan text") && out.contains("FR-1: moves"));
    }

    #[test]
    fn budget_elides_oldest_first() {
        let upstream = [
            artifact(Stage::ProjectPlanning, &words(100, "p")),
            artifact(Stage::Requirements, &words(100, "r")),
            artifact(Stage::Design, &words(100, "d")),
        ];
        let out = budget_context(&upstream, ContextBudget::new(150));
        // Two elided headers of 8 tokens each, a 5-token header and the
        // 100-token design body.
        assert_eq!(estimate_tokens(&out), 8 + 8 + 5 + 100);
        assert!(out.contains("## Project plan (stage 1) [elided, 100 tokens]"));
        assert!(out.contains("## Requirements specification (stage 2) [elided, 100 tokens]"));
        assert!(out.contains(&words(100, "d")));
        assert!(!out.contains("p0") && !out.contains("r0"));
    }

    #[test]
    fn budget_truncates_newest_tail_first() {
        let upstream =
            [artifact(Stage::ProjectPlanning, &words(10, "p")), artifact(Stage::Requirements, &words(100, "r"))];
        let out = budget_context(&upstream, ContextBudget::new(50));
        assert_eq!(estimate_tokens(&out), 50);
        assert!(out.contains("r0 r1"));
        assert!(!out.contains("r99"));
    }

    #[test]
    fn budget_zero_leaves_headers_only() {
        let upstream = [artifact(Stage::ProjectPlanning, "a b c"), artifact(Stage::Requirements, "d e f")];
        let out = budget_context(&upstream, ContextBudget::new(0));
        assert_eq!(
            out,
            "## Project plan (stage 1) [elided, 3 tokens]\n\n## Requirements specification (stage 2) [truncated to 0 of 3 tokens]"
        );
    }

    fn headers_only_tokens(upstream: &[StageArtifact]) -> u64 {
        budget_context(upstream, ContextBudget::new(0)).split_whitespace().count() as u64
    }

    proptest! {
        #[test]
        fn budget_bound_holds(
            sizes in prop::collection::vec(0usize..80, 1..6),
            budget in 0u64..300,
        ) {
            let upstream: Vec<StageArtifact> = sizes
                .iter()
                .enumerate()
                .map(|(i, n)| artifact(Stage::ALL[i], &words(*n, "w")))
                .collect();
            let out = budget_context(&upstream, ContextBudget::new(budget));
            prop_assert!(estimate_tokens(&out) <= budget.max(headers_only_tokens(&upstream)));
        }

        #[test]
        fn extraction_recovers_constructed_blocks(
            body in "[a-zA-Z0-9 .,\n]{0,80}",
            files in prop::collection::btree_map("[a-z]{1,8}(/[a-z]{1,8})?\\.[a-z]{1,3}", "[a-zA-Z0-9 =(){};\n]{0,80}", 0..4),
            prose in "[a-zA-Z .]{0,40}",
        ) {
            let mut raw = format!("{prose}\n```artifact\n{body}\n```\n");
            for (path, content) in &files {
                raw.push_str(&format!("{prose}\n```file:{path}\n{content}\n```\n"));
            }
            let got = extract_artifact(AgentRole::producer(Stage::Development), &raw).unwrap();
            prop_assert_eq!(got.body, body);
            let expected: Vec<Attachment> = files.iter().map(|(p, c)| Attachment::new(p.clone(), c.clone())).collect();
            prop_assert_eq!(got.attachments, expected);
        }

        #[test]
        fn verdict_never_defaults_silently(raw in "(?s).{0,200}") {
            match extract_verdict(&raw) {
                Ok(v) => prop_assert!(raw.to_ascii_uppercase().contains("VERDICT") && (v.decision == Decision::Approve || !v.findings.is_empty())),
                Err(AgentError::MalformedReview(_)) => {}
                Err(other) => prop_assert!(false, "unexpected error {other:?}"),
            }
        }

        #[test]
        fn assembled_prompts_have_no_placeholders(prompt in "[a-zA-Z0-9 ,.]{1,60}", body in "[a-zA-Z0-9 \n]{0,200}") {
            let catalog = TemplateCatalog::defaults();
            let draft = artifact(Stage::Design, &body);
            let upstream = [artifact(Stage::ProjectPlanning, &body)];
            let findings = vec!["fix it".to_string()];
            for (role, draft, findings) in [
                (AgentRole::producer(Stage::Design), None, None),
                (AgentRole::producer(Stage::Design), Some(&draft), Some(findings.as_slice())),
                (AgentRole::reviewer(Stage::Design), Some(&draft), None),
            ] {
                let messages = assemble_prompt(&catalog, role, &prompt, &upstream, draft, findings, ContextBudget::new(50)).unwrap();
                prop_assert!(messages.iter().all(|m| !m.content.contains("{{")));
            }
        }
    }
}
