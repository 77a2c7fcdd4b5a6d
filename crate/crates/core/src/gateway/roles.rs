//! Agent roles and the structured response each one must return.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::world_model::{GapType, ModuleType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Reader,
    Brainstorm,
    QueryExpander,
    VenueSearch,
    Scorer,
    FullReader,
    Extractor,
    Prober,
    Orchestrator,
    MechanismAnalyst,
    FieldMapper,
    TechniqueSearch,
    Tester,
    GateEvaluator,
    Reassessor,
    Evaluator,
    Writer,
    Reviewer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 18] = [
        AgentRole::Reader,
        AgentRole::Brainstorm,
        AgentRole::QueryExpander,
        AgentRole::VenueSearch,
        AgentRole::Scorer,
        AgentRole::FullReader,
        AgentRole::Extractor,
        AgentRole::Prober,
        AgentRole::Orchestrator,
        AgentRole::MechanismAnalyst,
        AgentRole::FieldMapper,
        AgentRole::TechniqueSearch,
        AgentRole::Tester,
        AgentRole::GateEvaluator,
        AgentRole::Reassessor,
        AgentRole::Evaluator,
        AgentRole::Writer,
        AgentRole::Reviewer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Reader => "reader",
            AgentRole::Brainstorm => "brainstorm",
            AgentRole::QueryExpander => "query_expander",
            AgentRole::VenueSearch => "venue_search",
            AgentRole::Scorer => "scorer",
            AgentRole::FullReader => "full_reader",
            AgentRole::Extractor => "extractor",
            AgentRole::Prober => "prober",
            AgentRole::Orchestrator => "orchestrator",
            AgentRole::MechanismAnalyst => "mechanism_analyst",
            AgentRole::FieldMapper => "field_mapper",
            AgentRole::TechniqueSearch => "technique_search",
            AgentRole::Tester => "tester",
            AgentRole::GateEvaluator => "gate_evaluator",
            AgentRole::Reassessor => "reassessor",
            AgentRole::Evaluator => "evaluator",
            AgentRole::Writer => "writer",
            AgentRole::Reviewer => "reviewer",
        }
    }

    /// Instruction sent to remote models ahead of the context payload.
    pub fn instruction(self) -> &'static str {
        match self {
            AgentRole::Reader => {
                "Summarize the seed paper. Reply with JSON {summary, key_methods: [str], limitations: [str]}."
            }
            AgentRole::Brainstorm => {
                "Propose up to 10 ranked research directions. Reply with JSON {directions: [{title, rationale, novelty, feasibility, impact}]}, scores 0-10."
            }
            AgentRole::QueryExpander => {
                "Expand the interest and candidate directions into search queries and venues. Reply with JSON {queries: [str] (1-12), venues: [str] (1-12)}."
            }
            AgentRole::VenueSearch => {
                "Search the given venue for the queries. Reply with JSON {papers: [{title, authors, venue, year, url, abstract}]}."
            }
            AgentRole::Scorer => {
                "Score the paper abstract. Reply with JSON {relevance, code, venue_prestige}, integers 0-10."
            }
            AgentRole::FullReader => {
                "Read the full paper. Reply with JSON {depth, experiments, reproducibility}, integers 0-10."
            }
            AgentRole::Extractor => {
                "Extract only from the named section. Reply with JSON {method, modules: [{name, module_type, description}], results: [{benchmark, metrics}], limitations: [str]}."
            }
            AgentRole::Prober => {
                "Identify research gaps from your perspective, citing world-model element ids as evidence. Reply with JSON {gaps: [{description, gap_type, evidence}], tasks: [{description, kind, targets}]}."
            }
            AgentRole::Orchestrator => {
                "Assign exactly one action (merge, kill, redirect, continue) to every gap and task. Reply with JSON {decisions: [{action, subjects, rationale, merged_description?, target_agent?}]}."
            }
            AgentRole::MechanismAnalyst => {
                "Ask why five times, anchoring each cause to module or benchmark ids; the last link is the mechanism. Reply with JSON {links: [{cause, anchors}], origin_field}."
            }
            AgentRole::FieldMapper => {
                "Name other fields that study this mechanism, excluding the origin field, each with a query in that field's vocabulary. Reply with JSON {fields: [{field, query}]}."
            }
            AgentRole::TechniqueSearch => {
                "List techniques from this field that address the mechanism. Reply with JSON {techniques: [str]}."
            }
            AgentRole::Tester => {
                "Verify the mechanism prediction, then build the method. Reply with JSON {mechanism_confirmed, method: {name, description}, notes}."
            }
            AgentRole::GateEvaluator => {
                "Judge each of the ten gate criteria with evidence. Reply with JSON {criteria: [{criterion, pass, evidence}]}."
            }
            AgentRole::Reassessor => {
                "The gate failed. Choose one branch. Reply with JSON {branch: update_mechanism|update_fields|update_gap, rationale, reformulated_gap?}."
            }
            AgentRole::Evaluator => {
                "Plan the evaluation. Reply with JSON {seeds, cross_model, ablation, error_analysis}."
            }
            AgentRole::Writer => "Write the requested section. Reply with JSON {section, text}.",
            AgentRole::Reviewer => {
                "Review the draft. Reply with JSON {weaknesses: [{category: writing|missing_experiments|method_weakness|novelty_concern, text}]}."
            }
        }
    }

    /// Schema check applied to every response before it leaves the gateway.
    pub fn check(self, content: &Value) -> Result<(), String> {
        fn go<T: RoleResponse>(v: &Value) -> Result<(), String> {
            parse::<T>(v).map(|_| ())
        }
        match self {
            AgentRole::Reader => go::<ReaderResponse>(content),
            AgentRole::Brainstorm => go::<BrainstormResponse>(content),
            AgentRole::QueryExpander => go::<QueryExpansionResponse>(content),
            AgentRole::VenueSearch => go::<VenueSearchResponse>(content),
            AgentRole::Scorer => go::<AbstractScoreResponse>(content),
            AgentRole::FullReader => go::<FullReadResponse>(content),
            AgentRole::Extractor => go::<ExtractionResponse>(content),
            AgentRole::Prober => go::<ProbeResponse>(content),
            AgentRole::Orchestrator => go::<OrchestratorResponse>(content),
            AgentRole::MechanismAnalyst => go::<ChainResponse>(content),
            AgentRole::FieldMapper => go::<FieldMapResponse>(content),
            AgentRole::TechniqueSearch => go::<TechniqueResponse>(content),
            AgentRole::Tester => go::<TesterResponse>(content),
            AgentRole::GateEvaluator => go::<GateResponse>(content),
            AgentRole::Reassessor => go::<ReassessResponse>(content),
            AgentRole::Evaluator => go::<EvaluationResponse>(content),
            AgentRole::Writer => go::<WriterResponse>(content),
            AgentRole::Reviewer => go::<ReviewResponse>(content),
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown agent role `{s}`"))
    }
}

/// A typed response bound to one role.
pub trait RoleResponse: DeserializeOwned + Serialize {
    const ROLE: AgentRole;

    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

pub fn parse<T: RoleResponse>(content: &Value) -> Result<T, String> {
    let parsed: T = serde_json::from_value(content.clone()).map_err(|e| e.to_string())?;
    parsed.validate()?;
    Ok(parsed)
}

fn score(name: &str, v: u8) -> Result<(), String> {
    if v > 10 {
        return Err(format!("{name} must lie in 0..=10, got {v}"));
    }
    Ok(())
}

fn nonempty(name: &str, s: &str) -> Result<(), String> {
    if s.trim().is_empty() {
        return Err(format!("{name} must not be empty"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderResponse {
    pub summary: String,
    #[serde(default)]
    pub key_methods: Vec<String>,
    #[serde(default)]
    pub limitations: Vec<String>,
}

impl RoleResponse for ReaderResponse {
    const ROLE: AgentRole = AgentRole::Reader;

    fn validate(&self) -> Result<(), String> {
        nonempty("summary", &self.summary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub title: String,
    #[serde(default)]
    pub rationale: String,
    pub novelty: u8,
    pub feasibility: u8,
    pub impact: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainstormResponse {
    pub directions: Vec<Direction>,
}

impl RoleResponse for BrainstormResponse {
    const ROLE: AgentRole = AgentRole::Brainstorm;

    fn validate(&self) -> Result<(), String> {
        if self.directions.is_empty() || self.directions.len() > 10 {
            return Err(format!("expected 1 to 10 directions, got {}", self.directions.len()));
        }
        for d in &self.directions {
            nonempty("direction title", &d.title)?;
            score("novelty", d.novelty)?;
            score("feasibility", d.feasibility)?;
            score("impact", d.impact)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryExpansionResponse {
    pub queries: Vec<String>,
    pub venues: Vec<String>,
}

impl RoleResponse for QueryExpansionResponse {
    const ROLE: AgentRole = AgentRole::QueryExpander;

    fn validate(&self) -> Result<(), String> {
        if self.queries.is_empty() || self.queries.len() > 12 {
            return Err(format!("expected 1 to 12 queries, got {}", self.queries.len()));
        }
        if self.venues.is_empty() || self.venues.len() > 12 {
            return Err(format!("expected 1 to 12 venues, got {}", self.venues.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundPaper {
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: String,
    pub year: u16,
    #[serde(default)]
    pub url: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub full_text: Option<String>,
    #[serde(default)]
    pub code_available: u8,
    #[serde(default)]
    pub review_signals: Option<Vec<ReviewSignal>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSignal {
    pub score: f64,
    pub weakness: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueSearchResponse {
    pub papers: Vec<FoundPaper>,
}

impl RoleResponse for VenueSearchResponse {
    const ROLE: AgentRole = AgentRole::VenueSearch;

    fn validate(&self) -> Result<(), String> {
        for p in &self.papers {
            nonempty("title", &p.title)?;
            if !(1950..=2100).contains(&p.year) {
                return Err(format!("implausible year {} for `{}`", p.year, p.title));
            }
            score("code_available", p.code_available)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractScoreResponse {
    pub relevance: u8,
    pub code: u8,
    pub venue_prestige: u8,
}

impl RoleResponse for AbstractScoreResponse {
    const ROLE: AgentRole = AgentRole::Scorer;

    fn validate(&self) -> Result<(), String> {
        score("relevance", self.relevance)?;
        score("code", self.code)?;
        score("venue_prestige", self.venue_prestige)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullReadResponse {
    pub depth: u8,
    pub experiments: u8,
    pub reproducibility: u8,
}

impl RoleResponse for FullReadResponse {
    const ROLE: AgentRole = AgentRole::FullReader;

    fn validate(&self) -> Result<(), String> {
        score("depth", self.depth)?;
        score("experiments", self.experiments)?;
        score("reproducibility", self.reproducibility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedModule {
    pub name: String,
    pub module_type: ModuleType,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedResult {
    /// Defaults to the paper's own method; set for baselines in a results table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub benchmark: String,
    pub metrics: std::collections::BTreeMap<String, f64>,
}

/// One section-specific extraction. Which fields may be populated depends on
/// the section named in the request; the ingestion layer enforces that.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractionResponse {
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub modules: Vec<ExtractedModule>,
    #[serde(default)]
    pub results: Vec<ExtractedResult>,
    #[serde(default)]
    pub limitations: Vec<String>,
}

impl RoleResponse for ExtractionResponse {
    const ROLE: AgentRole = AgentRole::Extractor;

    fn validate(&self) -> Result<(), String> {
        for m in &self.modules {
            nonempty("module name", &m.name)?;
        }
        for r in &self.results {
            nonempty("benchmark", &r.benchmark)?;
            if r.metrics.is_empty() {
                return Err(format!("result on `{}` has an empty metric vector", r.benchmark));
            }
            if r.metrics.values().any(|v| !v.is_finite()) {
                return Err(format!("result on `{}` has a non-finite metric", r.benchmark));
            }
        }
        for l in &self.limitations {
            nonempty("limitation", l)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedGap {
    pub description: String,
    pub gap_type: GapType,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NewDirection,
    CombineFindings,
    RedirectAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedTask {
    pub description: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeResponse {
    #[serde(default)]
    pub gaps: Vec<ProposedGap>,
    #[serde(default)]
    pub tasks: Vec<ProposedTask>,
}

impl RoleResponse for ProbeResponse {
    const ROLE: AgentRole = AgentRole::Prober;

    fn validate(&self) -> Result<(), String> {
        for g in &self.gaps {
            nonempty("gap description", &g.description)?;
        }
        for t in &self.tasks {
            nonempty("task description", &t.description)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Merge,
    Kill,
    Redirect,
    Continue,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Merge => "merge",
            Action::Kill => "kill",
            Action::Redirect => "redirect",
            Action::Continue => "continue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDecision {
    pub action: Action,
    pub subjects: Vec<String>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrchestratorResponse {
    pub decisions: Vec<RawDecision>,
}

impl RoleResponse for OrchestratorResponse {
    const ROLE: AgentRole = AgentRole::Orchestrator;

    fn validate(&self) -> Result<(), String> {
        for d in &self.decisions {
            if d.subjects.is_empty() {
                return Err(format!("{} decision without subjects", d.action.as_str()));
            }
            if d.action == Action::Merge && d.subjects.len() < 2 {
                return Err("merge needs at least two subjects".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLinkSpec {
    pub cause: String,
    #[serde(default)]
    pub anchors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResponse {
    pub links: Vec<ChainLinkSpec>,
    pub origin_field: String,
}

impl RoleResponse for ChainResponse {
    const ROLE: AgentRole = AgentRole::MechanismAnalyst;

    fn validate(&self) -> Result<(), String> {
        if self.links.len() != 5 {
            return Err(format!("a causal chain has exactly 5 links, got {}", self.links.len()));
        }
        for (i, l) in self.links.iter().enumerate() {
            nonempty("cause", &l.cause)?;
            if l.anchors.is_empty() {
                return Err(format!("link {} is not anchored to any element", i + 1));
            }
        }
        nonempty("origin_field", &self.origin_field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldQuery {
    pub field: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMapResponse {
    pub fields: Vec<FieldQuery>,
}

impl RoleResponse for FieldMapResponse {
    const ROLE: AgentRole = AgentRole::FieldMapper;

    fn validate(&self) -> Result<(), String> {
        for f in &self.fields {
            nonempty("field", &f.field)?;
            nonempty("query", &f.query)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueResponse {
    pub techniques: Vec<String>,
}

impl RoleResponse for TechniqueResponse {
    const ROLE: AgentRole = AgentRole::TechniqueSearch;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltMethod {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TesterResponse {
    pub mechanism_confirmed: bool,
    pub method: BuiltMethod,
    #[serde(default)]
    pub notes: String,
}

impl RoleResponse for TesterResponse {
    const ROLE: AgentRole = AgentRole::Tester;

    fn validate(&self) -> Result<(), String> {
        nonempty("method name", &self.method.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerdict {
    pub criterion: String,
    pub pass: bool,
    #[serde(default)]
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResponse {
    pub criteria: Vec<CriterionVerdict>,
}

impl RoleResponse for GateResponse {
    const ROLE: AgentRole = AgentRole::GateEvaluator;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReassessBranch {
    UpdateMechanism,
    UpdateFields,
    UpdateGap,
}

impl ReassessBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            ReassessBranch::UpdateMechanism => "update_mechanism",
            ReassessBranch::UpdateFields => "update_fields",
            ReassessBranch::UpdateGap => "update_gap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReassessResponse {
    pub branch: ReassessBranch,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reformulated_gap: Option<String>,
}

impl RoleResponse for ReassessResponse {
    const ROLE: AgentRole = AgentRole::Reassessor;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResponse {
    pub seeds: u32,
    pub cross_model: String,
    pub ablation: String,
    pub error_analysis: String,
}

impl RoleResponse for EvaluationResponse {
    const ROLE: AgentRole = AgentRole::Evaluator;

    fn validate(&self) -> Result<(), String> {
        nonempty("cross_model", &self.cross_model)?;
        nonempty("ablation", &self.ablation)?;
        nonempty("error_analysis", &self.error_analysis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterResponse {
    pub section: String,
    pub text: String,
}

impl RoleResponse for WriterResponse {
    const ROLE: AgentRole = AgentRole::Writer;

    fn validate(&self) -> Result<(), String> {
        nonempty("section", &self.section)?;
        nonempty("text", &self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWeakness {
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub weaknesses: Vec<RawWeakness>,
}

impl RoleResponse for ReviewResponse {
    const ROLE: AgentRole = AgentRole::Reviewer;
}
