//! The project state machine.
//!
//! A project moves P0 → P1 → P2a → P2b → P3 → P4 → P5 → P6 → P7 → Done. P0 and
//! P2b wait on human decisions; review in P7 can send the project back to
//! P6, P4, P3 or P2b. All projects of an engine share one world model, so a
//! later project starts from everything earlier projects committed.
//!
//! Every operation runs against copies of the model and the project and
//! swaps them in only on success: a failed phase leaves the engine exactly
//! as it was and can simply be retried.

mod checkpoint;
pub mod config;
mod decision;
mod phase;
mod phases;
mod review;
pub mod server;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::{ConsensusError, ConsensusState};
use crate::dev_loop::{DevError, DevOutcome};
use crate::gateway::roles::{ReaderResponse, WriterResponse};
use crate::gateway::{Gateway, GatewayError};
use crate::ingestion::{IngestError, PaperRecord, ScoredPaper};
use crate::transcript::{EventKind, Transcript};
use crate::world_model::{ElementId, GapType, ModelError, NodeId, NodeKind, Uncertainty, WorldModel};

pub use checkpoint::{EngineSnapshot, ENGINE_SCHEMA_VERSION};
pub use config::{BackendSpec, BudgetSpec, EngineConfig};
pub use decision::{Decision, DecisionKind, DecisionOption, DecisionRecord, PendingDecision};
pub use phase::{transition_allowed, Phase};
pub use phases::{EvaluationRecord, ChecklistItem, BundleManifest, SECTIONS, N_SEEDS};
pub use review::{return_phase, route_review, ReviewCategory, ReviewWeakness, RoutedWeakness, ROUTES};

pub const MAX_SEEDS: usize = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("research interest must not be empty")]
    EmptyInterest,
    #[error("cannot bootstrap: {0}")]
    Bootstrap(String),
    #[error("at most {MAX_SEEDS} seed papers are accepted, got {0}")]
    TooManySeeds(usize),
    #[error("invalid project id `{0}`: use letters, digits, `-` and `_`")]
    InvalidProjectId(String),
    #[error("project `{0}` does not exist")]
    UnknownProject(String),
    #[error("project `{0}` already exists")]
    DuplicateProject(String),
    #[error("project `{project}` is waiting on {}", kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "))]
    Blocked { project: String, kinds: Vec<DecisionKind> },
    #[error("no {0} decision is pending")]
    NoSuchDecision(DecisionKind),
    #[error("option `{option}` is not offered for {kind}")]
    OptionNotOffered { kind: DecisionKind, option: String },
    #[error("illegal phase transition {from} -> {to}")]
    IllegalTransition { from: Phase, to: Phase },
    #[error("project `{0}` is done")]
    Finished(String),
    #[error("unknown review category `{0}`")]
    UnknownCategory(String),
    #[error("state schema version {found} cannot be resumed by version {expected}")]
    SchemaVersion { found: u64, expected: u64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("phase {phase} failed: {message}")]
    Phase { phase: Phase, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Dev(#[from] DevError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl EngineError {
    /// Errors caused by the request rather than by running a phase.
    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            EngineError::Blocked { .. }
                | EngineError::NoSuchDecision(_)
                | EngineError::OptionNotOffered { .. }
                | EngineError::IllegalTransition { .. }
                | EngineError::Finished(_)
                | EngineError::DuplicateProject(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub title: String,
    #[serde(flatten)]
    pub reading: ReaderResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDirection {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub rationale: String,
    pub novelty: u8,
    pub feasibility: u8,
    pub impact: u8,
}

/// What a project saw of the model it inherited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub nodes: usize,
    pub edges: usize,
    /// Elements committed at or before this commit were carried over.
    pub commit: u64,
    pub projects: Vec<String>,
    pub shared_modules: Vec<String>,
    pub verified_gaps: Vec<String>,
}

impl PriorSummary {
    pub fn of(wm: &WorldModel) -> Self {
        let label = |id: &NodeId| wm.node(*id).map(|n| n.label().to_owned()).unwrap_or_default();
        PriorSummary {
            nodes: wm.node_count(),
            edges: wm.edge_count(),
            commit: wm.commit_count(),
            projects: wm.projects().keys().cloned().collect(),
            shared_modules: wm.shared_modules(2).iter().map(label).collect(),
            verified_gaps: wm
                .nodes_of(NodeKind::Gap)
                .filter(|n| n.uncertainty.is_verified())
                .map(|n| n.label().to_owned())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Spent {
    pub calls: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: Phase,
    pub to: Phase,
    pub reason: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub nodes_added: usize,
    pub edges_added: usize,
    pub equivalence_classes: usize,
    pub synthesized_gaps: Vec<NodeId>,
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub round: u32,
    pub weaknesses: Vec<RoutedWeakness>,
    /// The phase the project went back to; `None` when it finished.
    pub returned_to: Option<Phase>,
    /// Finished with weaknesses still open because the round cap was hit.
    #[serde(default)]
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub id: String,
    pub interest: String,
    pub seeds: Vec<PaperRecord>,
    pub seed_summaries: Vec<SeedSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSummary>,
    pub directions: Vec<RankedDirection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<RankedDirection>,
    pub queries: Vec<String>,
    pub venues: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<GapType>,
    pub phase: Phase,
    pub pending: Vec<PendingDecision>,
    pub decisions: Vec<DecisionRecord>,
    pub literature: Vec<ScoredPaper>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<ConsensusState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_gap: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub development: Option<DevOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleManifest>,
    pub sections: Vec<WriterResponse>,
    pub reviews: Vec<ReviewRecord>,
    pub history: Vec<Transition>,
    pub spent: Spent,
    pub transcript: Transcript,
}

impl ProjectState {
    fn new(id: &str, interest: &str, seeds: Vec<PaperRecord>) -> Self {
        ProjectState {
            id: id.to_owned(),
            interest: interest.trim().to_owned(),
            seeds,
            seed_summaries: Vec::new(),
            prior: None,
            directions: Vec::new(),
            direction: None,
            queries: Vec::new(),
            venues: Vec::new(),
            track: None,
            phase: Phase::P0,
            pending: Vec::new(),
            decisions: Vec::new(),
            literature: Vec::new(),
            extraction: None,
            consensus: None,
            selected_gap: None,
            development: None,
            evaluation: None,
            bundle: None,
            sections: Vec::new(),
            reviews: Vec::new(),
            history: Vec::new(),
            spent: Spent::default(),
            transcript: Transcript::new(),
        }
    }

    pub fn event(&mut self, kind: EventKind, data: Value) -> u64 {
        let id = self.id.clone();
        self.transcript.push_for(&id, "engine", kind, data)
    }

    /// Moves the phase pointer, refusing anything off the DAG and its
    /// review back-edges.
    pub fn transition(&mut self, to: Phase, reason: impl Into<String>) -> Result<(), EngineError> {
        let from = self.phase;
        if !transition_allowed(from, to) {
            return Err(EngineError::IllegalTransition { from, to });
        }
        let reason = reason.into();
        let seq = self.event(EventKind::Phase, json!({"from": from, "to": to, "reason": reason}));
        self.history.push(Transition { from, to, reason, seq });
        self.phase = to;
        Ok(())
    }

    pub fn pending_kinds(&self) -> Vec<DecisionKind> {
        self.pending.iter().map(|p| p.kind).collect()
    }

    pub fn summary(&self) -> ProjectSummary {
        ProjectSummary {
            id: self.id.clone(),
            interest: self.interest.clone(),
            phase: self.phase,
            phase_name: self.phase.name().to_owned(),
            direction: self.direction.as_ref().map(|d| d.title.clone()),
            track: self.track,
            pending: self.pending_kinds(),
            decisions: self.decisions.len(),
            selected_gap: self.selected_gap,
            method: self
                .development
                .as_ref()
                .and_then(|d| d.method.as_ref().or(d.state.tested.last()))
                .map(|m| m.name.clone()),
            finalized: self.development.as_ref().map(|d| d.finalized),
            review_rounds: self.reviews.len(),
            events: self.transcript.len(),
            spent: self.spent,
        }
    }

    /// The project's view of its probed gaps, strongest first.
    pub fn gaps(&self, wm: &WorldModel) -> Vec<GapView> {
        let Some(cs) = &self.consensus else {
            return Vec::new();
        };
        let mut out: Vec<GapView> = cs
            .gaps
            .values()
            .map(|g| {
                let node = cs.gap_nodes.get(&g.key).copied();
                GapView {
                    node,
                    key: g.key.clone(),
                    description: g.description.clone(),
                    gap_type: g.gap_type,
                    multiplicity: g.multiplicity,
                    proposers: g.proposers.clone(),
                    evidence: g.evidence.clone(),
                    uncertainty: node
                        .and_then(|n| wm.uncertainty(n.into()))
                        .unwrap_or(g.uncertainty),
                }
            })
            .collect();
        out.sort_by(|a, b| b.multiplicity.cmp(&a.multiplicity).then_with(|| a.key.cmp(&b.key)));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub id: String,
    pub interest: String,
    pub phase: Phase,
    pub phase_name: String,
    pub direction: Option<String>,
    pub track: Option<GapType>,
    pub pending: Vec<DecisionKind>,
    pub decisions: usize,
    pub selected_gap: Option<NodeId>,
    pub method: Option<String>,
    pub finalized: Option<bool>,
    pub review_rounds: usize,
    pub events: usize,
    pub spent: Spent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapView {
    pub node: Option<NodeId>,
    pub key: String,
    pub description: String,
    pub gap_type: GapType,
    pub multiplicity: usize,
    pub proposers: Vec<String>,
    pub evidence: Vec<ElementId>,
    pub uncertainty: Uncertainty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceReport {
    pub project: String,
    pub from: Phase,
    pub to: Phase,
    pub pending: Vec<DecisionKind>,
    /// Transcript events the step appended.
    pub events: usize,
    pub nodes: usize,
    pub edges: usize,
}

pub struct Engine {
    config: EngineConfig,
    gateway: Gateway,
    wm: WorldModel,
    projects: BTreeMap<String, ProjectState>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Engine {
    pub fn new(config: EngineConfig, gateway: Gateway) -> Self {
        Self::with_model(config, gateway, WorldModel::new())
    }

    /// An engine whose projects build on an existing model.
    pub fn with_model(config: EngineConfig, gateway: Gateway, wm: WorldModel) -> Self {
        Engine {
            config,
            gateway,
            wm,
            projects: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Swaps the agent backends, keeping the spent budget.
    pub fn set_gateway(&mut self, gateway: Gateway) {
        let spent = self.gateway.budget().ledger();
        let mut ledger = gateway.budget().ledger();
        ledger.spent_calls = spent.spent_calls.min(ledger.max_calls);
        ledger.spent_tokens = spent.spent_tokens.min(ledger.max_tokens);
        gateway.budget().restore(ledger);
        self.gateway = gateway;
    }

    pub fn set_auto_select(&mut self, on: bool) {
        self.config.auto_select = on;
    }

    pub fn world_model(&self) -> &WorldModel {
        &self.wm
    }

    pub fn projects(&self) -> impl Iterator<Item = &ProjectState> {
        self.projects.values()
    }

    pub fn project(&self, id: &str) -> Result<&ProjectState, EngineError> {
        self.projects.get(id).ok_or_else(|| EngineError::UnknownProject(id.to_owned()))
    }

    pub fn pending_decisions(&self, id: &str) -> Result<&[PendingDecision], EngineError> {
        Ok(&self.project(id)?.pending)
    }

    /// Reads the seeds, brainstorms ranked directions and expands queries,
    /// then waits on `select_direction`.
    pub fn start_project(
        &mut self,
        id: &str,
        interest: &str,
        seeds: Vec<PaperRecord>,
    ) -> Result<&ProjectState, EngineError> {
        if !valid_id(id) {
            return Err(EngineError::InvalidProjectId(id.to_owned()));
        }
        if self.projects.contains_key(id) {
            return Err(EngineError::DuplicateProject(id.to_owned()));
        }
        if interest.trim().is_empty() {
            return Err(EngineError::EmptyInterest);
        }
        if seeds.len() > MAX_SEEDS {
            return Err(EngineError::TooManySeeds(seeds.len()));
        }
        let mut st = ProjectState::new(id, interest, seeds);
        self.metered(&mut st, |wm, st, gw, cfg| {
            phases::bootstrap(wm, st, gw)?;
            phases::auto_resolve(wm, st, cfg)
        })?;
        self.projects.insert(id.to_owned(), st);
        Ok(&self.projects[id])
    }

    pub fn submit_decision(&mut self, id: &str, decision: &Decision) -> Result<&ProjectState, EngineError> {
        let mut st = self.project(id)?.clone();
        let mut wm = self.wm.clone();
        phases::decide(&mut wm, &mut st, decision)?;
        self.wm = wm;
        self.projects.insert(id.to_owned(), st);
        Ok(&self.projects[id])
    }

    /// Runs the current phase and moves the pointer on.
    pub fn advance(&mut self, id: &str) -> Result<AdvanceReport, EngineError> {
        let current = self.project(id)?;
        if current.phase == Phase::Done {
            return Err(EngineError::Finished(id.to_owned()));
        }
        if !current.pending.is_empty() {
            return Err(EngineError::Blocked {
                project: id.to_owned(),
                kinds: current.pending_kinds(),
            });
        }
        let mut st = current.clone();
        let from = st.phase;
        let before = st.transcript.len();
        self.metered(&mut st, |wm, st, gw, cfg| {
            phases::step(wm, st, gw, cfg)?;
            phases::auto_resolve(wm, st, cfg)
        })?;
        let report = AdvanceReport {
            project: id.to_owned(),
            from,
            to: st.phase,
            pending: st.pending_kinds(),
            events: st.transcript.len() - before,
            nodes: self.wm.node_count(),
            edges: self.wm.edge_count(),
        };
        self.projects.insert(id.to_owned(), st);
        Ok(report)
    }

    /// Runs `f` on copies of the model and project, keeping both only if it
    /// succeeds. The gateway's own ledger records spending either way.
    fn metered<F>(&mut self, st: &mut ProjectState, f: F) -> Result<(), EngineError>
    where
        F: FnOnce(&mut WorldModel, &mut ProjectState, &Gateway, &EngineConfig) -> Result<(), EngineError>,
    {
        let before = self.gateway.budget().ledger();
        let mut wm = self.wm.clone();
        let mut work = st.clone();
        f(&mut wm, &mut work, &self.gateway, &self.config)?;
        let after = self.gateway.budget().ledger();
        work.spent.calls += after.spent_calls - before.spent_calls;
        work.spent.tokens += after.spent_tokens - before.spent_tokens;
        self.wm = wm;
        *st = work;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
