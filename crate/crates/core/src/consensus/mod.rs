//! Two-round gap probing with shared visibility, corroboration tagging and
//! orchestrator routing.
//!
//! One cycle is a round pair: K probers propose gaps independently, then each
//! sees every round-1 finding and refines its set. Gaps named by two or more
//! distinct agents in round 2 are verified (U=0). The orchestrator then
//! assigns one action to every gap and task, and approved tasks drive the next
//! cycle. The loop stops once no task is approved or the round limit is hit.

mod corroborate;
mod orchestrate;
mod rounds;
pub mod simulate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::roles::{Action, TaskKind};
use crate::gateway::{Gateway, GatewayError};
use crate::transcript::{EventKind, Transcript};
use crate::world_model::{
    Delta, ElementId, GapType, ModelError, NodeAttrs, NodeId, NodeKind, Provenance, Relation, Severity,
    Uncertainty, WorldModel,
};

pub use corroborate::{corroborate, corroborate_with, Matcher, SIMILARITY_THRESHOLD};
pub use orchestrate::{orchestrate, Orchestration};
pub use rounds::{run_round1, run_round2, snapshot, AgentOutput, RoundRecord};

pub const DEFAULT_AGENTS: usize = 3;
pub const DEFAULT_ROUND_LIMIT: u32 = 4;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("invalid consensus configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    MethodFailure,
    BenchmarkCoverage,
    AssumptionChallenging,
}

impl Perspective {
    pub const CYCLE: [Perspective; 3] = [
        Perspective::MethodFailure,
        Perspective::BenchmarkCoverage,
        Perspective::AssumptionChallenging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::MethodFailure => "method_failure",
            Perspective::BenchmarkCoverage => "benchmark_coverage",
            Perspective::AssumptionChallenging => "assumption_challenging",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProberAgent {
    pub id: String,
    pub perspective: Perspective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<String>,
}

/// `prober-1..=k`, perspectives assigned round-robin.
pub fn default_agents(k: usize) -> Vec<ProberAgent> {
    (0..k)
        .map(|i| ProberAgent {
            id: format!("prober-{}", i + 1),
            perspective: Perspective::CYCLE[i % Perspective::CYCLE.len()],
            assignment: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapCandidate {
    pub description: String,
    pub gap_type: GapType,
    pub evidence: Vec<ElementId>,
    pub proposer: String,
    pub round: u32,
    pub canonical_key: String,
}

impl GapCandidate {
    pub fn new(description: impl Into<String>, gap_type: GapType, proposer: impl Into<String>, round: u32) -> Self {
        let description = description.into();
        GapCandidate {
            canonical_key: crate::text::normalize(&description),
            description,
            gap_type,
            evidence: Vec::new(),
            proposer: proposer.into(),
            round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProposal {
    pub id: String,
    pub description: String,
    pub kind: TaskKind,
    pub targets: Vec<String>,
    pub proposer: String,
}

/// A gap after corroboration: `multiplicity` distinct round-2 proposers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorroboratedGap {
    pub key: String,
    pub description: String,
    pub gap_type: GapType,
    pub evidence: Vec<ElementId>,
    pub proposers: Vec<String>,
    pub multiplicity: usize,
    pub uncertainty: Uncertainty,
}

/// The corroboration rule: verified iff at least two distinct proposers.
pub fn uncertainty_for(multiplicity: usize) -> Uncertainty {
    if multiplicity >= 2 {
        Uncertainty::Verified
    } else {
        Uncertainty::Unverified
    }
}

/// One action on one subject (gap key or task id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorDecision {
    pub cycle: u32,
    pub action: Action,
    pub subject: String,
    pub rationale: String,
    /// For merges, the key of the merged gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_into: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_agent: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub agents: usize,
    pub round_limit: u32,
    /// When set, gaps whose descriptions reach this similarity are treated
    /// as one for corroboration. Identity is the canonical key otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            agents: DEFAULT_AGENTS,
            round_limit: DEFAULT_ROUND_LIMIT,
            similarity: None,
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.agents == 0 {
            return Err(ConsensusError::Config("at least one prober is required".into()));
        }
        if self.round_limit < 2 {
            return Err(ConsensusError::Config("round_limit must be at least 2".into()));
        }
        if self.similarity.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return Err(ConsensusError::Config("similarity threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusStatus {
    Running,
    /// Stopped because no task was approved.
    Quiescent,
    /// Stopped at the round limit with tasks still approved.
    LimitReached,
}

/// Resumable protocol state; every field survives a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub config: ConsensusConfig,
    pub agents: Vec<ProberAgent>,
    /// Task payload shown to every prober (direction, planted gap in simulations).
    pub task: Value,
    pub cycles: u32,
    pub rounds_executed: u32,
    pub status: ConsensusStatus,
    /// Accumulated G*, keyed by gap key.
    pub gaps: BTreeMap<String, CorroboratedGap>,
    pub gap_nodes: BTreeMap<String, NodeId>,
    /// T* of the latest cycle.
    pub approved_tasks: Vec<TaskProposal>,
    pub decisions: Vec<OrchestratorDecision>,
    pub rounds: Vec<RoundRecord>,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub verified_gaps: Vec<CorroboratedGap>,
    pub gap_nodes: Vec<NodeId>,
    pub approved_tasks: Vec<TaskProposal>,
    pub decisions: Vec<OrchestratorDecision>,
    pub rounds_executed: u32,
    pub quiescent: bool,
    pub rounds: Vec<RoundRecord>,
    pub transcript: Transcript,
}

impl ConsensusState {
    pub fn new(config: ConsensusConfig, task: Value) -> Result<Self, ConsensusError> {
        config.validate()?;
        Ok(ConsensusState {
            agents: default_agents(config.agents),
            config,
            task,
            cycles: 0,
            rounds_executed: 0,
            status: ConsensusStatus::Running,
            gaps: BTreeMap::new(),
            gap_nodes: BTreeMap::new(),
            approved_tasks: Vec::new(),
            decisions: Vec::new(),
            rounds: Vec::new(),
            transcript: Transcript::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.status != ConsensusStatus::Running
    }

    /// Runs one round pair, corroborates, orchestrates, and commits the
    /// cycle's G* to the model. Nothing is committed if orchestration fails.
    pub fn run_cycle(
        &mut self,
        wm: &mut WorldModel,
        gateway: &Gateway,
        provenance: &Provenance,
    ) -> Result<(), ConsensusError> {
        if self.is_done() {
            return Ok(());
        }
        let cycle = self.cycles + 1;
        let mut transcript = Transcript::starting_at(self.transcript.next_seq());

        let r1 = run_round1(&self.agents, wm, &self.task, cycle, gateway, &mut transcript);
        let union: Vec<GapCandidate> = r1.outputs.iter().flat_map(|o| o.gaps.iter().cloned()).collect();
        let r2 = run_round2(&self.agents, wm, &self.task, cycle, &union, gateway, &mut transcript);
        let sets: Vec<Vec<GapCandidate>> = r2.outputs.iter().map(|o| o.gaps.clone()).collect();
        let tasks: Vec<TaskProposal> = r2.outputs.iter().flat_map(|o| o.tasks.iter().cloned()).collect();

        let gaps = match self.config.similarity {
            Some(t) => corroborate_with(&sets, Some((&crate::text::title_similarity, t))),
            None => corroborate(&sets),
        };
        let outcome = orchestrate(&gaps, &tasks, &self.agents, cycle, gateway)?;
        for d in &outcome.decisions {
            transcript.push("consensus", EventKind::Decision, serde_json::to_value(d).expect("serializable"));
        }

        let mut delta = Delta::new(provenance.clone());
        for g in &outcome.gaps {
            let node = delta.add_node_with(
                NodeAttrs::Gap {
                    description: g.description.clone(),
                    gap_type: g.gap_type,
                    severity: Severity::Medium,
                },
                g.uncertainty,
            );
            for e in &g.evidence {
                if let ElementId::Node(n) = e {
                    if wm.node(*n).is_some_and(|x| x.kind() == NodeKind::Module) {
                        delta.add_edge((*n).into(), Relation::Causes, node, None);
                    }
                }
            }
        }
        delta.provenance = delta
            .provenance
            .derived_from(outcome.gaps.iter().flat_map(|g| g.evidence.iter().copied()));
        let committed = if delta.is_empty() { None } else { Some(wm.merge(delta)?) };

        // success: fold the cycle into the state
        if let Some(report) = &committed {
            for (g, id) in outcome.gaps.iter().zip(&report.node_ids) {
                self.gap_nodes.insert(g.key.clone(), *id);
            }
            transcript.push(
                "consensus",
                EventKind::Commit,
                json!({"cycle": cycle, "commit": report.commit, "nodes": report.node_ids}),
            );
        }
        for g in outcome.gaps {
            match self.gaps.get_mut(&g.key) {
                Some(prev) => {
                    prev.uncertainty = prev.uncertainty.min(g.uncertainty);
                    for p in g.proposers {
                        if !prev.proposers.contains(&p) {
                            prev.proposers.push(p);
                        }
                    }
                    prev.proposers.sort();
                    prev.multiplicity = prev.multiplicity.max(g.multiplicity);
                }
                None => {
                    self.gaps.insert(g.key.clone(), g);
                }
            }
        }
        for a in &mut self.agents {
            a.assignment = outcome.assignments.get(&a.id).cloned();
        }
        self.approved_tasks = outcome.approved;
        self.decisions.extend(outcome.decisions);
        self.rounds.push(r1);
        self.rounds.push(r2);
        self.cycles = cycle;
        self.rounds_executed += 2;
        self.status = if self.approved_tasks.is_empty() {
            ConsensusStatus::Quiescent
        } else if self.rounds_executed + 2 > self.config.round_limit {
            ConsensusStatus::LimitReached
        } else {
            ConsensusStatus::Running
        };
        transcript.push(
            "consensus",
            EventKind::Iteration,
            json!({"cycle": cycle, "rounds_executed": self.rounds_executed, "status": self.status}),
        );
        self.transcript.absorb(transcript, None);
        Ok(())
    }

    pub fn result(&self) -> ConsensusResult {
        ConsensusResult {
            verified_gaps: self.gaps.values().cloned().collect(),
            gap_nodes: self.gaps.keys().filter_map(|k| self.gap_nodes.get(k).copied()).collect(),
            approved_tasks: self.approved_tasks.clone(),
            decisions: self.decisions.clone(),
            rounds_executed: self.rounds_executed,
            quiescent: self.status == ConsensusStatus::Quiescent,
            rounds: self.rounds.clone(),
            transcript: self.transcript.clone(),
        }
    }
}

/// Cycles until quiescence or the round limit, committing each cycle's gaps.
pub fn run_consensus(
    wm: &mut WorldModel,
    gateway: &Gateway,
    config: ConsensusConfig,
    task: Value,
    provenance: Provenance,
) -> Result<ConsensusResult, ConsensusError> {
    let mut state = ConsensusState::new(config, task)?;
    while !state.is_done() {
        state.run_cycle(wm, gateway, &provenance)?;
    }
    Ok(state.result())
}
