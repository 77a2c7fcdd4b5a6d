//! The quality-gated development loop.
//!
//! Each iteration traces a verified gap to a mechanism, maps the mechanism
//! to other fields, searches each field for techniques not tried before,
//! tests the new (field, technique) pairs in parallel and puts the first
//! method whose tester confirmed the mechanism through the ten-criterion
//! gate. A pass finalizes; a failure reassesses the mechanism, the fields or
//! the gap itself. Every iteration commits one delta.

mod gate;
mod plan;
pub mod simulate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::gateway::roles::{FieldQuery, ReassessBranch, ReassessResponse, TechniqueResponse, TesterResponse};
use crate::gateway::{AgentRequest, AgentRole, Gateway, GatewayError};
use crate::text::normalize;
use crate::transcript::{EventKind, Transcript};
use crate::world_model::{
    Delta, GapType, MergeReport, ModelError, NodeAttrs, NodeId, NodeKind, Provenance, Relation, Severity,
    Uncertainty, WorldModel,
};

pub use gate::{evaluate_gate, Criterion, GateResult, Verdict};
pub use plan::{
    build_causal_chain, map_fields, require_verified_gap, CausalChain, ChainLink, FieldSet, Mechanism, CHAIN_LENGTH,
};

pub const DEFAULT_T_MAX: u32 = 5;

#[derive(Debug, Error)]
pub enum DevError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("node {0} is not a gap")]
    NotAGap(NodeId),
    #[error("gap {0} is unverified; the loop only runs on corroborated gaps")]
    UnverifiedGap(NodeId),
    #[error("the model has no module or benchmark nodes to anchor a causal chain")]
    NoAnchors,
    #[error("unanchored causal chain: {0}")]
    Unanchored(String),
    #[error("mechanism has no origin field")]
    NoOriginField,
    #[error("field mapping returned only the origin field `{0}`")]
    OnlyOriginField(String),
    #[error("unknown gate criterion `{0}`")]
    UnknownCriterion(String),
    #[error("gate criterion `{0}` has no verdict")]
    MissingCriterion(Criterion),
    #[error("gate criterion `{0}` judged twice")]
    DuplicateCriterion(Criterion),
    #[error("reassessment requested for a method that passed the gate")]
    GatePassed,
    #[error("T_max must be at least 1")]
    ZeroIterations,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestedMethod {
    pub iteration: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub field: String,
    pub technique: String,
    pub mechanism_confirmed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReassessRecord {
    pub iteration: u32,
    pub branch: ReassessBranch,
    pub rationale: String,
    /// Set when the branch was implied by the iteration rather than chosen
    /// by the reassessor (nothing left to search, or no confirmed test).
    #[serde(default)]
    pub forced: bool,
}

/// Loop memory: what was searched, what was tested, how each failure was
/// routed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoopState {
    pub iteration: u32,
    /// `(field, normalized technique)` pairs already searched.
    pub searched: BTreeSet<(String, String)>,
    pub tested: Vec<TestedMethod>,
    pub reassess_history: Vec<ReassessRecord>,
}

impl LoopState {
    /// Takes the first technique per field whose pair is new, in field
    /// order, marking each taken pair as searched.
    pub fn take_unsearched(&mut self, candidates: &[(FieldQuery, Vec<String>)]) -> Vec<(FieldQuery, String)> {
        let mut picked = Vec::new();
        for (field, techniques) in candidates {
            let f = normalize(&field.field);
            for t in techniques {
                if self.searched.insert((f.clone(), normalize(t))) {
                    picked.push((field.clone(), t.clone()));
                    break;
                }
            }
        }
        picked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevConfig {
    pub t_max: u32,
}

impl Default for DevConfig {
    fn default() -> Self {
        DevConfig { t_max: DEFAULT_T_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevOutcome {
    pub gap: NodeId,
    pub finalized: bool,
    /// The method that passed the gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<TestedMethod>,
    pub state: LoopState,
    /// Working gap text after any reformulation.
    pub gap_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<CausalChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<FieldSet>,
    /// One merge per iteration, in order.
    pub commits: Vec<MergeReport>,
    pub transcript: Transcript,
}

/// Chooses how to redirect after a gate failure.
pub fn reassess(state: &LoopState, gate: &GateResult, gateway: &Gateway) -> Result<ReassessResponse, DevError> {
    if gate.q {
        return Err(DevError::GatePassed);
    }
    let failed: Vec<&str> = gate.failed().into_iter().map(Criterion::id).collect();
    let req = AgentRequest::new(
        AgentRole::Reassessor,
        "reassessor",
        json!({"failed_criteria": failed, "gate": gate, "history": state}),
    );
    Ok(gateway.invoke_typed(&req, |_| Ok(()))?)
}

fn search(fields: &FieldSet, mechanism: &Mechanism, state: &LoopState, gateway: &Gateway) -> Vec<(FieldQuery, Vec<String>, Option<String>)> {
    std::thread::scope(|s| {
        let handles: Vec<_> = fields
            .fields
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let req = AgentRequest::new(
                    AgentRole::TechniqueSearch,
                    format!("technique-search-{}", i + 1),
                    json!({"field": f.field, "query": f.query, "mechanism": mechanism.statement, "history": state}),
                );
                s.spawn(move || gateway.invoke_typed::<TechniqueResponse, _>(&req, |_| Ok(())))
            })
            .collect();
        fields
            .fields
            .iter()
            .zip(handles)
            .map(|(f, h)| match h.join().expect("search thread panicked") {
                Ok(r) => (f.clone(), r.techniques, None),
                Err(e) => (f.clone(), Vec::new(), Some(e.to_string())),
            })
            .collect()
    })
}

fn test_all(
    picks: &[(FieldQuery, String)],
    mechanism: &Mechanism,
    gap_text: &str,
    iteration: u32,
    gateway: &Gateway,
) -> Vec<Result<TestedMethod, String>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = picks
            .iter()
            .enumerate()
            .map(|(i, (f, t))| {
                let req = AgentRequest::new(
                    AgentRole::Tester,
                    format!("tester-{}", i + 1),
                    json!({"gap": gap_text, "mechanism": mechanism.statement, "field": f.field,
                           "query": f.query, "technique": t}),
                );
                s.spawn(move || {
                    let r: TesterResponse = gateway.invoke_typed(&req, |_| Ok(())).map_err(|e| e.to_string())?;
                    Ok(TestedMethod {
                        iteration,
                        name: r.method.name,
                        description: r.method.description,
                        field: f.field.clone(),
                        technique: t.clone(),
                        mechanism_confirmed: r.mechanism_confirmed,
                        gate: None,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("tester thread panicked")).collect()
    })
}

/// Runs at most `t_max` iterations on a verified gap. Exhausting `t_max` is
/// an ordinary, non-finalized outcome.
pub fn run_dev_loop(
    gap: NodeId,
    wm: &mut WorldModel,
    gateway: &Gateway,
    config: DevConfig,
    provenance: Provenance,
) -> Result<DevOutcome, DevError> {
    if config.t_max == 0 {
        return Err(DevError::ZeroIterations);
    }
    let mut gap_text = require_verified_gap(wm, gap)?.to_owned();
    let mut state = LoopState::default();
    let mut transcript = Transcript::new();
    let mut chain: Option<CausalChain> = None;
    let mut fields: Option<FieldSet> = None;
    let mut last: (Option<CausalChain>, Option<FieldSet>) = (None, None);
    let mut commits = Vec::new();
    let provenance = provenance.derived_from([gap.into()]);

    for t in 1..=config.t_max {
        state.iteration = t;
        transcript.push("dev_loop", EventKind::Iteration, json!({"iteration": t, "gap": gap_text}));

        let c = match chain.take() {
            Some(c) => c,
            None => {
                let c = build_causal_chain(gap, &gap_text, wm, gateway, Some(&state))?;
                transcript.push("dev_loop", EventKind::Finding, json!({"iteration": t, "chain": c}));
                c
            }
        };
        let mechanism = c.mechanism();
        let fs = match fields.take() {
            Some(f) => f,
            None => {
                let f = map_fields(&mechanism, gateway, Some(&state))?;
                transcript.push("dev_loop", EventKind::Finding, json!({"iteration": t, "fields": f}));
                f
            }
        };

        let found = search(&fs, &mechanism, &state, gateway);
        for (f, _, err) in &found {
            if let Some(e) = err {
                transcript.push("dev_loop", EventKind::Failure, json!({"iteration": t, "field": f.field, "error": e}));
            }
        }
        let candidates: Vec<(FieldQuery, Vec<String>)> = found.into_iter().map(|(f, ts, _)| (f, ts)).collect();
        let picks = state.take_unsearched(&candidates);
        transcript.push(
            "dev_loop",
            EventKind::Finding,
            json!({"iteration": t, "searched": picks.iter().map(|(f, tq)| [&f.field, tq]).collect::<Vec<_>>()}),
        );

        let mut tested: Vec<TestedMethod> = Vec::new();
        for r in test_all(&picks, &mechanism, &gap_text, t, gateway) {
            match r {
                Ok(m) => tested.push(m),
                Err(e) => {
                    transcript.push("dev_loop", EventKind::Failure, json!({"iteration": t, "error": e}));
                }
            }
        }

        let mut verdict: Option<(usize, GateResult)> = None;
        if let Some(i) = tested.iter().position(|m| m.mechanism_confirmed) {
            let g = evaluate_gate(&tested[i], &mechanism.statement, gateway)?;
            transcript.push(
                "dev_loop",
                EventKind::Decision,
                json!({"iteration": t, "method": tested[i].name, "gate": g}),
            );
            tested[i].gate = Some(g.clone());
            verdict = Some((i, g));
        }
        let passed = verdict.as_ref().is_some_and(|(_, g)| g.q);

        // the iteration's delta: mechanism, tested methods, outcome
        let mut delta = Delta::new(provenance.clone());
        let confirmed = tested.iter().any(|m| m.mechanism_confirmed);
        let mech = delta.add_node_with(
            NodeAttrs::Gap {
                description: mechanism.statement.clone(),
                gap_type: GapType::Methods,
                severity: Severity::High,
            },
            if confirmed {
                Uncertainty::Verified
            } else {
                Uncertainty::Unverified
            },
        );
        for a in &mechanism.anchors {
            if wm.node(*a).is_some_and(|n| n.kind() == NodeKind::Module) {
                delta.add_edge((*a).into(), Relation::Causes, mech, None);
            }
        }
        for (i, m) in tested.iter().enumerate() {
            let node = delta.add_node(NodeAttrs::Method {
                name: m.name.clone(),
                paradigm: m.field.clone(),
                description: format!("{} from {}", m.technique, m.field),
            });
            if !m.mechanism_confirmed {
                let lim = delta.add_node(NodeAttrs::limitation(
                    format!("does not confirm the mechanism: {}", mechanism.statement),
                    [],
                ));
                delta.add_edge(node, Relation::HasLimitation, lim, None);
            } else if let Some((j, g)) = &verdict {
                if *j == i && g.q {
                    delta.add_edge(node, Relation::Solves, gap.into(), None);
                    delta.add_edge(node, Relation::Solves, mech, None);
                } else if *j == i {
                    let failed: Vec<&str> = g.failed().into_iter().map(Criterion::id).collect();
                    let lim = delta.add_node(NodeAttrs::limitation(
                        format!("fails the quality gate on {}", failed.join(", ")),
                        [],
                    ));
                    delta.add_edge(node, Relation::HasLimitation, lim, None);
                }
            }
        }
        let report = wm.merge(delta)?;
        transcript.push(
            "dev_loop",
            EventKind::Commit,
            json!({"iteration": t, "commit": report.commit, "added_nodes": report.added_nodes.len()}),
        );
        commits.push(report);
        state.tested.extend(tested.iter().cloned());

        if passed {
            let (i, _) = verdict.expect("passed implies a verdict");
            return Ok(DevOutcome {
                gap,
                finalized: true,
                method: Some(tested[i].clone()),
                state,
                gap_text,
                chain: Some(c),
                fields: Some(fs),
                commits,
                transcript,
            });
        }

        let record = match (&verdict, picks.is_empty()) {
            (_, true) => ReassessRecord {
                iteration: t,
                branch: ReassessBranch::UpdateFields,
                rationale: "no unsearched technique in the current fields".into(),
                forced: true,
            },
            (None, false) => ReassessRecord {
                iteration: t,
                branch: ReassessBranch::UpdateMechanism,
                rationale: "no tester confirmed the mechanism".into(),
                forced: true,
            },
            (Some((_, g)), false) => {
                let r = reassess(&state, g, gateway)?;
                if r.branch == ReassessBranch::UpdateGap {
                    if let Some(text) = r.reformulated_gap.as_ref().filter(|s| !s.trim().is_empty()) {
                        gap_text = text.clone();
                    }
                }
                ReassessRecord {
                    iteration: t,
                    branch: r.branch,
                    rationale: r.rationale,
                    forced: false,
                }
            }
        };
        transcript.push(
            "dev_loop",
            EventKind::Decision,
            json!({"iteration": t, "reassess": record}),
        );
        // update_fields keeps the chain; the other branches rebuild it
        if record.branch == ReassessBranch::UpdateFields {
            chain = Some(c.clone());
        }
        state.reassess_history.push(record);
        last = (Some(c), Some(fs));
    }
    Ok(DevOutcome {
        gap,
        finalized: false,
        method: None,
        state,
        gap_text,
        chain: last.0,
        fields: last.1,
        commits,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use serde_json::Value;

    fn setup() -> (WorldModel, NodeId, NodeId) {
        let mut wm = WorldModel::new();
        let m = wm
            .add_node(NodeAttrs::module("lagrange multiplier", crate::world_model::ModuleType::Training, ""))
            .unwrap();
        let mut d = Delta::new(Provenance::default());
        d.add_node_with(NodeAttrs::gap("safety methods degrade", GapType::Methods), Uncertainty::Verified);
        let g = wm.merge(d).unwrap().node_ids[0];
        (wm, g, m)
    }

    fn gate_reply(pass_all: bool) -> Value {
        let v: Vec<Value> = Criterion::ALL
            .iter()
            .map(|c| json!({"criterion": c.id(), "pass": pass_all || *c != Criterion::Ablation, "evidence": "e"}))
            .collect();
        json!({ "criteria": v })
    }

    fn scripted(anchor: NodeId, pass: bool) -> ScriptedBackend {
        let b = ScriptedBackend::new();
        let links: Vec<Value> = (1..=5)
            .map(|i| json!({"cause": if i == 5 { "optimization under non-stationarity".to_string() } else { format!("cause {i}") },
                            "anchors": [anchor.to_string()]}))
            .collect();
        b.push(AgentRole::MechanismAnalyst, None, json!({"links": links, "origin_field": "safe rl"}));
        b.push(
            AgentRole::FieldMapper,
            None,
            json!({"fields": [{"field": "online convex optimization", "query": "regret bounds under concept drift"}]}),
        );
        // a fresh technique list each call, so pairs never run out
        let calls = std::sync::atomic::AtomicUsize::new(0);
        b.push_responder(AgentRole::TechniqueSearch, None, move |_| {
            let n = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(json!({"techniques": [format!("technique {n}")]}))
        });
        b.push_responder(AgentRole::Tester, None, |req| {
            Ok(json!({"mechanism_confirmed": true, "method": {"name": format!("{} method", req.context["technique"].as_str().unwrap())}}))
        });
        b.push(AgentRole::GateEvaluator, None, gate_reply(pass));
        b.push(AgentRole::Reassessor, None, json!({"branch": "update_fields", "rationale": "fields inappropriate"}));
        b
    }

    fn count(gw: &Gateway, role: AgentRole) -> usize {
        gw.audit().iter().filter(|r| r.role == role).count()
    }

    #[test]
    fn immediate_pass_finalizes() {
        let (mut wm, g, m) = setup();
        let gw = Gateway::single("s", scripted(m, true));
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig::default(), Provenance::default()).unwrap();
        assert!(out.finalized);
        assert_eq!(out.state.iteration, 1);
        assert_eq!(out.commits.len(), 1);
        let method = out.method.unwrap();
        let node = wm.find(NodeKind::Method, &method.name).unwrap();
        assert!(wm.find_edge(node, Relation::Solves, g).is_some());
    }

    #[test]
    fn failing_gate_runs_to_t_max() {
        let (mut wm, g, m) = setup();
        let gw = Gateway::single("s", scripted(m, false));
        let before = wm.commit_count();
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 5 }, Provenance::default()).unwrap();
        assert!(!out.finalized);
        assert_eq!(out.state.iteration, 5);
        assert_eq!(out.commits.len(), 5);
        assert_eq!(wm.commit_count(), before + 5);
        assert_eq!(out.state.reassess_history.len(), 5);
        assert_eq!(out.state.searched.len(), 5);
        // update_fields keeps the chain
        assert_eq!(count(&gw, AgentRole::MechanismAnalyst), 1);
        assert_eq!(count(&gw, AgentRole::FieldMapper), 5);
    }

    #[test]
    fn update_mechanism_rebuilds_the_chain() {
        let (mut wm, g, m) = setup();
        let b = scripted(m, false);
        b.set(AgentRole::Reassessor, None, json!({"branch": "update_mechanism", "rationale": "mechanism wrong"}));
        let gw = Gateway::single("s", b);
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 2 }, Provenance::default()).unwrap();
        assert_eq!(out.state.reassess_history[0].branch, ReassessBranch::UpdateMechanism);
        assert_eq!(count(&gw, AgentRole::MechanismAnalyst), 2);
    }

    #[test]
    fn update_gap_rewrites_the_working_gap() {
        let (mut wm, g, m) = setup();
        let b = scripted(m, false);
        b.set(
            AgentRole::Reassessor,
            None,
            json!({"branch": "update_gap", "rationale": "too broad", "reformulated_gap": "multipliers lag drifting constraints"}),
        );
        let gw = Gateway::single("s", b);
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 2 }, Provenance::default()).unwrap();
        assert_eq!(out.gap_text, "multipliers lag drifting constraints");
    }

    #[test]
    fn searched_pair_is_skipped() {
        let (mut wm, g, m) = setup();
        let b = scripted(m, false);
        b.push_responder(AgentRole::TechniqueSearch, None, |_| Ok(json!({"techniques": ["Kalman filter", "mirror descent"]})));
        let gw = Gateway::single("s", b);
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 3 }, Provenance::default()).unwrap();
        let techniques: Vec<&str> = out.state.tested.iter().map(|t| t.technique.as_str()).collect();
        assert_eq!(techniques, ["Kalman filter", "mirror descent"]);
        // the third iteration found nothing new and was routed to new fields
        let last = out.state.reassess_history.last().unwrap();
        assert!(last.forced);
        assert_eq!(last.branch, ReassessBranch::UpdateFields);
        assert_eq!(out.state.searched.len(), 2);
    }

    #[test]
    fn unconfirmed_mechanism_forces_update_mechanism() {
        let (mut wm, g, m) = setup();
        let b = scripted(m, true);
        b.push_responder(AgentRole::Tester, None, |_| {
            Ok(json!({"mechanism_confirmed": false, "method": {"name": "m"}}))
        });
        let gw = Gateway::single("s", b);
        let out = run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 1 }, Provenance::default()).unwrap();
        assert!(!out.finalized);
        assert_eq!(count(&gw, AgentRole::GateEvaluator), 0);
        assert_eq!(out.state.reassess_history[0].branch, ReassessBranch::UpdateMechanism);
        assert!(out.state.reassess_history[0].forced);
    }

    #[test]
    fn reassess_rejects_a_pass() {
        let gw = Gateway::single("s", ScriptedBackend::new());
        let pass = GateResult::from_passes([true; 10]);
        assert!(matches!(reassess(&LoopState::default(), &pass, &gw), Err(DevError::GatePassed)));
    }

    #[test]
    fn zero_t_max_rejected() {
        let (mut wm, g, _) = setup();
        let gw = Gateway::single("s", ScriptedBackend::new());
        assert!(matches!(
            run_dev_loop(g, &mut wm, &gw, DevConfig { t_max: 0 }, Provenance::default()),
            Err(DevError::ZeroIterations)
        ));
    }
}
