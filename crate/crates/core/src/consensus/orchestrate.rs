use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::{uncertainty_for, ConsensusError, CorroboratedGap, OrchestratorDecision, ProberAgent, TaskProposal};
use crate::gateway::roles::{Action, OrchestratorResponse, RawDecision, TaskKind};
use crate::gateway::{AgentRequest, AgentRole, Gateway};
use crate::text::normalize;

/// What one orchestration step leaves behind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Orchestration {
    /// G*: continued, merged and redirected gaps, ordered by key.
    pub gaps: Vec<CorroboratedGap>,
    /// T*: approved tasks, including the investigation tasks created by
    /// redirecting a gap.
    pub approved: Vec<TaskProposal>,
    /// One entry per subject.
    pub decisions: Vec<OrchestratorDecision>,
    /// Next-cycle assignment per agent id.
    pub assignments: BTreeMap<String, String>,
}

enum Subject<'a> {
    Gap(&'a CorroboratedGap),
    Task(&'a TaskProposal),
}

/// Totality and reference checks on the orchestrator's reply.
fn check(
    resp: &OrchestratorResponse,
    gaps: &[CorroboratedGap],
    tasks: &[TaskProposal],
    agents: &[ProberAgent],
) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    let agent_ids: BTreeSet<&str> = agents.iter().map(|a| a.id.as_str()).collect();
    for d in &resp.decisions {
        for s in &d.subjects {
            let subject = lookup(s, gaps, tasks).ok_or_else(|| format!("unknown subject `{s}`"))?;
            if !seen.insert(s.as_str()) {
                return Err(format!("subject `{s}` decided more than once"));
            }
            match (d.action, subject) {
                (Action::Merge, Subject::Task(_)) => return Err(format!("task `{s}` cannot be merged")),
                (Action::Redirect, Subject::Gap(_)) => {
                    let t = d.target_agent.as_deref().unwrap_or_default();
                    if !agent_ids.contains(t) {
                        return Err(format!("redirect of `{s}` names unknown agent `{t}`"));
                    }
                }
                (Action::Redirect, Subject::Task(t)) => {
                    if redirect_target(d, t, &agent_ids).is_none() {
                        return Err(format!("redirect of task `{s}` has no known target agent"));
                    }
                }
                _ => {}
            }
        }
    }
    let missing: Vec<&str> = gaps
        .iter()
        .map(|g| g.key.as_str())
        .chain(tasks.iter().map(|t| t.id.as_str()))
        .filter(|s| !seen.contains(s))
        .collect();
    if !missing.is_empty() {
        return Err(format!("no decision for {}", missing.join(", ")));
    }
    Ok(())
}

fn lookup<'a>(s: &str, gaps: &'a [CorroboratedGap], tasks: &'a [TaskProposal]) -> Option<Subject<'a>> {
    gaps.iter()
        .find(|g| g.key == s)
        .map(Subject::Gap)
        .or_else(|| tasks.iter().find(|t| t.id == s).map(Subject::Task))
}

fn redirect_target<'a>(d: &'a RawDecision, t: &'a TaskProposal, agents: &BTreeSet<&str>) -> Option<&'a str> {
    d.target_agent
        .as_deref()
        .into_iter()
        .chain(t.targets.iter().map(String::as_str))
        .find(|a| agents.contains(a))
}

/// Asks the orchestrator for one action per gap and task, then applies it.
/// With nothing to decide the orchestrator is not invoked.
pub fn orchestrate(
    gaps: &[CorroboratedGap],
    tasks: &[TaskProposal],
    agents: &[ProberAgent],
    cycle: u32,
    gateway: &Gateway,
) -> Result<Orchestration, ConsensusError> {
    if gaps.is_empty() && tasks.is_empty() {
        return Ok(Orchestration::default());
    }
    let req = AgentRequest::new(
        AgentRole::Orchestrator,
        "orchestrator",
        json!({
            "cycle": cycle,
            "agents": agents,
            "gaps": gaps,
            "tasks": tasks,
        }),
    );
    let resp: OrchestratorResponse = gateway.invoke_typed(&req, |r| check(r, gaps, tasks, agents))?;
    Ok(apply(&resp, gaps, tasks, agents, cycle))
}

fn apply(
    resp: &OrchestratorResponse,
    gaps: &[CorroboratedGap],
    tasks: &[TaskProposal],
    agents: &[ProberAgent],
    cycle: u32,
) -> Orchestration {
    let agent_ids: BTreeSet<&str> = agents.iter().map(|a| a.id.as_str()).collect();
    let mut out = Orchestration::default();
    let mut kept: BTreeMap<String, CorroboratedGap> = BTreeMap::new();
    let record = |out: &mut Orchestration, d: &RawDecision, subject: &str, merged: Option<&str>, target: Option<&str>| {
        out.decisions.push(OrchestratorDecision {
            cycle,
            action: d.action,
            subject: subject.to_owned(),
            rationale: d.rationale.clone(),
            merged_into: merged.map(str::to_owned),
            target_agent: target.map(str::to_owned),
        });
    };

    for d in &resp.decisions {
        match d.action {
            Action::Merge => {
                let members: Vec<&CorroboratedGap> = d
                    .subjects
                    .iter()
                    .filter_map(|s| gaps.iter().find(|g| &g.key == s))
                    .collect();
                let description = d
                    .merged_description
                    .clone()
                    .filter(|m| !m.trim().is_empty())
                    .unwrap_or_else(|| members[0].description.clone());
                let key = normalize(&description);
                let proposers: BTreeSet<String> = members.iter().flat_map(|g| g.proposers.iter().cloned()).collect();
                let evidence: BTreeSet<_> = members.iter().flat_map(|g| g.evidence.iter().copied()).collect();
                let merged = CorroboratedGap {
                    key: key.clone(),
                    description,
                    gap_type: members[0].gap_type,
                    evidence: evidence.into_iter().collect(),
                    multiplicity: proposers.len(),
                    uncertainty: uncertainty_for(proposers.len()),
                    proposers: proposers.into_iter().collect(),
                };
                for s in &d.subjects {
                    record(&mut out, d, s, Some(&key), None);
                }
                kept.insert(key, merged);
            }
            Action::Kill => {
                for s in &d.subjects {
                    record(&mut out, d, s, None, None);
                }
            }
            Action::Continue | Action::Redirect => {
                for s in &d.subjects {
                    match lookup(s, gaps, tasks) {
                        Some(Subject::Gap(g)) => {
                            let target = (d.action == Action::Redirect)
                                .then(|| d.target_agent.as_deref())
                                .flatten();
                            if let Some(agent) = target {
                                let description = format!("investigate: {}", g.description);
                                out.assignments.insert(agent.to_owned(), description.clone());
                                out.approved.push(TaskProposal {
                                    id: format!("c{cycle}-redirect-{}", out.approved.len() + 1),
                                    description,
                                    kind: TaskKind::RedirectAgent,
                                    targets: vec![agent.to_owned()],
                                    proposer: "orchestrator".into(),
                                });
                            }
                            record(&mut out, d, s, None, target);
                            kept.entry(g.key.clone()).or_insert_with(|| g.clone());
                        }
                        Some(Subject::Task(t)) => {
                            let target = if d.action == Action::Redirect {
                                redirect_target(d, t, &agent_ids)
                            } else {
                                task_owner(t, &agent_ids)
                            };
                            if let Some(agent) = target {
                                out.assignments.insert(agent.to_owned(), t.description.clone());
                            }
                            record(&mut out, d, s, None, target);
                            out.approved.push(t.clone());
                        }
                        None => unreachable!("subjects are checked before apply"),
                    }
                }
            }
        }
    }
    out.gaps = kept.into_values().collect();
    out
}

/// Where an approved task lands: its first agent target, else its proposer.
fn task_owner<'a>(t: &'a TaskProposal, agents: &BTreeSet<&str>) -> Option<&'a str> {
    t.targets
        .iter()
        .map(String::as_str)
        .find(|a| agents.contains(a))
        .or_else(|| agents.contains(t.proposer.as_str()).then_some(t.proposer.as_str()))
}
