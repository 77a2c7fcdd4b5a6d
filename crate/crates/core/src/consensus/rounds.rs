use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GapCandidate, ProberAgent, TaskProposal};
use crate::gateway::roles::{ProbeResponse, TaskKind};
use crate::gateway::{AgentRequest, AgentRole, Gateway};
use crate::transcript::{EventKind, Transcript};
use crate::world_model::{NodeKind, WorldModel};

/// One agent's contribution to a round. A failed agent contributes nothing
/// and carries the error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub agent: String,
    pub gaps: Vec<GapCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<TaskProposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub cycle: u32,
    pub round: u32,
    pub outputs: Vec<AgentOutput>,
}

impl RoundRecord {
    pub fn sets(&self) -> impl Iterator<Item = &[GapCandidate]> {
        self.outputs.iter().map(|o| o.gaps.as_slice())
    }
}

/// Read-only view of the model handed to probers.
pub fn snapshot(wm: &WorldModel) -> Value {
    let nodes: Vec<Value> = wm
        .nodes()
        .map(|n| json!({"id": n.id, "kind": n.kind(), "label": n.label(), "uncertainty": n.uncertainty}))
        .collect();
    let edges: Vec<Value> = wm
        .edges()
        .map(|e| json!({"id": e.id, "src": e.src, "relation": e.relation, "dst": e.dst, "uncertainty": e.uncertainty}))
        .collect();
    json!({"nodes": nodes, "edges": edges})
}

struct RoundInput<'a> {
    cycle: u32,
    round: u32,
    task: &'a Value,
    snapshot: Value,
    visible: Option<Value>,
}

/// Runs every agent concurrently and returns only once all have finished,
/// so nothing from this round leaks into the next before it is complete.
fn run_round(
    agents: &[ProberAgent],
    wm: &WorldModel,
    input: RoundInput<'_>,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> RoundRecord {
    let agent_ids: Vec<&str> = agents.iter().map(|a| a.id.as_str()).collect();
    let results: Vec<Result<ProbeResponse, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = agents
            .iter()
            .map(|agent| {
                let mut ctx = json!({
                    "cycle": input.cycle,
                    "round": input.round,
                    "perspective": agent.perspective.as_str(),
                    "assignment": agent.assignment,
                    "task": input.task,
                    "snapshot": input.snapshot,
                });
                if let Some(v) = &input.visible {
                    ctx["visible"] = v.clone();
                }
                let req = AgentRequest::new(AgentRole::Prober, agent.id.clone(), ctx);
                let agent_ids = &agent_ids;
                s.spawn(move || {
                    gateway
                        .invoke_typed(&req, |r: &ProbeResponse| check_probe(r, wm, agent_ids))
                        .map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("prober thread panicked")).collect()
    });

    let mut record = RoundRecord {
        cycle: input.cycle,
        round: input.round,
        outputs: Vec::with_capacity(agents.len()),
    };
    let mut task_no = 0;
    for (agent, r) in agents.iter().zip(results) {
        transcript.push(
            "consensus",
            EventKind::Invocation,
            json!({"cycle": input.cycle, "round": input.round, "agent": agent.id,
                   "perspective": agent.perspective, "assignment": agent.assignment}),
        );
        let mut out = AgentOutput {
            agent: agent.id.clone(),
            gaps: Vec::new(),
            tasks: Vec::new(),
            error: None,
        };
        match r {
            Ok(resp) => {
                for g in resp.gaps {
                    let mut c = GapCandidate::new(g.description, g.gap_type, &agent.id, input.round);
                    c.evidence = g
                        .evidence
                        .iter()
                        .filter_map(|e| wm.resolve_reference(e, &NodeKind::ALL))
                        .collect();
                    out.gaps.push(c);
                }
                // tasks are proposed only once findings are shared
                if input.round >= 2 {
                    for t in resp.tasks {
                        task_no += 1;
                        out.tasks.push(TaskProposal {
                            id: format!("c{}-t{task_no}", input.cycle),
                            description: t.description,
                            kind: t.kind,
                            targets: t.targets,
                            proposer: agent.id.clone(),
                        });
                    }
                }
            }
            Err(e) => {
                transcript.push(
                    "consensus",
                    EventKind::Failure,
                    json!({"cycle": input.cycle, "round": input.round, "agent": agent.id, "error": e}),
                );
                out.error = Some(e);
            }
        }
        for g in &out.gaps {
            transcript.push(
                "consensus",
                EventKind::Finding,
                json!({"cycle": input.cycle, "round": input.round, "agent": agent.id, "gap": g}),
            );
        }
        for t in &out.tasks {
            transcript.push(
                "consensus",
                EventKind::Finding,
                json!({"cycle": input.cycle, "round": input.round, "agent": agent.id, "task": t}),
            );
        }
        record.outputs.push(out);
    }
    record
}

/// Evidence must resolve in the model; agent-targeted tasks must name real agents.
fn check_probe(r: &ProbeResponse, wm: &WorldModel, agents: &[&str]) -> Result<(), String> {
    for g in &r.gaps {
        for e in &g.evidence {
            if wm.resolve_reference(e, &NodeKind::ALL).is_none() {
                return Err(format!("evidence `{e}` does not resolve in the model"));
            }
        }
    }
    for t in &r.tasks {
        if t.kind == TaskKind::RedirectAgent && !t.targets.iter().any(|a| agents.contains(&a.as_str())) {
            return Err(format!("redirect task `{}` names no known agent", t.description));
        }
    }
    Ok(())
}

/// Independent proposals: no agent sees another's output.
pub fn run_round1(
    agents: &[ProberAgent],
    wm: &WorldModel,
    task: &Value,
    cycle: u32,
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> RoundRecord {
    let input = RoundInput {
        cycle,
        round: 1,
        task,
        snapshot: snapshot(wm),
        visible: None,
    };
    run_round(agents, wm, input, gateway, transcript)
}

/// Shared visibility: every agent receives the full round-1 union.
pub fn run_round2(
    agents: &[ProberAgent],
    wm: &WorldModel,
    task: &Value,
    cycle: u32,
    round1: &[GapCandidate],
    gateway: &Gateway,
    transcript: &mut Transcript,
) -> RoundRecord {
    let visible: Vec<Value> = round1
        .iter()
        .map(|g| json!({"description": g.description, "gap_type": g.gap_type, "evidence": g.evidence, "proposer": g.proposer}))
        .collect();
    let input = RoundInput {
        cycle,
        round: 2,
        task,
        snapshot: snapshot(wm),
        visible: Some(Value::Array(visible)),
    };
    run_round(agents, wm, input, gateway, transcript)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::default_agents;
    use crate::gateway::{ScriptedBackend, StochasticAgentConfig, StochasticBackend};

    fn gap(desc: &str) -> Value {
        json!({"description": desc, "gap_type": "methods"})
    }

    #[test]
    fn one_agent_two_gaps() {
        let b = ScriptedBackend::new();
        b.push(AgentRole::Prober, None, json!({"gaps": [gap("a"), gap("b")]}));
        let gw = Gateway::single("s", b);
        let r = run_round1(&default_agents(1), &WorldModel::new(), &Value::Null, 1, &gw, &mut Transcript::new());
        assert_eq!(r.outputs.len(), 1);
        assert_eq!(r.outputs[0].gaps.len(), 2);
    }

    #[test]
    fn zero_hit_rate_gives_empty_sets() {
        let mut cfg = StochasticAgentConfig::new(0.0, 0.0, 1);
        cfg.decoys_per_agent = 0;
        let gw = Gateway::single("st", StochasticBackend::new(cfg).unwrap());
        let task = json!({"id": 0, "planted_gap": gap("planted")});
        let r = run_round1(&default_agents(5), &WorldModel::new(), &task, 1, &gw, &mut Transcript::new());
        assert_eq!(r.outputs.len(), 5);
        assert!(r.sets().all(|s| s.is_empty()));
    }

    #[test]
    fn disjoint_fixtures_union() {
        let b = ScriptedBackend::new();
        for k in 1..=3 {
            b.push(
                AgentRole::Prober,
                Some(&format!("prober-{k}")),
                json!({"gaps": [gap(&format!("g{k}a")), gap(&format!("g{k}b"))]}),
            );
        }
        let gw = Gateway::single("s", b);
        let r = run_round1(&default_agents(3), &WorldModel::new(), &Value::Null, 1, &gw, &mut Transcript::new());
        assert_eq!(r.sets().map(<[_]>::len).sum::<usize>(), 3 * 2);
    }

    #[test]
    fn failing_agent_yields_empty_set() {
        let b = ScriptedBackend::new();
        b.push(AgentRole::Prober, None, json!({"gaps": [gap("a")]}));
        b.push(AgentRole::Prober, Some("prober-2"), json!({"$error": "down"}));
        let gw = Gateway::single("s", b);
        let mut t = Transcript::new();
        let r = run_round1(&default_agents(3), &WorldModel::new(), &Value::Null, 1, &gw, &mut t);
        assert!(r.outputs[1].gaps.is_empty());
        assert!(r.outputs[1].error.is_some());
        assert_eq!(r.outputs[0].gaps.len(), 1);
        assert_eq!(t.of_kind(EventKind::Failure).count(), 1);
    }

    #[test]
    fn endorser_repeats_duplicated_gaps() {
        let b = ScriptedBackend::new();
        b.push(AgentRole::Prober, Some("prober-1"), json!({"gaps": [gap("dup"), gap("solo")]}));
        b.push(AgentRole::Prober, Some("prober-2"), json!({"gaps": [gap("dup")]}));
        // prober-3 endorses anything it sees from two agents
        b.push_responder(AgentRole::Prober, Some("prober-3"), |req| {
            let visible = req.context.get("visible").and_then(Value::as_array).cloned().unwrap_or_default();
            let mut counts = std::collections::BTreeMap::<String, usize>::new();
            for g in &visible {
                *counts.entry(g["description"].as_str().unwrap().to_owned()).or_default() += 1;
            }
            let gaps: Vec<Value> = counts.into_iter().filter(|(_, n)| *n >= 2).map(|(d, _)| gap(&d)).collect();
            Ok(json!({ "gaps": gaps }))
        });
        let gw = Gateway::single("s", b);
        let agents = default_agents(3);
        let wm = WorldModel::new();
        let mut t = Transcript::new();
        let r1 = run_round1(&agents, &wm, &Value::Null, 1, &gw, &mut t);
        let union: Vec<GapCandidate> = r1.sets().flatten().cloned().collect();
        let r2 = run_round2(&agents, &wm, &Value::Null, 1, &union, &gw, &mut t);
        let keys: Vec<&str> = r2.outputs[2].gaps.iter().map(|g| g.canonical_key.as_str()).collect();
        assert_eq!(keys, ["dup"]);
    }

    #[test]
    fn empty_union_still_runs() {
        let b = ScriptedBackend::new();
        b.push_responder(AgentRole::Prober, None, |req| {
            assert_eq!(req.context["visible"], json!([]));
            Ok(json!({"gaps": []}))
        });
        let gw = Gateway::single("s", b);
        let r = run_round2(&default_agents(2), &WorldModel::new(), &Value::Null, 1, &[], &gw, &mut Transcript::new());
        assert_eq!(r.outputs.len(), 2);
        assert_eq!(gw.audit().len(), 2);
    }

    #[test]
    fn dangling_evidence_is_rejected() {
        let b = ScriptedBackend::new();
        b.push(AgentRole::Prober, None, json!({"gaps": [{"description": "x", "gap_type": "methods", "evidence": ["n999"]}]}));
        let gw = Gateway::single("s", b);
        let r = run_round1(&default_agents(1), &WorldModel::new(), &Value::Null, 1, &gw, &mut Transcript::new());
        assert!(r.outputs[0].error.is_some());
    }
}
