use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    return_phase, route_review, Decision, DecisionKind, DecisionOption, DecisionRecord, EngineConfig, EngineError,
    ExtractionSummary, Phase, PendingDecision, PriorSummary, ProjectState, RankedDirection, ReviewRecord, SeedSummary,
};
use crate::consensus::ConsensusState;
use crate::dev_loop::{run_dev_loop, DevConfig};
use crate::gateway::roles::{
    BrainstormResponse, EvaluationResponse, QueryExpansionResponse, ReaderResponse, ReviewResponse, WriterResponse,
};
use crate::gateway::{AgentRequest, AgentRole, Gateway};
use crate::ingestion::{build_phase2a, papers_delta, run_phase1};
use crate::text::tokens;
use crate::transcript::EventKind;
use crate::world_model::{GapType, NodeId, NodeKind, ProjectRecord, Provenance, WorldModel};

/// Seeds per evaluation run.
pub const N_SEEDS: u32 = 3;

/// Written in parallel, one agent each.
pub const SECTIONS: [&str; 5] = ["introduction", "related_work", "method", "experiments", "conclusion"];

/// With no seed papers the interest alone must say this much.
const MIN_INTEREST_TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub item: String,
    pub value: String,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub seeds: u32,
    pub cross_model: String,
    pub ablation: String,
    pub error_analysis: String,
    pub checklist: Vec<ChecklistItem>,
}

impl EvaluationRecord {
    fn from_response(r: EvaluationResponse) -> Self {
        let item = |item: &str, value: &str| ChecklistItem {
            item: item.into(),
            value: value.into(),
            satisfied: !value.trim().is_empty(),
        };
        let checklist = vec![
            ChecklistItem {
                item: "seeds".into(),
                value: r.seeds.to_string(),
                satisfied: r.seeds == N_SEEDS,
            },
            item("cross_model", &r.cross_model),
            item("ablation", &r.ablation),
            item("error_analysis", &r.error_analysis),
        ];
        EvaluationRecord {
            seeds: r.seeds,
            cross_model: r.cross_model,
            ablation: r.ablation,
            error_analysis: r.error_analysis,
            checklist,
        }
    }
}

/// What packaging produced. `files` is empty when no bundle directory is
/// configured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub project: String,
    pub model_commit: u64,
    pub nodes: usize,
    pub edges: usize,
    pub method: Option<String>,
    pub finalized: bool,
    pub transcript_events: usize,
    pub files: Vec<String>,
}

fn provenance(st: &ProjectState, phase: Phase, agent: &str) -> Provenance {
    Provenance::new(phase.as_str(), agent).for_project(&st.id)
}

fn phase_error(phase: Phase, message: impl Into<String>) -> EngineError {
    EngineError::Phase {
        phase,
        message: message.into(),
    }
}

pub(super) fn bootstrap(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway) -> Result<(), EngineError> {
    if st.seeds.is_empty() && tokens(&st.interest).len() < MIN_INTEREST_TOKENS {
        return Err(EngineError::Bootstrap(format!(
            "no seed papers and the interest `{}` is too short to brainstorm from",
            st.interest
        )));
    }
    let interest = st.interest.clone();
    let readings = std::thread::scope(|s| {
        let handles: Vec<_> = st
            .seeds
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let req = AgentRequest::new(
                    AgentRole::Reader,
                    format!("reader-{}", i + 1),
                    json!({"interest": interest, "title": p.title, "abstract": p.abstract_text,
                           "full_text": p.full_text}),
                );
                s.spawn(move || gw.invoke_typed::<ReaderResponse, _>(&req, |_| Ok(())))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("reader thread panicked"))
            .collect::<Vec<_>>()
    });
    for (p, r) in st.seeds.clone().iter().zip(readings) {
        st.seed_summaries.push(SeedSummary {
            title: p.title.clone(),
            reading: r?,
        });
    }
    st.event(EventKind::Finding, json!({"seeds_read": st.seed_summaries.len()}));

    if wm.node_count() > 0 {
        st.prior = Some(PriorSummary::of(wm));
    }
    let req = AgentRequest::new(
        AgentRole::Brainstorm,
        "brainstorm",
        json!({"interest": st.interest, "seeds": st.seed_summaries, "prior": st.prior}),
    );
    let b: BrainstormResponse = gw.invoke_typed(&req, |_| Ok(()))?;
    st.directions = b
        .directions
        .into_iter()
        .enumerate()
        .map(|(i, d)| RankedDirection {
            id: format!("d{}", i + 1),
            title: d.title,
            rationale: d.rationale,
            novelty: d.novelty,
            feasibility: d.feasibility,
            impact: d.impact,
        })
        .collect();
    let brainstorm_seq = st.event(EventKind::Finding, json!({"directions": st.directions}));

    let titles: Vec<&str> = st.directions.iter().map(|d| d.title.as_str()).collect();
    let req = AgentRequest::new(
        AgentRole::QueryExpander,
        "query-expander",
        json!({"interest": st.interest, "directions": titles, "seeds": st.seed_summaries}),
    );
    let q: QueryExpansionResponse = gw.invoke_typed(&req, |_| Ok(()))?;
    st.queries = q.queries;
    st.venues = q.venues;
    st.event(EventKind::Finding, json!({"queries": st.queries, "venues": st.venues}));

    let options = st
        .directions
        .iter()
        .map(|d| DecisionOption {
            id: d.id.clone(),
            label: d.title.clone(),
            detail: json!({"rationale": d.rationale, "novelty": d.novelty,
                           "feasibility": d.feasibility, "impact": d.impact}),
        })
        .collect();
    let mut evidence = vec![format!("event:{brainstorm_seq}")];
    if st.prior.is_some() {
        evidence.extend(
            wm.nodes_of(NodeKind::Gap)
                .filter(|n| n.uncertainty.is_verified())
                .map(|n| n.id.to_string()),
        );
    }
    post(
        st,
        PendingDecision {
            kind: DecisionKind::SelectDirection,
            options,
            evidence,
        },
    );
    Ok(())
}

fn post(st: &mut ProjectState, pending: PendingDecision) {
    st.event(
        EventKind::Human,
        json!({"pending": pending.kind, "options": pending.options.len()}),
    );
    st.pending.push(pending);
}

/// Records a human choice and unblocks whatever it gated.
pub(super) fn decide(wm: &mut WorldModel, st: &mut ProjectState, d: &Decision) -> Result<(), EngineError> {
    let idx = st
        .pending
        .iter()
        .position(|p| p.kind == d.kind)
        .ok_or(EngineError::NoSuchDecision(d.kind))?;
    let option = st.pending[idx]
        .option(&d.option)
        .ok_or_else(|| EngineError::OptionNotOffered {
            kind: d.kind,
            option: d.option.clone(),
        })?
        .clone();
    st.pending.remove(idx);
    let seq = st.event(
        EventKind::Human,
        json!({"decision": d.kind, "option": option.id, "actor": d.actor}),
    );
    st.decisions.push(DecisionRecord {
        kind: d.kind,
        option: option.id.clone(),
        label: option.label.clone(),
        actor: d.actor.clone(),
        seq,
    });
    match d.kind {
        DecisionKind::SelectDirection => {
            let chosen = st.directions.iter().find(|x| x.id == option.id).cloned();
            st.direction = chosen;
            wm.set_project(
                st.id.clone(),
                ProjectRecord {
                    interest: st.interest.clone(),
                    direction: Some(option.label.clone()),
                    queries: st.queries.clone(),
                    venues: st.venues.clone(),
                },
            );
            st.transition(Phase::P1, format!("direction {} selected", option.id))?;
        }
        DecisionKind::SelectTrack => {
            st.track = Some(option.id.parse().map_err(|e| phase_error(Phase::P2b, format!("{e}")))?);
        }
        DecisionKind::ApproveGapSlate => {
            st.selected_gap = Some(option.id.parse().map_err(|e| phase_error(Phase::P2b, format!("{e}")))?);
        }
    }
    if st.phase == Phase::P2b && st.pending.is_empty() && st.track.is_some() && st.selected_gap.is_some() {
        st.transition(Phase::P3, "track and gap approved")?;
    }
    Ok(())
}

/// Answers every pending decision with its top option when the run is
/// configured non-interactive.
pub(super) fn auto_resolve(wm: &mut WorldModel, st: &mut ProjectState, cfg: &EngineConfig) -> Result<(), EngineError> {
    if !cfg.auto_select {
        return Ok(());
    }
    while let Some(p) = st.pending.first() {
        let Some(top) = p.options.first() else {
            return Err(phase_error(st.phase, format!("{} has no options", p.kind)));
        };
        let d = Decision {
            kind: p.kind,
            option: top.id.clone(),
            actor: "auto-select".into(),
        };
        decide(wm, st, &d)?;
    }
    Ok(())
}

/// Runs the current phase.
pub(super) fn step(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    match st.phase {
        Phase::P0 => Err(EngineError::Blocked {
            project: st.id.clone(),
            kinds: vec![DecisionKind::SelectDirection],
        }),
        Phase::P1 => literature(wm, st, gw, cfg),
        Phase::P2a => construct(wm, st, gw, cfg),
        Phase::P2b => probe(wm, st, gw, cfg),
        Phase::P3 => develop(wm, st, gw, cfg),
        Phase::P4 => evaluate(st, gw),
        Phase::P5 => package(wm, st, cfg),
        Phase::P6 => write(st, gw),
        Phase::P7 => review(st, gw, cfg),
        Phase::Done => Err(EngineError::Finished(st.id.clone())),
    }
}

fn literature(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    let direction = st.direction.as_ref().map(|d| d.title.clone());
    let report = run_phase1(&st.queries, &st.venues, direction.as_deref(), cfg.top_k, gw)?;
    let merged = wm.merge(papers_delta(&report.ranked, provenance(st, Phase::P1, "literature")))?;
    st.event(
        EventKind::Commit,
        json!({"phase": Phase::P1, "commit": merged.commit, "added_nodes": merged.added_nodes.len(),
               "candidates": report.candidates, "merged": report.merged, "failures": report.failures}),
    );
    st.literature = report.ranked;
    st.transition(Phase::P2a, format!("{} papers retained", st.literature.len()))
}

fn construct(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    let papers: Vec<_> = st.literature.iter().map(|p| p.record.clone()).collect();
    let prov = provenance(st, Phase::P2a, "extraction");
    let report = build_phase2a(wm, &papers, gw, &cfg.phase2a(), prov)?;
    let summary = ExtractionSummary {
        nodes_added: report.merge.as_ref().map_or(0, |m| m.added_nodes.len()),
        edges_added: report.merge.as_ref().map_or(0, |m| m.added_edges.len()),
        equivalence_classes: report.dedup.classes.len(),
        synthesized_gaps: report.gaps.clone(),
        failures: report.failures,
        warnings: report.warnings,
    };
    st.event(
        EventKind::Commit,
        json!({"phase": Phase::P2a, "commit": report.merge.as_ref().map(|m| m.commit),
               "added_nodes": summary.nodes_added, "added_edges": summary.edges_added,
               "synthesized_gaps": summary.synthesized_gaps}),
    );
    st.extraction = Some(summary);
    st.transition(Phase::P2b, "world model updated")
}

/// One consensus cycle per advance, so a checkpoint always falls on a round
/// boundary.
fn probe(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    if st.consensus.is_none() {
        let task = json!({
            "project": st.id,
            "interest": st.interest,
            "direction": st.direction.as_ref().map(|d| &d.title),
            "track": st.track,
        });
        st.consensus = Some(ConsensusState::new(cfg.consensus(), task)?);
    }
    let prov = provenance(st, Phase::P2b, "consensus");
    let cs = st.consensus.as_mut().expect("just ensured");
    let seen = cs.transcript.len();
    cs.run_cycle(wm, gw, &prov)?;
    let fresh = cs.transcript.events()[seen..].to_vec();
    let done = cs.is_done();
    let id = st.id.clone();
    st.transcript.absorb_events(fresh, Some(&id));
    if !done {
        return Ok(());
    }

    let gaps = st.gaps(wm);
    let verified: Vec<_> = gaps
        .iter()
        .filter(|g| g.uncertainty.is_verified() && g.node.is_some())
        .collect();
    if verified.is_empty() {
        st.event(
            EventKind::Failure,
            json!({"phase": Phase::P2b, "reason": "no corroborated gap; probing restarts on the next advance"}),
        );
        st.consensus = None;
        return Ok(());
    }
    let evidence: Vec<String> = verified
        .iter()
        .map(|g| g.node.expect("filtered").to_string())
        .chain(
            st.consensus
                .as_ref()
                .expect("still set")
                .transcript
                .of_kind(EventKind::Decision)
                .map(|e| format!("consensus-event:{}", e.seq)),
        )
        .collect();
    if st.track.is_none() {
        let mut tracks: Vec<(usize, GapType)> = GapType::ALL
            .iter()
            .map(|t| (verified.iter().filter(|g| g.gap_type == *t).count(), *t))
            .collect();
        tracks.sort_by(|a, b| b.0.cmp(&a.0));
        let options = tracks
            .into_iter()
            .map(|(n, t)| DecisionOption {
                id: t.as_str().into(),
                label: format!("{} ({n} verified gaps)", t.as_str()),
                detail: json!({"verified_gaps": n}),
            })
            .collect();
        post(
            st,
            PendingDecision {
                kind: DecisionKind::SelectTrack,
                options,
                evidence: evidence.clone(),
            },
        );
    }
    let options = verified
        .iter()
        .map(|g| DecisionOption {
            id: g.node.expect("filtered").to_string(),
            label: g.description.clone(),
            detail: json!({"key": g.key, "gap_type": g.gap_type, "multiplicity": g.multiplicity,
                           "proposers": g.proposers, "evidence": g.evidence}),
        })
        .collect();
    post(
        st,
        PendingDecision {
            kind: DecisionKind::ApproveGapSlate,
            options,
            evidence,
        },
    );
    Ok(())
}

fn selected_gap(st: &ProjectState) -> Result<NodeId, EngineError> {
    st.selected_gap
        .ok_or_else(|| phase_error(st.phase, "no gap was approved for development"))
}

fn develop(wm: &mut WorldModel, st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    let gap = selected_gap(st)?;
    let prov = provenance(st, Phase::P3, "dev-loop");
    let mut out = run_dev_loop(gap, wm, gw, DevConfig { t_max: cfg.t_max }, prov)?;
    let events = std::mem::take(&mut out.transcript);
    let id = st.id.clone();
    st.transcript.absorb(events, Some(&id));
    let reason = if out.finalized {
        format!("gate passed after {} iterations", out.state.iteration)
    } else {
        format!("T_max = {} reached without passing the gate", cfg.t_max)
    };
    st.development = Some(out);
    st.transition(Phase::P4, reason)
}

fn method_context(st: &ProjectState) -> Value {
    let Some(dev) = &st.development else {
        return Value::Null;
    };
    json!({
        "gap": dev.gap_text,
        "mechanism": dev.chain.as_ref().map(|c| c.mechanism().statement),
        "method": dev.method.as_ref().or(dev.state.tested.last()),
        "finalized": dev.finalized,
    })
}

fn open_weaknesses(st: &ProjectState, phase: Phase) -> Vec<String> {
    st.reviews
        .last()
        .map(|r| {
            r.weaknesses
                .iter()
                .filter(|w| w.target == phase)
                .map(|w| w.weakness.text.clone())
                .collect()
        })
        .unwrap_or_default()
}

fn evaluate(st: &mut ProjectState, gw: &Gateway) -> Result<(), EngineError> {
    let req = AgentRequest::new(
        AgentRole::Evaluator,
        "evaluator",
        json!({
            "direction": st.direction.as_ref().map(|d| &d.title),
            "method": method_context(st),
            "n_seeds": N_SEEDS,
            "checklist": ["seeds", "cross_model", "ablation", "error_analysis"],
            "open_weaknesses": open_weaknesses(st, Phase::P4),
        }),
    );
    let r: EvaluationResponse = gw.invoke_typed(&req, |r: &EvaluationResponse| {
        if r.seeds != N_SEEDS {
            return Err(format!("the evaluation plan must use {N_SEEDS} seeds, got {}", r.seeds));
        }
        Ok(())
    })?;
    let record = EvaluationRecord::from_response(r);
    st.event(EventKind::Finding, json!({"evaluation": record}));
    st.evaluation = Some(record);
    st.transition(Phase::P5, "evaluation plan recorded")
}

fn package(wm: &WorldModel, st: &mut ProjectState, cfg: &EngineConfig) -> Result<(), EngineError> {
    let dev = st.development.as_ref();
    let mut manifest = BundleManifest {
        project: st.id.clone(),
        model_commit: wm.commit_count(),
        nodes: wm.node_count(),
        edges: wm.edge_count(),
        method: dev
            .and_then(|d| d.method.as_ref().or(d.state.tested.last()))
            .map(|m| m.name.clone()),
        finalized: dev.is_some_and(|d| d.finalized),
        transcript_events: st.transcript.len(),
        files: Vec::new(),
    };
    if let Some(root) = &cfg.bundle_dir {
        manifest.files = write_bundle(&root.join(&st.id), wm, st, &manifest)?;
    }
    st.event(EventKind::Commit, json!({"phase": Phase::P5, "bundle": manifest}));
    st.bundle = Some(manifest);
    st.transition(Phase::P6, "bundle exported")
}

fn write_bundle(dir: &Path, wm: &WorldModel, st: &ProjectState, manifest: &BundleManifest) -> Result<Vec<String>, EngineError> {
    let io = |e: std::io::Error| EngineError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let report = json!({
        "manifest": manifest,
        "interest": st.interest,
        "direction": st.direction,
        "track": st.track,
        "gap": st.selected_gap,
        "development": method_context(st),
        "evaluation": st.evaluation,
    });
    let files = [
        ("rwm.json", wm.to_canonical_json()),
        ("transcript.jsonl", st.transcript.to_jsonl()),
        (
            "report.json",
            serde_json::to_string_pretty(&report).expect("report serializes"),
        ),
    ];
    for (name, body) in &files {
        std::fs::write(dir.join(name), body).map_err(io)?;
    }
    Ok(files.iter().map(|(n, _)| (*n).to_owned()).collect())
}

fn write(st: &mut ProjectState, gw: &Gateway) -> Result<(), EngineError> {
    let context = json!({
        "direction": st.direction.as_ref().map(|d| &d.title),
        "method": method_context(st),
        "evaluation": st.evaluation,
        "open_weaknesses": open_weaknesses(st, Phase::P6),
    });
    let drafts = std::thread::scope(|s| {
        let handles: Vec<_> = SECTIONS
            .iter()
            .map(|section| {
                let mut ctx = context.clone();
                ctx["section"] = json!(section);
                let req = AgentRequest::new(AgentRole::Writer, format!("writer-{section}"), ctx);
                s.spawn(move || {
                    gw.invoke_typed::<WriterResponse, _>(&req, |r: &WriterResponse| {
                        if r.section != *section {
                            return Err(format!("asked for section `{section}`, got `{}`", r.section));
                        }
                        Ok(())
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("writer thread panicked"))
            .collect::<Vec<_>>()
    });
    st.sections = drafts.into_iter().collect::<Result<_, _>>()?;
    st.event(
        EventKind::Finding,
        json!({"sections": SECTIONS, "words": st.sections.iter().map(|s| s.text.split_whitespace().count()).sum::<usize>()}),
    );
    st.transition(Phase::P7, "draft written")
}

fn review(st: &mut ProjectState, gw: &Gateway, cfg: &EngineConfig) -> Result<(), EngineError> {
    let round = st.reviews.len() as u32 + 1;
    let req = AgentRequest::new(
        AgentRole::Reviewer,
        format!("reviewer-{round}"),
        json!({"round": round, "sections": st.sections, "method": method_context(st), "evaluation": st.evaluation}),
    );
    let r: ReviewResponse = gw.invoke_typed(&req, |r: &ReviewResponse| {
        route_review(&r.weaknesses).map(|_| ()).map_err(|e| e.to_string())
    })?;
    let routed = route_review(&r.weaknesses)?;
    let target = return_phase(&routed);
    let capped = target.is_some() && round >= cfg.max_review_rounds;
    let returned_to = target.filter(|_| !capped);
    st.event(
        EventKind::Finding,
        json!({"review_round": round, "weaknesses": routed, "returned_to": returned_to, "capped": capped}),
    );
    st.reviews.push(ReviewRecord {
        round,
        weaknesses: routed,
        returned_to,
        capped,
    });
    match returned_to {
        None if capped => st.transition(Phase::Done, format!("review cap of {} rounds reached", cfg.max_review_rounds)),
        None => st.transition(Phase::Done, "review raised no weaknesses"),
        Some(to) => {
            reset_from(st, to);
            st.transition(to, format!("review round {round} routed back"))
        }
    }
}

/// Drops the artifacts of `phase` and everything after it, which rerun.
fn reset_from(st: &mut ProjectState, phase: Phase) {
    if phase <= Phase::P2b {
        st.consensus = None;
        st.selected_gap = None;
    }
    if phase <= Phase::P3 {
        st.development = None;
    }
    if phase <= Phase::P4 {
        st.evaluation = None;
        st.bundle = None;
    }
    if phase <= Phase::P6 {
        st.sections.clear();
    }
}
