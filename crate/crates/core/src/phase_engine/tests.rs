use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::json;

use super::config::load_fixtures;
use super::*;
use crate::gateway::{AgentRole, Budget, Gateway, ScriptedBackend};

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn demo_backend() -> ScriptedBackend {
    let d = demo_dir();
    load_fixtures(&[d.join("scripts.json"), d.join("papers.json")]).unwrap()
}

fn engine_with(backend: ScriptedBackend) -> Engine {
    let mut cfg = EngineConfig::default();
    cfg.auto_select = true;
    Engine::new(cfg, Gateway::single("fixtures", backend))
}

const INTEREST: &str = "safe reinforcement learning under shifting constraints";

fn settle(e: &mut Engine, id: &str) {
    for _ in 0..64 {
        match e.advance(id) {
            Ok(_) => {}
            Err(EngineError::Finished(_)) | Err(EngineError::Blocked { .. }) => return,
            Err(err) => panic!("{err}"),
        }
    }
    panic!("did not settle");
}

fn weakness(category: &str) -> serde_json::Value {
    json!({"weaknesses": [{"category": category, "text": "fixture"}]})
}

#[test]
fn review_routes_back_to_each_target() {
    let backend = ScriptedBackend::new()
        .with(AgentRole::Reviewer, Some("reviewer-1"), [weakness("missing_experiments")])
        .with(AgentRole::Reviewer, Some("reviewer-2"), [weakness("method_weakness")])
        .with(AgentRole::Reviewer, Some("reviewer-3"), [weakness("novelty_concern")])
        .merge(demo_backend());
    let mut e = engine_with(backend);
    e.config.max_review_rounds = 5;
    e.start_project("p", INTEREST, vec![]).unwrap();
    settle(&mut e, "p");
    let p = e.project("p").unwrap();
    let returns: Vec<Option<Phase>> = p.reviews.iter().map(|r| r.returned_to).collect();
    assert_eq!(returns, [Some(Phase::P4), Some(Phase::P3), Some(Phase::P2b), None]);
    assert_eq!(p.phase, Phase::Done);
    // every return reran the phases after its target
    let from_p7: Vec<Phase> = p
        .history
        .windows(2)
        .filter(|w| w[0].to == Phase::P7)
        .map(|w| w[1].to)
        .collect();
    assert_eq!(from_p7, [Phase::P4, Phase::P3, Phase::P2b, Phase::Done]);
    assert!(p.development.is_some());
    assert_eq!(p.sections.len(), SECTIONS.len());
}

#[test]
fn review_cap_finishes_with_open_weaknesses() {
    let backend = ScriptedBackend::new()
        .with(AgentRole::Reviewer, None, [weakness("writing")])
        .merge(demo_backend());
    let mut e = engine_with(backend);
    e.start_project("p", INTEREST, vec![]).unwrap();
    settle(&mut e, "p");
    let p = e.project("p").unwrap();
    assert_eq!(p.reviews.len(), 3);
    assert!(p.reviews[2].capped);
    assert_eq!(p.reviews[2].returned_to, None);
    assert_eq!(p.phase, Phase::Done);
}

#[test]
fn unknown_review_category_fails_the_phase() {
    let backend = ScriptedBackend::new()
        .with(AgentRole::Reviewer, None, [weakness("vibes")])
        .merge(demo_backend());
    let mut e = engine_with(backend);
    e.start_project("p", INTEREST, vec![]).unwrap();
    let err = loop {
        match e.advance("p") {
            Ok(_) => {}
            Err(err) => break err,
        }
    };
    assert!(matches!(err, EngineError::Gateway(_)), "{err}");
    assert_eq!(e.project("p").unwrap().phase, Phase::P7);
}

#[test]
fn failed_phase_leaves_state_untouched() {
    let backend = ScriptedBackend::new()
        .with(AgentRole::Evaluator, None, [json!({"seeds": 1, "cross_model": "", "ablation": "", "error_analysis": ""})])
        .merge(demo_backend());
    let mut e = engine_with(backend);
    e.start_project("p", INTEREST, vec![]).unwrap();
    let (err, before) = loop {
        let snap = e.checkpoint();
        if let Err(err) = e.advance("p") {
            break (err, snap);
        }
    };
    assert!(matches!(err, EngineError::Gateway(_)), "{err}");
    let mut after = e.checkpoint();
    assert_eq!(after.projects, before.projects);
    assert_eq!(after.model, before.model);
    // only the gateway's own ledger saw the rejected calls
    assert!(after.budget.spent_calls > before.budget.spent_calls);
    after.budget = before.budget;
    assert_eq!(after, before);
    assert_eq!(e.project("p").unwrap().phase, Phase::P4);
}

#[test]
fn exhausted_budget_is_reported_and_retriable() {
    // no seeds: brainstorm and query expansion, two calls
    let mut gw = Gateway::new(Budget::new(1, u64::MAX));
    gw.register_backend("fixtures", std::sync::Arc::new(demo_backend())).unwrap();
    let mut e = Engine::new(EngineConfig::default(), gw);
    let err = e.start_project("p", INTEREST, vec![]).err().unwrap();
    assert!(matches!(err, EngineError::Gateway(_)), "{err}");
    assert!(e.project("p").is_err());
    let mut ledger = e.gateway().budget().ledger();
    ledger.max_calls += 2;
    e.gateway().budget().restore(ledger);
    let p = e.start_project("p", INTEREST, vec![]).unwrap();
    assert_eq!(p.spent.calls, 2);
}

#[test]
fn select_track_orders_by_verified_count() {
    let mut e = engine_with(demo_backend());
    e.config.auto_select = false;
    e.start_project("p", INTEREST, vec![]).unwrap();
    e.submit_decision("p", &Decision::new(DecisionKind::SelectDirection, "2")).unwrap();
    settle(&mut e, "p");
    let p = e.project("p").unwrap();
    let track = p.pending.iter().find(|d| d.kind == DecisionKind::SelectTrack).unwrap();
    let counts: Vec<u64> = track
        .options
        .iter()
        .map(|o| o.detail["verified_gaps"].as_u64().unwrap())
        .collect();
    let mut sorted = counts.clone();
    sorted.sort_by(|a, b| b.cmp(a));
    assert_eq!(counts, sorted);
    assert_eq!(track.options.len(), GapType::ALL.len());
    let slate = p.pending.iter().find(|d| d.kind == DecisionKind::ApproveGapSlate).unwrap();
    assert!(slate.evidence.iter().any(|ev| ev.starts_with("consensus-event:")));
}

#[test]
fn approving_the_slate_without_a_track_keeps_waiting() {
    let mut e = engine_with(demo_backend());
    e.config.auto_select = false;
    e.start_project("p", INTEREST, vec![]).unwrap();
    e.submit_decision("p", &Decision::new(DecisionKind::SelectDirection, "d1")).unwrap();
    settle(&mut e, "p");
    let gap = e.project("p").unwrap().pending[1].options[0].id.clone();
    let p = e.submit_decision("p", &Decision::new(DecisionKind::ApproveGapSlate, gap)).unwrap();
    assert_eq!(p.phase, Phase::P2b);
    assert_eq!(p.pending_kinds(), [DecisionKind::SelectTrack]);
    let p = e.submit_decision("p", &Decision::new(DecisionKind::SelectTrack, "benchmark")).unwrap();
    assert_eq!(p.phase, Phase::P3);
    assert_eq!(p.track, Some(GapType::Benchmark));
}

#[test]
fn decisions_keep_their_order_and_actor() {
    let mut e = engine_with(demo_backend());
    e.config.auto_select = false;
    e.start_project("p", INTEREST, vec![]).unwrap();
    let d = Decision {
        kind: DecisionKind::SelectDirection,
        option: "d4".into(),
        actor: "alice".into(),
    };
    e.submit_decision("p", &d).unwrap();
    let p = e.project("p").unwrap();
    assert_eq!(p.decisions.len(), 1);
    assert_eq!(p.decisions[0].actor, "alice");
    assert_eq!(p.decisions[0].option, "d4");
    let human = p.transcript.of_kind(EventKind::Human).last().unwrap();
    assert_eq!(human.data["option"], "d4");
    assert_eq!(p.decisions[0].seq, human.seq);
}

fn phase_strategy() -> impl Strategy<Value = Phase> {
    prop::sample::select(Phase::ALL.to_vec())
}

proptest! {
    #[test]
    fn transitions_follow_the_graph(from in phase_strategy(), to in phase_strategy()) {
        let mut st = ProjectState::new("p", INTEREST, vec![]);
        st.phase = from;
        let allowed = transition_allowed(from, to);
        let res = st.transition(to, "fuzz");
        prop_assert_eq!(res.is_ok(), allowed);
        if allowed {
            prop_assert_eq!(st.phase, to);
            prop_assert_eq!(st.history.last().map(|t| (t.from, t.to)), Some((from, to)));
        } else {
            prop_assert_eq!(st.phase, from);
            prop_assert!(st.history.is_empty());
        }
    }

    #[test]
    fn random_walks_only_reach_done_through_p7(steps in prop::collection::vec(phase_strategy(), 1..200)) {
        let mut st = ProjectState::new("p", INTEREST, vec![]);
        for to in steps {
            let from = st.phase;
            if st.transition(to, "walk").is_ok() {
                prop_assert!(to > from || from == Phase::P7);
                if to == Phase::Done {
                    prop_assert_eq!(from, Phase::P7);
                }
            }
            prop_assert!(st.phase != Phase::Done || st.transition(Phase::P0, "x").is_err());
        }
    }
}
