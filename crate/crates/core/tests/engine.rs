use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde_json::json;

use supervisor_core::gateway::{AgentRole, Gateway};
use supervisor_core::ingestion::PaperRecord;
use supervisor_core::phase_engine::config::load_fixtures;
use supervisor_core::phase_engine::{Decision, DecisionKind, Engine, EngineConfig, EngineError, Phase};
use supervisor_core::world_model::{NodeKind, WorldModel};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn demo_engine() -> Engine {
    let cfg = EngineConfig::load(fixtures().join("demo/config.json")).unwrap();
    let gw = cfg.build_gateway().unwrap();
    Engine::new(cfg, gw)
}

fn demo_seeds() -> Vec<PaperRecord> {
    let text = std::fs::read_to_string(fixtures().join("demo/seeds.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

const INTEREST: &str = "safe reinforcement learning under shifting constraints";

fn trio_gateway(name: &str) -> Gateway {
    let backend = load_fixtures(&[fixtures().join(format!("ai_safety/{name}.json"))]).unwrap();
    Gateway::single("fixtures", backend)
}

fn trio_interest(name: &str) -> String {
    let text = std::fs::read_to_string(fixtures().join(format!("ai_safety/{name}.json"))).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["interest"].as_str().unwrap().to_owned()
}

/// Advances until the project is blocked on a decision or finished.
fn run_until_blocked(e: &mut Engine, id: &str) {
    for _ in 0..64 {
        match e.advance(id) {
            Ok(_) => {}
            Err(EngineError::Blocked { .. }) | Err(EngineError::Finished(_)) => return,
            Err(other) => panic!("advance failed: {other}"),
        }
    }
    panic!("project did not settle");
}

#[test]
fn start_posts_ranked_directions() {
    let mut e = demo_engine();
    let p = e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    assert_eq!(p.phase, Phase::P0);
    assert_eq!(p.seed_summaries.len(), 2);
    assert_eq!(p.directions.len(), 10);
    assert_eq!(p.pending.len(), 1);
    assert_eq!(p.pending[0].kind, DecisionKind::SelectDirection);
    assert_eq!(p.pending[0].options.len(), 10);
    assert!(matches!(e.advance("demo"), Err(EngineError::Blocked { .. })));
}

#[test]
fn start_rejects_bad_input() {
    let mut e = demo_engine();
    assert!(matches!(e.start_project("x", "  ", vec![]), Err(EngineError::EmptyInterest)));
    assert!(matches!(e.start_project("x", "rl", vec![]), Err(EngineError::Bootstrap(_))));
    assert!(matches!(e.start_project("a b", INTEREST, vec![]), Err(EngineError::InvalidProjectId(_))));
    let many = vec![PaperRecord::new("p", 2020); 11];
    assert!(matches!(e.start_project("x", INTEREST, many), Err(EngineError::TooManySeeds(11))));
    e.start_project("x", INTEREST, vec![]).unwrap();
    assert!(matches!(e.start_project("x", INTEREST, vec![]), Err(EngineError::DuplicateProject(_))));
}

#[test]
fn decisions_are_checked_against_what_is_pending() {
    let mut e = demo_engine();
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    let early = Decision::new(DecisionKind::SelectTrack, "methods");
    assert!(matches!(e.submit_decision("demo", &early), Err(EngineError::NoSuchDecision(_))));
    let bogus = Decision::new(DecisionKind::SelectDirection, "d42");
    assert!(matches!(e.submit_decision("demo", &bogus), Err(EngineError::OptionNotOffered { .. })));
    let p = e.submit_decision("demo", &Decision::new(DecisionKind::SelectDirection, "d3")).unwrap();
    assert_eq!(p.phase, Phase::P1);
    assert_eq!(p.direction.as_ref().unwrap().id, "d3");
    assert!(p.pending.is_empty());
}

#[test]
fn demo_runs_to_done() {
    let mut e = demo_engine();
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    e.submit_decision("demo", &Decision::new(DecisionKind::SelectDirection, "d1")).unwrap();

    let before = e.world_model().node_count();
    let r = e.advance("demo").unwrap();
    assert_eq!((r.from, r.to), (Phase::P1, Phase::P2a));
    let papers = e.world_model().nodes_of(NodeKind::Paper).count();
    assert_eq!(papers, 3);
    assert_eq!(e.world_model().node_count(), before + papers);

    run_until_blocked(&mut e, "demo");
    let p = e.project("demo").unwrap();
    assert_eq!(p.phase, Phase::P2b);
    let kinds = p.pending_kinds();
    assert!(kinds.contains(&DecisionKind::SelectTrack), "{kinds:?}");
    assert!(kinds.contains(&DecisionKind::ApproveGapSlate));
    let gaps = p.gaps(e.world_model());
    assert!(!gaps.is_empty());

    e.submit_decision("demo", &Decision::new(DecisionKind::SelectTrack, "methods")).unwrap();
    let p = e.submit_decision("demo", &Decision::new(DecisionKind::ApproveGapSlate, "1")).unwrap();
    assert_eq!(p.phase, Phase::P3);

    run_until_blocked(&mut e, "demo");
    let p = e.project("demo").unwrap();
    assert_eq!(p.phase, Phase::Done);
    assert_eq!(p.evaluation.as_ref().unwrap().seeds, 3);
    assert_eq!(p.sections.len(), 5);
    assert_eq!(p.reviews.len(), 2);
    assert_eq!(p.reviews[0].returned_to, Some(Phase::P6));
    assert_eq!(p.reviews[1].returned_to, None);
    assert!(p.development.as_ref().unwrap().finalized);
    let order: Vec<Phase> = p.history.iter().map(|t| t.to).collect();
    assert_eq!(
        order,
        [
            Phase::P1, Phase::P2a, Phase::P2b, Phase::P3, Phase::P4, Phase::P5, Phase::P6, Phase::P7,
            Phase::P6, Phase::P7, Phase::Done
        ]
    );
    assert!(matches!(e.advance("demo"), Err(EngineError::Finished(_))));
}

#[test]
fn auto_select_runs_without_stopping() {
    let mut e = demo_engine();
    e.set_auto_select(true);
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    run_until_blocked(&mut e, "demo");
    let p = e.project("demo").unwrap();
    assert_eq!(p.phase, Phase::Done);
    assert!(p.decisions.iter().all(|d| d.actor == "auto-select"));
    assert_eq!(p.decisions.len(), 3);
}

fn auto_demo(steps: usize) -> Engine {
    let mut e = demo_engine();
    e.set_auto_select(true);
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    for _ in 0..steps {
        e.advance("demo").unwrap();
    }
    e
}

#[test]
fn resume_at_any_boundary_continues_identically() {
    let mut finished = auto_demo(0);
    run_until_blocked(&mut finished, "demo");
    let total = finished.project("demo").unwrap().history.len() - 1;
    let mut saw_probe = false;
    for k in 0..total {
        let before = auto_demo(k);
        saw_probe |= before.project("demo").unwrap().phase == Phase::P2b;
        let dir = tempfile::tempdir().unwrap();
        before.save_dir(dir.path()).unwrap();
        let cfg = EngineConfig::load(fixtures().join("demo/config.json")).unwrap();
        let gw = cfg.build_gateway().unwrap();
        let mut resumed = Engine::load_dir(dir.path(), cfg, gw).unwrap();
        assert_eq!(resumed.checkpoint(), before.checkpoint(), "snapshot after {k} steps");
        resumed.set_auto_select(true);
        run_until_blocked(&mut resumed, "demo");
        assert_eq!(
            resumed.checkpoint().projects,
            finished.checkpoint().projects,
            "resumed after {k} steps"
        );
        assert_eq!(resumed.world_model().to_canonical_json(), finished.world_model().to_canonical_json());
    }
    assert!(saw_probe);
}

#[test]
fn saved_state_is_byte_stable() {
    let mut e = demo_engine();
    e.set_auto_select(true);
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    run_until_blocked(&mut e, "demo");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    e.save_dir(a.path()).unwrap();
    let cfg = EngineConfig::load(fixtures().join("demo/config.json")).unwrap();
    let gw = cfg.build_gateway().unwrap();
    Engine::load_dir(a.path(), cfg, gw).unwrap().save_dir(b.path()).unwrap();
    for f in ["rwm.json", "engine.json", "transcripts/demo.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} changed across a save/load cycle");
    }
}

#[test]
fn older_schema_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = demo_engine();
    e.start_project("demo", INTEREST, demo_seeds()).unwrap();
    e.save_dir(dir.path()).unwrap();
    let path = dir.path().join("engine.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["schema_version"] = 0.into();
    std::fs::write(&path, v.to_string()).unwrap();
    let cfg = EngineConfig::load(fixtures().join("demo/config.json")).unwrap();
    let gw = cfg.build_gateway().unwrap();
    let err = Engine::load_dir(dir.path(), cfg, gw).err().unwrap();
    assert!(matches!(err, EngineError::SchemaVersion { found: 0, expected: 1 }), "{err}");
}

#[test]
fn prior_model_reaches_the_brainstorm() {
    let mut e = demo_engine();
    e.set_auto_select(true);
    e.start_project("first", INTEREST, demo_seeds()).unwrap();
    run_until_blocked(&mut e, "first");

    let backend = load_fixtures(&[fixtures().join("demo/scripts.json"), fixtures().join("demo/papers.json")]).unwrap();
    let seen = Arc::new(Mutex::new(None));
    let sink = Arc::clone(&seen);
    backend.push_responder(AgentRole::Brainstorm, None, move |req| {
        *sink.lock().unwrap() = Some(req.context.clone());
        Ok(json!({"directions": [{"title": "t", "novelty": 5, "feasibility": 5, "impact": 5}]}))
    });
    e.set_gateway(Gateway::single("fixtures", backend));
    let p = e.start_project("second", INTEREST, vec![]).unwrap();
    let prior = p.prior.as_ref().expect("prior summary");
    assert!(prior.nodes > 0);
    assert!(!prior.verified_gaps.is_empty());
    let ctx = seen.lock().unwrap().clone().expect("brainstorm called");
    assert_eq!(ctx["prior"]["nodes"], json!(prior.nodes));
    assert!(!ctx["prior"]["verified_gaps"].as_array().unwrap().is_empty());
}

#[test]
fn trio_accumulates_shared_knowledge() {
    let cfg = EngineConfig::default();
    let mut e = Engine::new(cfg, trio_gateway("rlhf"));
    e.set_auto_select(true);
    let mut counts = vec![];
    for name in ["rlhf", "constitutional", "safe_rlhf"] {
        e.set_gateway(trio_gateway(name));
        e.start_project(name, &trio_interest(name), vec![]).unwrap();
        e.advance(name).unwrap();
        e.advance(name).unwrap();
        assert_eq!(e.project(name).unwrap().phase, Phase::P2b);
        counts.push(e.world_model().node_count());
    }
    assert_eq!(counts, [7, 13, 19]);
    let wm: &WorldModel = e.world_model();
    let labels = |a: &str, b: &str| -> Vec<String> {
        let mut v: Vec<String> = wm
            .cross_links(a, b)
            .into_iter()
            .map(|id| wm.node(id).unwrap().label().to_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(labels("rlhf", "constitutional"), ["PPO optimizer", "reward hacking"]);
    assert_eq!(labels("constitutional", "safe_rlhf"), ["PPO optimizer"]);
}
