//! Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Every check computes its expected value independently of
//! the code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use supervisor_core::consensus::simulate::{simulate_consensus, SimulationConfig};
use supervisor_core::consensus::{corroborate, GapCandidate};
use supervisor_core::dev_loop::simulate::fixture_model;
use supervisor_core::dev_loop::{run_dev_loop, DevConfig, GateResult};
use supervisor_core::gateway::{Budget, Gateway, StochasticAgentConfig, StochasticBackend};
use supervisor_core::ingestion::{Pass1Score, Pass2Score};
use supervisor_core::phase_engine::config::load_fixtures;
use supervisor_core::phase_engine::{
    route_review, Engine, EngineConfig, EngineError, Phase, ReviewCategory, ROUTES,
};
use supervisor_core::gateway::roles::RawWeakness;
use supervisor_core::transcript::EventKind;
use supervisor_core::world_model::{
    dedup_modules, synthesize_gaps, Delta, ElementId, ElementRef, GapType, ModuleType, Node, NodeAttrs, NodeId,
    NodeKind, NodeRef, Provenance, Relation, Uncertainty, WorldModel,
};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed < limit {
        Ok(format!("{detail}; {:.2}s < {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// Probability that at least one of k independent agents hits, p per agent.
fn recall_oracle(k: i32, p: f64) -> f64 {
    1.0 - (1.0 - p).powi(k)
}

fn consensus_recall() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (k, published) in [(1, 0.30), (3, 0.657), (5, 0.832)] {
        let oracle = recall_oracle(k, 0.3);
        ensure((oracle - published).abs() < 5e-4, format!("oracle {oracle:.4} disagrees with {published}"))?;
        let row = simulate_consensus(&SimulationConfig::new(k as usize, 0.3, 10_000, 7)).map_err(|e| e.to_string())?;
        let off = (row.recall - published).abs();
        parts.push(format!("K={k} recall {:.4} (target {published})", row.recall));
        ensure(off <= 0.02, format!("K={k}: recall {:.4} outside {published} +/- 0.02", row.recall))?;
    }
    within(start.elapsed(), Duration::from_secs(30), parts.join(", "))
}

fn corroboration_exactness() -> Outcome {
    let start = Instant::now();
    for mask in 0u32..32 {
        let round2: Vec<Vec<GapCandidate>> = (0..5)
            .map(|a| {
                let mut own = vec![GapCandidate::new(format!("noise of agent {a}"), GapType::Position, format!("a{a}"), 2)];
                if mask & (1 << a) != 0 {
                    own.push(GapCandidate::new("The shared gap", GapType::Methods, format!("a{a}"), 2));
                }
                own
            })
            .collect();
        let out = corroborate(&round2);
        let proposers = mask.count_ones() as usize;
        let shared = out.iter().find(|g| g.description.to_lowercase() == "the shared gap");
        match shared {
            None => ensure(proposers == 0, format!("mask {mask:05b}: gap missing"))?,
            Some(g) => {
                ensure(g.multiplicity == proposers, format!("mask {mask:05b}: multiplicity {}", g.multiplicity))?;
                let verified = g.uncertainty == Uncertainty::Verified;
                ensure(verified == (proposers >= 2), format!("mask {mask:05b}: U wrong"))?;
            }
        }
        for g in out.iter().filter(|g| g.description.starts_with("noise")) {
            ensure(g.uncertainty == Uncertainty::Unverified, "single-proposer noise verified")?;
        }
    }
    within(start.elapsed(), Duration::from_secs(1), "32 proposer subsets, U=0 iff multiplicity >= 2".into())
}

fn gate_truth_table() -> Outcome {
    let start = Instant::now();
    let mut finalizing = Vec::new();
    for v in 0u32..1024 {
        let passes: [bool; 10] = std::array::from_fn(|i| v & (1 << i) != 0);
        if GateResult::from_passes(passes).q {
            finalizing.push(v);
        }
    }
    ensure(finalizing == [1023], format!("Q=1 for vectors {finalizing:?}"))?;
    within(start.elapsed(), Duration::from_secs(1), "1024 vectors, Q=1 only for all-pass".into())
}

fn stochastic_gateway(cfg: StochasticAgentConfig) -> Gateway {
    let mut gw = Gateway::new(Budget::unlimited());
    gw.register_backend("stochastic", Arc::new(StochasticBackend::new(cfg).unwrap())).unwrap();
    gw
}

fn norm(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn loop_termination() -> Outcome {
    let mut cfg = StochasticAgentConfig::new(0.5, 0.5, 11);
    cfg.criterion_pass_rate = 0.0;
    let gw = stochastic_gateway(cfg);
    let (mut wm, gap) = fixture_model(0);
    let out = run_dev_loop(gap, &mut wm, &gw, DevConfig { t_max: 5 }, Provenance::new("acceptance", "loop"))
        .map_err(|e| e.to_string())?;
    ensure(out.state.iteration == 5 && !out.finalized, format!("always-fail gate stopped at {}", out.state.iteration))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total_pairs = 0usize;
    for run in 0..1000u64 {
        let mut cfg = StochasticAgentConfig::new(0.5, 0.5, rng.gen());
        cfg.criterion_pass_rate = rng.gen_range(0.0..=1.0);
        cfg.confirm_rate = rng.gen_range(0.0..=1.0);
        let t_max = rng.gen_range(1..=8);
        let gw = stochastic_gateway(cfg);
        let (mut wm, gap) = fixture_model(run);
        let out = run_dev_loop(gap, &mut wm, &gw, DevConfig { t_max }, Provenance::new("acceptance", "loop"))
            .map_err(|e| format!("run {run}: {e}"))?;
        ensure(out.state.iteration <= t_max, format!("run {run}: {} > T_max {t_max}", out.state.iteration))?;
        let mut seen = BTreeSet::new();
        for e in out.transcript.of_kind(EventKind::Finding) {
            let Some(pairs) = e.data.get("searched").and_then(|v| v.as_array()) else {
                continue;
            };
            for p in pairs {
                let pair = (norm(p[0].as_str().unwrap_or("")), norm(p[1].as_str().unwrap_or("")));
                ensure(seen.insert(pair.clone()), format!("run {run}: {pair:?} searched twice"))?;
            }
        }
        ensure(seen.len() == out.state.searched.len(), format!("run {run}: transcript and loop state disagree"))?;
        total_pairs += seen.len();
    }
    Ok(format!("T_max=5 stops at 5; 1000 fuzzed runs, {total_pairs} searched pairs, no repeats"))
}

fn snapshot_u(wm: &WorldModel) -> BTreeMap<ElementId, Uncertainty> {
    wm.nodes()
        .map(|n| (ElementId::Node(n.id), n.uncertainty))
        .chain(wm.edges().map(|e| (ElementId::Edge(e.id), e.uncertainty)))
        .collect()
}

fn random_attrs(rng: &mut ChaCha8Rng, papers: &[NodeId]) -> NodeAttrs {
    let i = rng.gen_range(0..40);
    match rng.gen_range(0..6) {
        0 => NodeAttrs::paper(format!("paper {i}")),
        1 => NodeAttrs::method(format!("method {i}")),
        2 => NodeAttrs::module(format!("module {i}"), ModuleType::ALL[i % 5], "d"),
        3 => NodeAttrs::benchmark(format!("benchmark {i}")),
        4 => NodeAttrs::gap(format!("gap {i}"), GapType::ALL[i % 3]),
        _ => {
            let n = rng.gen_range(0..=papers.len().min(3));
            NodeAttrs::limitation(format!("limitation {i}"), papers.iter().take(n).copied())
        }
    }
}

fn rwm_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut wm = WorldModel::new();
    let mut rejected = 0;
    let mut reasserted = 0;
    for step in 0..10_000 {
        let before_nodes = wm.node_count();
        let before_edges = wm.edge_count();
        let before_u = snapshot_u(&wm);
        let ids: Vec<NodeId> = wm.nodes().map(|n| n.id).collect();
        let papers: Vec<NodeId> = wm.nodes_of(NodeKind::Paper).map(|n| n.id).collect();
        let mut d = Delta::new(Provenance::new("fuzz", "acceptance"));
        for _ in 0..rng.gen_range(0..4) {
            // unverified re-submissions of existing labels try to undo verification
            let u = if rng.gen_bool(0.3) { Uncertainty::Verified } else { Uncertainty::Unverified };
            d.add_node_with(random_attrs(&mut rng, &papers), u);
        }
        if !ids.is_empty() {
            for _ in 0..rng.gen_range(0..4) {
                let a = ids[rng.gen_range(0..ids.len())];
                let b = ids[rng.gen_range(0..ids.len())];
                let rel = Relation::ALL[rng.gen_range(0..Relation::ALL.len())];
                let u = if rng.gen_bool(0.2) { Uncertainty::Verified } else { Uncertainty::Unverified };
                d.add_edge_with(NodeRef::Existing(a), rel, NodeRef::Existing(b), None, u);
            }
            if rng.gen_bool(0.3) {
                d.verify(ElementRef::Node(NodeRef::Existing(ids[rng.gen_range(0..ids.len())])));
            }
        }
        reasserted += d.nodes.iter().filter(|n| n.uncertainty == Uncertainty::Unverified).count();
        if wm.merge(d).is_err() {
            rejected += 1;
        }
        ensure(wm.node_count() >= before_nodes, format!("step {step}: node count fell"))?;
        ensure(wm.edge_count() >= before_edges, format!("step {step}: edge count fell"))?;
        let after_u = snapshot_u(&wm);
        for (id, u) in &before_u {
            let now = after_u.get(id).ok_or_else(|| format!("step {step}: {id:?} vanished"))?;
            ensure(
                !(u.is_verified() && !now.is_verified()),
                format!("step {step}: {id:?} went from verified to unverified"),
            )?;
        }
    }
    Ok(format!(
        "10000 steps, {} nodes / {} edges, {rejected} invalid deltas rejected, {reasserted} unverified re-submissions, no U 0->1",
        wm.node_count(),
        wm.edge_count()
    ))
}

fn scoring_grids() -> Outcome {
    let (mut s1_min, mut s1_max) = (u32::MAX, 0);
    for r in 0..=10u8 {
        for c in 0..=10u8 {
            for v in 0..=10u8 {
                let s1 = Pass1Score::new(r, c, v).map_err(|e| e.to_string())?;
                let expect = 3 * r as u32 + 2 * c as u32 + v as u32;
                ensure(s1.total == expect, format!("S1({r},{c},{v}) = {}", s1.total))?;
                s1_min = s1_min.min(s1.total);
                s1_max = s1_max.max(s1.total);
            }
        }
    }
    ensure((s1_min, s1_max) == (0, 60), format!("S1 range {s1_min}..{s1_max}"))?;

    let (mut s2_min, mut s2_max) = (u32::MAX, 0);
    let mut cases = 0u64;
    for r in 0..=10u8 {
        for c in 0..=10u8 {
            for v in 0..=10u8 {
                let s1 = Pass1Score::new(r, c, v).unwrap();
                for d in 0..=10u8 {
                    for e in 0..=10u8 {
                        for x in 0..=10u8 {
                            let s2 = Pass2Score::new(s1, d, e, x).map_err(|e| e.to_string())?;
                            let expect = 3 * r as u32 + 2 * c as u32 + v as u32 + 2 * d as u32 + 2 * e as u32 + x as u32;
                            if s2.total != expect {
                                return Err(format!("S2({r},{c},{v},{d},{e},{x}) = {}", s2.total));
                            }
                            s2_min = s2_min.min(s2.total);
                            s2_max = s2_max.max(s2.total);
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    ensure((s2_min, s2_max) == (0, 110), format!("S2 range {s2_min}..{s2_max}"))?;
    ensure(Pass1Score::new(11, 0, 0).is_err(), "component 11 accepted")?;
    Ok(format!("1331 S1 and {cases} S2 grid points; ranges [0,60] and [0,110] attained"))
}

fn gap_synthesis() -> Outcome {
    let mut wm = WorldModel::new();
    let papers: Vec<NodeId> = (0..5).map(|i| wm.add_node(NodeAttrs::paper(format!("p{i}"))).unwrap()).collect();
    let mut expected = BTreeSet::new();
    for m in 1..=5usize {
        let desc = format!("limitation reported {m} times");
        wm.add_node(NodeAttrs::limitation(desc.clone(), papers[..m].iter().copied())).unwrap();
        if m >= 3 {
            expected.insert(desc);
        }
    }
    let gaps = synthesize_gaps(&mut wm, 3, Provenance::new("acceptance", "gaps")).map_err(|e| e.to_string())?;
    let got: BTreeSet<String> = gaps.iter().map(|g| wm.node(*g).unwrap().label().to_owned()).collect();
    ensure(got == expected, format!("promoted {got:?}"))?;
    ensure(wm.nodes_of(NodeKind::Gap).count() == 3, "extra gap nodes")?;
    Ok("multiplicities 1..5 at tau=3 promote exactly {3,4,5}".into())
}

// Transitive closure by repeated relaxation over an adjacency matrix.
fn closure_classes(n: usize, linked: &dyn Fn(usize, usize) -> bool) -> BTreeSet<BTreeSet<usize>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = i == j || linked(i, j) || linked(j, i);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..n).filter(|&j| reach[i][j]).collect())
        .collect()
}

fn dedup_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut nontrivial = 0;
    for set in 0..500 {
        let n = rng.gen_range(0..=20);
        let mut wm = WorldModel::new();
        let ids: Vec<NodeId> = (0..n)
            .map(|i| wm.add_node(NodeAttrs::module(format!("m{i}"), ModuleType::Loss, "")).unwrap())
            .collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let theta = [0.3, 0.5, 0.85][set % 3];
        let mut sim = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s: f64 = if rng.gen_bool(0.08) { rng.gen_range(0.86..=1.0) } else { rng.gen_range(0.0..0.9) };
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
        let similarity = |a: &Node, b: &Node| sim[index[&a.id]][index[&b.id]];
        let report = dedup_modules(&mut wm, similarity, theta, Provenance::new("acceptance", "dedup"))
            .map_err(|e| e.to_string())?;
        let got: BTreeSet<BTreeSet<usize>> = report
            .classes
            .iter()
            .map(|c| c.members.iter().map(|m| index[m]).collect())
            .collect();
        let want = closure_classes(n, &|i, j| i != j && sim[i][j] > theta);
        ensure(got == want, format!("set {set} (n={n}, theta={theta}): classes differ"))?;
        nontrivial += want.iter().filter(|c| c.len() > 1).count();
    }
    Ok(format!("500 random sets, {nontrivial} multi-member classes, all equal to the closure oracle"))
}

fn trio_growth() -> Outcome {
    let gateway = |name: &str| -> Result<Gateway, String> {
        let backend = load_fixtures(&[fixtures().join(format!("ai_safety/{name}.json"))]).map_err(|e| e.to_string())?;
        Ok(Gateway::single("fixtures", backend))
    };
    let interest = |name: &str| -> String {
        let text = std::fs::read_to_string(fixtures().join(format!("ai_safety/{name}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["interest"].as_str().unwrap().to_owned()
    };
    let names = ["rlhf", "constitutional", "safe_rlhf"];
    let mut e = Engine::new(EngineConfig::default(), gateway(names[0])?);
    e.set_auto_select(true);
    let mut growth = Vec::new();
    for name in names {
        e.set_gateway(gateway(name)?);
        e.start_project(name, &interest(name), vec![]).map_err(|e| e.to_string())?;
        while e.project(name).unwrap().phase < Phase::P2b {
            e.advance(name).map_err(|e| e.to_string())?;
        }
        growth.push(e.world_model().node_count());
    }
    ensure(growth == [7, 13, 19], format!("node growth {growth:?}"))?;
    let wm = e.world_model();
    let mut links = Vec::new();
    for pair in names.windows(2) {
        let shared = wm.cross_links(pair[0], pair[1]);
        ensure(!shared.is_empty(), format!("no cross links between {} and {}", pair[0], pair[1]))?;
        let labels: Vec<&str> = shared.iter().map(|id| wm.node(*id).unwrap().label()).collect();
        links.push(format!("{}~{}: {}", pair[0], pair[1], labels.join(", ")));
    }
    Ok(format!("growth 7 -> 13 -> 19; {}", links.join("; ")))
}

fn review_routing() -> Outcome {
    let table = [
        ("writing", Phase::P6),
        ("missing_experiments", Phase::P4),
        ("method_weakness", Phase::P3),
        ("novelty_concern", Phase::P2b),
    ];
    ensure(ROUTES.len() == 4, "route table is not four rows")?;
    for (category, phase) in table {
        let c: ReviewCategory = category.parse().map_err(|e: EngineError| e.to_string())?;
        ensure(c.target() == phase, format!("{category} routes to {}", c.target()))?;
        let routed = route_review(&[RawWeakness {
            category: category.into(),
            text: "t".into(),
        }])
        .map_err(|e| e.to_string())?;
        ensure(routed[0].target == phase, format!("{category} routed to {}", routed[0].target))?;
    }
    ensure(
        route_review(&[RawWeakness {
            category: "style".into(),
            text: "t".into(),
        }])
        .is_err(),
        "unknown category accepted",
    )?;
    Ok("writing->P6, missing_experiments->P4, method_weakness->P3, novelty_concern->P2b".into())
}

fn run_demo(steps: Option<usize>) -> Result<Engine, String> {
    let cfg = EngineConfig::load(fixtures().join("demo/config.json")).map_err(|e| e.to_string())?;
    let gw = cfg.build_gateway().map_err(|e| e.to_string())?;
    let seeds: Vec<supervisor_core::ingestion::PaperRecord> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("demo/seeds.json")).unwrap()).unwrap();
    let mut e = Engine::new(cfg, gw);
    e.set_auto_select(true);
    e.start_project("demo", "safe reinforcement learning under shifting constraints", seeds)
        .map_err(|e| e.to_string())?;
    for _ in 0..steps.unwrap_or(64) {
        match e.advance("demo") {
            Ok(_) => {}
            Err(EngineError::Finished(_)) => break,
            Err(err) => return Err(err.to_string()),
        }
    }
    Ok(e)
}

fn persistence() -> Outcome {
    let mut checked = 0;
    let mut states = Vec::new();
    for steps in [0, 1, 2, 3, 4, 8] {
        states.push(run_demo(Some(steps))?);
    }
    states.push(run_demo(None)?);
    for engine in &states {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        engine.save_dir(a.path()).map_err(|e| e.to_string())?;
        let cfg = EngineConfig::load(fixtures().join("demo/config.json")).unwrap();
        let gw = cfg.build_gateway().unwrap();
        let loaded = Engine::load_dir(a.path(), cfg, gw).map_err(|e| e.to_string())?;
        ensure(loaded.checkpoint() == engine.checkpoint(), "load(save(engine)) differs")?;
        loaded.save_dir(b.path()).map_err(|e| e.to_string())?;
        for f in ["rwm.json", "engine.json", "transcripts/demo.jsonl"] {
            let x = std::fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
            let y = std::fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
            ensure(x == y, format!("{f} bytes changed across save/load/save"))?;
        }
        let text = engine.world_model().to_canonical_json();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        engine.world_model().save(&path).map_err(|e| e.to_string())?;
        let again = WorldModel::load(&path).map_err(|e| e.to_string())?;
        ensure(again.to_canonical_json() == text, "model bytes changed across save/load")?;
        checked += 1;
    }
    for name in ["rlhf", "constitutional", "safe_rlhf"] {
        let backend = load_fixtures(&[fixtures().join(format!("ai_safety/{name}.json"))]).unwrap();
        let mut e = Engine::new(EngineConfig::default(), Gateway::single("fixtures", backend));
        e.set_auto_select(true);
        e.start_project(name, "alignment of language models with feedback", vec![]).map_err(|e| e.to_string())?;
        e.advance(name).map_err(|e| e.to_string())?;
        e.advance(name).map_err(|e| e.to_string())?;
        let a = tempfile::tempdir().unwrap();
        e.save_dir(a.path()).map_err(|e| e.to_string())?;
        let loaded = Engine::load_dir(a.path(), EngineConfig::default(), Gateway::new(Budget::unlimited()))
            .map_err(|e| e.to_string())?;
        ensure(loaded.checkpoint() == e.checkpoint(), format!("{name}: load(save) differs"))?;
        let b = tempfile::tempdir().unwrap();
        loaded.save_dir(b.path()).map_err(|e| e.to_string())?;
        ensure(
            std::fs::read(a.path().join("rwm.json")).unwrap() == std::fs::read(b.path().join("rwm.json")).unwrap(),
            format!("{name}: rwm.json bytes changed"),
        )?;
        checked += 1;
    }
    Ok(format!("{checked} fixture states: load(save(x)) == x and re-saved bytes identical"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("consensus recall bound", consensus_recall),
        ("corroboration exactness", corroboration_exactness),
        ("quality gate truth table", gate_truth_table),
        ("loop termination and no duplicate search", loop_termination),
        ("world model monotonicity and irreversibility", rwm_monotonicity),
        ("scoring formulas", scoring_grids),
        ("gap synthesis", gap_synthesis),
        ("dedup oracle equivalence", dedup_oracle),
        ("cross-project growth replay", trio_growth),
        ("review routing", review_routing),
        ("persistence", persistence),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
