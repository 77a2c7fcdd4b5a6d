//! Repeated development loops against seeded stochastic agents.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{run_dev_loop, DevConfig, DevError, DevOutcome};
use crate::gateway::{Budget, Gateway, StochasticAgentConfig, StochasticBackend};
use crate::text::normalize;
use crate::transcript::EventKind;
use crate::world_model::{Delta, GapType, ModuleType, NodeAttrs, NodeId, Provenance, Uncertainty, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSimulationConfig {
    pub trials: u64,
    pub t_max: u32,
    pub stochastic: StochasticAgentConfig,
}

impl LoopSimulationConfig {
    pub fn new(trials: u64, t_max: u32, seed: u64) -> Self {
        LoopSimulationConfig {
            trials,
            t_max,
            stochastic: StochasticAgentConfig::new(0.5, 0.5, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSimulationRow {
    pub trials: u64,
    pub t_max: u32,
    pub finalized: u64,
    pub mean_iterations: f64,
    pub max_iterations: u32,
    /// (field, technique) pairs searched, summed over runs.
    pub searched_pairs: u64,
    /// Pairs searched more than once within one run, read back from the
    /// transcripts. Zero when duplicate prevention holds.
    pub duplicate_pairs: u64,
}

/// A small model with four modules, two benchmarks and one verified gap.
pub fn fixture_model(trial: u64) -> (WorldModel, NodeId) {
    let mut wm = WorldModel::new();
    let mut d = Delta::new(Provenance::new("simulation", "fixture"));
    for (i, t) in [ModuleType::Loss, ModuleType::Training, ModuleType::Architecture, ModuleType::Data]
        .into_iter()
        .enumerate()
    {
        d.add_node(NodeAttrs::module(format!("module {i}"), t, ""));
    }
    d.add_node(NodeAttrs::benchmark("benchmark a"));
    d.add_node(NodeAttrs::benchmark("benchmark b"));
    d.add_node_with(
        NodeAttrs::gap(format!("verified gap of trial {trial}"), GapType::Methods),
        Uncertainty::Verified,
    );
    let report = wm.merge(d).expect("fixture delta is valid");
    let gap = *report.node_ids.last().expect("gap node");
    (wm, gap)
}

/// Pairs a run searched twice, recounted from its transcript.
pub fn duplicate_searches(outcome: &DevOutcome) -> (u64, u64) {
    let mut seen = BTreeSet::new();
    let mut total = 0;
    let mut dups = 0;
    for e in outcome.transcript.of_kind(EventKind::Finding) {
        let Some(pairs) = e.data.get("searched").and_then(|v| v.as_array()) else {
            continue;
        };
        for p in pairs {
            let field = p[0].as_str().unwrap_or_default();
            let technique = p[1].as_str().unwrap_or_default();
            total += 1;
            if !seen.insert((normalize(field), normalize(technique))) {
                dups += 1;
            }
        }
    }
    (total, dups)
}

pub fn simulate_loop(cfg: &LoopSimulationConfig) -> Result<LoopSimulationRow, DevError> {
    if cfg.t_max == 0 {
        return Err(DevError::ZeroIterations);
    }
    let backend =
        Arc::new(StochasticBackend::new(cfg.stochastic.clone()).map_err(|e| DevError::Unanchored(e.to_string()))?);
    let mut row = LoopSimulationRow {
        trials: cfg.trials,
        t_max: cfg.t_max,
        finalized: 0,
        mean_iterations: 0.0,
        max_iterations: 0,
        searched_pairs: 0,
        duplicate_pairs: 0,
    };
    let mut iterations = 0u64;
    for t in 0..cfg.trials {
        let mut gw = Gateway::new(Budget::unlimited());
        gw.register_backend("stochastic", backend.clone())?;
        let (mut wm, gap) = fixture_model(t);
        let out = run_dev_loop(
            gap,
            &mut wm,
            &gw,
            DevConfig { t_max: cfg.t_max },
            Provenance::new("simulation", "dev-loop"),
        )?;
        let (pairs, dups) = duplicate_searches(&out);
        row.finalized += out.finalized as u64;
        row.max_iterations = row.max_iterations.max(out.state.iteration);
        iterations += u64::from(out.state.iteration);
        row.searched_pairs += pairs;
        row.duplicate_pairs += dups;
    }
    row.mean_iterations = iterations as f64 / cfg.trials.max(1) as f64;
    Ok(row)
}
