//! Monte-Carlo runs of the full protocol against seeded hit-rate agents.
//!
//! Each trial plants one true gap. Recall is the fraction of trials in which
//! at least one round-1 proposal names it; precision is the share of
//! surviving gaps that are the planted one, pooled over trials.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{run_consensus, ConsensusConfig, ConsensusError};
use crate::gateway::{Budget, Gateway, StochasticAgentConfig, StochasticBackend};
use crate::text::normalize;
use crate::world_model::{Provenance, WorldModel};

pub const PLANTED_GAP: &str = "planted gap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub agents: usize,
    pub trials: u64,
    pub round_limit: u32,
    pub stochastic: StochasticAgentConfig,
}

impl SimulationConfig {
    /// Round-2 adoption rate defaults to the round-1 hit rate.
    pub fn new(agents: usize, hit_rate: f64, trials: u64, seed: u64) -> Self {
        SimulationConfig {
            agents,
            trials,
            round_limit: super::DEFAULT_ROUND_LIMIT,
            stochastic: StochasticAgentConfig::new(hit_rate, hit_rate, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub agents: usize,
    pub hit_rate: f64,
    pub trials: u64,
    pub recall: f64,
    pub precision: f64,
    /// Mean size of G* per trial.
    pub mean_gaps: f64,
    /// Mean size of the round-1 and round-2 candidate unions.
    pub mean_round1: f64,
    pub mean_round2: f64,
}

impl SimulationRow {
    pub fn recall_stderr(&self) -> f64 {
        (self.recall * (1.0 - self.recall) / self.trials.max(1) as f64).sqrt()
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    hits: u64,
    aligned: u64,
    surviving: u64,
    round1: u64,
    round2: u64,
}

impl Tally {
    fn add(self, o: Tally) -> Tally {
        Tally {
            hits: self.hits + o.hits,
            aligned: self.aligned + o.aligned,
            surviving: self.surviving + o.surviving,
            round1: self.round1 + o.round1,
            round2: self.round2 + o.round2,
        }
    }
}

fn trial(backend: &Arc<StochasticBackend>, cfg: &SimulationConfig, t: u64) -> Result<Tally, ConsensusError> {
    let mut gw = Gateway::new(Budget::unlimited());
    gw.register_backend("stochastic", backend.clone())?;
    let mut wm = WorldModel::new();
    let task = json!({"id": t, "planted_gap": {"description": PLANTED_GAP, "gap_type": "methods"}});
    let consensus = ConsensusConfig {
        agents: cfg.agents,
        round_limit: cfg.round_limit,
        ..Default::default()
    };
    let r = run_consensus(&mut wm, &gw, consensus, task, Provenance::new("simulation", "stochastic"))?;
    let planted = normalize(PLANTED_GAP);
    let first = |round: u32| r.rounds.iter().find(|x| x.cycle == 1 && x.round == round);
    let count = |round: u32| first(round).map_or(0, |x| x.sets().map(<[_]>::len).sum::<usize>()) as u64;
    let hit = first(1).is_some_and(|x| x.sets().flatten().any(|g| g.canonical_key == planted));
    Ok(Tally {
        hits: hit as u64,
        aligned: r.verified_gaps.iter().filter(|g| g.key == planted).count() as u64,
        surviving: r.verified_gaps.len() as u64,
        round1: count(1),
        round2: count(2),
    })
}

/// Runs `trials` independent protocol executions, spread over the available
/// cores. The result depends only on the configuration, never on scheduling.
pub fn simulate_consensus(cfg: &SimulationConfig) -> Result<SimulationRow, ConsensusError> {
    ConsensusConfig {
        agents: cfg.agents,
        round_limit: cfg.round_limit,
        ..Default::default()
    }
    .validate()?;
    let backend = Arc::new(
        StochasticBackend::new(cfg.stochastic.clone()).map_err(|e| ConsensusError::Config(e.to_string()))?,
    );
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()) as u64;
    let total = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let backend = &backend;
                s.spawn(move || -> Result<Tally, ConsensusError> {
                    let mut acc = Tally::default();
                    let mut t = w;
                    while t < cfg.trials {
                        acc = acc.add(trial(backend, cfg, t)?);
                        t += workers;
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .try_fold(Tally::default(), |acc, r| r.map(|x| acc.add(x)))
    })?;
    let n = cfg.trials.max(1) as f64;
    Ok(SimulationRow {
        agents: cfg.agents,
        hit_rate: cfg.stochastic.hit_rate_p,
        trials: cfg.trials,
        recall: total.hits as f64 / n,
        precision: if total.surviving == 0 {
            0.0
        } else {
            total.aligned as f64 / total.surviving as f64
        },
        mean_gaps: total.surviving as f64 / n,
        mean_round1: total.round1 as f64 / n,
        mean_round2: total.round2 as f64 / n,
    })
}

/// `K,p,trials,recall,precision`, one line per row.
pub fn write_simulation_csv<W: Write>(rows: &[SimulationRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "p", "trials", "recall", "precision"])?;
    for r in rows {
        w.write_record([
            r.agents.to_string(),
            r.hit_rate.to_string(),
            r.trials.to_string(),
            format!("{:.4}", r.recall),
            format!("{:.4}", r.precision),
        ])?;
    }
    w.flush()?;
    Ok(())
}
