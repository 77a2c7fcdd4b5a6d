//! Seeded hit-rate agents for protocol simulation.
//!
//! Every reply is drawn from a ChaCha stream seeded by the run seed, the role,
//! the agent id and a hash of the request context, so identical runs replay
//! bit-for-bit and distinct agents draw independently.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentBackend, AgentRequest, AgentRole, BackendReply, TransportError};
use crate::text::{combine_seed, fnv1a, normalize};

/// How many round-2 proposers a gap needs to survive the simulated
/// orchestrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Quorum {
    Any,
    Corroborated,
    #[default]
    Majority,
}

impl Quorum {
    pub fn threshold(self, agents: usize) -> usize {
        match self {
            Quorum::Any => 1,
            Quorum::Corroborated => 2,
            Quorum::Majority => agents.div_ceil(2).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticAgentConfig {
    pub hit_rate_p: f64,
    pub round2_hit_rate_p2: f64,
    pub seed: u64,
    #[serde(default = "defaults::decoys")]
    pub decoys_per_agent: usize,
    #[serde(default = "defaults::decoy_pool")]
    pub decoy_pool: usize,
    #[serde(default)]
    pub quorum: Quorum,
    #[serde(default = "defaults::mechanism_pool")]
    pub mechanism_pool: usize,
    #[serde(default = "defaults::field_pool")]
    pub field_pool: usize,
    #[serde(default = "defaults::technique_pool")]
    pub technique_pool: usize,
    #[serde(default = "defaults::confirm_rate")]
    pub confirm_rate: f64,
    #[serde(default = "defaults::criterion_pass_rate")]
    pub criterion_pass_rate: f64,
}

mod defaults {
    pub fn decoys() -> usize {
        1
    }
    pub fn decoy_pool() -> usize {
        10
    }
    pub fn mechanism_pool() -> usize {
        3
    }
    pub fn field_pool() -> usize {
        6
    }
    pub fn technique_pool() -> usize {
        5
    }
    pub fn confirm_rate() -> f64 {
        0.8
    }
    pub fn criterion_pass_rate() -> f64 {
        0.9
    }
}

impl StochasticAgentConfig {
    pub fn new(hit_rate_p: f64, round2_hit_rate_p2: f64, seed: u64) -> Self {
        StochasticAgentConfig {
            hit_rate_p,
            round2_hit_rate_p2,
            seed,
            decoys_per_agent: defaults::decoys(),
            decoy_pool: defaults::decoy_pool(),
            quorum: Quorum::default(),
            mechanism_pool: defaults::mechanism_pool(),
            field_pool: defaults::field_pool(),
            technique_pool: defaults::technique_pool(),
            confirm_rate: defaults::confirm_rate(),
            criterion_pass_rate: defaults::criterion_pass_rate(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("hit_rate_p", self.hit_rate_p),
            ("round2_hit_rate_p2", self.round2_hit_rate_p2),
            ("confirm_rate", self.confirm_rate),
            ("criterion_pass_rate", self.criterion_pass_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.decoys_per_agent > 0 && self.decoy_pool == 0 {
            return Err("decoy_pool must be positive when decoys are drawn".into());
        }
        if self.mechanism_pool == 0 || self.field_pool == 0 || self.technique_pool == 0 {
            return Err("pools must be nonempty".into());
        }
        Ok(())
    }
}

pub struct StochasticBackend {
    config: StochasticAgentConfig,
}

impl StochasticBackend {
    pub fn new(config: StochasticAgentConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(StochasticBackend { config })
    }

    pub fn config(&self) -> &StochasticAgentConfig {
        &self.config
    }

    fn rng(&self, request: &AgentRequest) -> ChaCha8Rng {
        let ctx = serde_json::to_vec(&request.context).unwrap_or_default();
        ChaCha8Rng::seed_from_u64(combine_seed(&[
            self.config.seed,
            fnv1a(request.role.as_str().as_bytes()),
            fnv1a(request.agent.as_bytes()),
            fnv1a(&ctx),
        ]))
    }

    fn probe(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Value {
        let ctx = &request.context;
        let round = ctx.get("round").and_then(Value::as_u64).unwrap_or(1);
        let task_id = ctx
            .pointer("/task/id")
            .map(|v| v.to_string())
            .unwrap_or_default();
        let planted = ctx.pointer("/task/planted_gap").filter(|v| !v.is_null());
        let mut gaps: Vec<Value> = Vec::new();

        if round <= 1 {
            if let Some(p) = planted {
                if rng.gen_bool(self.config.hit_rate_p) {
                    gaps.push(gap_json(p));
                }
            }
            for _ in 0..self.config.decoys_per_agent {
                let d = rng.gen_range(0..self.config.decoy_pool);
                let g = json!({
                    "description": format!("decoy gap {d} of task {task_id}"),
                    "gap_type": "methods",
                    "evidence": [],
                });
                if !gaps.contains(&g) {
                    gaps.push(g);
                }
            }
            return json!({ "gaps": gaps, "tasks": [] });
        }

        let visible: Vec<&Value> = ctx
            .get("visible")
            .and_then(Value::as_array)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        let mine = |g: &&&Value| g.get("proposer").and_then(Value::as_str) == Some(request.agent.as_str());
        for g in visible.iter().filter(mine) {
            let kept = gap_json(g);
            if !gaps.contains(&kept) {
                gaps.push(kept);
            }
        }
        if let Some(p) = planted {
            let key = gap_key(p);
            let own = gaps.iter().any(|g| gap_key(g) == key);
            if !own {
                let seen = visible.iter().any(|g| gap_key(g) == key);
                let rate = if seen {
                    self.config.round2_hit_rate_p2
                } else {
                    self.config.hit_rate_p
                };
                if rng.gen_bool(rate) {
                    gaps.push(gap_json(p));
                }
            }
        }
        json!({ "gaps": gaps, "tasks": [] })
    }

    fn orchestrate(&self, request: &AgentRequest) -> Value {
        let ctx = &request.context;
        let agents = ctx.get("agents").and_then(Value::as_array).map_or(1, Vec::len);
        let quorum = self.config.quorum.threshold(agents);
        let mut decisions = Vec::new();
        for g in ctx.get("gaps").and_then(Value::as_array).into_iter().flatten() {
            let key = g.get("key").cloned().unwrap_or(Value::Null);
            let m = g.get("multiplicity").and_then(Value::as_u64).unwrap_or(0) as usize;
            decisions.push(if m >= quorum {
                json!({"action": "continue", "subjects": [key], "rationale": format!("{m} proposers")})
            } else {
                json!({"action": "kill", "subjects": [key], "rationale": format!("{m} proposers, quorum {quorum}")})
            });
        }
        for t in ctx.get("tasks").and_then(Value::as_array).into_iter().flatten() {
            let id = t.get("id").cloned().unwrap_or(Value::Null);
            decisions.push(json!({"action": "continue", "subjects": [id], "rationale": "approved"}));
        }
        json!({ "decisions": decisions })
    }

    fn chain(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Value {
        let anchors: Vec<Value> = request
            .context
            .get("anchors")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let mechanism = rng.gen_range(0..self.config.mechanism_pool);
        let links: Vec<Value> = (1..=5)
            .map(|i| {
                let anchor: Vec<Value> = anchors.choose(rng).cloned().into_iter().collect();
                let cause = if i == 5 {
                    format!("mechanism {mechanism}")
                } else {
                    format!("cause {i}")
                };
                json!({"cause": cause, "anchors": anchor})
            })
            .collect();
        json!({"links": links, "origin_field": "origin field"})
    }

    fn fields(&self, rng: &mut ChaCha8Rng) -> Value {
        // the origin field is deliberately in the pool so exclusion is exercised
        let mut pool: Vec<String> = (0..self.config.field_pool).map(|i| format!("field {i}")).collect();
        pool.push("origin field".into());
        let picked: Vec<Value> = pool
            .choose_multiple(rng, 2.min(pool.len()))
            .map(|f| json!({"field": f, "query": format!("{f} techniques")}))
            .collect();
        json!({ "fields": picked })
    }

    fn techniques(&self, rng: &mut ChaCha8Rng) -> Value {
        let picks: Vec<String> = (0..3)
            .map(|_| format!("technique {}", rng.gen_range(0..self.config.technique_pool)))
            .collect();
        json!({ "techniques": picks })
    }

    fn test_method(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Value {
        let technique = request
            .context
            .get("technique")
            .and_then(Value::as_str)
            .unwrap_or("technique");
        let field = request.context.get("field").and_then(Value::as_str).unwrap_or("field");
        json!({
            "mechanism_confirmed": rng.gen_bool(self.config.confirm_rate),
            "method": {"name": format!("{technique} via {field}"), "description": ""},
        })
    }

    fn gate(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Value {
        let ids: Vec<String> = request
            .context
            .get("criteria")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
            .unwrap_or_default();
        let verdicts: Vec<Value> = ids
            .iter()
            .map(|id| json!({"criterion": id, "pass": rng.gen_bool(self.config.criterion_pass_rate), "evidence": "simulated"}))
            .collect();
        json!({ "criteria": verdicts })
    }

    fn reassess(&self, rng: &mut ChaCha8Rng) -> Value {
        let branch = ["update_mechanism", "update_fields", "update_gap"][rng.gen_range(0..3)];
        json!({"branch": branch, "rationale": "simulated"})
    }
}

fn gap_json(g: &Value) -> Value {
    json!({
        "description": g.get("description").cloned().unwrap_or(Value::Null),
        "gap_type": g.get("gap_type").cloned().unwrap_or(json!("methods")),
        "evidence": g.get("evidence").cloned().unwrap_or(json!([])),
    })
}

fn gap_key(g: &Value) -> String {
    normalize(g.get("description").and_then(Value::as_str).unwrap_or_default())
}

impl AgentBackend for StochasticBackend {
    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, TransportError> {
        let mut rng = self.rng(request);
        let content = match request.role {
            AgentRole::Prober => self.probe(request, &mut rng),
            AgentRole::Orchestrator => self.orchestrate(request),
            AgentRole::MechanismAnalyst => self.chain(request, &mut rng),
            AgentRole::FieldMapper => self.fields(&mut rng),
            AgentRole::TechniqueSearch => self.techniques(&mut rng),
            AgentRole::Tester => self.test_method(request, &mut rng),
            AgentRole::GateEvaluator => self.gate(request, &mut rng),
            AgentRole::Reassessor => self.reassess(&mut rng),
            other => {
                return Err(TransportError(format!(
                    "the stochastic backend does not simulate role {other}"
                )))
            }
        };
        Ok(BackendReply::new(content))
    }
}
