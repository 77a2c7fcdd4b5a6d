//! Run configuration: backends and their routing, protocol parameters and
//! the budget. Credentials never appear here; remote backends name the
//! environment variable that holds their key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EngineError;
use crate::consensus::{ConsensusConfig, DEFAULT_AGENTS, DEFAULT_ROUND_LIMIT};
use crate::dev_loop::DEFAULT_T_MAX;
use crate::gateway::{
    AgentBackend, AgentRole, Budget, Gateway, RemoteBackend, RemoteConfig, RetryPolicy, ScriptedBackend,
    StochasticAgentConfig, StochasticBackend,
};
use crate::ingestion::fixtures::FixtureLibrary;
use crate::ingestion::{Phase2aConfig, DEFAULT_TOP_K};
use crate::world_model::{DEFAULT_TAU_SHARED, DEFAULT_THETA_DEDUP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    /// Fixture files, each holding `scripts`, `papers`, or both. Earlier
    /// files win on conflicting script keys.
    Scripted { fixtures: Vec<PathBuf> },
    Stochastic(StochasticAgentConfig),
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_calls: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
    /// Role to backend name. Unrouted roles use `default_backend`, or the
    /// first backend by name.
    #[serde(default)]
    pub routes: BTreeMap<AgentRole, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_backend: Option<String>,
    #[serde(default = "defaults::agents")]
    pub agents: usize,
    #[serde(default = "defaults::round_limit")]
    pub round_limit: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_similarity: Option<f64>,
    #[serde(default = "defaults::t_max")]
    pub t_max: u32,
    #[serde(default = "defaults::theta_dedup")]
    pub theta_dedup: f64,
    #[serde(default = "defaults::tau_shared")]
    pub tau_shared: usize,
    #[serde(default = "defaults::top_k")]
    pub top_k: usize,
    #[serde(default = "defaults::max_review_rounds")]
    pub max_review_rounds: u32,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_backoff_ms: Option<u64>,
    /// Resolve every pending decision with its top-ranked option.
    #[serde(default)]
    pub auto_select: bool,
    /// Where packaging writes export bundles; unset keeps the manifest only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_dir: Option<PathBuf>,
}

mod defaults {
    pub fn agents() -> usize {
        super::DEFAULT_AGENTS
    }
    pub fn round_limit() -> u32 {
        super::DEFAULT_ROUND_LIMIT
    }
    pub fn t_max() -> u32 {
        super::DEFAULT_T_MAX
    }
    pub fn theta_dedup() -> f64 {
        super::DEFAULT_THETA_DEDUP
    }
    pub fn tau_shared() -> usize {
        super::DEFAULT_TAU_SHARED
    }
    pub fn top_k() -> usize {
        super::DEFAULT_TOP_K
    }
    pub fn max_review_rounds() -> u32 {
        3
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("every field has a default")
    }
}

impl EngineConfig {
    /// Reads a configuration file. Relative paths inside it resolve against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: EngineConfig =
            serde_json::from_str(&text).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for spec in self.backends.values_mut() {
            if let BackendSpec::Scripted { fixtures } = spec {
                fixtures.iter_mut().for_each(fix);
            }
        }
        if let Some(d) = self.bundle_dir.as_mut() {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.consensus().validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if self.t_max == 0 {
            return Err(EngineError::Config("t_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta_dedup) {
            return Err(EngineError::Config("theta_dedup must lie in [0, 1]".into()));
        }
        if self.tau_shared == 0 {
            return Err(EngineError::Config("tau_shared must be at least 1".into()));
        }
        if self.top_k == 0 || self.top_k > DEFAULT_TOP_K {
            return Err(EngineError::Config(format!("top_k must lie in 1..={DEFAULT_TOP_K}")));
        }
        for (role, name) in &self.routes {
            if !self.backends.contains_key(name) {
                return Err(EngineError::Config(format!("role {role} routes to unknown backend `{name}`")));
            }
        }
        if let Some(d) = &self.default_backend {
            if !self.backends.contains_key(d) {
                return Err(EngineError::Config(format!("default backend `{d}` is not defined")));
            }
        }
        Ok(())
    }

    pub fn consensus(&self) -> ConsensusConfig {
        ConsensusConfig {
            agents: self.agents,
            round_limit: self.round_limit,
            similarity: self.gap_similarity,
        }
    }

    pub fn phase2a(&self) -> Phase2aConfig {
        Phase2aConfig {
            theta_dedup: self.theta_dedup,
            tau_shared: self.tau_shared,
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, EngineError> {
        self.validate()?;
        let budget = Budget::new(
            self.budget.max_calls.unwrap_or(u64::MAX),
            self.budget.max_tokens.unwrap_or(u64::MAX),
        );
        let mut gw = Gateway::new(budget);
        if let Some(d) = &self.default_backend {
            gw.register_backend(d, build_backend(&self.backends[d])?)?;
        }
        for (name, spec) in &self.backends {
            if Some(name) != self.default_backend.as_ref() {
                gw.register_backend(name, build_backend(spec)?)?;
            }
        }
        for (role, name) in &self.routes {
            gw.route(*role, name)?;
        }
        if let Some(n) = self.parallelism {
            gw.set_parallelism(n);
        }
        let mut retry = RetryPolicy::default();
        if let Some(n) = self.max_attempts {
            retry.max_attempts = n.max(1);
        }
        if let Some(ms) = self.initial_backoff_ms {
            retry.initial_backoff = Duration::from_millis(ms);
        }
        gw.set_retry_policy(retry);
        Ok(gw)
    }
}

fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn AgentBackend>, EngineError> {
    Ok(match spec {
        BackendSpec::Scripted { fixtures } => Arc::new(load_fixtures(fixtures)?),
        BackendSpec::Stochastic(cfg) => Arc::new(StochasticBackend::new(cfg.clone()).map_err(EngineError::Config)?),
        BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())),
    })
}

/// One scripted backend from several fixture files.
pub fn load_fixtures(paths: &[PathBuf]) -> Result<ScriptedBackend, EngineError> {
    let mut backend = ScriptedBackend::new();
    let mut libraries = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let doc: Value =
            serde_json::from_str(&text).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        if doc.get("scripts").is_some() {
            let scripts = ScriptedBackend::from_json(&doc).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
            backend = backend.merge(scripts);
        }
        if doc.get("papers").is_some() {
            let lib: FixtureLibrary =
                serde_json::from_value(doc).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
            libraries.push(lib);
        }
    }
    let mut merged = FixtureLibrary::default();
    for lib in libraries {
        merged.papers.extend(lib.papers);
    }
    if !merged.papers.is_empty() {
        merged.install(&backend);
    }
    Ok(backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_match_protocol_constants() {
        let c = EngineConfig::default();
        assert_eq!((c.agents, c.round_limit, c.t_max, c.tau_shared, c.top_k), (3, 4, 5, 3, 20));
        assert_eq!(c.theta_dedup, 0.85);
        assert!(!c.auto_select);
    }

    #[test]
    fn unknown_keys_and_routes_rejected() {
        assert!(serde_json::from_value::<EngineConfig>(json!({"agentz": 3})).is_err());
        let c: EngineConfig = serde_json::from_value(json!({"routes": {"prober": "missing"}})).unwrap();
        assert!(matches!(c.validate(), Err(EngineError::Config(_))));
    }

    #[test]
    fn gateway_routes_by_role() {
        let c: EngineConfig = serde_json::from_value(json!({
            "backends": {
                "sim": {"type": "stochastic", "hit_rate_p": 0.3, "round2_hit_rate_p2": 0.3, "seed": 1},
                "fx": {"type": "scripted", "fixtures": []}
            },
            "routes": {"prober": "sim"},
            "default_backend": "fx",
            "budget": {"max_calls": 10}
        }))
        .unwrap();
        let gw = c.build_gateway().unwrap();
        assert_eq!(gw.backend_for(AgentRole::Prober), Some("sim"));
        assert_eq!(gw.backend_for(AgentRole::Writer), Some("fx"));
        assert_eq!(gw.budget().ledger().max_calls, 10);
    }
}
