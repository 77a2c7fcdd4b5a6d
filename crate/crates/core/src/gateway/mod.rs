//! Uniform invocation layer for every agent role.
//!
//! Requests are routed per role to a registered backend. Each call reserves
//! budget before any transport attempt, and every response passes the role's
//! schema (plus an optional caller check) before it is returned. Failed
//! attempts are retried up to the policy limit and recorded in the audit log.

mod budget;
pub mod remote;
pub mod roles;
pub mod scripted;
pub mod stochastic;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use budget::{Budget, BudgetLedger};
pub use remote::{Provider, RemoteBackend, RemoteConfig};
pub use roles::{AgentRole, RoleResponse};
pub use scripted::ScriptedBackend;
pub use stochastic::{Quorum, StochasticAgentConfig, StochasticBackend};

pub const DEFAULT_MAX_RESPONSE_TOKENS: u64 = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("budget exhausted: {resource} limit {limit}, {spent} spent")]
    BudgetExhausted { resource: String, limit: u64, spent: u64 },
    #[error("{role} response failed its schema after {attempts} attempts: {last}")]
    SchemaInvalid { role: AgentRole, attempts: u32, last: String },
    #[error("{role} transport failed after {attempts} attempts: {last}")]
    Transport { role: AgentRole, attempts: u32, last: String },
    #[error("no backend routed for role {0}")]
    NoBackend(AgentRole),
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("context of {tokens} tokens exceeds the {limit}-token limit of backend `{backend}`")]
    ContextTooLarge { backend: String, tokens: u64, limit: u64 },
    #[error("request for role {got} sent where {expected} was expected")]
    RoleMismatch { expected: AgentRole, got: AgentRole },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub role: AgentRole,
    /// Stable agent identifier within the run, e.g. `prober-2`.
    pub agent: String,
    pub context: Value,
    pub max_response_tokens: u64,
}

impl AgentRequest {
    pub fn new(role: AgentRole, agent: impl Into<String>, context: Value) -> Self {
        AgentRequest {
            role,
            agent: agent.into(),
            context,
            max_response_tokens: DEFAULT_MAX_RESPONSE_TOKENS,
        }
    }

    pub fn prompt_tokens(&self) -> u64 {
        estimate_tokens(&self.context)
    }
}

/// Rough size of a JSON payload in tokens, four bytes per token.
pub fn estimate_tokens(value: &Value) -> u64 {
    let bytes = serde_json::to_vec(value).map_or(0, |v| v.len() as u64);
    bytes.div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub role: AgentRole,
    pub agent: String,
    pub backend: String,
    pub content: Value,
    pub attempts: u32,
    pub tokens: u64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub content: Value,
    /// Tokens the backend reports for the whole exchange, when it knows.
    pub tokens: Option<u64>,
}

impl BackendReply {
    pub fn new(content: Value) -> Self {
        BackendReply { content, tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, TransportError>;

    /// Remote backends sleep between retries; local ones retry at once.
    fn backoff_on_retry(&self) -> bool {
        false
    }

    fn context_limit(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    SchemaInvalid,
    TransportFailed,
    BudgetExhausted,
}

/// One audit entry per `invoke` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub role: AgentRole,
    pub agent: String,
    pub backend: String,
    pub attempts: u32,
    pub tokens: u64,
    pub failures: Vec<String>,
    pub outcome: Outcome,
}

struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cond.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cond.notify_one();
    }
}

pub struct Gateway {
    backends: BTreeMap<String, Arc<dyn AgentBackend>>,
    routes: BTreeMap<AgentRole, String>,
    default_backend: Option<String>,
    budget: Budget,
    retry: RetryPolicy,
    slots: Slots,
    parallelism: usize,
    audit: Mutex<Vec<InvocationRecord>>,
}

impl Gateway {
    pub fn new(budget: Budget) -> Self {
        Gateway {
            backends: BTreeMap::new(),
            routes: BTreeMap::new(),
            default_backend: None,
            budget,
            retry: RetryPolicy::default(),
            slots: Slots::new(usize::MAX),
            parallelism: usize::MAX,
            audit: Mutex::new(Vec::new()),
        }
    }

    /// Single-backend gateway with an unlimited budget, routed for all roles.
    pub fn single(name: &str, backend: impl AgentBackend + 'static) -> Self {
        let mut gw = Gateway::new(Budget::unlimited());
        gw.register_backend(name, Arc::new(backend)).expect("fresh gateway");
        gw
    }

    /// The first registered backend also becomes the default route.
    pub fn register_backend(&mut self, name: &str, backend: Arc<dyn AgentBackend>) -> Result<(), GatewayError> {
        if self.backends.contains_key(name) {
            return Err(GatewayError::DuplicateBackend(name.to_owned()));
        }
        self.backends.insert(name.to_owned(), backend);
        if self.default_backend.is_none() {
            self.default_backend = Some(name.to_owned());
        }
        Ok(())
    }

    pub fn route(&mut self, role: AgentRole, backend: &str) -> Result<(), GatewayError> {
        if !self.backends.contains_key(backend) {
            return Err(GatewayError::UnknownBackend(backend.to_owned()));
        }
        self.routes.insert(role, backend.to_owned());
        Ok(())
    }

    pub fn set_default_backend(&mut self, backend: &str) -> Result<(), GatewayError> {
        if !self.backends.contains_key(backend) {
            return Err(GatewayError::UnknownBackend(backend.to_owned()));
        }
        self.default_backend = Some(backend.to_owned());
        Ok(())
    }

    pub fn backend_for(&self, role: AgentRole) -> Option<&str> {
        self.routes
            .get(&role)
            .or(self.default_backend.as_ref())
            .map(String::as_str)
    }

    pub fn set_retry_policy(&mut self, policy: RetryPolicy) {
        self.retry = policy;
    }

    /// Caps concurrent in-flight invocations across all threads.
    pub fn set_parallelism(&mut self, cap: usize) {
        self.parallelism = cap.max(1);
        self.slots = Slots::new(self.parallelism);
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn audit(&self) -> Vec<InvocationRecord> {
        self.audit.lock().expect("audit lock poisoned").clone()
    }

    pub fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, GatewayError> {
        self.invoke_checked(request, |_| Ok(()))
    }

    /// Like [`invoke`](Self::invoke) with a caller-supplied check applied
    /// after the role schema. A failing check counts as a schema failure.
    pub fn invoke_checked<F>(&self, request: &AgentRequest, check: F) -> Result<AgentResponse, GatewayError>
    where
        F: Fn(&Value) -> Result<(), String>,
    {
        let role = request.role;
        let backend_name = self.backend_for(role).ok_or(GatewayError::NoBackend(role))?.to_owned();
        let backend = Arc::clone(&self.backends[&backend_name]);
        let prompt = request.prompt_tokens();
        if let Some(limit) = backend.context_limit() {
            if prompt > limit {
                return Err(GatewayError::ContextTooLarge {
                    backend: backend_name,
                    tokens: prompt,
                    limit,
                });
            }
        }

        let mut record = InvocationRecord {
            role,
            agent: request.agent.clone(),
            backend: backend_name.clone(),
            attempts: 0,
            tokens: 0,
            failures: Vec::new(),
            outcome: Outcome::Ok,
        };
        let mut attempt_request = request.clone();
        let mut last_schema_error: Option<String> = None;
        let mut last_transport: Option<String> = None;

        let result = loop {
            if record.attempts >= self.retry.max_attempts {
                break Err(match (&last_schema_error, &last_transport) {
                    (Some(e), None) => GatewayError::SchemaInvalid {
                        role,
                        attempts: record.attempts,
                        last: e.clone(),
                    },
                    (_, Some(t)) => GatewayError::Transport {
                        role,
                        attempts: record.attempts,
                        last: t.clone(),
                    },
                    (None, None) => GatewayError::Transport {
                        role,
                        attempts: record.attempts,
                        last: "no attempts permitted".into(),
                    },
                });
            }
            if record.attempts > 0 && backend.backoff_on_retry() {
                let factor = 1u32 << (record.attempts - 1).min(16);
                std::thread::sleep(self.retry.initial_backoff * factor);
            }
            let reservation = prompt + request.max_response_tokens;
            if let Err(e) = self.budget.reserve(reservation) {
                break Err(e);
            }
            record.attempts += 1;
            let reply = {
                let _slot = self.slots.acquire();
                backend.complete(&attempt_request)
            };
            match reply {
                Err(TransportError(msg)) => {
                    self.budget.refund(request.max_response_tokens);
                    record.tokens += prompt;
                    record.failures.push(format!("attempt {}: transport: {msg}", record.attempts));
                    last_transport = Some(msg);
                    last_schema_error = None;
                }
                Ok(reply) => {
                    let used = reply
                        .tokens
                        .unwrap_or_else(|| prompt + estimate_tokens(&reply.content))
                        .min(reservation);
                    self.budget.refund(reservation - used);
                    record.tokens += used;
                    match role.check(&reply.content).and_then(|_| check(&reply.content)) {
                        Ok(()) => {
                            break Ok(AgentResponse {
                                role,
                                agent: request.agent.clone(),
                                backend: backend_name.clone(),
                                content: reply.content,
                                attempts: record.attempts,
                                tokens: record.tokens,
                                failures: record.failures.clone(),
                            })
                        }
                        Err(msg) => {
                            record.failures.push(format!("attempt {}: schema: {msg}", record.attempts));
                            attempt_request.context = with_repair_note(&request.context, &msg);
                            last_schema_error = Some(msg);
                            last_transport = None;
                        }
                    }
                }
            }
        };

        record.outcome = match &result {
            Ok(_) => Outcome::Ok,
            Err(GatewayError::BudgetExhausted { .. }) => Outcome::BudgetExhausted,
            Err(GatewayError::SchemaInvalid { .. }) => Outcome::SchemaInvalid,
            Err(_) => Outcome::TransportFailed,
        };
        if !record.failures.is_empty() {
            tracing::warn!(role = %role, agent = %record.agent, failures = ?record.failures, "agent invocation retried");
        }
        self.audit.lock().expect("audit lock poisoned").push(record);
        result
    }

    pub fn invoke_typed<T, F>(&self, request: &AgentRequest, check: F) -> Result<T, GatewayError>
    where
        T: RoleResponse,
        F: Fn(&T) -> Result<(), String>,
    {
        if request.role != T::ROLE {
            return Err(GatewayError::RoleMismatch {
                expected: T::ROLE,
                got: request.role,
            });
        }
        let response = self.invoke_checked(request, |v| roles::parse::<T>(v).and_then(|t| check(&t)))?;
        Ok(roles::parse::<T>(&response.content).expect("response already passed the same check"))
    }
}

/// Adds the schema-repair note sent with attempts after a schema failure.
fn with_repair_note(context: &Value, error: &str) -> Value {
    let note = Value::String(format!(
        "Your previous reply was rejected: {error}. Reply again with JSON matching the requested shape."
    ));
    match context {
        Value::Object(map) => {
            let mut map = map.clone();
            map.insert("repair".into(), note);
            Value::Object(map)
        }
        other => serde_json::json!({ "payload": other, "repair": note }),
    }
}
