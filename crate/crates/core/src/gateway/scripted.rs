//! Fixture-driven backend.
//!
//! Scripts are keyed by `role@agent` or by bare `role`; the agent-specific
//! key wins. A queue replays its responses in order and then keeps repeating
//! the last one. A response of the form `{"$error": "..."}` simulates a
//! transport failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::{AgentBackend, AgentRequest, AgentRole, BackendReply, TransportError};

pub type Responder = Arc<dyn Fn(&AgentRequest) -> Result<Value, String> + Send + Sync>;

enum Script {
    Queue { items: Vec<Value>, next: usize },
    Responder(Responder),
}

#[derive(Default)]
pub struct ScriptedBackend {
    scripts: Mutex<BTreeMap<String, Script>>,
}

fn key(role: AgentRole, agent: Option<&str>) -> String {
    match agent {
        Some(a) => format!("{role}@{a}"),
        None => role.to_string(),
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one response to the queue for `role` (optionally one agent).
    pub fn push(&self, role: AgentRole, agent: Option<&str>, response: Value) {
        let mut scripts = self.scripts.lock().expect("script lock poisoned");
        match scripts.entry(key(role, agent)).or_insert_with(|| Script::Queue {
            items: Vec::new(),
            next: 0,
        }) {
            Script::Queue { items, .. } => items.push(response),
            slot @ Script::Responder(_) => {
                *slot = Script::Queue {
                    items: vec![response],
                    next: 0,
                }
            }
        }
    }

    /// Replaces whatever serves `role` (optionally one agent) with a single
    /// repeating response.
    pub fn set(&self, role: AgentRole, agent: Option<&str>, response: Value) {
        self.scripts.lock().expect("script lock poisoned").insert(
            key(role, agent),
            Script::Queue {
                items: vec![response],
                next: 0,
            },
        );
    }

    pub fn with(self, role: AgentRole, agent: Option<&str>, responses: impl IntoIterator<Item = Value>) -> Self {
        for r in responses {
            self.push(role, agent, r);
        }
        self
    }

    /// Serves `role` (optionally one agent) from a closure.
    pub fn push_responder<F>(&self, role: AgentRole, agent: Option<&str>, f: F)
    where
        F: Fn(&AgentRequest) -> Result<Value, String> + Send + Sync + 'static,
    {
        self.scripts
            .lock()
            .expect("script lock poisoned")
            .insert(key(role, agent), Script::Responder(Arc::new(f)));
    }

    /// Loads `{"scripts": {"prober@p1": [...], "reader": [...]}}`.
    pub fn from_json(doc: &Value) -> Result<Self, String> {
        let scripts = doc
            .get("scripts")
            .and_then(Value::as_object)
            .ok_or("fixture needs a `scripts` object")?;
        let backend = ScriptedBackend::new();
        for (k, v) in scripts {
            let (role, agent) = match k.split_once('@') {
                Some((r, a)) => (r, Some(a)),
                None => (k.as_str(), None),
            };
            let role: AgentRole = role.parse()?;
            match v {
                Value::Array(items) => {
                    for item in items {
                        backend.push(role, agent, item.clone());
                    }
                }
                other => backend.push(role, agent, other.clone()),
            }
        }
        Ok(backend)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&doc)
    }

    /// Merges another fixture's scripts; keys present in both keep `self`'s.
    pub fn merge(self, other: ScriptedBackend) -> Self {
        {
            let mut mine = self.scripts.lock().expect("script lock poisoned");
            for (k, s) in other.scripts.into_inner().expect("script lock poisoned") {
                mine.entry(k).or_insert(s);
            }
        }
        self
    }

    pub fn has_script(&self, role: AgentRole, agent: Option<&str>) -> bool {
        self.scripts
            .lock()
            .expect("script lock poisoned")
            .contains_key(&key(role, agent))
    }
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, TransportError> {
        let responder = {
            let mut scripts = self.scripts.lock().expect("script lock poisoned");
            let specific = key(request.role, Some(&request.agent));
            let k = if scripts.contains_key(&specific) {
                specific
            } else {
                key(request.role, None)
            };
            match scripts.get_mut(&k) {
                None => {
                    return Err(TransportError(format!(
                        "no script for {} (agent {})",
                        request.role, request.agent
                    )))
                }
                Some(Script::Responder(f)) => Arc::clone(f),
                Some(Script::Queue { items, next }) => {
                    if items.is_empty() {
                        return Err(TransportError(format!("empty script for {}", request.role)));
                    }
                    let item = items[(*next).min(items.len() - 1)].clone();
                    *next += 1;
                    return reply(item);
                }
            }
        };
        // called outside the lock so responders may be slow or reentrant
        match responder(request) {
            Ok(v) => reply(v),
            Err(e) => Err(TransportError(e)),
        }
    }
}

fn reply(item: Value) -> Result<BackendReply, TransportError> {
    if let Some(msg) = item.get("$error").and_then(Value::as_str) {
        return Err(TransportError(msg.to_owned()));
    }
    Ok(BackendReply::new(item))
}
