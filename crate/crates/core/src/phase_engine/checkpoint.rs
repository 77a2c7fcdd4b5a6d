//! Engine snapshots. On disk a state directory holds the shared model as
//! `rwm.json`, the projects and budget as `engine.json`, and one JSON-lines
//! transcript per project under `transcripts/`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Engine, EngineConfig, EngineError, ProjectState};
use crate::gateway::{BudgetLedger, Gateway};
use crate::world_model::{ModelFile, WorldModel};

pub const ENGINE_SCHEMA_VERSION: u64 = 1;

pub const MODEL_FILE: &str = "rwm.json";
pub const ENGINE_FILE: &str = "engine.json";
pub const TRANSCRIPT_DIR: &str = "transcripts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub schema_version: u64,
    pub budget: BudgetLedger,
    pub model: ModelFile,
    pub projects: BTreeMap<String, ProjectState>,
}

#[derive(Serialize, Deserialize)]
struct EngineFile {
    schema_version: u64,
    budget: BudgetLedger,
    projects: BTreeMap<String, ProjectState>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, body: &str) -> Result<(), EngineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl Engine {
    pub fn checkpoint(&self) -> EngineSnapshot {
        EngineSnapshot {
            schema_version: ENGINE_SCHEMA_VERSION,
            budget: self.gateway.budget().ledger(),
            model: self.wm.to_file(),
            projects: self.projects.clone(),
        }
    }

    /// Rebuilds an engine from a snapshot. Spending carries over; the
    /// allowance is whatever `gateway` was configured with.
    pub fn resume(snapshot: EngineSnapshot, config: EngineConfig, gateway: Gateway) -> Result<Engine, EngineError> {
        if snapshot.schema_version != ENGINE_SCHEMA_VERSION {
            return Err(EngineError::SchemaVersion {
                found: snapshot.schema_version,
                expected: ENGINE_SCHEMA_VERSION,
            });
        }
        let wm = WorldModel::from_file(snapshot.model)?;
        let mut ledger = gateway.budget().ledger();
        ledger.spent_calls = snapshot.budget.spent_calls.min(ledger.max_calls);
        ledger.spent_tokens = snapshot.budget.spent_tokens.min(ledger.max_tokens);
        gateway.budget().restore(ledger);
        let mut engine = Engine::with_model(config, gateway, wm);
        engine.projects = snapshot.projects;
        Ok(engine)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), EngineError> {
        let dir = dir.as_ref();
        let tdir = dir.join(TRANSCRIPT_DIR);
        std::fs::create_dir_all(&tdir).map_err(|e| io_err(&tdir, e))?;
        write_atomic(&dir.join(MODEL_FILE), &self.wm.to_canonical_json())?;
        let file = EngineFile {
            schema_version: ENGINE_SCHEMA_VERSION,
            budget: self.gateway.budget().ledger(),
            projects: self.projects.clone(),
        };
        let body = serde_json::to_string_pretty(&file).map_err(|e| io_err(dir, e))?;
        write_atomic(&dir.join(ENGINE_FILE), &body)?;
        for p in self.projects.values() {
            write_atomic(&tdir.join(format!("{}.jsonl", p.id)), &p.transcript.to_jsonl())?;
        }
        Ok(())
    }

    /// Loads a state directory. A missing directory or missing files give
    /// an empty engine, so the first command of a run needs no setup.
    pub fn load_dir(dir: impl AsRef<Path>, config: EngineConfig, gateway: Gateway) -> Result<Engine, EngineError> {
        let dir = dir.as_ref();
        let model_path = dir.join(MODEL_FILE);
        let model = if model_path.exists() {
            WorldModel::load(&model_path)?
        } else {
            WorldModel::new()
        };
        let engine_path = dir.join(ENGINE_FILE);
        if !engine_path.exists() {
            return Ok(Engine::with_model(config, gateway, model));
        }
        let text = std::fs::read_to_string(&engine_path).map_err(|e| io_err(&engine_path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(&engine_path, e))?;
        let found = raw.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
        if found != ENGINE_SCHEMA_VERSION {
            return Err(EngineError::SchemaVersion {
                found,
                expected: ENGINE_SCHEMA_VERSION,
            });
        }
        let file: EngineFile = serde_json::from_value(raw).map_err(|e| io_err(&engine_path, e))?;
        Engine::resume(
            EngineSnapshot {
                schema_version: file.schema_version,
                budget: file.budget,
                model: model.to_file(),
                projects: file.projects,
            },
            config,
            gateway,
        )
    }
}
