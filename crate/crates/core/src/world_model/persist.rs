//! Canonical JSON persistence (`.rwm.json`).
//!
//! The on-disk form has sorted object keys, shortest round-trip float
//! formatting and a trailing newline, so saving an unchanged model twice
//! produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, ElementId, ModelError, Node, ProjectRecord, Provenance, WorldModel};

pub const SCHEMA_VERSION: u64 = 1;

/// Serialized shape of a [`WorldModel`]. Also the payload of the graph API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u64,
    pub next_node: u64,
    pub next_edge: u64,
    pub commits: u64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub provenance: BTreeMap<ElementId, Vec<Provenance>>,
    #[serde(default)]
    pub projects: BTreeMap<String, ProjectRecord>,
}

impl WorldModel {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            schema_version: self.schema_version,
            next_node: self.next_node,
            next_edge: self.next_edge,
            commits: self.commits,
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
            provenance: self.provenance.clone(),
            projects: self.projects.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(ModelError::MigrationRequired {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut wm = WorldModel::new();
        wm.next_node = file.next_node;
        wm.next_edge = file.next_edge;
        wm.commits = file.commits;
        for node in file.nodes {
            if wm.nodes.insert(node.id, node).is_some() {
                return Err(ModelError::Corrupted("duplicate node id".into()));
            }
        }
        for edge in file.edges {
            if wm.edges.insert(edge.id, edge).is_some() {
                return Err(ModelError::Corrupted("duplicate edge id".into()));
            }
        }
        wm.provenance = file.provenance;
        wm.projects = file.projects;
        wm.check_integrity()?;
        wm.rebuild_indexes();
        Ok(wm)
    }

    /// Canonical JSON text of the model.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self.to_file()).expect("model is always serializable");
        let mut out = serde_json::to_string_pretty(&value).expect("value is always serializable");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Corrupted(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ModelError::Corrupted("missing schema_version".into()))?;
        if version != SCHEMA_VERSION {
            return Err(ModelError::MigrationRequired {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::Corrupted(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_canonical_json())?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_model::{MetricVector, NodeAttrs, Relation};

    fn sample() -> WorldModel {
        let mut wm = WorldModel::new();
        let p = wm.add_node(NodeAttrs::paper("A paper")).unwrap();
        let m = wm.add_node(NodeAttrs::method("A method")).unwrap();
        let b = wm.add_node(NodeAttrs::benchmark("A bench")).unwrap();
        wm.add_edge(p, Relation::Proposes, m, None).unwrap();
        let e = wm
            .add_edge(m, Relation::EvaluatedOn, b, Some(MetricVector::new([("acc", 0.1 + 0.2)]).unwrap()))
            .unwrap();
        wm.verify(e.into()).unwrap();
        wm
    }

    #[test]
    fn roundtrip_identity() {
        let wm = sample();
        let back = WorldModel::from_json(&wm.to_canonical_json()).unwrap();
        assert_eq!(back, wm);
        assert_eq!(WorldModel::from_json(&WorldModel::new().to_canonical_json()).unwrap(), WorldModel::new());
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let wm = sample();
        let a = dir.path().join("a.rwm.json");
        let b = dir.path().join("b.rwm.json");
        wm.save(&a).unwrap();
        WorldModel::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn newer_schema_requires_migration() {
        let text = sample()
            .to_canonical_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            WorldModel::from_json(&text),
            Err(ModelError::MigrationRequired { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn corrupted_payloads_rejected() {
        assert!(matches!(WorldModel::from_json("{not json"), Err(ModelError::Corrupted(_))));
        let text = sample().to_canonical_json().replace("\"dst\": \"n3\"", "\"dst\": \"n9\"");
        assert!(matches!(WorldModel::from_json(&text), Err(ModelError::Corrupted(_))));
        let text = sample().to_canonical_json().replace("\"relation\": \"proposes\"", "\"relation\": \"solves\"");
        assert!(matches!(WorldModel::from_json(&text), Err(ModelError::Corrupted(_))));
    }
}
