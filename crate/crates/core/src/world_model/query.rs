use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ModelError, NodeId, NodeKind, Relation, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Out,
    In,
    Both,
}

/// The structural query patterns the engine answers. Results are node ids in
/// ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum Query {
    Neighbors {
        id: NodeId,
        #[serde(default)]
        relation: Option<Relation>,
        #[serde(default)]
        direction: Direction,
    },
    SharedModules {
        min_count: usize,
    },
    LimitationsOf {
        method: NodeId,
    },
    MissingEvaluations {
        method: NodeId,
    },
    CrossLinks {
        project_a: String,
        project_b: String,
    },
}

pub type QueryResult = Vec<NodeId>;

impl WorldModel {
    pub fn query(&self, query: &Query) -> Result<QueryResult, ModelError> {
        match query {
            Query::Neighbors { id, relation, direction } => self.neighbors(*id, *relation, *direction),
            Query::SharedModules { min_count } => Ok(self.shared_modules(*min_count)),
            Query::LimitationsOf { method } => self.limitations_of(*method),
            Query::MissingEvaluations { method } => self.missing_evaluations(*method),
            Query::CrossLinks { project_a, project_b } => Ok(self.cross_links(project_a, project_b)),
        }
    }

    pub fn neighbors(
        &self,
        id: NodeId,
        relation: Option<Relation>,
        direction: Direction,
    ) -> Result<QueryResult, ModelError> {
        self.node(id).ok_or(ModelError::UnknownNode(id))?;
        let mut out = BTreeSet::new();
        for e in self.edges().filter(|e| relation.is_none_or(|r| r == e.relation)) {
            if matches!(direction, Direction::Out | Direction::Both) && e.src == id {
                out.insert(e.dst);
            }
            if matches!(direction, Direction::In | Direction::Both) && e.dst == id {
                out.insert(e.src);
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Follows `equivalent_to` edges to the class representative.
    fn canonical_module(&self, module: NodeId) -> NodeId {
        let mut current = module;
        let mut seen = BTreeSet::new();
        while seen.insert(current) {
            match self
                .edges()
                .find(|e| e.relation == Relation::EquivalentTo && e.src == current)
            {
                Some(e) => current = e.dst,
                None => break,
            }
        }
        current
    }

    fn methods_by_module(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for e in self.edges().filter(|e| e.relation == Relation::Uses) {
            out.entry(self.canonical_module(e.dst)).or_default().insert(e.src);
        }
        out
    }

    /// Canonical modules used by at least `min_count` distinct methods
    /// (uses of aliases count towards their canonical module).
    pub fn shared_modules(&self, min_count: usize) -> QueryResult {
        self.methods_by_module()
            .into_iter()
            .filter(|(_, methods)| methods.len() >= min_count.max(1))
            .map(|(m, _)| m)
            .collect()
    }

    fn expect_method(&self, id: NodeId) -> Result<(), ModelError> {
        match self.node(id) {
            None => Err(ModelError::UnknownNode(id)),
            Some(n) if n.kind() != NodeKind::Method => Err(ModelError::InvalidAttributes(format!(
                "{id} is a {}, not a method",
                n.kind()
            ))),
            Some(_) => Ok(()),
        }
    }

    pub fn limitations_of(&self, method: NodeId) -> Result<QueryResult, ModelError> {
        self.expect_method(method)?;
        self.neighbors(method, Some(Relation::HasLimitation), Direction::Out)
    }

    /// Benchmarks on which some other method sharing a module with `method`
    /// was evaluated, but `method` itself was not.
    pub fn missing_evaluations(&self, method: NodeId) -> Result<QueryResult, ModelError> {
        self.expect_method(method)?;
        let by_module = self.methods_by_module();
        let own_modules: BTreeSet<NodeId> = by_module
            .iter()
            .filter(|(_, ms)| ms.contains(&method))
            .map(|(m, _)| *m)
            .collect();
        let peers: BTreeSet<NodeId> = own_modules
            .iter()
            .flat_map(|m| by_module[m].iter().copied())
            .filter(|m| *m != method)
            .collect();
        let evaluated = |m: NodeId| -> BTreeSet<NodeId> {
            self.edges()
                .filter(|e| e.relation == Relation::EvaluatedOn && e.src == m)
                .map(|e| e.dst)
                .collect()
        };
        let own = evaluated(method);
        let mut out: BTreeSet<NodeId> = BTreeSet::new();
        for p in peers {
            out.extend(evaluated(p).difference(&own).copied());
        }
        Ok(out.into_iter().collect())
    }

    /// Nodes touched by commits of both projects.
    pub fn cross_links(&self, project_a: &str, project_b: &str) -> QueryResult {
        self.nodes()
            .filter(|n| {
                let prov = self.provenance(n.id.into());
                let has = |p: &str| prov.iter().any(|r| r.project.as_deref() == Some(p));
                has(project_a) && has(project_b)
            })
            .map(|n| n.id)
            .collect()
    }
}
