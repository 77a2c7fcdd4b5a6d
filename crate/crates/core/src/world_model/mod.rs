//! The persistent research world model: a typed, uncertainty-annotated
//! property graph.
//!
//! Every node and edge starts unverified. All mutation funnels through
//! [`WorldModel::merge`] (or the single-element helpers built on the same
//! rules), which only ever adds elements and lowers uncertainty, so node and
//! edge counts never decrease and verification never reverts.
//!
//! Node identity follows a canonical key `(kind, normalized label)`: a delta
//! node whose key already exists is folded into the existing node instead of
//! creating a duplicate. Edges are identified by `(src, relation, dst)`.

mod dedup;
mod delta;
mod gaps;
mod graphml;
mod persist;
mod query;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

pub use dedup::{dedup_modules, jaccard_similarity, DedupReport, EquivalenceClass, DEFAULT_THETA_DEDUP};
pub use delta::{Delta, DeltaEdge, DeltaNode, EdgeRef, ElementRef, NodeRef};
pub use gaps::{synthesize_gaps, DEFAULT_TAU_SHARED};
pub use graphml::{export_graphml, write_graphml};
pub use persist::{ModelFile, SCHEMA_VERSION};
pub use query::{Direction, Query, QueryResult};
pub use types::{
    CanonicalKey, Edge, EdgeId, ElementId, GapType, Metric, MetricVector, ModuleType, Node,
    NodeAttrs, NodeId, NodeKind, ProjectRecord, Provenance, Relation, Severity, Uncertainty,
    REPRODUCTION_TOLERANCE,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("unknown module type `{0}` (expected loss, architecture, training, data or inference)")]
    UnknownModuleType(String),
    #[error("malformed attributes: {0}")]
    InvalidAttributes(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("node {existing} already holds key {key}")]
    DuplicateNode { key: CanonicalKey, existing: NodeId },
    #[error("edge {0} already connects these nodes with this relation")]
    DuplicateEdge(EdgeId),
    #[error("{relation} cannot connect {src} -> {dst} (expected {} -> {})", relation.signature().0, relation.signature().1)]
    SignatureViolation {
        relation: Relation,
        src: NodeKind,
        dst: NodeKind,
    },
    #[error("metric vectors are only allowed on evaluated_on edges, not {0}")]
    MetricsNotAllowed(Relation),
    #[error("evaluated_on edges require a metric vector")]
    MissingMetrics,
    #[error("invalid metric vector: {0}")]
    InvalidMetrics(String),
    #[error("invalid delta: {0}")]
    InvalidDelta(String),
    #[error("schema version {found} cannot be loaded by version {expected}; migration required")]
    MigrationRequired { found: u64, expected: u64 },
    #[error("corrupted model payload: {0}")]
    Corrupted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of committing a delta.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct MergeReport {
    pub commit: u64,
    /// Model id for every delta node, in delta order.
    pub node_ids: Vec<NodeId>,
    /// Model id for every delta edge, in delta order.
    pub edge_ids: Vec<EdgeId>,
    pub added_nodes: Vec<NodeId>,
    pub added_edges: Vec<EdgeId>,
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub(crate) schema_version: u64,
    pub(crate) next_node: u64,
    pub(crate) next_edge: u64,
    pub(crate) commits: u64,
    pub(crate) nodes: BTreeMap<NodeId, Node>,
    pub(crate) edges: BTreeMap<EdgeId, Edge>,
    pub(crate) provenance: BTreeMap<ElementId, Vec<Provenance>>,
    pub(crate) projects: BTreeMap<String, ProjectRecord>,
    keys: HashMap<CanonicalKey, NodeId>,
    triples: HashMap<(NodeId, Relation, NodeId), EdgeId>,
}

impl PartialEq for WorldModel {
    fn eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.next_node == other.next_node
            && self.next_edge == other.next_edge
            && self.commits == other.commits
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.provenance == other.provenance
            && self.projects == other.projects
    }
}

impl Default for WorldModel {
    fn default() -> Self {
        Self::new()
    }
}

impl WorldModel {
    pub fn new() -> Self {
        WorldModel {
            schema_version: SCHEMA_VERSION,
            next_node: 1,
            next_edge: 1,
            commits: 0,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            provenance: BTreeMap::new(),
            projects: BTreeMap::new(),
            keys: HashMap::new(),
            triples: HashMap::new(),
        }
    }

    pub fn schema_version(&self) -> u64 {
        self.schema_version
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of committed operations so far.
    pub fn commit_count(&self) -> u64 {
        self.commits
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.kind() == kind)
    }

    pub fn contains(&self, id: ElementId) -> bool {
        match id {
            ElementId::Node(n) => self.nodes.contains_key(&n),
            ElementId::Edge(e) => self.edges.contains_key(&e),
        }
    }

    pub fn uncertainty(&self, id: ElementId) -> Option<Uncertainty> {
        match id {
            ElementId::Node(n) => self.nodes.get(&n).map(|n| n.uncertainty),
            ElementId::Edge(e) => self.edges.get(&e).map(|e| e.uncertainty),
        }
    }

    pub fn provenance(&self, id: ElementId) -> &[Provenance] {
        self.provenance.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn find(&self, kind: NodeKind, label: &str) -> Option<NodeId> {
        self.keys.get(&CanonicalKey::new(kind, label)).copied()
    }

    /// Resolves an element id string, or failing that a node label of one of
    /// `kinds`, tried in order.
    pub fn resolve_reference(&self, reference: &str, kinds: &[NodeKind]) -> Option<ElementId> {
        match reference.parse::<ElementId>() {
            Ok(id) if self.contains(id) => Some(id),
            Ok(_) => None,
            Err(_) => kinds.iter().find_map(|k| self.find(*k, reference)).map(ElementId::Node),
        }
    }

    pub fn find_edge(&self, src: NodeId, relation: Relation, dst: NodeId) -> Option<EdgeId> {
        self.triples.get(&(src, relation, dst)).copied()
    }

    pub fn project(&self, id: &str) -> Option<&ProjectRecord> {
        self.projects.get(id)
    }

    pub fn projects(&self) -> &BTreeMap<String, ProjectRecord> {
        &self.projects
    }

    /// Records or updates a project's bootstrap metadata.
    pub fn set_project(&mut self, id: impl Into<String>, record: ProjectRecord) {
        self.projects.insert(id.into(), record);
    }

    /// Adds a single unverified node. Fails if a node with the same canonical
    /// key exists.
    pub fn add_node(&mut self, attrs: NodeAttrs) -> Result<NodeId, ModelError> {
        self.add_node_with(attrs, Provenance::new("manual", "operator"))
    }

    pub fn add_node_with(&mut self, attrs: NodeAttrs, provenance: Provenance) -> Result<NodeId, ModelError> {
        let key = attrs.canonical_key();
        if let Some(existing) = self.keys.get(&key) {
            return Err(ModelError::DuplicateNode {
                key,
                existing: *existing,
            });
        }
        let mut delta = Delta::new(provenance);
        delta.add_node(attrs);
        Ok(self.merge(delta)?.node_ids[0])
    }

    /// Adds a single unverified edge after checking the signature table.
    pub fn add_edge(
        &mut self,
        src: NodeId,
        relation: Relation,
        dst: NodeId,
        metrics: Option<MetricVector>,
    ) -> Result<EdgeId, ModelError> {
        self.add_edge_with(src, relation, dst, metrics, Provenance::new("manual", "operator"))
    }

    pub fn add_edge_with(
        &mut self,
        src: NodeId,
        relation: Relation,
        dst: NodeId,
        metrics: Option<MetricVector>,
        provenance: Provenance,
    ) -> Result<EdgeId, ModelError> {
        if let Some(existing) = self.find_edge(src, relation, dst) {
            return Err(ModelError::DuplicateEdge(existing));
        }
        let mut delta = Delta::new(provenance);
        delta.add_edge(src.into(), relation, dst.into(), metrics);
        Ok(self.merge(delta)?.edge_ids[0])
    }

    /// Marks an element verified. Verifying a verified element is a no-op.
    pub fn verify(&mut self, id: ElementId) -> Result<(), ModelError> {
        let slot = match id {
            ElementId::Node(n) => &mut self.nodes.get_mut(&n).ok_or(ModelError::UnknownNode(n))?.uncertainty,
            ElementId::Edge(e) => &mut self.edges.get_mut(&e).ok_or(ModelError::UnknownEdge(e))?.uncertainty,
        };
        *slot = Uncertainty::Verified;
        self.commits += 1;
        Ok(())
    }

    /// Stores a re-measured metric vector next to the reported one and returns
    /// whether the reproduction failed. Uncertainty is left untouched.
    pub fn record_measurement<I, S>(&mut self, edge: EdgeId, measured: I) -> Result<bool, ModelError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let entries = MetricVector::new(measured)?.reported().to_vec();
        let e = self.edges.get_mut(&edge).ok_or(ModelError::UnknownEdge(edge))?;
        let metrics = e.metrics.as_mut().ok_or(ModelError::MissingMetrics)?;
        let failed = metrics.record_measurement(entries, REPRODUCTION_TOLERANCE);
        self.commits += 1;
        Ok(failed)
    }

    /// Edges flagged by a failed reproduction, for gap analysis.
    pub fn failed_reproductions(&self) -> Vec<EdgeId> {
        self.edges
            .values()
            .filter(|e| e.metrics.as_ref().is_some_and(MetricVector::reproduction_failed))
            .map(|e| e.id)
            .collect()
    }

    /// `W ← W ⊕ Δ`: set union of nodes and edges (by canonical key and by
    /// triple), with uncertainty combined by `min`. The delta is validated in
    /// full before anything is applied, so a failing merge leaves the model
    /// untouched.
    pub fn merge(&mut self, delta: Delta) -> Result<MergeReport, ModelError> {
        self.validate_delta(&delta)?;
        self.commits += 1;
        let commit = self.commits;
        let mut provenance = delta.provenance.clone();
        provenance.commit = commit;

        let mut report = MergeReport {
            commit,
            ..Default::default()
        };

        for dn in &delta.nodes {
            let mut attrs = dn.attrs.clone();
            if let NodeAttrs::Limitation { papers, shared_count, .. } = &mut attrs {
                for r in &dn.paper_refs {
                    papers.insert(resolve(*r, &report.node_ids));
                }
                *shared_count = papers.len();
            }
            let key = attrs.canonical_key();
            let id = match self.keys.get(&key).copied() {
                Some(id) => {
                    let node = self.nodes.get_mut(&id).expect("key index points at a live node");
                    node.uncertainty = node.uncertainty.min(dn.uncertainty);
                    if node.attrs.absorb(&attrs) && !node.history.contains(&attrs) {
                        node.history.push(attrs);
                    }
                    id
                }
                None => {
                    let id = NodeId(self.next_node);
                    self.next_node += 1;
                    self.nodes.insert(
                        id,
                        Node {
                            id,
                            attrs,
                            uncertainty: dn.uncertainty,
                            history: Vec::new(),
                        },
                    );
                    self.keys.insert(key, id);
                    report.added_nodes.push(id);
                    id
                }
            };
            self.touch(ElementId::Node(id), &provenance);
            report.node_ids.push(id);
        }

        for de in &delta.edges {
            let src = resolve(de.src, &report.node_ids);
            let dst = resolve(de.dst, &report.node_ids);
            let id = match self.triples.get(&(src, de.relation, dst)).copied() {
                Some(id) => {
                    let edge = self.edges.get_mut(&id).expect("triple index points at a live edge");
                    edge.uncertainty = edge.uncertainty.min(de.uncertainty);
                    id
                }
                None => {
                    let id = EdgeId(self.next_edge);
                    self.next_edge += 1;
                    self.edges.insert(
                        id,
                        Edge {
                            id,
                            src,
                            relation: de.relation,
                            dst,
                            metrics: de.metrics.clone(),
                            uncertainty: de.uncertainty,
                        },
                    );
                    self.triples.insert((src, de.relation, dst), id);
                    report.added_edges.push(id);
                    id
                }
            };
            self.touch(ElementId::Edge(id), &provenance);
            report.edge_ids.push(id);
        }

        for v in &delta.verifications {
            let target = match v {
                ElementRef::Node(r) => ElementId::Node(resolve(*r, &report.node_ids)),
                ElementRef::Edge(EdgeRef::Existing(e)) => ElementId::Edge(*e),
                ElementRef::Edge(EdgeRef::New(i)) => ElementId::Edge(report.edge_ids[*i]),
            };
            match target {
                ElementId::Node(n) => self.nodes.get_mut(&n).expect("validated").uncertainty = Uncertainty::Verified,
                ElementId::Edge(e) => self.edges.get_mut(&e).expect("validated").uncertainty = Uncertainty::Verified,
            }
        }

        Ok(report)
    }

    fn touch(&mut self, id: ElementId, provenance: &Provenance) {
        let entries = self.provenance.entry(id).or_default();
        if entries.last() != Some(provenance) {
            entries.push(provenance.clone());
        }
    }

    fn node_kind_of(&self, r: NodeRef, delta: &Delta) -> Result<NodeKind, ModelError> {
        match r {
            NodeRef::Existing(id) => self
                .nodes
                .get(&id)
                .map(Node::kind)
                .ok_or(ModelError::UnknownNode(id)),
            NodeRef::New(i) => delta
                .nodes
                .get(i)
                .map(|n| n.attrs.kind())
                .ok_or_else(|| ModelError::InvalidDelta(format!("node reference New({i}) out of range"))),
        }
    }

    fn validate_delta(&self, delta: &Delta) -> Result<(), ModelError> {
        for (i, dn) in delta.nodes.iter().enumerate() {
            if let NodeAttrs::Limitation { papers, .. } = &dn.attrs {
                for p in papers {
                    self.expect_kind(NodeRef::Existing(*p), NodeKind::Paper, delta)?;
                }
                for r in &dn.paper_refs {
                    if let NodeRef::New(j) = r {
                        if *j >= i {
                            return Err(ModelError::InvalidDelta(format!(
                                "limitation {i} references paper New({j}) that is not declared before it"
                            )));
                        }
                    }
                    self.expect_kind(*r, NodeKind::Paper, delta)?;
                }
                // shared_count is recomputed on merge
            } else {
                if !dn.paper_refs.is_empty() {
                    return Err(ModelError::InvalidDelta(format!(
                        "paper references on a {} node",
                        dn.attrs.kind()
                    )));
                }
                dn.attrs.validate()?;
            }
            if crate::text::normalize(dn.attrs.label()).is_empty() {
                dn.attrs.validate()?;
            }
        }
        for de in &delta.edges {
            let src = self.node_kind_of(de.src, delta)?;
            let dst = self.node_kind_of(de.dst, delta)?;
            check_edge(src, de.relation, dst, de.metrics.as_ref())?;
            if let (NodeRef::Existing(s), NodeRef::Existing(d)) = (de.src, de.dst) {
                if let Some(existing) = self.find_edge(s, de.relation, d) {
                    let prior = &self.edges[&existing];
                    // reported metrics are immutable; a conflicting claim is rejected
                    if let (Some(a), Some(b)) = (&prior.metrics, &de.metrics) {
                        if a.reported() != b.reported() {
                            return Err(ModelError::InvalidDelta(format!(
                                "edge {existing} already carries different reported metrics"
                            )));
                        }
                    }
                }
            }
        }
        for v in &delta.verifications {
            match v {
                ElementRef::Node(r) => {
                    self.node_kind_of(*r, delta)?;
                }
                ElementRef::Edge(EdgeRef::Existing(e)) => {
                    if !self.edges.contains_key(e) {
                        return Err(ModelError::UnknownEdge(*e));
                    }
                }
                ElementRef::Edge(EdgeRef::New(i)) => {
                    if *i >= delta.edges.len() {
                        return Err(ModelError::InvalidDelta(format!("edge reference New({i}) out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    fn expect_kind(&self, r: NodeRef, kind: NodeKind, delta: &Delta) -> Result<(), ModelError> {
        let found = self.node_kind_of(r, delta)?;
        if found != kind {
            return Err(ModelError::InvalidDelta(format!("expected a {kind} node, found {found}")));
        }
        Ok(())
    }

    pub(crate) fn rebuild_indexes(&mut self) {
        self.keys = self
            .nodes
            .values()
            .map(|n| (n.attrs.canonical_key(), n.id))
            .collect();
        self.triples = self
            .edges
            .values()
            .map(|e| ((e.src, e.relation, e.dst), e.id))
            .collect();
    }

    /// Full invariant check; used after loading untrusted payloads.
    pub(crate) fn check_integrity(&self) -> Result<(), ModelError> {
        let mut seen_keys = BTreeSet::new();
        for (id, node) in &self.nodes {
            if *id != node.id {
                return Err(ModelError::Corrupted(format!("node stored under {id} claims id {}", node.id)));
            }
            if id.0 >= self.next_node {
                return Err(ModelError::Corrupted(format!("node {id} beyond id counter")));
            }
            node.attrs.validate().map_err(|e| ModelError::Corrupted(e.to_string()))?;
            if let Some(papers) = node.attrs.papers() {
                for p in papers {
                    if self.nodes.get(p).map(Node::kind) != Some(NodeKind::Paper) {
                        return Err(ModelError::Corrupted(format!("limitation {id} cites non-paper {p}")));
                    }
                }
            }
            if !seen_keys.insert(node.attrs.canonical_key()) {
                return Err(ModelError::Corrupted(format!("duplicate canonical key at {id}")));
            }
        }
        let mut seen_triples = BTreeSet::new();
        for (id, edge) in &self.edges {
            if *id != edge.id || id.0 >= self.next_edge {
                return Err(ModelError::Corrupted(format!("edge id mismatch at {id}")));
            }
            let src = self.nodes.get(&edge.src).ok_or_else(|| {
                ModelError::Corrupted(format!("edge {id} has missing source {}", edge.src))
            })?;
            let dst = self.nodes.get(&edge.dst).ok_or_else(|| {
                ModelError::Corrupted(format!("edge {id} has missing target {}", edge.dst))
            })?;
            check_edge(src.kind(), edge.relation, dst.kind(), edge.metrics.as_ref())
                .map_err(|e| ModelError::Corrupted(format!("edge {id}: {e}")))?;
            if !seen_triples.insert((edge.src, edge.relation, edge.dst)) {
                return Err(ModelError::Corrupted(format!("duplicate edge triple at {id}")));
            }
        }
        for id in self.provenance.keys() {
            if !self.contains(*id) {
                return Err(ModelError::Corrupted(format!("provenance for missing element {id}")));
            }
        }
        Ok(())
    }
}

fn resolve(r: NodeRef, mapped: &[NodeId]) -> NodeId {
    match r {
        NodeRef::Existing(id) => id,
        NodeRef::New(i) => mapped[i],
    }
}

fn check_edge(
    src: NodeKind,
    relation: Relation,
    dst: NodeKind,
    metrics: Option<&MetricVector>,
) -> Result<(), ModelError> {
    if !relation.admits(src, dst) {
        return Err(ModelError::SignatureViolation { relation, src, dst });
    }
    match (relation.carries_metrics(), metrics) {
        (true, None) => Err(ModelError::MissingMetrics),
        (false, Some(_)) => Err(ModelError::MetricsNotAllowed(relation)),
        (true, Some(m)) => m.validate(),
        (false, None) => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_method(wm: &mut WorldModel) -> (NodeId, NodeId) {
        let p = wm.add_node(NodeAttrs::paper("Safe Policy Optimization")).unwrap();
        let m = wm.add_node(NodeAttrs::method("Safe-PPO")).unwrap();
        (p, m)
    }

    #[test]
    fn empty_model() {
        let wm = WorldModel::new();
        assert_eq!(wm.node_count(), 0);
        assert_eq!(wm.edge_count(), 0);
        assert_eq!(wm.schema_version(), SCHEMA_VERSION);
    }

    #[test]
    fn merged_nodes_start_unverified() {
        let mut wm = WorldModel::new();
        let mut d = Delta::new(Provenance::new("P2a", "extractor"));
        d.add_node(NodeAttrs::method("A"));
        d.add_node(NodeAttrs::method("B"));
        d.add_node(NodeAttrs::benchmark("C"));
        let report = wm.merge(d).unwrap();
        assert_eq!(wm.node_count(), 3);
        for id in report.node_ids {
            assert_eq!(wm.uncertainty(id.into()), Some(Uncertainty::Unverified));
        }
    }

    #[test]
    fn add_node_is_unverified_and_counts_one() {
        let mut wm = WorldModel::new();
        let id = wm.add_node(NodeAttrs::method("Safe-PPO")).unwrap();
        assert_eq!(wm.node_count(), 1);
        assert_eq!(wm.uncertainty(id.into()), Some(Uncertainty::Unverified));
    }

    #[test]
    fn module_type_parsing() {
        assert_eq!("loss".parse::<ModuleType>().unwrap(), ModuleType::Loss);
        assert_eq!("arch".parse::<ModuleType>().unwrap(), ModuleType::Architecture);
        let err = "hardware".parse::<ModuleType>().unwrap_err();
        assert!(matches!(err, ModelError::UnknownModuleType(ref t) if t == "hardware"));
        let json = r#"{"kind":"module","name":"x","module_type":"hardware"}"#;
        assert!(serde_json::from_str::<NodeAttrs>(json).is_err());
    }

    #[test]
    fn rejects_malformed_attributes() {
        let mut wm = WorldModel::new();
        assert!(matches!(wm.add_node(NodeAttrs::method("  ")), Err(ModelError::InvalidAttributes(_))));
        let mut p = NodeAttrs::paper("Old");
        if let NodeAttrs::Paper { year, .. } = &mut p {
            *year = Some(1900);
        }
        assert!(wm.add_node(p).is_err());
        assert_eq!(wm.node_count(), 0);
    }

    #[test]
    fn duplicate_canonical_key_rejected_by_add_node() {
        let mut wm = WorldModel::new();
        let a = wm.add_node(NodeAttrs::method("Safe-PPO")).unwrap();
        match wm.add_node(NodeAttrs::method("safe ppo")) {
            Err(ModelError::DuplicateNode { existing, .. }) => assert_eq!(existing, a),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edge_signatures() {
        let mut wm = WorldModel::new();
        let (p, m) = paper_method(&mut wm);
        let b = wm.add_node(NodeAttrs::benchmark("Safety-Gym")).unwrap();
        let module = wm
            .add_node(NodeAttrs::module("Lagrangian multiplier", ModuleType::Training, ""))
            .unwrap();

        let e = wm.add_edge(p, Relation::Proposes, m, None).unwrap();
        assert_eq!(wm.uncertainty(e.into()), Some(Uncertainty::Unverified));

        let mv = MetricVector::new([("accuracy", 0.91)]).unwrap();
        let e2 = wm.add_edge(m, Relation::EvaluatedOn, b, Some(mv)).unwrap();
        assert_eq!(wm.edge(e2).unwrap().metrics.as_ref().unwrap().get("accuracy"), Some(0.91));

        assert!(matches!(
            wm.add_edge(module, Relation::Proposes, m, None),
            Err(ModelError::SignatureViolation { .. })
        ));
        assert!(matches!(
            wm.add_edge(m, Relation::Proposes, p, None),
            Err(ModelError::SignatureViolation { .. })
        ));
        assert!(matches!(
            wm.add_edge(m, Relation::EvaluatedOn, b, None),
            Err(ModelError::DuplicateEdge(_))
        ));
        let mv = MetricVector::new([("f1", 0.5)]).unwrap();
        assert!(matches!(
            wm.add_edge(m, Relation::Uses, module, Some(mv)),
            Err(ModelError::MetricsNotAllowed(Relation::Uses))
        ));
        assert!(matches!(
            wm.add_edge(m, Relation::Uses, NodeId(999), None),
            Err(ModelError::UnknownNode(NodeId(999)))
        ));
        assert_eq!(wm.edge_count(), 2);
    }

    #[test]
    fn metric_vector_rules() {
        assert!(MetricVector::new(Vec::<(String, f64)>::new()).is_err());
        assert!(MetricVector::new([("a", 1.0), ("a", 2.0)]).is_err());
        assert!(MetricVector::new([("a", f64::NAN)]).is_err());
    }

    #[test]
    fn verify_is_idempotent_and_guards_unknown() {
        let mut wm = WorldModel::new();
        let id = wm.add_node(NodeAttrs::method("X")).unwrap();
        wm.verify(id.into()).unwrap();
        assert_eq!(wm.uncertainty(id.into()), Some(Uncertainty::Verified));
        wm.verify(id.into()).unwrap();
        assert_eq!(wm.uncertainty(id.into()), Some(Uncertainty::Verified));
        assert!(matches!(wm.verify(NodeId(42).into()), Err(ModelError::UnknownNode(_))));
    }

    #[test]
    fn merge_keeps_verified_elements_verified() {
        let mut wm = WorldModel::new();
        let id = wm.add_node(NodeAttrs::method("X")).unwrap();
        wm.verify(id.into()).unwrap();
        let mut d = Delta::new(Provenance::new("P2b", "adversary"));
        d.add_node_with(NodeAttrs::method("x"), Uncertainty::Unverified);
        let report = wm.merge(d).unwrap();
        assert_eq!(report.node_ids, vec![id]);
        assert!(report.added_nodes.is_empty());
        assert_eq!(wm.uncertainty(id.into()), Some(Uncertainty::Verified));
    }

    #[test]
    fn merge_disjoint_union_count() {
        let mut wm = WorldModel::new();
        for i in 0..7 {
            wm.add_node(NodeAttrs::method(format!("m{i}"))).unwrap();
        }
        let mut d = Delta::default();
        d.add_node(NodeAttrs::method("new-a"));
        d.add_node(NodeAttrs::method("new-b"));
        wm.merge(d).unwrap();
        assert_eq!(wm.node_count(), 9);
    }

    #[test]
    fn failed_merge_leaves_model_untouched() {
        let mut wm = WorldModel::new();
        let m = wm.add_node(NodeAttrs::method("X")).unwrap();
        let before = wm.clone();
        let mut d = Delta::default();
        let b = d.add_node(NodeAttrs::benchmark("B"));
        d.add_edge(m.into(), Relation::EvaluatedOn, b, None);
        assert!(matches!(wm.merge(d), Err(ModelError::MissingMetrics)));
        let mut d = Delta::default();
        d.add_node(NodeAttrs::benchmark("C"));
        d.add_edge(NodeRef::Existing(NodeId(77)), Relation::Uses, NodeRef::New(0), None);
        assert!(wm.merge(d).is_err());
        assert_eq!(wm, before);
    }

    #[test]
    fn limitations_accumulate_papers_across_merges() {
        let mut wm = WorldModel::new();
        let mut papers = Vec::new();
        for i in 0..3 {
            let mut d = Delta::new(Provenance::new("P2a", format!("extractor-{i}")));
            let p = d.add_node(NodeAttrs::paper(format!("Paper {i}")));
            d.add_limitation("Assumes stationarity", [p]);
            let r = wm.merge(d).unwrap();
            papers.push(r.node_ids[0]);
        }
        let lim = wm.find(NodeKind::Limitation, "assumes stationarity").unwrap();
        match &wm.node(lim).unwrap().attrs {
            NodeAttrs::Limitation { shared_count, papers: ps, .. } => {
                assert_eq!(*shared_count, 3);
                assert_eq!(ps.iter().copied().collect::<Vec<_>>(), papers);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn attribute_updates_are_append_only() {
        let mut wm = WorldModel::new();
        let id = wm.add_node(NodeAttrs::method("PPO")).unwrap();
        let mut d = Delta::default();
        d.add_node(NodeAttrs::Method {
            name: "PPO".into(),
            paradigm: "policy gradient".into(),
            description: String::new(),
        });
        wm.merge(d).unwrap();
        let mut d = Delta::default();
        d.add_node(NodeAttrs::Method {
            name: "PPO".into(),
            paradigm: "actor critic".into(),
            description: String::new(),
        });
        wm.merge(d).unwrap();
        let node = wm.node(id).unwrap();
        match &node.attrs {
            NodeAttrs::Method { paradigm, .. } => assert_eq!(paradigm, "policy gradient"),
            _ => unreachable!(),
        }
        assert_eq!(node.history.len(), 1);
    }

    #[test]
    fn reproduction_flag_never_touches_uncertainty() {
        let mut wm = WorldModel::new();
        let m = wm.add_node(NodeAttrs::method("M")).unwrap();
        let b = wm.add_node(NodeAttrs::benchmark("B")).unwrap();
        let e = wm
            .add_edge(m, Relation::EvaluatedOn, b, Some(MetricVector::new([("acc", 0.90)]).unwrap()))
            .unwrap();
        wm.verify(e.into()).unwrap();
        assert!(!wm.record_measurement(e, [("acc", 0.89)]).unwrap());
        assert!(wm.failed_reproductions().is_empty());
        assert!(wm.record_measurement(e, [("acc", 0.70)]).unwrap());
        let edge = wm.edge(e).unwrap();
        assert_eq!(edge.uncertainty, Uncertainty::Verified);
        let mv = edge.metrics.as_ref().unwrap();
        assert_eq!(mv.get("acc"), Some(0.90));
        assert_eq!(mv.measured().unwrap()[0].value, 0.70);
        assert_eq!(wm.failed_reproductions(), vec![e]);
    }

    #[test]
    fn provenance_accumulates_per_project() {
        let mut wm = WorldModel::new();
        for project in ["p1", "p2"] {
            let mut d = Delta::new(Provenance::new("P2a", "extractor").for_project(project));
            d.add_node(NodeAttrs::module("PPO optimizer", ModuleType::Training, ""));
            wm.merge(d).unwrap();
        }
        let id = wm.find(NodeKind::Module, "ppo optimizer").unwrap();
        let projects: Vec<_> = wm
            .provenance(id.into())
            .iter()
            .map(|p| p.project.clone().unwrap())
            .collect();
        assert_eq!(projects, vec!["p1", "p2"]);
    }
}
