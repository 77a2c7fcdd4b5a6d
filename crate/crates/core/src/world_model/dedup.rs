use std::collections::{BTreeMap, BTreeSet};

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::{Delta, EdgeId, ModelError, Node, NodeAttrs, NodeId, NodeKind, Provenance, Relation, WorldModel};

pub const DEFAULT_THETA_DEDUP: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub canonical: NodeId,
    /// All members including the canonical one, ascending.
    pub members: Vec<NodeId>,
    /// Three or more members: a shared building block.
    pub shared: bool,
}

impl EquivalenceClass {
    pub fn aliases(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().copied().filter(move |m| *m != self.canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub classes: Vec<EquivalenceClass>,
    pub new_edges: Vec<EdgeId>,
}

impl DedupReport {
    pub fn shared(&self) -> impl Iterator<Item = &EquivalenceClass> {
        self.classes.iter().filter(|c| c.shared)
    }
}

fn module_text(node: &Node) -> &str {
    match &node.attrs {
        NodeAttrs::Module { description, name, .. } if description.trim().is_empty() => name,
        NodeAttrs::Module { description, .. } => description,
        other => other.label(),
    }
}

/// Default similarity: token-set Jaccard over normalized module descriptions
/// (the name stands in when a description is empty).
pub fn jaccard_similarity(a: &Node, b: &Node) -> f64 {
    crate::text::jaccard(module_text(a), module_text(b))
}

/// Papers that propose a method using `module`.
pub(crate) fn module_papers(wm: &WorldModel) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut proposers: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for e in wm.edges().filter(|e| e.relation == Relation::Proposes) {
        proposers.entry(e.dst).or_default().insert(e.src);
    }
    let mut out: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for e in wm.edges().filter(|e| e.relation == Relation::Uses) {
        let entry = out.entry(e.dst).or_default();
        if let Some(ps) = proposers.get(&e.src) {
            entry.extend(ps.iter().copied());
        }
    }
    out
}

/// Partitions module nodes into classes under the transitive closure of
/// `similarity > theta`, picks the module cited by the most papers as each
/// class's canonical member (ties go to the lexicographically smallest name),
/// and commits `equivalent_to` edges from every alias to its canonical.
///
/// Nothing is deleted: aliases stay in the graph and re-runs only add edges.
pub fn dedup_modules<F>(
    wm: &mut WorldModel,
    similarity: F,
    theta: f64,
    provenance: Provenance,
) -> Result<DedupReport, ModelError>
where
    F: Fn(&Node, &Node) -> f64,
{
    if !(0.0..=1.0).contains(&theta) {
        return Err(ModelError::InvalidAttributes(format!("theta must lie in [0, 1], got {theta}")));
    }
    let modules: Vec<&Node> = wm.nodes_of(NodeKind::Module).collect();
    if modules.is_empty() {
        return Ok(DedupReport::default());
    }

    let mut uf = UnionFind::<usize>::new(modules.len());
    for i in 0..modules.len() {
        for j in (i + 1)..modules.len() {
            if similarity(modules[i], modules[j]) > theta {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..modules.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    let papers = module_papers(wm);
    let cited = |id: NodeId| papers.get(&id).map_or(0, BTreeSet::len);

    let mut classes: Vec<EquivalenceClass> = groups
        .into_values()
        .map(|idx| {
            let canonical = idx
                .iter()
                .map(|&i| modules[i])
                .max_by(|a, b| {
                    cited(a.id)
                        .cmp(&cited(b.id))
                        .then_with(|| b.label().cmp(a.label()))
                        .then_with(|| b.id.cmp(&a.id))
                })
                .expect("groups are non-empty")
                .id;
            let mut members: Vec<NodeId> = idx.iter().map(|&i| modules[i].id).collect();
            members.sort();
            EquivalenceClass {
                canonical,
                shared: members.len() >= 3,
                members,
            }
        })
        .collect();
    classes.sort_by_key(|c| c.members[0]);

    let mut delta = Delta::new(provenance);
    for class in &classes {
        for alias in class.aliases() {
            if wm.find_edge(alias, Relation::EquivalentTo, class.canonical).is_none() {
                delta.add_edge(alias.into(), Relation::EquivalentTo, class.canonical.into(), None);
            }
        }
    }
    let new_edges = if delta.is_empty() {
        Vec::new()
    } else {
        wm.merge(delta)?.added_edges
    };
    Ok(DedupReport { classes, new_edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_model::ModuleType;

    #[test]
    fn empty_module_set() {
        let mut wm = WorldModel::new();
        let r = dedup_modules(&mut wm, jaccard_similarity, 0.85, Provenance::default()).unwrap();
        assert!(r.classes.is_empty());
        assert_eq!(wm.edge_count(), 0);
    }

    #[test]
    fn canonical_is_most_cited_member() {
        let mut wm = WorldModel::new();
        let ln = wm
            .add_node(NodeAttrs::module("LayerNorm", ModuleType::Architecture, "layernorm"))
            .unwrap();
        let lnorm = wm
            .add_node(NodeAttrs::module("Layer Normalization", ModuleType::Architecture, "layer normalization"))
            .unwrap();
        // "Layer Normalization" is used by two papers' methods, "LayerNorm" by one
        for (i, module) in [(0, lnorm), (1, lnorm), (2, ln)] {
            let p = wm.add_node(NodeAttrs::paper(format!("paper {i}"))).unwrap();
            let m = wm.add_node(NodeAttrs::method(format!("method {i}"))).unwrap();
            wm.add_edge(p, Relation::Proposes, m, None).unwrap();
            wm.add_edge(m, Relation::Uses, module, None).unwrap();
        }
        let sim = |a: &Node, b: &Node| if a.id != b.id { 0.92 } else { 1.0 };
        let r = dedup_modules(&mut wm, sim, 0.85, Provenance::default()).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.classes[0].canonical, lnorm);
        assert!(!r.classes[0].shared);
        assert!(wm.find_edge(ln, Relation::EquivalentTo, lnorm).is_some());

        // re-running adds nothing
        let edges = wm.edge_count();
        let again = dedup_modules(&mut wm, sim, 0.85, Provenance::default()).unwrap();
        assert!(again.new_edges.is_empty());
        assert_eq!(wm.edge_count(), edges);
    }

    #[test]
    fn tie_breaks_on_smallest_name_and_flags_shared() {
        let mut wm = WorldModel::new();
        for name in ["zeta", "alpha", "mid"] {
            wm.add_node(NodeAttrs::module(name, ModuleType::Loss, "")).unwrap();
        }
        let r = dedup_modules(&mut wm, |_, _| 1.0, 0.5, Provenance::default()).unwrap();
        assert_eq!(r.classes.len(), 1);
        let canon = wm.node(r.classes[0].canonical).unwrap();
        assert_eq!(canon.label(), "alpha");
        assert!(r.classes[0].shared);
        assert_eq!(r.new_edges.len(), 2);
    }

    #[test]
    fn threshold_is_strict() {
        let mut wm = WorldModel::new();
        wm.add_node(NodeAttrs::module("a", ModuleType::Loss, "")).unwrap();
        wm.add_node(NodeAttrs::module("b", ModuleType::Loss, "")).unwrap();
        let r = dedup_modules(&mut wm, |_, _| 0.85, 0.85, Provenance::default()).unwrap();
        assert_eq!(r.classes.len(), 2);
        assert!(dedup_modules(&mut wm, |_, _| 0.0, 1.5, Provenance::default()).is_err());
    }
}
