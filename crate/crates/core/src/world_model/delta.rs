use serde::{Deserialize, Serialize};

use super::types::{EdgeId, MetricVector, NodeAttrs, NodeId, Provenance, Relation, Uncertainty};

/// A node reference inside a delta: either already in the model, or the
/// n-th node of the delta itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Existing(NodeId),
    New(usize),
}

impl From<NodeId> for NodeRef {
    fn from(id: NodeId) -> Self {
        NodeRef::Existing(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRef {
    Existing(EdgeId),
    New(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRef {
    Node(NodeRef),
    Edge(EdgeRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNode {
    pub attrs: NodeAttrs,
    #[serde(default)]
    pub uncertainty: Uncertainty,
    /// Papers reporting a limitation, for papers that may be new in this delta.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paper_refs: Vec<NodeRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEdge {
    pub src: NodeRef,
    pub relation: Relation,
    pub dst: NodeRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricVector>,
    #[serde(default)]
    pub uncertainty: Uncertainty,
}

/// `(new nodes, new edges, verifications)` merged into the model as one commit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Delta {
    pub nodes: Vec<DeltaNode>,
    pub edges: Vec<DeltaEdge>,
    pub verifications: Vec<ElementRef>,
    pub provenance: Provenance,
}

impl Delta {
    pub fn new(provenance: Provenance) -> Self {
        Delta {
            provenance,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty() && self.verifications.is_empty()
    }

    pub fn add_node(&mut self, attrs: NodeAttrs) -> NodeRef {
        self.add_node_with(attrs, Uncertainty::Unverified)
    }

    pub fn add_node_with(&mut self, attrs: NodeAttrs, uncertainty: Uncertainty) -> NodeRef {
        self.nodes.push(DeltaNode {
            attrs,
            uncertainty,
            paper_refs: Vec::new(),
        });
        NodeRef::New(self.nodes.len() - 1)
    }

    /// Adds a limitation reported by the given papers.
    pub fn add_limitation(
        &mut self,
        description: impl Into<String>,
        papers: impl IntoIterator<Item = NodeRef>,
    ) -> NodeRef {
        let r = self.add_node(NodeAttrs::limitation(description, []));
        if let NodeRef::New(i) = r {
            self.nodes[i].paper_refs.extend(papers);
        }
        r
    }

    pub fn add_edge(
        &mut self,
        src: NodeRef,
        relation: Relation,
        dst: NodeRef,
        metrics: Option<MetricVector>,
    ) -> EdgeRef {
        self.add_edge_with(src, relation, dst, metrics, Uncertainty::Unverified)
    }

    pub fn add_edge_with(
        &mut self,
        src: NodeRef,
        relation: Relation,
        dst: NodeRef,
        metrics: Option<MetricVector>,
        uncertainty: Uncertainty,
    ) -> EdgeRef {
        self.edges.push(DeltaEdge {
            src,
            relation,
            dst,
            metrics,
            uncertainty,
        });
        EdgeRef::New(self.edges.len() - 1)
    }

    pub fn verify(&mut self, element: ElementRef) {
        self.verifications.push(element);
    }

    /// Appends another delta, rebasing its `New` references.
    pub fn extend(&mut self, other: Delta) {
        let node_base = self.nodes.len();
        let edge_base = self.edges.len();
        let rebase = |r: NodeRef| match r {
            NodeRef::New(i) => NodeRef::New(i + node_base),
            existing => existing,
        };
        for mut n in other.nodes {
            n.paper_refs = n.paper_refs.into_iter().map(rebase).collect();
            self.nodes.push(n);
        }
        for mut e in other.edges {
            e.src = rebase(e.src);
            e.dst = rebase(e.dst);
            self.edges.push(e);
        }
        for v in other.verifications {
            self.verifications.push(match v {
                ElementRef::Node(r) => ElementRef::Node(rebase(r)),
                ElementRef::Edge(EdgeRef::New(i)) => ElementRef::Edge(EdgeRef::New(i + edge_base)),
                other => other,
            });
        }
    }
}
