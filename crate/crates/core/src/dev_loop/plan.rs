use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{DevError, LoopState};
use crate::gateway::roles::{ChainResponse, FieldMapResponse, FieldQuery};
use crate::gateway::{AgentRequest, AgentRole, Gateway};
use crate::text::normalize;
use crate::world_model::{ElementId, NodeId, NodeKind, Uncertainty, WorldModel};

pub const CHAIN_LENGTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub cause: String,
    pub anchors: Vec<NodeId>,
}

/// Five why-steps from a gap; the last link is the mechanism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalChain {
    pub gap: NodeId,
    pub gap_text: String,
    pub links: Vec<ChainLink>,
    pub origin_field: String,
}

impl CausalChain {
    pub fn mechanism(&self) -> Mechanism {
        let anchors: BTreeSet<NodeId> = self.links.iter().flat_map(|l| l.anchors.iter().copied()).collect();
        Mechanism {
            statement: self.links[CHAIN_LENGTH - 1].cause.clone(),
            origin_field: self.origin_field.clone(),
            anchors: anchors.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanism {
    pub statement: String,
    pub origin_field: String,
    pub anchors: Vec<NodeId>,
}

/// Target fields with queries translated into each field's vocabulary. Never
/// contains the mechanism's origin field; names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSet {
    pub fields: Vec<FieldQuery>,
}

fn anchorable(wm: &WorldModel) -> Vec<&crate::world_model::Node> {
    wm.nodes()
        .filter(|n| matches!(n.kind(), NodeKind::Module | NodeKind::Benchmark))
        .collect()
}

/// Checks that `gap` is a verified gap node.
pub fn require_verified_gap(wm: &WorldModel, gap: NodeId) -> Result<&str, DevError> {
    let node = wm.node(gap).ok_or(DevError::UnknownNode(gap))?;
    if node.kind() != NodeKind::Gap {
        return Err(DevError::NotAGap(gap));
    }
    if node.uncertainty != Uncertainty::Verified {
        return Err(DevError::UnverifiedGap(gap));
    }
    Ok(node.label())
}

/// Asks "why" five times, each answer anchored to module or benchmark nodes.
/// `gap_text` is the working formulation, which reassessment may rewrite.
pub fn build_causal_chain(
    gap: NodeId,
    gap_text: &str,
    wm: &WorldModel,
    gateway: &Gateway,
    state: Option<&LoopState>,
) -> Result<CausalChain, DevError> {
    require_verified_gap(wm, gap)?;
    let elements = anchorable(wm);
    if elements.is_empty() {
        return Err(DevError::NoAnchors);
    }
    let ids: Vec<String> = elements.iter().map(|n| n.id.to_string()).collect();
    let described: Vec<Value> = elements
        .iter()
        .map(|n| json!({"id": n.id, "kind": n.kind(), "label": n.label()}))
        .collect();
    let req = AgentRequest::new(
        AgentRole::MechanismAnalyst,
        "mechanism-analyst",
        json!({
            "gap": {"id": gap, "description": gap_text},
            "anchors": ids,
            "elements": described,
            "history": state,
        }),
    );
    let resp: ChainResponse = gateway.invoke_typed(&req, |r: &ChainResponse| resolve(r, wm).map(|_| ()))?;
    let links = resolve(&resp, wm).map_err(DevError::Unanchored)?;
    Ok(CausalChain {
        gap,
        gap_text: gap_text.to_owned(),
        links,
        origin_field: resp.origin_field,
    })
}

fn resolve(r: &ChainResponse, wm: &WorldModel) -> Result<Vec<ChainLink>, String> {
    r.links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let anchors = l
                .anchors
                .iter()
                .map(|a| match wm.resolve_reference(a, &[NodeKind::Module, NodeKind::Benchmark]) {
                    Some(ElementId::Node(n))
                        if wm
                            .node(n)
                            .is_some_and(|x| matches!(x.kind(), NodeKind::Module | NodeKind::Benchmark)) =>
                    {
                        Ok(n)
                    }
                    _ => Err(format!("link {} anchor `{a}` is not a module or benchmark node", i + 1)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if anchors.is_empty() {
                return Err(format!("link {} is not anchored", i + 1));
            }
            Ok(ChainLink {
                cause: l.cause.clone(),
                anchors,
            })
        })
        .collect()
}

/// Maps the mechanism to other fields that study it. The origin field is
/// dropped if returned; an empty remainder is an error.
pub fn map_fields(mechanism: &Mechanism, gateway: &Gateway, state: Option<&LoopState>) -> Result<FieldSet, DevError> {
    if mechanism.origin_field.trim().is_empty() {
        return Err(DevError::NoOriginField);
    }
    let req = AgentRequest::new(
        AgentRole::FieldMapper,
        "field-mapper",
        json!({
            "mechanism": mechanism.statement,
            "origin_field": mechanism.origin_field,
            "history": state,
        }),
    );
    let resp: FieldMapResponse = gateway.invoke_typed(&req, |_| Ok(()))?;
    let origin = normalize(&mechanism.origin_field);
    let mut seen = BTreeSet::new();
    let fields: Vec<FieldQuery> = resp
        .fields
        .into_iter()
        .filter(|f| {
            let key = normalize(&f.field);
            key != origin && seen.insert(key)
        })
        .collect();
    if fields.is_empty() {
        return Err(DevError::OnlyOriginField(mechanism.origin_field.clone()));
    }
    Ok(FieldSet { fields })
}
