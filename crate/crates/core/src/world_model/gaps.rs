use super::{
    Delta, ElementId, GapType, ModelError, NodeAttrs, NodeId, NodeKind, Provenance, Severity, WorldModel,
};

pub const DEFAULT_TAU_SHARED: usize = 3;

/// Promotes every limitation reported by at least `tau_shared` papers to a
/// field-level methods gap and returns the gap ids in limitation order.
///
/// Each gap's provenance points back at its limitation. Promotion is
/// idempotent: an already-promoted limitation maps onto the same gap node.
pub fn synthesize_gaps(
    wm: &mut WorldModel,
    tau_shared: usize,
    provenance: Provenance,
) -> Result<Vec<NodeId>, ModelError> {
    if tau_shared == 0 {
        return Err(ModelError::InvalidAttributes("tau_shared must be at least 1".into()));
    }
    let promoted: Vec<(NodeId, String, usize)> = wm
        .nodes_of(NodeKind::Limitation)
        .filter_map(|n| match &n.attrs {
            NodeAttrs::Limitation { description, papers, .. } if papers.len() >= tau_shared => {
                Some((n.id, description.clone(), papers.len()))
            }
            _ => None,
        })
        .collect();
    if promoted.is_empty() {
        return Ok(Vec::new());
    }
    let mut gaps = Vec::with_capacity(promoted.len());
    for (lim, description, count) in promoted {
        let mut delta = Delta::new(provenance.clone().derived_from([ElementId::Node(lim)]));
        let severity = if count >= 2 * tau_shared { Severity::High } else { Severity::Medium };
        delta.add_node(NodeAttrs::Gap {
            description,
            gap_type: GapType::Methods,
            severity,
        });
        gaps.push(wm.merge(delta)?.node_ids[0]);
    }
    Ok(gaps)
}
