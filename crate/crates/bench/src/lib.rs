//! Model builders shared by the benchmarks.

use supervisor_core::world_model::{Delta, ModuleType, NodeAttrs, NodeId, Provenance, Relation, WorldModel};

/// `methods` methods over a pool of `modules` modules, each method using
/// three of them. Module names repeat with small spelling variations so
/// deduplication has work to do.
pub fn synthetic_model(methods: usize, modules: usize) -> WorldModel {
    let mut wm = WorldModel::new();
    let mut d = Delta::new(Provenance::new("bench", "builder"));
    let module_refs: Vec<_> = (0..modules)
        .map(|i| {
            let name = if i % 2 == 0 {
                format!("attention block {}", i / 2)
            } else {
                format!("attention-block {}", i / 2)
            };
            d.add_node(NodeAttrs::module(name, ModuleType::ALL[i % 5], "scaled dot product"))
        })
        .collect();
    for m in 0..methods {
        let method = d.add_node(NodeAttrs::method(format!("method {m}")));
        for k in 0..3 {
            d.add_edge(method, Relation::Uses, module_refs[(m * 7 + k * 3) % modules], None);
        }
    }
    wm.merge(d).expect("synthetic delta is valid");
    wm
}

pub fn first_module(wm: &WorldModel) -> NodeId {
    wm.nodes_of(supervisor_core::world_model::NodeKind::Module)
        .next()
        .expect("model has modules")
        .id
}
