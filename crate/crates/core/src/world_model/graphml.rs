//! GraphML export for interchange with external graph tools.

use std::io::{self, Write};
use std::path::Path;

use quick_xml::events::{BytesDecl, BytesText, Event};
use quick_xml::Writer;

use super::{ModelError, WorldModel};

const KEYS: [(&str, &str, &str, &str); 7] = [
    // (id, for, attr.name, attr.type)
    ("d_kind", "node", "kind", "string"),
    ("d_label", "node", "label", "string"),
    ("d_u", "node", "uncertainty", "int"),
    ("d_attrs", "node", "attributes", "string"),
    ("d_rel", "edge", "relation", "string"),
    ("e_u", "edge", "uncertainty", "int"),
    ("d_metrics", "edge", "metrics", "string"),
];

/// Writes the model as GraphML: one `<node>` per node with kind, label,
/// uncertainty (0/1) and JSON attributes; one `<edge>` per edge with relation,
/// uncertainty and the JSON metric vector when present.
pub fn write_graphml<W: Write>(wm: &WorldModel, out: W) -> io::Result<()> {
    let mut w = Writer::new_with_indent(out, b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))?;
    w.create_element("graphml")
        .with_attribute(("xmlns", "http://graphml.graphdrawing.org/xmlns"))
        .write_inner_content(|w| {
            for (id, target, name, ty) in KEYS {
                w.create_element("key")
                    .with_attributes([("id", id), ("for", target), ("attr.name", name), ("attr.type", ty)])
                    .write_empty()?;
            }
            w.create_element("graph")
                .with_attributes([("id", "rwm"), ("edgedefault", "directed")])
                .write_inner_content(|w| {
                    for node in wm.nodes() {
                        let id = node.id.to_string();
                        let attrs = serde_json::to_string(&node.attrs).map_err(io::Error::other)?;
                        let u = node.uncertainty.as_bit().to_string();
                        w.create_element("node")
                            .with_attribute(("id", id.as_str()))
                            .write_inner_content(|w| {
                                data(w, "d_kind", node.kind().as_str())?;
                                data(w, "d_label", node.label())?;
                                data(w, "d_u", &u)?;
                                data(w, "d_attrs", &attrs)
                            })?;
                    }
                    for edge in wm.edges() {
                        let id = edge.id.to_string();
                        let src = edge.src.to_string();
                        let dst = edge.dst.to_string();
                        let u = edge.uncertainty.as_bit().to_string();
                        let metrics = edge
                            .metrics
                            .as_ref()
                            .map(serde_json::to_string)
                            .transpose()
                            .map_err(io::Error::other)?;
                        w.create_element("edge")
                            .with_attributes([("id", id.as_str()), ("source", src.as_str()), ("target", dst.as_str())])
                            .write_inner_content(|w| {
                                data(w, "d_rel", edge.relation.as_str())?;
                                data(w, "e_u", &u)?;
                                if let Some(m) = &metrics {
                                    data(w, "d_metrics", m)?;
                                }
                                Ok(())
                            })?;
                    }
                    Ok(())
                })?;
            Ok(())
        })?;
    let mut out = w.into_inner();
    out.write_all(b"\n")?;
    Ok(())
}

fn data<W: Write>(w: &mut Writer<W>, key: &str, value: &str) -> io::Result<()> {
    w.create_element("data")
        .with_attribute(("key", key))
        .write_text_content(BytesText::new(value))?;
    Ok(())
}

pub fn export_graphml(wm: &WorldModel, destination: impl AsRef<Path>) -> Result<(), ModelError> {
    let file = std::fs::File::create(destination)?;
    let mut buf = io::BufWriter::new(file);
    write_graphml(wm, &mut buf)?;
    buf.flush()?;
    Ok(())
}
