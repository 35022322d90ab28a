use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_text, write_text, Provenance};
use crate::error::{Error, Result};
use crate::network::{SINGraph, SinEdge, SinNode};

pub const GRAPH_SCHEMA: &str = "bubblenet/sin-graph";
pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    GraphJson,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "graph-json" | "json" => Ok(GraphFormat::GraphJson),
            other => Err(Error::Usage(format!(
                "unknown graph format `{other}` (expected `dot` or `graph-json`)"
            ))),
        }
    }
}

/// Versioned JSON form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema: String,
    pub version: u32,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub threshold: f64,
    pub nodes: Vec<SinNode>,
    pub edges: Vec<SinEdge>,
}

fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Pen width drawn for a rescaled weight.
fn penwidth(weight: f64) -> f64 {
    1.0 + 4.0 * weight
}

pub fn graph_to_dot(g: &SINGraph, provenance: &Provenance) -> String {
    let mut out = format!("// {}\ndigraph sin {{\n  threshold={};\n", provenance.header(), quote(&g.threshold.to_string()));
    for n in &g.nodes {
        let mut attrs = vec![format!("group={}", quote(&n.group.to_string()))];
        if let Some(s) = &n.subsector {
            attrs.push(format!("subsector={}", quote(s)));
        }
        attrs.push(format!("size_value={}", quote(&n.size.to_string())));
        if let Some(c) = n.color {
            attrs.push(format!("color_value={}", quote(&c.to_string())));
        }
        out.push_str(&format!("  {} [{}];\n", quote(&n.id), attrs.join(", ")));
    }
    for e in &g.edges {
        out.push_str(&format!(
            "  {} -> {} [weight={}, nsii={}, penwidth={}];\n",
            quote(&e.source),
            quote(&e.target),
            quote(&e.weight.to_string()),
            quote(&e.nsii.to_string()),
            quote(&penwidth(e.weight).to_string()),
        ));
    }
    out.push_str("}\n");
    out
}

pub fn graph_to_json(g: &SINGraph, provenance: &Provenance) -> Result<String> {
    let doc = GraphDocument {
        schema: GRAPH_SCHEMA.to_string(),
        version: GRAPH_SCHEMA_VERSION,
        provenance: provenance.clone(),
        threshold: g.threshold,
        nodes: g.nodes.clone(),
        edges: g.edges.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Parses graph-JSON, checking the schema key and version.
pub fn parse_graph_json(text: &str) -> Result<(SINGraph, Provenance)> {
    let doc: GraphDocument = serde_json::from_str(text)?;
    if doc.schema != GRAPH_SCHEMA {
        return Err(Error::invalid(format!("unexpected graph schema `{}`", doc.schema)));
    }
    if doc.version != GRAPH_SCHEMA_VERSION {
        return Err(Error::invalid(format!("unsupported graph schema version {}", doc.version)));
    }
    Ok((
        SINGraph {
            threshold: doc.threshold,
            nodes: doc.nodes,
            edges: doc.edges,
        },
        doc.provenance,
    ))
}

pub fn import_graph_json(path: &Path) -> Result<(SINGraph, Provenance)> {
    parse_graph_json(&read_text(path)?)
}

pub fn export_graph(g: &SINGraph, format: GraphFormat, provenance: &Provenance, path: &Path) -> Result<()> {
    let text = match format {
        GraphFormat::Dot => graph_to_dot(g, provenance),
        GraphFormat::GraphJson => graph_to_json(g, provenance)?,
    };
    write_text(path, &text)
}
