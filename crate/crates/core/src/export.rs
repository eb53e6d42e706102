//! Network export as Graphviz DOT or JSON adjacency lists.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterParams;
use crate::error::{Error, Result};
use crate::glasso::ModeNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    /// Partial correlation of the pair.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub cluster: usize,
    pub mode: usize,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
}

/// Picks the network of `cluster` (1-based) and `mode` (1-based).
pub fn select_network(result: &ClusterParams, cluster: usize, mode: usize) -> Result<&ModeNetwork> {
    let model = cluster
        .checked_sub(1)
        .and_then(|k| result.models.get(k))
        .ok_or_else(|| Error::OutOfRange(format!("cluster {cluster} not in 1..={}", result.models.len())))?;
    mode.checked_sub(1)
        .and_then(|n| model.networks.get(n))
        .ok_or_else(|| Error::OutOfRange(format!("mode {mode} not in 1..={}", model.networks.len())))
}

fn node_names(net: &ModeNetwork, labels: Option<&[String]>) -> Result<Vec<String>> {
    match labels {
        Some(l) if l.len() != net.dim() => Err(Error::DimensionMismatch(format!(
            "{} labels for a network of {} variables",
            l.len(),
            net.dim()
        ))),
        Some(l) => Ok(l.to_vec()),
        None => Ok((1..=net.dim()).map(|i| format!("v{i}")).collect()),
    }
}

/// One undirected edge per off-diagonal support entry.
pub fn adjacency(net: &ModeNetwork, cluster: usize, labels: Option<&[String]>) -> Result<Adjacency> {
    let nodes = node_names(net, labels)?;
    let mut edges = Vec::new();
    for i in 0..net.dim() {
        for j in i + 1..net.dim() {
            if net.support[(i, j)] {
                edges.push(Edge {
                    source: nodes[i].clone(),
                    target: nodes[j].clone(),
                    weight: net.partial_correlation(i, j),
                });
            }
        }
    }
    Ok(Adjacency { cluster, mode: net.mode, nodes, edges })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Renders an undirected DOT graph with partial-correlation edge weights.
pub fn to_dot(adj: &Adjacency) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph {} {{", quote(&format!("cluster{}_mode{}", adj.cluster, adj.mode)));
    for n in &adj.nodes {
        let _ = writeln!(out, "  {};", quote(n));
    }
    for e in &adj.edges {
        let _ = writeln!(out, "  {} -- {} [weight={:?}];", quote(&e.source), quote(&e.target), e.weight);
    }
    out.push_str("}\n");
    out
}
