//! Graph-level passes: activation fusion, layout conversion insertion,
//! scheduling and buffer planning.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::frontend::{ComputeGraph, OpKind, OpNode};
use crate::nda::{check_conversion, DimsSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cycle detected: {}", cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("no conversion from {from} to {to} for edge `{edge}`")]
    IncompatibleFormats { edge: String, from: String, to: String },
    #[error("edge `{0}` has no inferred shape")]
    MissingShape(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// Node names in execution order.
pub type Schedule = Vec<String>;

/// One buffer per edge.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllocPlan {
    /// edge -> (buffer id, element count)
    pub buffers: BTreeMap<String, (usize, usize)>,
}

impl AllocPlan {
    pub fn total_elems(&self) -> usize {
        self.buffers.values().map(|b| b.1).sum()
    }
}

/// Layout requirements of the variant chosen for a node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FormatReq {
    /// Per node input, in order; `None` accepts the edge as is.
    pub inputs: Vec<Option<DimsSpec>>,
    /// Layout the node writes, if it differs from the inferred one.
    pub output: Option<DimsSpec>,
}

/// Folds each activation into the convolution feeding it, when the
/// activation is that convolution's only consumer.
pub fn fuse_activations(g: &ComputeGraph) -> ComputeGraph {
    let mut out = g.clone();
    loop {
        let hit = out.nodes.iter().enumerate().find_map(|(ai, a)| {
            let OpKind::Activation(act) = a.kind else { return None };
            let edge = a.inputs.first()?;
            let ci = out.nodes.iter().position(|n| n.outputs.iter().any(|o| o == edge))?;
            let c = &out.nodes[ci];
            let fusable = matches!(c.kind, OpKind::Convolution(_))
                && c.fused_activation.is_none()
                && c.outputs.len() == 1
                && out.consumers(edge).count() == 1
                && !out.sources.contains(edge);
            fusable.then(|| (ai, ci, act, edge.clone()))
        });
        let Some((ai, ci, act, edge)) = hit else { break };
        let a = out.nodes.remove(ai);
        let ci = if ci > ai { ci - 1 } else { ci };
        out.nodes[ci].fused_activation = Some(act);
        out.nodes[ci].outputs = a.outputs.clone();
        out.edges.remove(&edge);
    }
    out.recompute_sinks();
    out
}

/// Inserts a conversion in front of every node input whose edge layout
/// differs from the one the node's variant requires; each consumer gets its
/// own conversion. Nodes absent from `reqs` are left alone.
pub fn insert_conversions(g: &ComputeGraph, reqs: &BTreeMap<String, FormatReq>) -> Result<ComputeGraph, GraphError> {
    let mut out = g.clone();
    for n in &g.nodes {
        if let Some(d) = reqs.get(&n.name).and_then(|r| r.output.clone()) {
            out.edges.insert(n.outputs[0].clone(), d);
        }
    }
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let mut node = n.clone();
        if let Some(req) = reqs.get(&n.name) {
            for (i, want) in req.inputs.iter().enumerate() {
                let Some(want) = want else { continue };
                let Some(edge) = n.inputs.get(i) else { continue };
                let have = out.edges.get(edge).ok_or_else(|| GraphError::MissingShape(edge.clone()))?.clone();
                if &have == want {
                    continue;
                }
                check_conversion(&have, want).map_err(|_| GraphError::IncompatibleFormats {
                    edge: edge.clone(),
                    from: have.to_string(),
                    to: want.to_string(),
                })?;
                let cvt_edge = format!("{edge}__{}", n.name);
                nodes.push(OpNode {
                    name: format!("{cvt_edge}_cvt"),
                    kind: OpKind::Conversion { target: want.clone() },
                    inputs: vec![edge.clone()],
                    outputs: vec![cvt_edge.clone()],
                    fused_activation: None,
                });
                out.edges.insert(cvt_edge.clone(), want.clone());
                node.inputs[i] = cvt_edge;
            }
        }
        nodes.push(node);
    }
    out.nodes = nodes;
    out.recompute_sinks();
    Ok(out)
}

fn producers(g: &ComputeGraph) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        for o in &n.outputs {
            m.entry(o.as_str()).or_insert(i);
        }
    }
    m
}

/// Topological order; among ready nodes the earliest declared goes first.
pub fn schedule(g: &ComputeGraph) -> Result<Schedule, GraphError> {
    let prod = producers(g);
    let preds: Vec<BTreeSet<usize>> =
        g.nodes.iter().map(|n| n.inputs.iter().filter_map(|i| prod.get(i.as_str()).copied()).collect()).collect();
    let mut indeg: Vec<usize> = preds.iter().map(BTreeSet::len).collect();
    let mut succs = vec![Vec::new(); g.nodes.len()];
    for (j, ps) in preds.iter().enumerate() {
        for &p in ps {
            succs[p].push(j);
        }
    }
    let mut ready: BTreeSet<usize> = (0..g.nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(g.nodes[i].name.clone());
        for &j in &succs[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() == g.nodes.len() {
        return Ok(order);
    }
    // walk predecessors among the stuck nodes until one repeats
    let stuck = |i: usize| indeg[i] > 0;
    let mut path = vec![(0..g.nodes.len()).find(|&i| stuck(i)).expect("a stuck node")];
    loop {
        let cur = *path.last().expect("non-empty");
        let next = preds[cur].iter().copied().find(|&p| stuck(p)).expect("stuck nodes have stuck preds");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|&i| g.nodes[i].name.clone()).collect();
            cycle.push(cycle[0].clone());
            return Err(GraphError::CycleDetected { cycle });
        }
        path.push(next);
    }
}

/// One distinct buffer per edge, numbered in edge-name order.
pub fn alloc_plan(g: &ComputeGraph) -> Result<AllocPlan, GraphError> {
    let mut names: BTreeSet<&str> = g.edge_names();
    names.extend(g.edges.keys().map(String::as_str));
    let mut buffers = BTreeMap::new();
    for (id, e) in names.into_iter().enumerate() {
        let d = g.edges.get(e).ok_or_else(|| GraphError::MissingShape(e.to_string()))?;
        buffers.insert(e.to_string(), (id, d.elem_count()));
    }
    Ok(AllocPlan { buffers })
}
