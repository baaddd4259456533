//! Network description front-end: the compute graph types, a reader for a
//! subset of the Caffe prototxt format, shape inference and FLOP counts.

mod parse;
mod shape;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::nda::DimsSpec;

pub use parse::{parse_net, pretty_print};
pub use shape::{conv_out_size, flops_of, infer_shapes};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("line {line}: expected {expected}")]
    SyntaxError { line: usize, expected: String },
    #[error("line {line}: unknown layer type `{ty}`")]
    UnknownLayerType { line: usize, ty: String },
    #[error("layer `{layer}` reads undeclared edge `{edge}`")]
    DanglingBottom { layer: String, edge: String },
    #[error("layer `{layer}`: {msg}")]
    BadLayer { layer: String, msg: String },
    #[error("node `{node}` has non-positive output along `{axis}`")]
    NonPositiveOutputDim { node: String, axis: String },
    #[error("source edge `{0}` has no dims bound")]
    UnboundSource(String),
    #[error("node `{0}` is not a convolution")]
    UnsupportedKind(String),
    #[error("edge `{0}` has no inferred shape")]
    MissingShape(String),
    #[error("graph has a cycle through `{0}`")]
    Cycle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConvParams {
    pub ksz: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_chans: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PoolParams {
    pub ksz: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }

    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Convolution(ConvParams),
    Pooling(PoolParams),
    Activation(Activation),
    Conversion { target: DimsSpec },
}

impl OpKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            OpKind::Input => "Input",
            OpKind::Convolution(_) => "Convolution",
            OpKind::Pooling(_) => "Pooling",
            OpKind::Activation(Activation::Relu) => "ReLU",
            OpKind::Conversion { .. } => "Conversion",
        }
    }
}

/// One operation. Convolutions read `[data, filters, bias]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpNode {
    pub name: String,
    pub kind: OpKind,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub fused_activation: Option<Activation>,
}

impl OpNode {
    pub fn conv_params(&self) -> Option<ConvParams> {
        match self.kind {
            OpKind::Convolution(p) => Some(p),
            _ => None,
        }
    }
}

/// DAG of operations over named ND-Array edges.
///
/// `sources` are the edges produced by `Input` nodes; `params` are weight
/// edges (filters, biases) that no node produces.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComputeGraph {
    pub nodes: Vec<OpNode>,
    pub edges: BTreeMap<String, DimsSpec>,
    pub sources: Vec<String>,
    pub params: BTreeSet<String>,
    pub sinks: Vec<String>,
}

impl ComputeGraph {
    pub fn node(&self, name: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn producer(&self, edge: &str) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.outputs.iter().any(|o| o == edge))
    }

    pub fn consumers<'a>(&'a self, edge: &'a str) -> impl Iterator<Item = &'a OpNode> + 'a {
        self.nodes.iter().filter(move |n| n.inputs.iter().any(|i| i == edge))
    }

    pub fn dims(&self, edge: &str) -> Result<&DimsSpec, FrontendError> {
        self.edges.get(edge).ok_or_else(|| FrontendError::MissingShape(edge.to_string()))
    }

    /// Every edge mentioned by any node.
    pub fn edge_names(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter().chain(&n.outputs))
            .map(String::as_str)
            .collect()
    }

    /// Recomputes `sinks`: produced edges that nothing consumes, in node order.
    pub fn recompute_sinks(&mut self) {
        let consumed: BTreeSet<&str> = self.nodes.iter().flat_map(|n| n.inputs.iter()).map(String::as_str).collect();
        let sinks = self
            .nodes
            .iter()
            .flat_map(|n| n.outputs.iter())
            .filter(|o| !consumed.contains(o.as_str()))
            .cloned()
            .collect();
        self.sinks = sinks;
    }

    /// Checks producer uniqueness, dangling inputs and acyclicity.
    pub fn validate(&self) -> Result<(), FrontendError> {
        let mut produced: BTreeMap<&str, &str> = BTreeMap::new();
        for n in &self.nodes {
            for o in &n.outputs {
                if produced.insert(o, &n.name).is_some() {
                    return Err(FrontendError::BadLayer {
                        layer: n.name.clone(),
                        msg: format!("edge `{o}` produced twice"),
                    });
                }
            }
        }
        for n in &self.nodes {
            for i in &n.inputs {
                if !produced.contains_key(i.as_str()) && !self.params.contains(i) {
                    return Err(FrontendError::DanglingBottom { layer: n.name.clone(), edge: i.clone() });
                }
            }
        }
        // Kahn's algorithm over node indices
        let mut indeg: Vec<usize> = self
            .nodes
            .iter()
            .map(|n| n.inputs.iter().filter(|i| produced.contains_key(i.as_str())).count())
            .collect();
        let mut ready: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for o in &self.nodes[i].outputs {
                for (j, m) in self.nodes.iter().enumerate() {
                    for inp in &m.inputs {
                        if inp == o {
                            indeg[j] -= 1;
                            if indeg[j] == 0 {
                                ready.push(j);
                            }
                        }
                    }
                }
            }
        }
        if seen != self.nodes.len() {
            let stuck = indeg.iter().position(|&d| d > 0).expect("some node is stuck");
            return Err(FrontendError::Cycle(self.nodes[stuck].name.clone()));
        }
        Ok(())
    }
}

impl fmt::Display for ComputeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            writeln!(f, "{} [{}] {:?} -> {:?}", n.name, n.kind.type_name(), n.inputs, n.outputs)?;
        }
        Ok(())
    }
}
