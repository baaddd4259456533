//! Whole-network execution: fuse, pick a kernel per node, insert layout
//! conversions, then run the schedule on the simulated device.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::backend::{cost, CostReport, CostWeights, ExecError};
use crate::cucl::{Dialect, InstMode};
use crate::frontend::{ComputeGraph, FrontendError, OpKind};
use crate::graphopt::{alloc_plan, fuse_activations, insert_conversions, schedule, AllocPlan, FormatReq, GraphError, Schedule};
use crate::nda::NdArray;
use crate::oracle::{compare, noise, seed_for, Comparison, ToleranceSpec};
use crate::tuner::{reference, TuneDb};
use crate::variants::{generate, select_variant, GenError, KernelPlan, OpDesc};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node `{node}`: {source}")]
    Gen { node: String, source: GenError },
    #[error("node `{node}`: {source}")]
    Exec { node: String, source: ExecError },
    #[error("node `{node}`: {msg}")]
    Reference { node: String, msg: String },
    #[error("missing value for edge `{0}`")]
    MissingValue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub fuse: bool,
    pub mode: InstMode,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { fuse: true, mode: InstMode::Static }
    }
}

/// A graph lowered to one kernel per node.
#[derive(Debug, Clone)]
pub struct Compiled {
    /// The graph as executed, conversions included.
    pub graph: ComputeGraph,
    pub plans: BTreeMap<String, KernelPlan>,
    pub schedule: Schedule,
    pub alloc: AllocPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRun {
    pub node: String,
    pub label: String,
    pub counters: CostReport,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub nodes: Vec<NodeRun>,
    /// Every edge value, inputs included.
    pub values: BTreeMap<String, NdArray>,
    pub sinks: Vec<String>,
}

impl RunResult {
    pub fn sink(&self, edge: &str) -> Option<&NdArray> {
        self.values.get(edge)
    }

    pub fn total(&self) -> CostReport {
        self.nodes.iter().fold(CostReport::default(), |a, n| a + n.counters)
    }
}

fn op_of(g: &ComputeGraph, name: &str) -> Result<OpDesc, PipelineError> {
    let n = g.node(name).ok_or_else(|| GraphError::UnknownNode(name.to_string()))?;
    OpDesc::from_node(n, &g.edges).map_err(|source| PipelineError::Gen { node: name.to_string(), source })
}

/// Chooses and generates a kernel for every node of `g` (shapes inferred).
pub fn compile_graph(g: &ComputeGraph, db: Option<&TuneDb>, opts: PipelineOptions) -> Result<Compiled, PipelineError> {
    let g = if opts.fuse { fuse_activations(g) } else { g.clone() };
    let mut plans = BTreeMap::new();
    let mut reqs = BTreeMap::new();
    for n in g.nodes.iter().filter(|n| n.kind != OpKind::Input) {
        let op = op_of(&g, &n.name)?;
        let (v, t) = select_variant(&op, db);
        let plan = generate(v, &op, t.as_ref(), opts.mode).map_err(|source| PipelineError::Gen { node: n.name.clone(), source })?;
        let out = plan.output_format().clone();
        let req = FormatReq {
            inputs: plan.input_formats().into_iter().map(Some).collect(),
            output: (g.edges.get(&n.outputs[0]) != Some(&out)).then_some(out),
        };
        reqs.insert(n.name.clone(), req);
        plans.insert(n.name.clone(), plan);
    }
    let g = insert_conversions(&g, &reqs)?;
    for n in g.nodes.iter().filter(|n| matches!(n.kind, OpKind::Conversion { .. })) {
        let op = op_of(&g, &n.name)?;
        let (v, t) = select_variant(&op, None);
        let plan = generate(v, &op, t.as_ref(), opts.mode).map_err(|source| PipelineError::Gen { node: n.name.clone(), source })?;
        plans.insert(n.name.clone(), plan);
    }
    let schedule = schedule(&g)?;
    let alloc = alloc_plan(&g)?;
    Ok(Compiled { graph: g, plans, schedule, alloc })
}

/// Seeded values for every source and weight edge. Weights are centred on
/// zero so activations have something to clip.
pub fn graph_inputs(g: &ComputeGraph, seed: u64) -> Result<BTreeMap<String, NdArray>, PipelineError> {
    let mut out = BTreeMap::new();
    for e in g.sources.iter().chain(&g.params) {
        let d = g.dims(e)?.clone();
        let mut a = noise(d, seed ^ seed_for(e));
        if g.params.contains(e) {
            a.elems_mut().iter_mut().for_each(|v| *v -= 0.55);
        }
        out.insert(e.clone(), a);
    }
    Ok(out)
}

impl Compiled {
    /// Runs every node in schedule order.
    pub fn run(&self, inputs: &BTreeMap<String, NdArray>, weights: &CostWeights) -> Result<RunResult, PipelineError> {
        let mut values = inputs.clone();
        let mut nodes = Vec::new();
        for name in &self.schedule {
            let n = self.graph.node(name).ok_or_else(|| GraphError::UnknownNode(name.clone()))?;
            if n.kind == OpKind::Input {
                if !values.contains_key(&n.outputs[0]) {
                    return Err(PipelineError::MissingValue(n.outputs[0].clone()));
                }
                continue;
            }
            let plan = &self.plans[name];
            let args: Vec<&NdArray> =
                n.inputs.iter().map(|e| values.get(e).ok_or_else(|| PipelineError::MissingValue(e.clone()))).collect::<Result<_, _>>()?;
            let (out, counters) = plan.run(&args).map_err(|source| PipelineError::Exec { node: name.clone(), source })?;
            nodes.push(NodeRun { node: name.clone(), label: plan.label(), counters, cost: cost(&counters, weights) });
            values.insert(n.outputs[0].clone(), out);
        }
        Ok(RunResult { nodes, values, sinks: self.graph.sinks.clone() })
    }

    /// Emitted source per node, in schedule order.
    pub fn emit(&self, dialect: Dialect) -> Result<Vec<(String, String)>, PipelineError> {
        let mut out = Vec::new();
        for name in self.schedule.iter().filter(|n| self.plans.contains_key(*n)) {
            let src = self.plans[name].emit(dialect).map_err(|e| PipelineError::Exec { node: name.clone(), source: e.into() })?;
            out.push((name.clone(), src));
        }
        Ok(out)
    }
}

/// Runs `g` with the oracle implementations of each op.
pub fn reference_run(g: &ComputeGraph, inputs: &BTreeMap<String, NdArray>) -> Result<BTreeMap<String, NdArray>, PipelineError> {
    let mut values = inputs.clone();
    for name in schedule(g)? {
        let n = g.node(&name).expect("scheduled");
        if n.kind == OpKind::Input {
            continue;
        }
        let op = op_of(g, &name)?;
        let args: Vec<NdArray> =
            n.inputs.iter().map(|e| values.get(e).cloned().ok_or_else(|| PipelineError::MissingValue(e.clone()))).collect::<Result<_, _>>()?;
        let out = reference(&op, &args).map_err(|msg| PipelineError::Reference { node: name.clone(), msg })?;
        values.insert(n.outputs[0].clone(), out);
    }
    Ok(values)
}

/// Compares each sink of `run` against the oracle run of the original
/// (unfused, unconverted) graph.
pub fn check_against_reference(g: &ComputeGraph, inputs: &BTreeMap<String, NdArray>, run: &RunResult) -> Result<Vec<(String, Comparison)>, PipelineError> {
    let want = reference_run(g, inputs)?;
    let reduction = g
        .nodes
        .iter()
        .filter_map(|n| n.conv_params().map(|p| (p, n)))
        .map(|(p, n)| g.edges.get(&n.inputs[0]).and_then(|d| d.size_of("chan")).unwrap_or(1) * p.ksz * p.ksz)
        .max()
        .unwrap_or(1);
    let tol = ToleranceSpec::for_reduction(reduction);
    let mut out = Vec::new();
    for s in &run.sinks {
        let got = run.sink(s).ok_or_else(|| PipelineError::MissingValue(s.clone()))?;
        let w = want.get(s).ok_or_else(|| PipelineError::MissingValue(s.clone()))?;
        let c = compare(got, w, tol).map_err(|e| PipelineError::Reference { node: s.clone(), msg: e.to_string() })?;
        out.push((s.clone(), c));
    }
    Ok(out)
}

/// FNV-1a over the little-endian bytes of the logical elements.
pub fn checksum(a: &NdArray) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    NdArray::for_each_index(a.dims(), |idx| {
        for b in a.get(idx).expect("in range").to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    });
    h
}
