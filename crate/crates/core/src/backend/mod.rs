//! Simulated GPU: runs kernel IR on a deterministic interpreter, counts
//! what it does, and renders kernels as OpenCL or CUDA text.

mod compile;
mod estimate;
mod vm;

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign};

use thiserror::Error;

use crate::cucl::ir::KernelIr;
use crate::cucl::{instantiate, parse_kernel, render_dialect, CuclError, Dialect, Instantiation};
use crate::nda::NdArray;

pub use compile::{compile, Program};
pub use estimate::estimate_static;
pub use vm::{execute, ThreadOrder, ITERATION_CAP};

/// Hard limit on threads per workgroup.
pub const MAX_LOCAL_SIZE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("barrier divergence in workgroup {group}: {detail}")]
    BarrierDivergence { group: usize, detail: String },
    #[error("out-of-bounds access to `{buffer}` at element {offset} (length {len})")]
    OutOfBoundsAccess { buffer: String, offset: i64, len: usize },
    #[error("buffer `{buffer}` of {len} floats is not a whole number of width-{width} vectors")]
    MisalignedVectorAccess { buffer: String, len: usize, width: usize },
    #[error("loop iteration cap exceeded")]
    NonTerminating,
    #[error("integer division by zero")]
    DivisionByZero,
    #[error("kernel does not compile: {0}")]
    Compile(String),
    #[error("no buffer bound for kernel argument `{0}`")]
    MissingBuffer(String),
    #[error("no value for metadata field `{0}`")]
    MissingMeta(String),
    #[error("bad launch: {0}")]
    BadLaunch(String),
    #[error(transparent)]
    Cucl(#[from] CuclError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LaunchConfig {
    pub group_count: usize,
    pub local_size: usize,
}

impl LaunchConfig {
    pub fn new(group_count: usize, local_size: usize) -> Self {
        LaunchConfig { group_count, local_size }
    }

    /// Enough groups of `local_size` threads to cover `threads`.
    pub fn covering(threads: usize, local_size: usize) -> Self {
        LaunchConfig { group_count: threads.div_ceil(local_size).max(1), local_size }
    }

    pub fn total_threads(&self) -> usize {
        self.group_count * self.local_size
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.group_count == 0 || self.local_size == 0 || self.local_size > MAX_LOCAL_SIZE {
            return Err(ExecError::BadLaunch(format!(
                "{} groups of {} threads (need ≥1 group and 1..={MAX_LOCAL_SIZE} threads)",
                self.group_count, self.local_size
            )));
        }
        Ok(())
    }
}

/// Operation counters summed over every thread of a launch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CostReport {
    pub alu_ops: u64,
    pub global_loads: u64,
    pub global_stores: u64,
    pub local_loads: u64,
    pub local_stores: u64,
    pub barriers: u64,
    pub wall_ns: u64,
}

impl CostReport {
    /// Same counters with wall time zeroed, for determinism checks.
    pub fn counters(&self) -> CostReport {
        CostReport { wall_ns: 0, ..*self }
    }
}

impl Add for CostReport {
    type Output = CostReport;
    fn add(self, o: CostReport) -> CostReport {
        CostReport {
            alu_ops: self.alu_ops + o.alu_ops,
            global_loads: self.global_loads + o.global_loads,
            global_stores: self.global_stores + o.global_stores,
            local_loads: self.local_loads + o.local_loads,
            local_stores: self.local_stores + o.local_stores,
            barriers: self.barriers + o.barriers,
            wall_ns: self.wall_ns + o.wall_ns,
        }
    }
}

impl AddAssign for CostReport {
    fn add_assign(&mut self, o: CostReport) {
        *self = *self + o;
    }
}

/// Per-counter weights of the cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub alu: f64,
    pub global_load: f64,
    pub global_store: f64,
    pub local_load: f64,
    pub local_store: f64,
    pub barrier: f64,
    pub wall_ns: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { alu: 1.0, global_load: 16.0, global_store: 16.0, local_load: 2.0, local_store: 2.0, barrier: 32.0, wall_ns: 0.0 }
    }
}

impl CostWeights {
    /// All weight on wall-clock time.
    pub fn wall_clock() -> Self {
        CostWeights { alu: 0.0, global_load: 0.0, global_store: 0.0, local_load: 0.0, local_store: 0.0, barrier: 0.0, wall_ns: 1.0 }
    }
}

/// Weighted sum of the counters.
pub fn cost(r: &CostReport, w: &CostWeights) -> f64 {
    w.alu * r.alu_ops as f64
        + w.global_load * r.global_loads as f64
        + w.global_store * r.global_stores as f64
        + w.local_load * r.local_loads as f64
        + w.local_store * r.local_stores as f64
        + w.barrier * r.barriers as f64
        + w.wall_ns * r.wall_ns as f64
}

pub type MetaValues = [(String, i64)];

fn meta_map(meta: Option<&MetaValues>) -> HashMap<String, i64> {
    meta.map(|m| m.iter().cloned().collect()).unwrap_or_default()
}

/// Runs `ir` with arrays bound by parameter name; output arrays are updated
/// in place.
pub fn run_kernel(
    ir: &KernelIr,
    launch: LaunchConfig,
    buffers: &mut BTreeMap<String, NdArray>,
    meta: Option<&MetaValues>,
) -> Result<CostReport, ExecError> {
    run_kernel_ordered(ir, launch, buffers, meta, ThreadOrder::Ascending)
}

/// [`run_kernel`] with an explicit intra-phase thread order.
pub fn run_kernel_ordered(
    ir: &KernelIr,
    launch: LaunchConfig,
    buffers: &mut BTreeMap<String, NdArray>,
    meta: Option<&MetaValues>,
    order: ThreadOrder,
) -> Result<CostReport, ExecError> {
    let prog = compile(ir, &meta_map(meta))?;
    let mut flat = Vec::with_capacity(ir.params.len());
    for p in &ir.params {
        let a = buffers.get_mut(&p.name).ok_or_else(|| ExecError::MissingBuffer(p.name.clone()))?;
        flat.push(std::mem::take(a.elems_mut_vec()));
    }
    let res = execute(&prog, launch, &mut flat, order);
    for (p, v) in ir.params.iter().zip(flat) {
        *buffers.get_mut(&p.name).expect("bound above").elems_mut_vec() = v;
    }
    res
}

/// Instantiates and parses a template instantiation into kernel IR.
pub fn lower(inst: &Instantiation) -> Result<KernelIr, CuclError> {
    parse_kernel(&instantiate(inst)?)
}

/// OpenCL or CUDA text for an instantiation.
pub fn emit_source(inst: &Instantiation, dialect: Dialect) -> Result<String, CuclError> {
    render_dialect(&instantiate(inst)?, dialect)
}

/// File name under which emitted sources (and their golden copies) live.
pub fn emit_file_name(signature: &str, variant: &str, dialect: Dialect) -> String {
    format!("{signature}.{variant}.{}.c", dialect.tag())
}
