//! Metacode: generators that turn an operation plus tuning parameters into
//! a specialized CUCL instantiation, and the logic that picks among them.

mod conv_simple;
pub mod coop;
mod gemm;
mod simple;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::backend::{self, execute, CostReport, ExecError, LaunchConfig, ThreadOrder};
use crate::cucl::{CuclError, CuclTemplate, Dialect, InstMode, Instantiation};
use crate::frontend::{Activation, ConvParams, OpKind, OpNode, PoolParams};
use crate::nda::{convert_format, DimsSpec, NdArray};

pub use conv_simple::gen_conv_simple;
pub use coop::{gen_coop_load, gen_coop_load_with, CoopLoadSpec};
pub use gemm::{gen_conv_1x1, gen_conv_fc, gen_conv_tiled};
pub use simple::{gen_activation, gen_pool_max, gen_xpose};

/// Threads per workgroup of the one-output-per-thread kernels.
pub const SIMPLE_WG: usize = 256;

pub const CANONICAL: [&str; 4] = ["img", "chan", "y", "x"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("{variant} does not apply: {reason}")]
    Inapplicable { variant: Variant, reason: String },
    #[error("bad tuning parameters {0}")]
    BadTune(String),
    #[error("unsupported operation: {0}")]
    BadOp(String),
    #[error(transparent)]
    Cucl(#[from] CuclError),
}

fn inapplicable<T>(variant: Variant, reason: impl Into<String>) -> Result<T, GenError> {
    Err(GenError::Inapplicable { variant, reason: reason.into() })
}

/// Shipped kernel variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    ConvSimple,
    ConvTiled,
    Conv1x1,
    ConvFc,
    PoolMax,
    Activation,
    Xpose,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::ConvSimple,
        Variant::ConvTiled,
        Variant::Conv1x1,
        Variant::ConvFc,
        Variant::PoolMax,
        Variant::Activation,
        Variant::Xpose,
    ];
    pub const CONV: [Variant; 4] = [Variant::ConvFc, Variant::Conv1x1, Variant::ConvTiled, Variant::ConvSimple];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ConvSimple => "conv_simple",
            Variant::ConvTiled => "conv_tiled",
            Variant::Conv1x1 => "conv_1x1",
            Variant::ConvFc => "conv_fc",
            Variant::PoolMax => "pool_max",
            Variant::Activation => "activation",
            Variant::Xpose => "xpose",
        }
    }

    /// Higher is more specialized.
    pub fn rank(self) -> u8 {
        match self {
            Variant::ConvFc => 3,
            Variant::Conv1x1 => 2,
            Variant::ConvTiled => 1,
            _ => 0,
        }
    }

    /// Whether the variant takes [`TuneParams`].
    pub fn is_tunable(self) -> bool {
        matches!(self, Variant::ConvTiled | Variant::Conv1x1 | Variant::ConvFc)
    }

    /// Checks applicability to `op` (with `t` for tunable variants).
    pub fn check(self, op: &OpDesc, t: Option<&TuneParams>) -> Result<(), GenError> {
        match (self, op) {
            (Variant::ConvSimple, OpDesc::Conv(_)) => Ok(()),
            (Variant::ConvTiled | Variant::Conv1x1 | Variant::ConvFc, OpDesc::Conv(c)) => {
                let t = t.ok_or_else(|| GenError::BadTune(format!("{self} needs tuning parameters")))?;
                gemm::check(self, c, t)
            }
            (Variant::PoolMax, OpDesc::Pool(_)) | (Variant::Activation, OpDesc::Act(_)) | (Variant::Xpose, OpDesc::Xpose(_)) => Ok(()),
            _ => inapplicable(self, format!("wrong operation kind ({})", op.kind_name())),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self, GenError> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| GenError::BadOp(format!("unknown variant `{s}`")))
    }
}

/// Blocking and vectorization knobs of the tiled convolution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TuneParams {
    /// Per-thread register block: (out pixels, out channels).
    pub mnt: (usize, usize),
    /// Threads per workgroup block: (out pixels, out channels).
    pub mnb: (usize, usize),
    /// Reduction unroll factor.
    pub kb: usize,
    /// Vector width of filter loads.
    pub vw: usize,
    pub local_filts: bool,
    pub local_in: bool,
}

impl Default for TuneParams {
    fn default() -> Self {
        TuneParams { mnt: (4, 4), mnb: (16, 16), kb: 4, vw: 4, local_filts: false, local_in: false }
    }
}

impl TuneParams {
    pub fn threads(&self) -> usize {
        self.mnb.0 * self.mnb.1
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |why: &str| Err(GenError::BadTune(format!("{self}: {why}")));
        if [self.mnt.0, self.mnt.1, self.mnb.0, self.mnb.1, self.kb].contains(&0) {
            return bad("all sizes must be positive");
        }
        if self.threads() > backend::MAX_LOCAL_SIZE {
            return bad("more than 1024 threads per workgroup");
        }
        if ![1, 2, 4, 8].contains(&self.vw) {
            return bad("vw must be 1, 2, 4 or 8");
        }
        if !self.mnt.1.is_multiple_of(self.vw) {
            return bad("vw must divide MNt's channel block");
        }
        Ok(())
    }
}

impl fmt::Display for TuneParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MNt={}:{},MNb={}:{},Kb={},vw={},lf={},li={}",
            self.mnt.0, self.mnt.1, self.mnb.0, self.mnb.1, self.kb, self.vw, self.local_filts as u8, self.local_in as u8
        )
    }
}

impl FromStr for TuneParams {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self, GenError> {
        let bad = || GenError::BadTune(format!("cannot parse `{s}`"));
        let mut t = TuneParams::default();
        let pair = |v: &str| -> Result<(usize, usize), GenError> {
            let (a, b) = v.split_once(':').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        let flag = |v: &str| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "MNt" => t.mnt = pair(v)?,
                "MNb" => t.mnb = pair(v)?,
                "Kb" => t.kb = v.parse().map_err(|_| bad())?,
                "vw" => t.vw = v.parse().map_err(|_| bad())?,
                "lf" => t.local_filts = flag(v)?,
                "li" => t.local_in = flag(v)?,
                _ => return Err(bad()),
            }
        }
        t.validate()?;
        Ok(t)
    }
}

/// A convolution with its (inferred) shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvOp {
    pub params: ConvParams,
    pub act: Option<Activation>,
    pub input: DimsSpec,
    pub out: DimsSpec,
}

impl ConvOp {
    /// A convolution over a dense canonical input of the given sizes.
    pub fn new(params: ConvParams, act: Option<Activation>, batch: usize, in_chans: usize, in_y: usize, in_x: usize) -> Result<Self, GenError> {
        let oy = crate::frontend::conv_out_size(in_y, params.ksz, params.stride, params.pad);
        let ox = crate::frontend::conv_out_size(in_x, params.ksz, params.stride, params.pad);
        let (Some(oy), Some(ox)) = (oy, ox) else {
            return Err(GenError::BadOp(format!("window {} does not fit {in_y}x{in_x}", params.ksz)));
        };
        Ok(ConvOp {
            params,
            act,
            input: canonical(&[batch, in_chans, in_y, in_x]),
            out: canonical(&[batch, params.out_chans, oy, ox]),
        })
    }

    pub fn size(&self, arr: &DimsSpec, dim: &str) -> usize {
        arr.size_of(dim).expect("canonical dims")
    }

    pub fn batch(&self) -> usize {
        self.size(&self.input, "img")
    }

    pub fn in_chans(&self) -> usize {
        self.size(&self.input, "chan")
    }

    pub fn filts_dims(&self) -> DimsSpec {
        let k = self.params.ksz;
        DimsSpec::new(&["out_chan", "in_chan", "y", "x"], &[self.params.out_chans, self.in_chans(), k, k]).expect("valid")
    }

    pub fn biases_dims(&self) -> DimsSpec {
        DimsSpec::new(&["out_chan"], &[self.params.out_chans]).expect("valid")
    }

    /// Multiply-add count times two.
    pub fn flops(&self) -> u64 {
        let k = self.params.ksz as u64;
        2 * k * k * self.in_chans() as u64 * self.out.elem_count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolOp {
    pub params: PoolParams,
    pub input: DimsSpec,
    pub out: DimsSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActOp {
    pub act: Activation,
    pub input: DimsSpec,
    pub out: DimsSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XposeOp {
    pub input: DimsSpec,
    pub out: DimsSpec,
}

/// An operation together with the shapes of its arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpDesc {
    Conv(ConvOp),
    Pool(PoolOp),
    Act(ActOp),
    Xpose(XposeOp),
}

impl OpDesc {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OpDesc::Conv(_) => "Convolution",
            OpDesc::Pool(_) => "Pooling",
            OpDesc::Act(_) => "Activation",
            OpDesc::Xpose(_) => "Conversion",
        }
    }

    /// Describes a graph node; `edges` must hold inferred shapes.
    pub fn from_node(node: &OpNode, edges: &BTreeMap<String, DimsSpec>) -> Result<OpDesc, GenError> {
        let dims = |e: &String| edges.get(e).cloned().ok_or_else(|| GenError::BadOp(format!("edge `{e}` has no shape")));
        let input = dims(node.inputs.first().ok_or_else(|| GenError::BadOp(format!("`{}` has no inputs", node.name)))?)?;
        let out = dims(node.outputs.first().ok_or_else(|| GenError::BadOp(format!("`{}` has no outputs", node.name)))?)?;
        Ok(match &node.kind {
            OpKind::Convolution(p) => {
                let input = canonical_of(&input)?;
                let out = canonical_of(&out)?;
                OpDesc::Conv(ConvOp { params: *p, act: node.fused_activation, input, out })
            }
            OpKind::Pooling(p) => OpDesc::Pool(PoolOp { params: *p, input: canonical_of(&input)?, out: canonical_of(&out)? }),
            OpKind::Activation(a) => OpDesc::Act(ActOp { act: *a, input, out }),
            OpKind::Conversion { .. } => OpDesc::Xpose(XposeOp { input, out }),
            OpKind::Input => return Err(GenError::BadOp(format!("`{}` is an input", node.name))),
        })
    }

    /// Variants that can implement this op, most specialized first; tunable
    /// ones are checked against `t`.
    pub fn applicable(&self, t: &TuneParams) -> Vec<Variant> {
        let mut v: Vec<Variant> = Variant::ALL.into_iter().filter(|v| v.check(self, Some(t)).is_ok()).collect();
        v.sort_by_key(|v| std::cmp::Reverse(v.rank()));
        v
    }
}

/// Dense `img:chan:y:x` with the given sizes.
pub fn canonical(sizes: &[usize; 4]) -> DimsSpec {
    DimsSpec::new(&CANONICAL, sizes).expect("valid canonical dims")
}

/// The spec itself if already canonical, else a dense canonical reorder.
pub fn canonical_of(d: &DimsSpec) -> Result<DimsSpec, GenError> {
    let mut sizes = [0; 4];
    for (i, n) in CANONICAL.iter().enumerate() {
        sizes[i] = d.size_of(n).ok_or_else(|| GenError::BadOp(format!("expected img:chan:y:x, got {}", d.names_joined())))?;
    }
    if d.len() != 4 {
        return Err(GenError::BadOp(format!("expected img:chan:y:x, got {}", d.names_joined())));
    }
    if d.names().eq(CANONICAL.iter().copied()) {
        Ok(d.clone())
    } else {
        Ok(canonical(&sizes))
    }
}

/// `%(arg_dim_size)`
pub(crate) fn sz(arg: &str, dim: &str) -> String {
    format!("%({arg}_{dim}_size)")
}

/// `%(arg_dim_stride)`
pub(crate) fn st(arg: &str, dim: &str) -> String {
    format!("%({arg}_{dim}_stride)")
}

/// Wraps an output-store expression with the fused activation.
pub fn write_xform(act: Option<Activation>, expr: &str) -> String {
    match act {
        None => expr.to_string(),
        Some(Activation::Relu) => format!("(({expr} > 0.0f) ? {expr} : 0.0f)"),
    }
}

/// A generated kernel, ready to lower, emit or run.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPlan {
    pub variant: Variant,
    pub tune: Option<TuneParams>,
    pub inst: Instantiation,
    pub launch: LaunchConfig,
    /// Input arguments in op-input order.
    pub inputs: Vec<String>,
    pub output: String,
}

impl KernelPlan {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        variant: Variant,
        tune: Option<TuneParams>,
        template: CuclTemplate,
        bindings: BTreeMap<String, DimsSpec>,
        vars: &[(&str, String)],
        mode: InstMode,
        launch: LaunchConfig,
        inputs: &[&str],
    ) -> Self {
        let output = template.args.iter().find(|a| a.dir == crate::cucl::ArgDir::Out).expect("an output").name.clone();
        KernelPlan {
            variant,
            tune,
            inst: Instantiation {
                template: Arc::new(template),
                bindings,
                mode,
                var_values: vars.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            },
            launch,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output,
        }
    }

    /// Layouts the kernel expects for each op input, in order.
    pub fn input_formats(&self) -> Vec<DimsSpec> {
        self.inputs.iter().map(|a| self.inst.bindings[a].clone()).collect()
    }

    pub fn output_format(&self) -> &DimsSpec {
        &self.inst.bindings[&self.output]
    }

    /// `variant` or `variant[params]`, as shown in reports.
    pub fn label(&self) -> String {
        match &self.tune {
            Some(t) => format!("{}[{t}]", self.variant),
            None => self.variant.to_string(),
        }
    }

    /// Filename-safe form of the label, e.g. `conv_tiled-MNt4x4-MNb16x16-Kb4-vw4-lf0-li0`.
    pub fn file_tag(&self) -> String {
        match &self.tune {
            Some(t) => format!(
                "{}-MNt{}x{}-MNb{}x{}-Kb{}-vw{}-lf{}-li{}",
                self.variant, t.mnt.0, t.mnt.1, t.mnb.0, t.mnb.1, t.kb, t.vw, t.local_filts as u8, t.local_in as u8
            ),
            None => self.variant.to_string(),
        }
    }

    pub fn source(&self) -> Result<String, CuclError> {
        crate::cucl::instantiate(&self.inst)
    }

    pub fn emit(&self, dialect: Dialect) -> Result<String, CuclError> {
        backend::emit_source(&self.inst, dialect)
    }

    /// Compiles the plan for the simulated device.
    pub fn compile(&self) -> Result<backend::Program, ExecError> {
        let ir = backend::lower(&self.inst)?;
        let meta = self.inst.meta_values()?;
        backend::compile(&ir, &meta.into_iter().collect())
    }

    /// Compiles the emitted text of one dialect, mapped back to idioms;
    /// used to check that both renderings behave the same.
    pub fn compile_emitted(&self, dialect: Dialect) -> Result<backend::Program, ExecError> {
        let text = self.emit(dialect)?;
        let ir = crate::cucl::parse_kernel(&crate::cucl::unrender_dialect(&text, dialect))?;
        let meta = self.inst.meta_values()?;
        backend::compile(&ir, &meta.into_iter().collect())
    }

    /// Runs the kernel on op inputs, reformatting any input whose layout
    /// differs from the one the kernel expects.
    pub fn run(&self, inputs: &[&NdArray]) -> Result<(NdArray, CostReport), ExecError> {
        self.run_ordered(inputs, ThreadOrder::Ascending)
    }

    pub fn run_ordered(&self, inputs: &[&NdArray], order: ThreadOrder) -> Result<(NdArray, CostReport), ExecError> {
        let prog = self.compile()?;
        self.run_compiled(&prog, inputs, order)
    }

    pub fn run_compiled(&self, prog: &backend::Program, inputs: &[&NdArray], order: ThreadOrder) -> Result<(NdArray, CostReport), ExecError> {
        if inputs.len() != self.inputs.len() {
            return Err(ExecError::Compile(format!("{} takes {} inputs, got {}", self.variant, self.inputs.len(), inputs.len())));
        }
        let mut bufs: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
        for (arg, a) in self.inputs.iter().zip(inputs) {
            let want = &self.inst.bindings[arg];
            let v = if a.dims() == want {
                a.elems().to_vec()
            } else {
                convert_format(a, want).map_err(|e| ExecError::Compile(format!("input `{arg}`: {e}")))?.into_elems()
            };
            bufs.insert(arg, v);
        }
        let out_dims = self.output_format().clone();
        bufs.insert(&self.output, vec![0.0; out_dims.span()]);
        let mut flat: Vec<Vec<f32>> = prog
            .buffer_names()
            .map(|n| bufs.remove(n).ok_or_else(|| ExecError::MissingBuffer(n.to_string())))
            .collect::<Result<_, _>>()?;
        let report = execute(prog, self.launch, &mut flat, order)?;
        let pos = prog.buffer_names().position(|n| n == self.output).expect("output is a parameter");
        let out = NdArray::from_vec(out_dims, std::mem::take(&mut flat[pos])).expect("sized from spec");
        Ok((out, report))
    }

    /// Static cost-model prediction for this launch.
    pub fn estimate(&self) -> Result<CostReport, ExecError> {
        let ir = backend::lower(&self.inst)?;
        let meta = self.inst.meta_values()?;
        backend::estimate_static(&ir, self.launch, Some(&meta))
    }
}

/// Builds the kernel for `variant` on `op`.
pub fn generate(variant: Variant, op: &OpDesc, t: Option<&TuneParams>, mode: InstMode) -> Result<KernelPlan, GenError> {
    variant.check(op, t)?;
    match (variant, op) {
        (Variant::ConvSimple, OpDesc::Conv(c)) => gen_conv_simple(c, mode),
        (Variant::ConvTiled, OpDesc::Conv(c)) => gen_conv_tiled(c, t.expect("checked"), mode),
        (Variant::Conv1x1, OpDesc::Conv(c)) => gen_conv_1x1(c, t.expect("checked"), mode),
        (Variant::ConvFc, OpDesc::Conv(c)) => gen_conv_fc(c, t.expect("checked"), mode),
        (Variant::PoolMax, OpDesc::Pool(p)) => gen_pool_max(p, mode),
        (Variant::Activation, OpDesc::Act(a)) => gen_activation(a, mode),
        (Variant::Xpose, OpDesc::Xpose(x)) => gen_xpose(x, mode),
        _ => unreachable!("rejected by check"),
    }
}

/// Picks a variant for `op`: the database record when one exists, else the
/// most specialized applicable variant under the default parameters.
pub fn select_variant(op: &OpDesc, db: Option<&crate::tuner::TuneDb>) -> (Variant, Option<TuneParams>) {
    if let Some(rec) = db.and_then(|db| db.get(&crate::tuner::signature(op))) {
        return (rec.variant, rec.params);
    }
    let t = TuneParams::default();
    let v = op.applicable(&t)[0];
    (v, v.is_tunable().then_some(t))
}

#[cfg(test)]
mod tests;
