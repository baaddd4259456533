//! Brute-force autotuning: every applicable (variant, parameters) candidate
//! is generated, checked against the oracle and scored; the cheapest wins.

mod db;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::{cost, CostReport, CostWeights, ExecError, ThreadOrder};
use crate::cucl::InstMode;
use crate::frontend::{ComputeGraph, OpKind};
use crate::nda::{DimsSpec, NdArray};
use crate::oracle::{compare, noise, ref_conv, ref_pool_max, seed_for, ToleranceSpec};
use crate::variants::{canonical, generate, ActOp, ConvOp, GenError, OpDesc, PoolOp, TuneParams, Variant, XposeOp};

pub use db::{TuneDb, TuneRecord, DB_HEADER};

/// Default FLOP budget of the validation twin.
pub const TWIN_FLOPS: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error("every candidate for `{signature}` failed: {reasons}")]
    AllCandidatesFailed { signature: String, reasons: String },
    #[error("tuning database format mismatch: {detail}")]
    FormatVersionMismatch { detail: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Gen(#[from] GenError),
}

/// Canonical text of an operation: kind, parameters and shapes.
pub fn signature(op: &OpDesc) -> String {
    let shape = |d: &DimsSpec| d.dims().iter().map(|i| i.size.to_string()).collect::<Vec<_>>().join("x");
    match op {
        OpDesc::Conv(c) => {
            let p = c.params;
            let act = c.act.map(|a| format!("_{}", a.tag())).unwrap_or_default();
            format!("conv_k{}_s{}_p{}_oc{}_in{}{act}", p.ksz, p.stride, p.pad, p.out_chans, shape(&c.input))
        }
        OpDesc::Pool(p) => {
            let q = p.params;
            format!("pool_max_k{}_s{}_p{}_in{}", q.ksz, q.stride, q.pad, shape(&p.input))
        }
        OpDesc::Act(a) => format!("{}_{}_in{}", a.act.tag(), a.input.names().collect::<Vec<_>>().join("-"), shape(&a.input)),
        OpDesc::Xpose(x) => format!(
            "xpose_{}_{}_to_{}_{}",
            x.input.names().collect::<Vec<_>>().join("-"),
            shape(&x.input),
            x.out.names().collect::<Vec<_>>().join("-"),
            shape(&x.out)
        ),
    }
}

/// Candidate parameters per tunable variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuneSpace {
    pub per_variant: BTreeMap<Variant, Vec<TuneParams>>,
}

impl Default for TuneSpace {
    fn default() -> Self {
        let mut params = Vec::new();
        for mnt in [1, 2, 4, 8] {
            for mnb in [8, 16] {
                for kb in [1, 4] {
                    for vw in [1, 4] {
                        for lf in [false, true] {
                            for li in [false, true] {
                                let t = TuneParams { mnt: (mnt, mnt), mnb: (mnb, mnb), kb, vw, local_filts: lf, local_in: li };
                                if t.validate().is_ok() {
                                    params.push(t);
                                }
                            }
                        }
                    }
                }
            }
        }
        TuneSpace::uniform(&params)
    }
}

impl TuneSpace {
    /// The same parameter list for every tunable variant.
    pub fn uniform(params: &[TuneParams]) -> Self {
        let mut v = params.to_vec();
        let mut seen = std::collections::BTreeSet::new();
        v.retain(|t| seen.insert(*t));
        TuneSpace { per_variant: Variant::ALL.into_iter().filter(|v| v.is_tunable()).map(|k| (k, v.clone())).collect() }
    }

    /// Only the fallback and the single default parameter set.
    pub fn manual() -> Self {
        TuneSpace::uniform(&[TuneParams::default()])
    }

    /// Applicable candidates for `op`: most specialized variant first, each
    /// variant's parameters in list order.
    pub fn candidates(&self, op: &OpDesc) -> Vec<(Variant, Option<TuneParams>)> {
        let mut vs: Vec<Variant> = Variant::ALL.to_vec();
        vs.sort_by_key(|v| std::cmp::Reverse(v.rank()));
        let mut out = Vec::new();
        for v in vs {
            if v.is_tunable() {
                for t in self.per_variant.get(&v).into_iter().flatten() {
                    if v.check(op, Some(t)).is_ok() {
                        out.push((v, Some(*t)));
                    }
                }
            } else if v.check(op, None).is_ok() {
                out.push((v, None));
            }
        }
        out
    }
}

/// What a sweep minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Model(CostWeights),
    WallClock,
}

impl Objective {
    pub fn model() -> Self {
        Objective::Model(CostWeights::default())
    }

    fn weights(&self) -> CostWeights {
        match self {
            Objective::Model(w) => *w,
            Objective::WallClock => CostWeights::wall_clock(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub space: TuneSpace,
    pub objective: Objective,
    /// FLOP budget of the validation twin.
    pub twin_flops: u64,
    /// Ops up to this much work are scored by interpretation; larger ones
    /// by the static model.
    pub interp_flops: u64,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's global pool.
    pub jobs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { space: TuneSpace::default(), objective: Objective::model(), twin_flops: TWIN_FLOPS, interp_flops: TWIN_FLOPS, seed: 0, jobs: None }
    }
}

/// Outcome of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub variant: Variant,
    pub params: Option<TuneParams>,
    pub result: Result<Scored, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub cost: f64,
    pub counters: CostReport,
    /// Worst relative error seen during validation.
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub record: TuneRecord,
    pub counters: CostReport,
    pub max_rel_err: f64,
    pub candidates: Vec<CandidateResult>,
}

/// A proxy for how long an op takes to interpret.
pub fn work(op: &OpDesc) -> u64 {
    match op {
        OpDesc::Conv(c) => c.flops(),
        OpDesc::Pool(p) => (p.out.elem_count() * p.params.ksz * p.params.ksz) as u64,
        OpDesc::Act(a) => a.out.elem_count() as u64,
        OpDesc::Xpose(x) => x.out.elem_count() as u64,
    }
}

/// A same-kind convolution shrunk until its FLOPs fit `budget`: channels
/// first (down to 16), then spatial extent, then batch, then channels and
/// spatial extent to their minimum. Window, stride and padding are kept,
/// so applicability classes (1x1, full-window) are preserved.
pub fn downscale(op: &ConvOp, budget: u64) -> ConvOp {
    let p = op.params;
    let (mut b, mut ic, mut oc) = (op.batch(), op.in_chans(), p.out_chans);
    let (mut iy, mut ix) = (op.size(&op.input, "y"), op.size(&op.input, "x"));
    let full_window = p.ksz == iy && p.ksz == ix && p.pad == 0;
    let min_sp = p.ksz.saturating_sub(2 * p.pad).max(1);
    let flops = |b: usize, ic: usize, oc: usize, iy: usize, ix: usize| {
        ConvOp::new(crate::frontend::ConvParams { out_chans: oc, ..p }, None, b, ic, iy, ix).map(|o| o.flops()).unwrap_or(u64::MAX)
    };
    let half = |v: usize, floor: usize| v.div_ceil(2).max(floor).min(v);
    let mut stage = 0;
    while flops(b, ic, oc, iy, ix) > budget && stage < 5 {
        let before = (b, ic, oc, iy, ix);
        match stage {
            0 | 3 => {
                let floor = if stage == 0 { 16 } else { 1 };
                if ic >= oc {
                    ic = half(ic, floor);
                } else {
                    oc = half(oc, floor);
                }
            }
            1 | 4 if !full_window => {
                let floor = if stage == 1 { (min_sp).max(8) } else { min_sp };
                iy = half(iy, floor);
                ix = half(ix, floor);
            }
            2 => b = 1,
            _ => {}
        }
        if (b, ic, oc, iy, ix) == before {
            stage += 1;
        }
    }
    ConvOp::new(crate::frontend::ConvParams { out_chans: oc, ..p }, op.act, b, ic, iy, ix).expect("shrinking keeps the window inside")
}

/// The op a candidate is validated on.
pub fn twin(op: &OpDesc, budget: u64) -> OpDesc {
    match op {
        OpDesc::Conv(c) => OpDesc::Conv(downscale(c, budget)),
        other => other.clone(),
    }
}

/// Seeded noise for each op input.
pub fn op_inputs(op: &OpDesc, seed: u64) -> Vec<NdArray> {
    let s = seed ^ seed_for(&signature(op));
    match op {
        OpDesc::Conv(c) => vec![noise(c.input.clone(), s), noise(c.filts_dims(), s.wrapping_add(1)), noise(c.biases_dims(), s.wrapping_add(2))],
        OpDesc::Pool(PoolOp { input, .. }) | OpDesc::Xpose(XposeOp { input, .. }) => vec![noise(input.clone(), s)],
        // centred so the activation has something to clip
        OpDesc::Act(ActOp { input, .. }) => {
            let n = noise(input.clone(), s);
            let v = n.elems().iter().map(|x| x - 0.55).collect();
            vec![NdArray::from_vec(input.clone(), v).expect("same dims")]
        }
    }
}

/// Oracle output of `op` on `inputs`.
pub fn reference(op: &OpDesc, inputs: &[NdArray]) -> Result<NdArray, String> {
    match op {
        OpDesc::Conv(c) => ref_conv(&inputs[0], &inputs[1], &inputs[2], c.params, c.act).map_err(|e| e.to_string()),
        OpDesc::Pool(p) => ref_pool_max(&inputs[0], p.params).map_err(|e| e.to_string()),
        OpDesc::Act(a) => {
            let mut out = NdArray::zeros(a.out.clone());
            let input = &inputs[0];
            NdArray::for_each_index(&a.out.clone(), |idx| {
                let v = input.get(idx).expect("same sizes");
                out.set(idx, a.act.apply(v)).expect("in range");
            });
            Ok(out)
        }
        OpDesc::Xpose(x) => {
            let input = &inputs[0];
            let pos: Vec<usize> = input.dims().names().map(|n| x.out.names().position(|m| m == n).expect("same names")).collect();
            let mut out = NdArray::zeros(x.out.clone());
            let mut src = vec![0; pos.len()];
            NdArray::for_each_index(&x.out.clone(), |idx| {
                for (s, &p) in src.iter_mut().zip(&pos) {
                    *s = idx[p];
                }
                if let Ok(v) = input.get(&src) {
                    out.set(idx, v).expect("in range");
                }
            });
            Ok(out)
        }
    }
}

fn tolerance(op: &OpDesc) -> ToleranceSpec {
    match op {
        OpDesc::Conv(c) => ToleranceSpec::for_reduction(c.in_chans() * c.params.ksz * c.params.ksz),
        _ => ToleranceSpec::default(),
    }
}

/// Runs `variant` on `op` with seeded inputs and checks it against the
/// oracle; returns the counters and the worst relative error.
pub fn validate(variant: Variant, params: Option<&TuneParams>, op: &OpDesc, seed: u64) -> Result<(CostReport, f64), String> {
    let plan = generate(variant, op, params, InstMode::Static).map_err(|e| e.to_string())?;
    let inputs = op_inputs(op, seed);
    let refs: Vec<&NdArray> = inputs.iter().collect();
    let (got, report) = plan.run_ordered(&refs, ThreadOrder::Ascending).map_err(|e: ExecError| e.to_string())?;
    let want = reference(op, &inputs)?;
    let c = compare(&got, &want, tolerance(op)).map_err(|e| e.to_string())?;
    if !c.pass {
        return Err(format!("oracle mismatch (max rel err {:.3e} at {:?})", c.max_rel_err, c.worst));
    }
    Ok((report, c.max_rel_err))
}

/// Validates and scores one candidate the way a sweep does.
pub fn score(variant: Variant, params: Option<TuneParams>, op: &OpDesc, cfg: &SweepConfig) -> Result<Scored, String> {
    evaluate(variant, params, op, cfg).result
}

fn evaluate(variant: Variant, params: Option<TuneParams>, op: &OpDesc, cfg: &SweepConfig) -> CandidateResult {
    let weights = cfg.objective.weights();
    let result = (|| {
        let interp = work(op) <= cfg.interp_flops;
        if interp {
            let (counters, err) = validate(variant, params.as_ref(), op, cfg.seed)?;
            Ok(Scored { cost: cost(&counters, &weights), counters, max_rel_err: err })
        } else {
            let tw = twin(op, cfg.twin_flops);
            let (twin_counters, err) = validate(variant, params.as_ref(), &tw, cfg.seed)?;
            let counters = match cfg.objective {
                Objective::WallClock => twin_counters,
                Objective::Model(_) => {
                    let plan = generate(variant, op, params.as_ref(), InstMode::Static).map_err(|e| e.to_string())?;
                    plan.estimate().map_err(|e| e.to_string())?
                }
            };
            Ok(Scored { cost: cost(&counters, &weights), counters, max_rel_err: err })
        }
    })();
    CandidateResult { variant, params, result }
}

/// How the costs of a sweep over `op` are obtained.
pub fn objective_tag(op: &OpDesc, cfg: &SweepConfig) -> &'static str {
    let interp = work(op) <= cfg.interp_flops;
    match (cfg.objective, interp) {
        (Objective::Model(_), true) => "model:interp",
        (Objective::Model(_), false) => "model:static",
        (Objective::WallClock, true) => "wall",
        (Objective::WallClock, false) => "wall:twin",
    }
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Index of the cheapest successful candidate; ties go to the higher
/// variant rank, then to the earlier index.
pub fn best_candidate(results: &[CandidateResult]) -> Option<usize> {
    results
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.result.as_ref().ok().map(|s| (i, c, s)))
        .min_by(|a, b| a.2.cost.total_cmp(&b.2.cost).then(b.1.variant.rank().cmp(&a.1.variant.rank())).then(a.0.cmp(&b.0)))
        .map(|(i, ..)| i)
}

/// Scores every applicable candidate for `op` and returns the cheapest.
/// Ties go to the more specialized variant, then to enumeration order.
pub fn sweep(op: &OpDesc, cfg: &SweepConfig) -> Result<SweepResult, TuneError> {
    let sig = signature(op);
    let cands = cfg.space.candidates(op);
    let results: Vec<CandidateResult> =
        in_pool(cfg.jobs, || cands.par_iter().map(|&(v, t)| evaluate(v, t, op, cfg)).collect());
    let best = best_candidate(&results).map(|i| &results[i]);
    let Some((c, Ok(s))) = best.map(|c| (c, c.result.as_ref())) else {
        let reasons = results
            .iter()
            .filter_map(|c| c.result.as_ref().err().map(|e| format!("{}: {e}", c.variant)))
            .take(3)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(TuneError::AllCandidatesFailed { signature: sig, reasons: if reasons.is_empty() { "no applicable candidates".into() } else { reasons } });
    };
    Ok(SweepResult {
        record: TuneRecord { signature: sig, variant: c.variant, params: c.params, cost: s.cost, objective: objective_tag(op, cfg).into() },
        counters: s.counters,
        max_rel_err: s.max_rel_err,
        candidates: results.clone(),
    })
}

/// Operation descriptions of every non-input node, in node order.
pub fn graph_ops(g: &ComputeGraph) -> Result<Vec<(String, OpDesc)>, GenError> {
    g.nodes.iter().filter(|n| n.kind != OpKind::Input).map(|n| Ok((n.name.clone(), OpDesc::from_node(n, &g.edges)?))).collect()
}

/// Sweeps each distinct operation signature of `g` once.
pub fn tune_all(g: &ComputeGraph, cfg: &SweepConfig) -> Result<TuneDb, TuneError> {
    let mut db = TuneDb::new();
    let mut seen = std::collections::BTreeSet::new();
    for (_, op) in graph_ops(g)? {
        if seen.insert(signature(&op)) {
            db.insert(sweep(&op, cfg)?.record);
        }
    }
    Ok(db)
}

/// The fallback's cost under the same scoring as a sweep.
pub fn fallback_cost(op: &OpDesc, cfg: &SweepConfig) -> Result<f64, TuneError> {
    let v = match op {
        OpDesc::Conv(_) => Variant::ConvSimple,
        other => other.applicable(&TuneParams::default())[0],
    };
    match evaluate(v, None, op, cfg).result {
        Ok(s) => Ok(s.cost),
        Err(reasons) => Err(TuneError::AllCandidatesFailed { signature: signature(op), reasons }),
    }
}

/// Dense canonical dims helper for callers building ops by hand.
pub fn conv_input_dims(b: usize, c: usize, y: usize, x: usize) -> DimsSpec {
    canonical(&[b, c, y, x])
}
