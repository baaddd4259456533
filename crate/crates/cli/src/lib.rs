//! `cucl` subcommands. Each writes its report to the given writer so tests
//! can drive them in-process.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cucl_core::backend::{cost, emit_file_name, CostWeights};
use cucl_core::corpus::{appendix_a, parse_corpus, self_check, CorpusError, CorpusRow};
use cucl_core::cucl::{dialect_diff, Dialect, InstMode};
use cucl_core::frontend::{parse_net, ComputeGraph, FrontendError};
use cucl_core::graphopt::fuse_activations;
use cucl_core::pipeline::{check_against_reference, checksum, compile_graph, graph_inputs, PipelineOptions};
use cucl_core::tuner::{downscale, graph_ops, signature, sweep, validate, Objective, SweepConfig, TuneDb, TuneError, TuneSpace};
use cucl_core::variants::{generate, select_variant, OpDesc};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "cucl", version, about = "Specialize, tune and run convolution kernels on a simulated GPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score the chosen kernel for each corpus convolution.
    Bench(BenchArgs),
    /// Sweep kernel candidates and write the best per operation to a database.
    Tune(TuneArgs),
    /// Execute a network with seeded inputs.
    Run(RunArgs),
    /// Write the generated kernel source of each network node.
    Emit(EmitArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveArg {
    Model,
    Wall,
}

impl ObjectiveArg {
    fn objective(self) -> Objective {
        match self {
            ObjectiveArg::Model => Objective::model(),
            ObjectiveArg::Wall => Objective::WallClock,
        }
    }

    fn weights(self) -> CostWeights {
        match self {
            ObjectiveArg::Model => CostWeights::default(),
            ObjectiveArg::Wall => CostWeights::wall_clock(),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DialectArg {
    Opencl,
    Cuda,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceArg {
    /// The full default parameter grid.
    Default,
    /// Only the default parameter point per variant.
    Manual,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    /// Corpus CSV; the built-in table when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Model)]
    pub objective: ObjectiveArg,
    /// Fraction of each op's FLOPs to keep (0 < R <= 1).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Run each kernel and compare it with the reference implementation.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TuneArgs {
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Existing database to merge into.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Where to write the database.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SpaceArg::Default)]
    pub space: SpaceArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Model)]
    pub objective: ObjectiveArg,
    /// Corpus ops only: fraction of FLOPs to keep.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Ops up to this many FLOPs are scored by interpretation.
    #[arg(long, default_value_t = cucl_core::tuner::TWIN_FLOPS)]
    pub interp_flops: u64,
    /// FLOP budget of the twin larger ops are validated on.
    #[arg(long, default_value_t = cucl_core::tuner::TWIN_FLOPS)]
    pub twin_flops: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-check every sink against the reference implementation.
    #[arg(long)]
    pub check: bool,
    /// Keep activations as separate kernels.
    #[arg(long)]
    pub no_fuse: bool,
    /// Read sizes and strides from a metadata argument instead of constants.
    #[arg(long)]
    pub dynamic: bool,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Model)]
    pub objective: ObjectiveArg,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EmitArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long, value_enum, default_value_t = DialectArg::Both)]
    pub dialect: DialectArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub dynamic: bool,
}

/// Bad or unreadable input (exit 3).
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// A kernel disagreed with the reference, or a check failed (exit 2).
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for c in e.chain() {
        if c.is::<ValidationFailed>() {
            return EXIT_VALIDATION;
        }
        if c.is::<InputError>() || c.is::<FrontendError>() || c.is::<CorpusError>() {
            return EXIT_PARSE;
        }
        if let Some(TuneError::FormatVersionMismatch { .. }) = c.downcast_ref::<TuneError>() {
            return EXIT_PARSE;
        }
    }
    EXIT_INTERNAL
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Bench(a) => cmd_bench(a, out),
        Command::Tune(a) => cmd_tune(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Emit(a) => cmd_emit(a, out),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())).into())
}

fn load_corpus(path: Option<&Path>) -> Result<Vec<CorpusRow>> {
    let rows = match path {
        Some(p) => parse_corpus(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => appendix_a(),
    };
    self_check(&rows).context("corpus self-check")?;
    Ok(rows)
}

fn load_net(path: &Path) -> Result<ComputeGraph> {
    parse_net(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_db(path: Option<&Path>) -> Result<Option<TuneDb>> {
    path.map(|p| TuneDb::load(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(InputError(format!("--scale must be in (0, 1], got {scale}")).into());
    }
    Ok(())
}

/// Corpus ops shrunk to `scale` of their FLOPs.
fn corpus_ops(rows: &[CorpusRow], scale: f64) -> Result<Vec<OpDesc>> {
    check_scale(scale)?;
    rows.iter()
        .map(|r| {
            let op = r.conv_op()?;
            let op = if scale < 1.0 { downscale(&op, ((op.flops() as f64) * scale) as u64) } else { op };
            Ok(OpDesc::Conv(op))
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 7] = ["signature", "variant", "params", "cost", "objective", "oracle", "max_rel_err"];

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let rows = load_corpus(a.corpus.as_deref())?;
    let db = load_db(a.db.as_deref())?;
    let ops = corpus_ops(&rows, a.scale)?;
    let weights = a.objective.weights();
    let mut buf = csv::Writer::from_writer(Vec::new());
    buf.write_record(REPORT_HEADER)?;
    let mut failed = Vec::new();
    for op in &ops {
        let sig = signature(op);
        let (v, t) = select_variant(op, db.as_ref());
        let params = t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        let (c, objective, oracle, err) = if a.check || a.objective == ObjectiveArg::Wall {
            match validate(v, t.as_ref(), op, a.seed) {
                Ok((counters, err)) => (cost(&counters, &weights), "interp", "pass", format!("{err:e}")),
                Err(msg) => {
                    failed.push(format!("{sig}: {msg}"));
                    (f64::NAN, "interp", "fail", String::new())
                }
            }
        } else {
            let plan = generate(v, op, t.as_ref(), InstMode::Static)?;
            (cost(&plan.estimate()?, &weights), "static", "skip", String::new())
        };
        let objective = format!("{}:{objective}", if a.objective == ObjectiveArg::Model { "model" } else { "wall" });
        buf.write_record([sig, v.to_string(), params, c.to_string(), objective, oracle.to_string(), err])?;
    }
    let bytes = buf.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    match &a.out {
        Some(p) => std::fs::write(p, &bytes).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(&bytes)?,
    }
    if !failed.is_empty() {
        bail!(ValidationFailed(format!("{} op(s) failed the oracle check: {}", failed.len(), failed.join("; "))));
    }
    Ok(())
}

pub fn cmd_tune(a: &TuneArgs, out: &mut dyn Write) -> Result<()> {
    let ops: Vec<OpDesc> = match (&a.net, &a.corpus) {
        (Some(net), _) => {
            let g = fuse_activations(&load_net(net)?);
            graph_ops(&g)?.into_iter().map(|(_, op)| op).collect()
        }
        (None, Some(c)) => corpus_ops(&load_corpus(Some(c))?, a.scale)?,
        (None, None) => bail!(InputError("one of --net or --corpus is required".into())),
    };
    let cfg = SweepConfig {
        space: match a.space {
            SpaceArg::Default => TuneSpace::default(),
            SpaceArg::Manual => TuneSpace::manual(),
        },
        objective: a.objective.objective(),
        twin_flops: a.twin_flops,
        interp_flops: a.interp_flops,
        seed: a.seed,
        jobs: a.jobs,
    };
    let mut db = load_db(a.db.as_deref())?.unwrap_or_default();
    let mut seen = BTreeSet::new();
    for op in ops {
        let sig = signature(&op);
        if !seen.insert(sig.clone()) {
            continue;
        }
        let r = sweep(&op, &cfg)?;
        let rec = &r.record;
        let params = rec.params.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{sig} {} {params} cost={} ({})", rec.variant, rec.cost, rec.objective)?;
        db.insert(r.record);
    }
    db.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "wrote {} record(s) to {}", db.len(), a.out.display())?;
    Ok(())
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_net(&a.net)?;
    let db = load_db(a.db.as_deref())?;
    let opts = PipelineOptions { fuse: !a.no_fuse, mode: if a.dynamic { InstMode::Dynamic } else { InstMode::Static } };
    let compiled = compile_graph(&g, db.as_ref(), opts)?;
    let inputs = graph_inputs(&g, a.seed)?;
    let r = compiled.run(&inputs, &a.objective.weights())?;
    let mut report = String::new();
    for n in &r.nodes {
        report.push_str(&format!("node {} {} cost={}\n", n.node, n.label, n.cost));
    }
    let total: f64 = r.nodes.iter().map(|n| n.cost).sum();
    report.push_str(&format!("total cost={total}\n"));
    for s in &r.sinks {
        let v = r.sink(s).context("missing sink")?;
        report.push_str(&format!("sink {s} {} {:016x}\n", v.dims(), checksum(v)));
    }
    let mut failed = Vec::new();
    if a.check {
        for (s, c) in check_against_reference(&g, &inputs, &r)? {
            report.push_str(&format!("check {s} {} max_rel_err={:e}\n", if c.pass { "pass" } else { "fail" }, c.max_rel_err));
            if !c.pass {
                failed.push(s);
            }
        }
    }
    out.write_all(report.as_bytes())?;
    if let Some(p) = &a.out {
        std::fs::write(p, &report).with_context(|| format!("writing {}", p.display()))?;
    }
    if !failed.is_empty() {
        bail!(ValidationFailed(format!("sinks differ from the reference: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn cmd_emit(a: &EmitArgs, out: &mut dyn Write) -> Result<()> {
    let g = load_net(&a.net)?;
    let db = load_db(a.db.as_deref())?;
    let mode = if a.dynamic { InstMode::Dynamic } else { InstMode::Static };
    let compiled = compile_graph(&g, db.as_ref(), PipelineOptions { fuse: true, mode })?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let dialects: &[Dialect] = match a.dialect {
        DialectArg::Opencl => &[Dialect::OpenCl],
        DialectArg::Cuda => &[Dialect::Cuda],
        DialectArg::Both => &Dialect::ALL,
    };
    let mut bad = Vec::new();
    for name in compiled.schedule.iter().filter(|n| compiled.plans.contains_key(*n)) {
        let plan = &compiled.plans[name];
        let sig = signature(&OpDesc::from_node(compiled.graph.node(name).expect("scheduled"), &compiled.graph.edges)?);
        let tag = format!("{}{}", plan.file_tag(), if a.dynamic { "-dyn" } else { "" });
        let mut srcs = Vec::new();
        for &d in dialects {
            let src = plan.emit(d)?;
            let file = emit_file_name(&sig, &tag, d);
            std::fs::write(a.out.join(&file), &src).with_context(|| format!("writing {file}"))?;
            writeln!(out, "wrote {file}")?;
            srcs.push(src);
        }
        if let [cl, cu] = &srcs[..] {
            let d = dialect_diff(cl, cu);
            writeln!(out, "diff {name}: {} idiom line(s), {} other", d.idiom_lines, d.other_lines.len())?;
            if !d.other_lines.is_empty() {
                bad.push(format!("{name} (lines {:?})", d.other_lines));
            }
        }
    }
    if !bad.is_empty() {
        bail!(ValidationFailed(format!("dialects differ outside idiom sites: {}", bad.join(", "))));
    }
    Ok(())
}
