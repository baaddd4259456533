//! Barrier-phased interpreter for compiled kernels.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::compile::*;
use super::{CostReport, ExecError, LaunchConfig};

/// Per-thread cap on loop back-edges.
pub const ITERATION_CAP: u64 = 1 << 24;

/// Order in which threads of a workgroup run within each barrier phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThreadOrder {
    #[default]
    Ascending,
    /// A seeded permutation, redrawn for every phase of every workgroup.
    Shuffled(u64),
}

#[derive(Default)]
struct Counters {
    alu: u64,
    gl: u64,
    gs: u64,
    ll: u64,
    ls: u64,
    bar: u64,
}

struct Thread {
    pc: usize,
    iters: u64,
    ints: Vec<i64>,
    flts: Vec<f32>,
}

enum Stop {
    Barrier(u32),
    End,
}

impl Thread {
    fn new(p: &Program) -> Self {
        Thread { pc: 0, iters: 0, ints: vec![0; p.n_int], flts: vec![0.0; p.n_flt] }
    }

    fn reset(&mut self, local: usize, group: usize, size: usize) {
        self.pc = 0;
        self.iters = 0;
        self.ints.fill(0);
        self.flts.fill(0.0);
        self.ints[REG_LOCAL_ID as usize] = local as i64;
        self.ints[REG_GROUP_ID as usize] = group as i64;
        self.ints[REG_LOCAL_SIZE as usize] = size as i64;
        self.ints[REG_GLOBAL_ID as usize] = (group * size + local) as i64;
    }
}

#[inline]
fn span(name: &str, idx: i64, w: u8, len: usize) -> Result<usize, ExecError> {
    let w = w as usize;
    if idx < 0 || (idx as usize).saturating_add(1).saturating_mul(w) > len {
        return Err(ExecError::OutOfBoundsAccess { buffer: name.to_string(), offset: idx, len: len / w });
    }
    Ok(idx as usize * w)
}

#[inline]
fn ibin(op: IOp, a: i64, b: i64) -> Result<i64, ExecError> {
    fold_int(op, a, b).ok_or(ExecError::DivisionByZero)
}

#[inline]
fn fbin(op: FOp, a: f32, b: f32) -> f32 {
    match op {
        FOp::Add => a + b,
        FOp::Sub => a - b,
        FOp::Mul => a * b,
        FOp::Div => a / b,
        FOp::Max => a.max(b),
        FOp::Min => a.min(b),
    }
}

fn run_thread(
    p: &Program,
    th: &mut Thread,
    bufs: &mut [Vec<f32>],
    locals: &mut [Vec<f32>],
    c: &mut Counters,
) -> Result<Stop, ExecError> {
    let code = &p.code[..];
    let mut pc = th.pc;
    let ints = &mut th.ints[..];
    let flts = &mut th.flts[..];
    loop {
        let op = code[pc];
        pc += 1;
        match op {
            Op::IConst { d, v } => ints[d as usize] = v,
            Op::IMov { d, s } => ints[d as usize] = ints[s as usize],
            Op::IBin { op, d, a, b } => {
                c.alu += 1;
                ints[d as usize] = ibin(op, ints[a as usize], ints[b as usize])?;
            }
            Op::IBinImm { op, d, a, imm } => {
                c.alu += 1;
                ints[d as usize] = ibin(op, ints[a as usize], imm)?;
            }
            Op::IImmBin { op, d, imm, a } => {
                c.alu += 1;
                ints[d as usize] = ibin(op, imm, ints[a as usize])?;
            }
            Op::INeg { d, a } => {
                c.alu += 1;
                ints[d as usize] = ints[a as usize].wrapping_neg();
            }
            Op::INot { d, a } => {
                c.alu += 1;
                ints[d as usize] = (ints[a as usize] == 0) as i64;
            }
            Op::FConst { d, v } => flts[d as usize] = v,
            Op::FMov { d, s, w } => {
                for k in 0..w as usize {
                    flts[d as usize + k] = flts[s as usize + k];
                }
            }
            Op::FBin { op, d, a, b, w } => {
                c.alu += 1;
                for k in 0..w as usize {
                    flts[d as usize + k] = fbin(op, flts[a as usize + k], flts[b as usize + k]);
                }
            }
            Op::FCmp { op, d, a, b } => {
                c.alu += 1;
                let (x, y) = (flts[a as usize], flts[b as usize]);
                ints[d as usize] = match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                } as i64;
            }
            Op::FNeg { d, a, w } => {
                c.alu += 1;
                for k in 0..w as usize {
                    flts[d as usize + k] = -flts[a as usize + k];
                }
            }
            Op::FNot { d, a } => {
                c.alu += 1;
                ints[d as usize] = (flts[a as usize] == 0.0) as i64;
            }
            Op::Fma { d, a, b, cc, w } => {
                c.alu += 1;
                for k in 0..w as usize {
                    flts[d as usize + k] = flts[a as usize + k].mul_add(flts[b as usize + k], flts[cc as usize + k]);
                }
            }
            Op::IToF { d, s } => {
                c.alu += 1;
                flts[d as usize] = ints[s as usize] as f32;
            }
            Op::LdG { d, buf, idx, w } => {
                c.gl += 1;
                let b = &bufs[buf as usize];
                let at = span(&p.bufs[buf as usize].name, ints[idx as usize], w, b.len())?;
                flts[d as usize..d as usize + w as usize].copy_from_slice(&b[at..at + w as usize]);
            }
            Op::StG { buf, idx, s, w } => {
                c.gs += 1;
                let b = &mut bufs[buf as usize];
                let at = span(&p.bufs[buf as usize].name, ints[idx as usize], w, b.len())?;
                b[at..at + w as usize].copy_from_slice(&flts[s as usize..s as usize + w as usize]);
            }
            Op::LdL { d, arr, idx, w } => {
                c.ll += 1;
                let b = &locals[arr as usize];
                let at = span("LOCAL_MEM", ints[idx as usize], w, b.len())?;
                flts[d as usize..d as usize + w as usize].copy_from_slice(&b[at..at + w as usize]);
            }
            Op::StL { arr, idx, s, w } => {
                c.ls += 1;
                let b = &mut locals[arr as usize];
                let at = span("LOCAL_MEM", ints[idx as usize], w, b.len())?;
                b[at..at + w as usize].copy_from_slice(&flts[s as usize..s as usize + w as usize]);
            }
            Op::Jmp { t } => pc = t as usize,
            Op::Jz { c: r, t } => {
                if ints[r as usize] == 0 {
                    pc = t as usize;
                }
            }
            Op::Loop { t } => {
                th.iters += 1;
                if th.iters > ITERATION_CAP {
                    return Err(ExecError::NonTerminating);
                }
                pc = t as usize;
            }
            Op::Barrier { site } => {
                c.bar += 1;
                th.pc = pc;
                return Ok(Stop::Barrier(site));
            }
            Op::End => {
                th.pc = pc - 1;
                return Ok(Stop::End);
            }
        }
    }
}

/// Runs a compiled program over `bufs` (one flat float vector per kernel
/// parameter, in parameter order).
pub fn execute(
    p: &Program,
    launch: LaunchConfig,
    bufs: &mut [Vec<f32>],
    order: ThreadOrder,
) -> Result<CostReport, ExecError> {
    launch.validate()?;
    if bufs.len() != p.bufs.len() {
        return Err(ExecError::Compile(format!("expected {} buffers, got {}", p.bufs.len(), bufs.len())));
    }
    for (info, b) in p.bufs.iter().zip(bufs.iter()) {
        if b.len() % info.width as usize != 0 {
            return Err(ExecError::MisalignedVectorAccess {
                buffer: info.name.clone(),
                len: b.len(),
                width: info.width as usize,
            });
        }
    }
    let start = Instant::now();
    let mut c = Counters::default();
    let mut locals: Vec<Vec<f32>> = p.locals.iter().map(|l| vec![0.0; l.floats]).collect();
    let n = launch.local_size;
    let mut rng = match order {
        ThreadOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        ThreadOrder::Ascending => None,
    };
    if !p.has_barrier && rng.is_none() {
        // no phases: one thread at a time, reusing a single register file
        let mut th = Thread::new(p);
        for g in 0..launch.group_count {
            for l in locals.iter_mut() {
                l.fill(0.0);
            }
            for t in 0..n {
                th.reset(t, g, n);
                run_thread(p, &mut th, bufs, &mut locals, &mut c)?;
            }
        }
    } else {
        let mut threads: Vec<Thread> = (0..n).map(|_| Thread::new(p)).collect();
        let mut order_buf: Vec<usize> = (0..n).collect();
        let mut stops: Vec<Option<u32>> = vec![None; n];
        for g in 0..launch.group_count {
            for l in locals.iter_mut() {
                l.fill(0.0);
            }
            for (t, th) in threads.iter_mut().enumerate() {
                th.reset(t, g, n);
            }
            loop {
                if let Some(r) = rng.as_mut() {
                    order_buf.shuffle(r);
                }
                for &t in &order_buf {
                    stops[t] = match run_thread(p, &mut threads[t], bufs, &mut locals, &mut c)? {
                        Stop::Barrier(s) => Some(s),
                        Stop::End => None,
                    };
                }
                let first = stops[0];
                if let Some(t) = stops.iter().position(|s| *s != first) {
                    return Err(ExecError::BarrierDivergence {
                        group: g,
                        detail: format!("thread 0 at {}, thread {t} at {}", site_name(first), site_name(stops[t])),
                    });
                }
                if first.is_none() {
                    break;
                }
            }
        }
    }
    Ok(CostReport {
        alu_ops: c.alu,
        global_loads: c.gl,
        global_stores: c.gs,
        local_loads: c.ll,
        local_stores: c.ls,
        barriers: c.bar,
        wall_ns: start.elapsed().as_nanos() as u64,
    })
}

fn site_name(s: Option<u32>) -> String {
    match s {
        Some(s) => format!("barrier #{s}"),
        None => "end".to_string(),
    }
}
