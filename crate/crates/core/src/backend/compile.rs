//! Lowers [`KernelIr`] to register bytecode for the VM.
//!
//! Metadata fields are launch constants, so they are folded in at compile
//! time exactly like the literals of a static instantiation.

use std::collections::HashMap;

use super::ExecError;
use crate::cucl::ir::*;

pub(crate) type Reg = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    IConst { d: Reg, v: i64 },
    IMov { d: Reg, s: Reg },
    IBin { op: IOp, d: Reg, a: Reg, b: Reg },
    IBinImm { op: IOp, d: Reg, a: Reg, imm: i64 },
    /// `imm op a`, for non-commutative ops with a constant left side.
    IImmBin { op: IOp, d: Reg, imm: i64, a: Reg },
    INeg { d: Reg, a: Reg },
    INot { d: Reg, a: Reg },
    FConst { d: Reg, v: f32 },
    FMov { d: Reg, s: Reg, w: u8 },
    FBin { op: FOp, d: Reg, a: Reg, b: Reg, w: u8 },
    FCmp { op: CmpOp, d: Reg, a: Reg, b: Reg },
    FNeg { d: Reg, a: Reg, w: u8 },
    FNot { d: Reg, a: Reg },
    Fma { d: Reg, a: Reg, b: Reg, cc: Reg, w: u8 },
    IToF { d: Reg, s: Reg },
    LdG { d: Reg, buf: u32, idx: Reg, w: u8 },
    StG { buf: u32, idx: Reg, s: Reg, w: u8 },
    LdL { d: Reg, arr: u32, idx: Reg, w: u8 },
    StL { arr: u32, idx: Reg, s: Reg, w: u8 },
    Jmp { t: u32 },
    Jz { c: Reg, t: u32 },
    /// Loop back-edge; counts one iteration against the cap.
    Loop { t: u32 },
    Barrier { site: u32 },
    End,
}

impl Op {
    fn float_width(&self) -> Option<u8> {
        match *self {
            Op::FBin { w, .. } | Op::FNeg { w, .. } | Op::Fma { w, .. } | Op::LdG { w, .. } | Op::LdL { w, .. } => Some(w),
            Op::IToF { .. } => Some(1),
            _ => None,
        }
    }

    fn dest_mut(&mut self) -> Option<&mut Reg> {
        match self {
            Op::IBin { d, .. }
            | Op::IBinImm { d, .. }
            | Op::IImmBin { d, .. }
            | Op::INeg { d, .. }
            | Op::INot { d, .. }
            | Op::FCmp { d, .. }
            | Op::FNot { d, .. }
            | Op::IToF { d, .. } => Some(d),
            Op::FBin { d, .. } | Op::FNeg { d, .. } | Op::Fma { d, .. } | Op::LdG { d, .. } | Op::LdL { d, .. } => {
                Some(d)
            }
            _ => None,
        }
    }
}

pub(crate) const REG_LOCAL_ID: Reg = 0;
pub(crate) const REG_GROUP_ID: Reg = 1;
pub(crate) const REG_LOCAL_SIZE: Reg = 2;
pub(crate) const REG_GLOBAL_ID: Reg = 3;
const FIRST_FREE_INT: Reg = 4;

#[derive(Debug, Clone)]
pub(crate) struct BufInfo {
    pub name: String,
    pub width: u8,
    pub writable: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct LocalInfo {
    pub width: u8,
    /// In floats.
    pub floats: usize,
}

/// Executable form of a kernel.
#[derive(Debug, Clone)]
pub struct Program {
    pub(crate) code: Vec<Op>,
    pub(crate) n_int: usize,
    pub(crate) n_flt: usize,
    pub(crate) bufs: Vec<BufInfo>,
    pub(crate) locals: Vec<LocalInfo>,
    pub(crate) has_barrier: bool,
}

impl Program {
    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.bufs.iter().map(|b| b.name.as_str())
    }

    pub fn instruction_count(&self) -> usize {
        self.code.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Var {
    Int(Reg),
    Flt(Reg, u8),
    Buf(u32),
    Local(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    I(Reg),
    F(Reg, u8),
    CI(i64),
    CF(f32),
}

impl Val {
    fn ty(self) -> Ty {
        match self {
            Val::I(_) | Val::CI(_) => Ty::Int,
            Val::F(_, w) => Ty::Float(w),
            Val::CF(_) => Ty::Float(1),
        }
    }
}

struct Compiler<'a> {
    code: Vec<Op>,
    scopes: Vec<HashMap<String, Var>>,
    next_int: Reg,
    next_flt: Reg,
    max_int: Reg,
    max_flt: Reg,
    meta: &'a HashMap<String, i64>,
    bufs: Vec<BufInfo>,
    locals: Vec<LocalInfo>,
    barrier_sites: u32,
    /// Registers at or above these marks are statement temporaries.
    temp_int_base: Reg,
    temp_flt_base: Reg,
}

fn cerr<T>(msg: impl Into<String>) -> Result<T, ExecError> {
    Err(ExecError::Compile(msg.into()))
}

impl<'a> Compiler<'a> {
    fn lookup(&self, name: &str) -> Result<Var, ExecError> {
        for s in self.scopes.iter().rev() {
            if let Some(v) = s.get(name) {
                return Ok(*v);
            }
        }
        cerr(format!("undeclared identifier `{name}`"))
    }

    fn declare(&mut self, name: &str, v: Var) -> Result<(), ExecError> {
        let scope = self.scopes.last_mut().expect("scope");
        if scope.insert(name.to_string(), v).is_some() {
            return cerr(format!("redeclaration of `{name}`"));
        }
        Ok(())
    }

    fn int_reg(&mut self) -> Reg {
        let r = self.next_int;
        self.next_int += 1;
        self.max_int = self.max_int.max(self.next_int);
        r
    }

    fn flt_reg(&mut self, w: u8) -> Reg {
        let r = self.next_flt;
        self.next_flt += w as Reg;
        self.max_flt = self.max_flt.max(self.next_flt);
        r
    }

    fn emit(&mut self, op: Op) -> usize {
        self.code.push(op);
        self.code.len() - 1
    }

    fn patch(&mut self, at: usize, target: usize) {
        match &mut self.code[at] {
            Op::Jmp { t } | Op::Jz { t, .. } | Op::Loop { t } => *t = target as u32,
            _ => unreachable!("patching a non-jump"),
        }
    }

    fn ireg(&mut self, v: Val) -> Result<Reg, ExecError> {
        match v {
            Val::I(r) => Ok(r),
            Val::CI(c) => {
                let r = self.int_reg();
                self.emit(Op::IConst { d: r, v: c });
                Ok(r)
            }
            _ => cerr("expected an int expression"),
        }
    }

    /// Float register of width `w`; ints are converted, scalars stay scalar.
    fn freg(&mut self, v: Val) -> Result<(Reg, u8), ExecError> {
        match v {
            Val::F(r, w) => Ok((r, w)),
            Val::CF(c) => {
                let r = self.flt_reg(1);
                self.emit(Op::FConst { d: r, v: c });
                Ok((r, 1))
            }
            Val::CI(c) => {
                let r = self.flt_reg(1);
                self.emit(Op::FConst { d: r, v: c as f32 });
                Ok((r, 1))
            }
            Val::I(s) => {
                let r = self.flt_reg(1);
                self.emit(Op::IToF { d: r, s });
                Ok((r, 1))
            }
        }
    }

    fn type_of(&self, e: &Expr) -> Result<Ty, ExecError> {
        Ok(match e {
            Expr::Int(_) | Expr::Builtin(_) | Expr::Meta(_) => Ty::Int,
            Expr::Float(_) => Ty::Float(1),
            Expr::Var(n) => match self.lookup(n)? {
                Var::Int(_) => Ty::Int,
                Var::Flt(_, w) => Ty::Float(w),
                _ => return cerr(format!("array `{n}` used as a value")),
            },
            Expr::Index(n, _) => match self.lookup(n)? {
                Var::Buf(b) => Ty::Float(self.bufs[b as usize].width),
                Var::Local(l) => Ty::Float(self.locals[l as usize].width),
                _ => return cerr(format!("`{n}` is not an array")),
            },
            Expr::Comp(..) => Ty::Float(1),
            Expr::Unary(UnOp::Not, _) => Ty::Int,
            Expr::Unary(UnOp::Neg, a) => self.type_of(a)?,
            Expr::Binary(op, a, b) => {
                if op.is_comparison() || matches!(op, BinOp::And | BinOp::Or) {
                    Ty::Int
                } else {
                    join(self.type_of(a)?, self.type_of(b)?)?
                }
            }
            Expr::Ternary(_, a, b) => join(self.type_of(a)?, self.type_of(b)?)?,
            Expr::Call(_, args) => {
                let mut t = Ty::Float(1);
                for a in args {
                    t = join(t, self.type_of(a)?)?;
                }
                t
            }
        })
    }

    fn expr(&mut self, e: &Expr) -> Result<Val, ExecError> {
        if let Some(c) = e.const_int() {
            return Ok(Val::CI(c));
        }
        match e {
            Expr::Int(v) => Ok(Val::CI(*v)),
            Expr::Float(v) => Ok(Val::CF(*v)),
            Expr::Var(n) => match self.lookup(n)? {
                Var::Int(r) => Ok(Val::I(r)),
                Var::Flt(r, w) => Ok(Val::F(r, w)),
                _ => cerr(format!("array `{n}` used as a value")),
            },
            Expr::Builtin(b) => Ok(Val::I(match b {
                Builtin::LocalId => REG_LOCAL_ID,
                Builtin::GroupId => REG_GROUP_ID,
                Builtin::LocalSize => REG_LOCAL_SIZE,
                Builtin::GlobalId => REG_GLOBAL_ID,
            })),
            Expr::Meta(f) => match self.meta.get(f) {
                Some(v) => Ok(Val::CI(*v)),
                None => Err(ExecError::MissingMeta(f.clone())),
            },
            Expr::Index(n, idx) => {
                let iv = self.expr(idx)?;
                let ir = self.ireg(iv)?;
                match self.lookup(n)? {
                    Var::Buf(b) => {
                        let w = self.bufs[b as usize].width;
                        let d = self.flt_reg(w);
                        self.emit(Op::LdG { d, buf: b, idx: ir, w });
                        Ok(Val::F(d, w))
                    }
                    Var::Local(l) => {
                        let w = self.locals[l as usize].width;
                        let d = self.flt_reg(w);
                        self.emit(Op::LdL { d, arr: l, idx: ir, w });
                        Ok(Val::F(d, w))
                    }
                    _ => cerr(format!("`{n}` is not an array")),
                }
            }
            Expr::Comp(inner, c) => match self.expr(inner)? {
                Val::F(r, w) if *c < w => Ok(Val::F(r + *c as Reg, 1)),
                Val::F(_, w) => cerr(format!("component {c} out of range for width {w}")),
                _ => cerr("component access on a non-vector"),
            },
            Expr::Unary(op, a) => {
                let v = self.expr(a)?;
                match (op, v) {
                    (UnOp::Neg, Val::CF(c)) => Ok(Val::CF(-c)),
                    (UnOp::Neg, Val::I(r)) => {
                        let d = self.int_reg();
                        self.emit(Op::INeg { d, a: r });
                        Ok(Val::I(d))
                    }
                    (UnOp::Neg, Val::F(r, w)) => {
                        let d = self.flt_reg(w);
                        self.emit(Op::FNeg { d, a: r, w });
                        Ok(Val::F(d, w))
                    }
                    (UnOp::Not, Val::CF(c)) => Ok(Val::CI((c == 0.0) as i64)),
                    (UnOp::Not, Val::I(r)) => {
                        let d = self.int_reg();
                        self.emit(Op::INot { d, a: r });
                        Ok(Val::I(d))
                    }
                    (UnOp::Not, Val::F(r, 1)) => {
                        let d = self.int_reg();
                        self.emit(Op::FNot { d, a: r });
                        Ok(Val::I(d))
                    }
                    (UnOp::Not, Val::CI(c)) => Ok(Val::CI((c == 0) as i64)),
                    (UnOp::Neg, Val::CI(c)) => Ok(Val::CI(-c)),
                    _ => cerr("logical not of a vector"),
                }
            }
            Expr::Binary(op @ (BinOp::And | BinOp::Or), a, b) => {
                let d = self.int_reg();
                let av = self.expr(a)?;
                let ar = self.truth(av)?;
                // d = a ? (b != 0) : 0 for &&, d = a ? 1 : (b != 0) for ||
                let jz = self.emit(Op::Jz { c: ar, t: 0 });
                if *op == BinOp::And {
                    let bv = self.expr(b)?;
                    let br = self.truth(bv)?;
                    self.emit(Op::IBinImm { op: IOp::Ne, d, a: br, imm: 0 });
                    let j = self.emit(Op::Jmp { t: 0 });
                    let here = self.code.len();
                    self.patch(jz, here);
                    self.emit(Op::IConst { d, v: 0 });
                    let end = self.code.len();
                    self.patch(j, end);
                } else {
                    self.emit(Op::IConst { d, v: 1 });
                    let j = self.emit(Op::Jmp { t: 0 });
                    let here = self.code.len();
                    self.patch(jz, here);
                    let bv = self.expr(b)?;
                    let br = self.truth(bv)?;
                    self.emit(Op::IBinImm { op: IOp::Ne, d, a: br, imm: 0 });
                    let end = self.code.len();
                    self.patch(j, end);
                }
                Ok(Val::I(d))
            }
            Expr::Binary(op, a, b) => {
                let av = self.expr(a)?;
                let bv = self.expr(b)?;
                self.binary(*op, av, bv)
            }
            Expr::Ternary(c, a, b) => {
                let ty = self.type_of(e)?;
                let cv = self.expr(c)?;
                if let Val::CI(k) = cv {
                    return self.expr(if k != 0 { a } else { b });
                }
                let cr = self.truth(cv)?;
                let dest = match ty {
                    Ty::Int => Val::I(self.int_reg()),
                    Ty::Float(w) => Val::F(self.flt_reg(w), w),
                };
                let jz = self.emit(Op::Jz { c: cr, t: 0 });
                let av = self.expr(a)?;
                self.move_into(dest, av)?;
                let j = self.emit(Op::Jmp { t: 0 });
                let here = self.code.len();
                self.patch(jz, here);
                let bv = self.expr(b)?;
                self.move_into(dest, bv)?;
                let end = self.code.len();
                self.patch(j, end);
                Ok(dest)
            }
            Expr::Call(f, args) => {
                let mut regs = Vec::with_capacity(args.len());
                let mut w = 1u8;
                for a in args {
                    let v = self.expr(a)?;
                    let (r, rw) = self.freg(v)?;
                    if rw != 1 {
                        if w != 1 && w != rw {
                            return cerr("mismatched vector widths");
                        }
                        w = rw;
                    }
                    regs.push((r, rw));
                }
                if regs.iter().any(|&(_, rw)| rw != w) {
                    return cerr("intrinsic arguments must share one vector width");
                }
                let d = self.flt_reg(w);
                match f {
                    Intrinsic::Fma => self.emit(Op::Fma { d, a: regs[0].0, b: regs[1].0, cc: regs[2].0, w }),
                    Intrinsic::Fmax => self.emit(Op::FBin { op: FOp::Max, d, a: regs[0].0, b: regs[1].0, w }),
                    Intrinsic::Fmin => self.emit(Op::FBin { op: FOp::Min, d, a: regs[0].0, b: regs[1].0, w }),
                };
                Ok(Val::F(d, w))
            }
        }
    }

    fn truth(&mut self, v: Val) -> Result<Reg, ExecError> {
        match v {
            Val::F(r, 1) => {
                let z = self.flt_reg(1);
                self.emit(Op::FConst { d: z, v: 0.0 });
                let d = self.int_reg();
                self.emit(Op::FCmp { op: CmpOp::Ne, d, a: r, b: z });
                Ok(d)
            }
            Val::CF(c) => self.ireg(Val::CI((c != 0.0) as i64)),
            Val::F(..) => cerr("vector used as a condition"),
            v => self.ireg(v),
        }
    }

    fn binary(&mut self, op: BinOp, a: Val, b: Val) -> Result<Val, ExecError> {
        let float = matches!(a.ty(), Ty::Float(_)) || matches!(b.ty(), Ty::Float(_));
        if !float {
            let iop = int_op(op);
            return Ok(match (a, b) {
                (Val::CI(x), Val::CI(y)) => Val::CI(fold_int(iop, x, y).ok_or(ExecError::DivisionByZero)?),
                (Val::I(x), Val::CI(y)) => {
                    if matches!(iop, IOp::Div | IOp::Rem) && y == 0 {
                        return Err(ExecError::DivisionByZero);
                    }
                    let d = self.int_reg();
                    self.emit(Op::IBinImm { op: iop, d, a: x, imm: y });
                    Val::I(d)
                }
                (Val::CI(x), Val::I(y)) => {
                    let d = self.int_reg();
                    match iop {
                        IOp::Add | IOp::Mul | IOp::Eq | IOp::Ne => self.emit(Op::IBinImm { op: iop, d, a: y, imm: x }),
                        _ => self.emit(Op::IImmBin { op: iop, d, imm: x, a: y }),
                    };
                    Val::I(d)
                }
                (x, y) => {
                    let (x, y) = (self.ireg(x)?, self.ireg(y)?);
                    let d = self.int_reg();
                    self.emit(Op::IBin { op: iop, d, a: x, b: y });
                    Val::I(d)
                }
            });
        }
        let (ar, aw) = self.freg(a)?;
        let (br, bw) = self.freg(b)?;
        if aw != bw {
            return cerr("mismatched vector widths in binary operation");
        }
        if op.is_comparison() {
            if aw != 1 {
                return cerr("vector comparison");
            }
            let d = self.int_reg();
            self.emit(Op::FCmp { op: cmp_op(op), d, a: ar, b: br });
            return Ok(Val::I(d));
        }
        let fop = match op {
            BinOp::Add => FOp::Add,
            BinOp::Sub => FOp::Sub,
            BinOp::Mul => FOp::Mul,
            BinOp::Div => FOp::Div,
            _ => return cerr("`%` on floats"),
        };
        let d = self.flt_reg(aw);
        self.emit(Op::FBin { op: fop, d, a: ar, b: br, w: aw });
        Ok(Val::F(d, aw))
    }

    /// Moves `v` into `dest`, retargeting the producing op when `v` is a
    /// fresh temporary.
    fn move_into(&mut self, dest: Val, v: Val) -> Result<(), ExecError> {
        match (dest, v) {
            (Val::I(d), Val::CI(c)) => {
                self.emit(Op::IConst { d, v: c });
            }
            (Val::I(d), Val::I(s)) => {
                if d != s && !self.retarget(s, d, self.temp_int_base, true, 1) {
                    self.emit(Op::IMov { d, s });
                }
            }
            (Val::F(d, 1), Val::CF(c)) => {
                self.emit(Op::FConst { d, v: c });
            }
            (Val::F(d, 1), Val::CI(c)) => {
                self.emit(Op::FConst { d, v: c as f32 });
            }
            (Val::F(d, 1), Val::I(s)) => {
                self.emit(Op::IToF { d, s });
            }
            (Val::F(d, w), Val::F(s, sw)) if w == sw => {
                if d != s && !self.retarget(s, d, self.temp_flt_base, false, w) {
                    self.emit(Op::FMov { d, s, w });
                }
            }
            (Val::F(_, w), _) => return cerr(format!("cannot assign to a float{w}")),
            (Val::I(_), _) => return cerr("cannot assign a float to an int"),
            _ => unreachable!("destinations are registers"),
        }
        Ok(())
    }

    fn retarget(&mut self, s: Reg, d: Reg, temp_base: Reg, int: bool, w: u8) -> bool {
        if s < temp_base {
            return false;
        }
        let Some(last) = self.code.last_mut() else { return false };
        let writes_int = matches!(
            last,
            Op::IBin { .. } | Op::IBinImm { .. } | Op::IImmBin { .. } | Op::INeg { .. } | Op::INot { .. } | Op::FCmp { .. } | Op::FNot { .. }
        );
        if writes_int != int || (!int && last.float_width() != Some(w)) {
            return false;
        }
        match last.dest_mut() {
            Some(r) if *r == s => {
                *r = d;
                true
            }
            _ => false,
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), ExecError> {
        self.scopes.push(HashMap::new());
        let (si, sf) = (self.next_int, self.next_flt);
        for s in stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        self.next_int = si;
        self.next_flt = sf;
        Ok(())
    }

    fn with_temps<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, ExecError>) -> Result<T, ExecError> {
        let (si, sf, bi, bf) = (self.next_int, self.next_flt, self.temp_int_base, self.temp_flt_base);
        self.temp_int_base = si;
        self.temp_flt_base = sf;
        let r = f(self);
        self.next_int = si;
        self.next_flt = sf;
        self.temp_int_base = bi;
        self.temp_flt_base = bf;
        r
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), ExecError> {
        match s {
            Stmt::Decl { ty, name, init } => {
                let v = match ty {
                    Ty::Int => Var::Int(self.int_reg()),
                    Ty::Float(w) => Var::Flt(self.flt_reg(*w), *w),
                };
                let dest = match v {
                    Var::Int(r) => Val::I(r),
                    Var::Flt(r, w) => Val::F(r, w),
                    _ => unreachable!(),
                };
                match init {
                    Some(e) => self.with_temps(|c| {
                        let val = c.expr(e)?;
                        c.move_into(dest, val)
                    })?,
                    None => match dest {
                        Val::I(d) => {
                            self.emit(Op::IConst { d, v: 0 });
                        }
                        Val::F(d, w) => {
                            for k in 0..w as Reg {
                                self.emit(Op::FConst { d: d + k, v: 0.0 });
                            }
                        }
                        _ => unreachable!(),
                    },
                }
                // declare after the initializer so `int x = x;` is rejected
                self.declare(name, v)
            }
            Stmt::Assign { target, op, value } => self.with_temps(|c| c.assign(target, *op, value)),
            Stmt::If { cond, then, els } => {
                let cv = self.with_temps(|c| {
                    let v = c.expr(cond)?;
                    match v {
                        Val::CI(k) => Ok(Err(k != 0)),
                        Val::CF(k) => Ok(Err(k != 0.0)),
                        v => c.truth(v).map(Ok),
                    }
                })?;
                match cv {
                    Err(true) => self.block(then),
                    Err(false) => self.block(els),
                    Ok(r) => {
                        let jz = self.emit(Op::Jz { c: r, t: 0 });
                        self.block(then)?;
                        if els.is_empty() {
                            let here = self.code.len();
                            self.patch(jz, here);
                        } else {
                            let j = self.emit(Op::Jmp { t: 0 });
                            let here = self.code.len();
                            self.patch(jz, here);
                            self.block(els)?;
                            let end = self.code.len();
                            self.patch(j, end);
                        }
                        Ok(())
                    }
                }
            }
            Stmt::For { var, start, end, body, .. } => {
                self.scopes.push(HashMap::new());
                let (si, sf) = (self.next_int, self.next_flt);
                let r = self.int_reg();
                self.with_temps(|c| {
                    let v = c.expr(start)?;
                    c.move_into(Val::I(r), v)
                })?;
                self.declare(var, Var::Int(r))?;
                let top = self.code.len();
                let exit_jump = self.with_temps(|c| {
                    let ev = c.expr(end)?;
                    let cond = c.binary(BinOp::Lt, Val::I(r), ev)?;
                    let cr = c.ireg(cond)?;
                    Ok(c.emit(Op::Jz { c: cr, t: 0 }))
                })?;
                self.block(body)?;
                self.emit(Op::IBinImm { op: IOp::Add, d: r, a: r, imm: 1 });
                self.emit(Op::Loop { t: top as u32 });
                let exit = self.code.len();
                self.patch(exit_jump, exit);
                self.scopes.pop();
                self.next_int = si;
                self.next_flt = sf;
                Ok(())
            }
            Stmt::Barrier => {
                let site = self.barrier_sites;
                self.barrier_sites += 1;
                self.emit(Op::Barrier { site });
                Ok(())
            }
            Stmt::Block(b) => self.block(b),
        }
    }

    fn assign(&mut self, target: &LValue, op: Option<BinOp>, value: &Expr) -> Result<(), ExecError> {
        match target {
            LValue::Var(n) => {
                let dest = match self.lookup(n)? {
                    Var::Int(r) => Val::I(r),
                    Var::Flt(r, w) => Val::F(r, w),
                    _ => return cerr(format!("cannot assign to array `{n}`")),
                };
                let mut v = self.expr(value)?;
                if let Some(op) = op {
                    v = self.binary(op, dest, v)?;
                }
                self.move_into(dest, v)
            }
            LValue::Comp(n, c) => {
                let (r, w) = match self.lookup(n)? {
                    Var::Flt(r, w) => (r, w),
                    _ => return cerr(format!("`{n}` is not a vector")),
                };
                if *c >= w {
                    return cerr(format!("component {c} out of range for `{n}`"));
                }
                let dest = Val::F(r + *c as Reg, 1);
                let mut v = self.expr(value)?;
                if let Some(op) = op {
                    v = self.binary(op, dest, v)?;
                }
                self.move_into(dest, v)
            }
            LValue::Index(n, idx) => {
                let arr = self.lookup(n)?;
                let iv = self.expr(idx)?;
                let ir = self.ireg(iv)?;
                let w = match arr {
                    Var::Buf(b) => {
                        let info = &self.bufs[b as usize];
                        if !info.writable {
                            return cerr(format!("store to const buffer `{n}`"));
                        }
                        info.width
                    }
                    Var::Local(l) => self.locals[l as usize].width,
                    _ => return cerr(format!("`{n}` is not an array")),
                };
                let mut v = self.expr(value)?;
                if let Some(op) = op {
                    let cur = self.flt_reg(w);
                    match arr {
                        Var::Buf(b) => self.emit(Op::LdG { d: cur, buf: b, idx: ir, w }),
                        Var::Local(l) => self.emit(Op::LdL { d: cur, arr: l, idx: ir, w }),
                        _ => unreachable!(),
                    };
                    v = self.binary(op, Val::F(cur, w), v)?;
                }
                let (s, sw) = self.freg(v)?;
                if sw != w {
                    return cerr(format!("storing float{sw} into `{n}` of width {w}"));
                }
                match arr {
                    Var::Buf(b) => self.emit(Op::StG { buf: b, idx: ir, s, w }),
                    Var::Local(l) => self.emit(Op::StL { arr: l, idx: ir, s, w }),
                    _ => unreachable!(),
                };
                Ok(())
            }
        }
    }
}

fn join(a: Ty, b: Ty) -> Result<Ty, ExecError> {
    Ok(match (a, b) {
        (Ty::Int, Ty::Int) => Ty::Int,
        (Ty::Int, Ty::Float(w)) | (Ty::Float(w), Ty::Int) => Ty::Float(w),
        (Ty::Float(x), Ty::Float(y)) if x == y => Ty::Float(x),
        (Ty::Float(1), Ty::Float(w)) | (Ty::Float(w), Ty::Float(1)) => Ty::Float(w),
        _ => return cerr("mismatched vector widths"),
    })
}

fn int_op(op: BinOp) -> IOp {
    match op {
        BinOp::Add => IOp::Add,
        BinOp::Sub => IOp::Sub,
        BinOp::Mul => IOp::Mul,
        BinOp::Div => IOp::Div,
        BinOp::Rem => IOp::Rem,
        BinOp::Lt => IOp::Lt,
        BinOp::Le => IOp::Le,
        BinOp::Gt => IOp::Gt,
        BinOp::Ge => IOp::Ge,
        BinOp::Eq => IOp::Eq,
        BinOp::Ne => IOp::Ne,
        BinOp::And | BinOp::Or => unreachable!("short-circuit ops are lowered to jumps"),
    }
}

fn cmp_op(op: BinOp) -> CmpOp {
    match op {
        BinOp::Lt => CmpOp::Lt,
        BinOp::Le => CmpOp::Le,
        BinOp::Gt => CmpOp::Gt,
        BinOp::Ge => CmpOp::Ge,
        BinOp::Eq => CmpOp::Eq,
        BinOp::Ne => CmpOp::Ne,
        _ => unreachable!(),
    }
}

pub(crate) fn fold_int(op: IOp, a: i64, b: i64) -> Option<i64> {
    Some(match op {
        IOp::Add => a.wrapping_add(b),
        IOp::Sub => a.wrapping_sub(b),
        IOp::Mul => a.wrapping_mul(b),
        IOp::Div => a.checked_div(b)?,
        IOp::Rem => a.checked_rem(b)?,
        IOp::Lt => (a < b) as i64,
        IOp::Le => (a <= b) as i64,
        IOp::Gt => (a > b) as i64,
        IOp::Ge => (a >= b) as i64,
        IOp::Eq => (a == b) as i64,
        IOp::Ne => (a != b) as i64,
    })
}

/// Compiles `ir`, folding `meta` fields in as constants.
pub fn compile(ir: &KernelIr, meta: &HashMap<String, i64>) -> Result<Program, ExecError> {
    if let Some(m) = &ir.meta {
        for f in &m.fields {
            if !meta.contains_key(f) {
                return Err(ExecError::MissingMeta(f.clone()));
            }
        }
    }
    let mut c = Compiler {
        code: Vec::new(),
        scopes: vec![HashMap::new()],
        next_int: FIRST_FREE_INT,
        next_flt: 0,
        max_int: FIRST_FREE_INT,
        max_flt: 0,
        meta,
        bufs: Vec::new(),
        locals: Vec::new(),
        barrier_sites: 0,
        temp_int_base: FIRST_FREE_INT,
        temp_flt_base: 0,
    };
    for p in &ir.params {
        let Ty::Float(width) = p.elem else {
            return cerr(format!("buffer `{}` must hold floats", p.name));
        };
        let idx = c.bufs.len() as u32;
        c.bufs.push(BufInfo { name: p.name.clone(), width, writable: !p.is_const });
        c.declare(&p.name, Var::Buf(idx))?;
    }
    for l in &ir.locals {
        let Ty::Float(width) = l.elem else {
            return cerr(format!("local array `{}` must hold floats", l.name));
        };
        let idx = c.locals.len() as u32;
        c.locals.push(LocalInfo { width, floats: l.len * width as usize });
        c.declare(&l.name, Var::Local(idx))?;
    }
    c.block(&ir.body)?;
    c.emit(Op::End);
    Ok(Program {
        has_barrier: c.barrier_sites > 0,
        code: c.code,
        n_int: c.max_int as usize,
        n_flt: c.max_flt as usize,
        bufs: c.bufs,
        locals: c.locals,
    })
}
