//! Static cost model: counts a kernel's operations without running it.
//!
//! Mirrors the interpreter's counting rules, assuming every non-constant
//! `if` takes its costlier branch. Loop trip counts must be launch
//! constants.

use std::collections::HashMap;

use super::{CostReport, ExecError, LaunchConfig, MetaValues};
use crate::cucl::ir::*;

struct Est<'a> {
    meta: HashMap<&'a str, i64>,
    locals: Vec<&'a str>,
}

impl Est<'_> {
    fn konst(&self, e: &Expr) -> Option<i64> {
        Some(match e {
            Expr::Int(v) => *v,
            Expr::Meta(f) => *self.meta.get(f.as_str())?,
            Expr::Unary(UnOp::Neg, a) => -self.konst(a)?,
            Expr::Unary(UnOp::Not, a) => (self.konst(a)? == 0) as i64,
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.konst(a)?, self.konst(b)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a.checked_div(b)?,
                    BinOp::Rem => a.checked_rem(b)?,
                    BinOp::Lt => (a < b) as i64,
                    BinOp::Le => (a <= b) as i64,
                    BinOp::Gt => (a > b) as i64,
                    BinOp::Ge => (a >= b) as i64,
                    BinOp::Eq => (a == b) as i64,
                    BinOp::Ne => (a != b) as i64,
                    BinOp::And | BinOp::Or => return None,
                }
            }
            _ => return None,
        })
    }

    fn load(&self, name: &str, r: &mut CostReport) {
        if self.locals.contains(&name) {
            r.local_loads += 1;
        } else {
            r.global_loads += 1;
        }
    }

    fn expr(&self, e: &Expr) -> CostReport {
        let mut r = CostReport::default();
        if self.konst(e).is_some() {
            return r;
        }
        match e {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) | Expr::Builtin(_) | Expr::Meta(_) => {}
            Expr::Index(n, i) => {
                r = self.expr(i);
                self.load(n, &mut r);
            }
            Expr::Comp(a, _) => r = self.expr(a),
            Expr::Unary(UnOp::Neg, a) if matches!(**a, Expr::Float(_)) => {}
            Expr::Unary(_, a) => {
                r = self.expr(a);
                r.alu_ops += 1;
            }
            Expr::Binary(_, a, b) => {
                r = self.expr(a) + self.expr(b);
                r.alu_ops += 1;
            }
            Expr::Ternary(c, a, b) => {
                r = self.expr(c) + max(self.expr(a), self.expr(b));
            }
            Expr::Call(_, args) => {
                for a in args {
                    r += self.expr(a);
                }
                r.alu_ops += 1;
            }
        }
        r
    }

    fn block(&self, b: &[Stmt]) -> Result<CostReport, ExecError> {
        let mut r = CostReport::default();
        for s in b {
            r += self.stmt(s)?;
        }
        Ok(r)
    }

    fn stmt(&self, s: &Stmt) -> Result<CostReport, ExecError> {
        Ok(match s {
            Stmt::Decl { init, .. } => init.as_ref().map(|e| self.expr(e)).unwrap_or_default(),
            Stmt::Assign { target, op, value } => {
                let mut r = self.expr(value);
                if op.is_some() {
                    r.alu_ops += 1;
                }
                if let LValue::Index(n, i) = target {
                    r += self.expr(i);
                    if op.is_some() {
                        self.load(n, &mut r);
                    }
                    if self.locals.contains(&n.as_str()) {
                        r.local_stores += 1;
                    } else {
                        r.global_stores += 1;
                    }
                }
                r
            }
            Stmt::If { cond, then, els } => match self.konst(cond) {
                Some(0) => self.block(els)?,
                Some(_) => self.block(then)?,
                None => self.expr(cond) + max(self.block(then)?, self.block(els)?),
            },
            Stmt::For { start, end, body, .. } => {
                let (Some(a), Some(b)) = (self.konst(start), self.konst(end)) else {
                    return Err(ExecError::Compile("loop bounds are not launch constants".into()));
                };
                let trips = (b - a).max(0) as u64;
                let per = self.block(body)?;
                let mut r = scale(per, trips);
                r.alu_ops += 2 * trips + 1;
                r
            }
            Stmt::Barrier => CostReport { barriers: 1, ..Default::default() },
            Stmt::Block(b) => self.block(b)?,
        })
    }
}

fn weight(r: &CostReport) -> u64 {
    r.alu_ops + 16 * (r.global_loads + r.global_stores) + 2 * (r.local_loads + r.local_stores) + 32 * r.barriers
}

fn max(a: CostReport, b: CostReport) -> CostReport {
    if weight(&b) > weight(&a) {
        b
    } else {
        a
    }
}

fn scale(r: CostReport, k: u64) -> CostReport {
    CostReport {
        alu_ops: r.alu_ops * k,
        global_loads: r.global_loads * k,
        global_stores: r.global_stores * k,
        local_loads: r.local_loads * k,
        local_stores: r.local_stores * k,
        barriers: r.barriers * k,
        wall_ns: 0,
    }
}

/// Predicted counters for a launch of `ir`; `wall_ns` is zero.
pub fn estimate_static(ir: &KernelIr, launch: LaunchConfig, meta: Option<&MetaValues>) -> Result<CostReport, ExecError> {
    launch.validate()?;
    let est = Est {
        meta: meta.into_iter().flatten().map(|(k, v)| (k.as_str(), *v)).collect(),
        locals: ir.locals.iter().map(|l| l.name.as_str()).collect(),
    };
    if let Some(m) = &ir.meta {
        if let Some(f) = m.fields.iter().find(|f| !est.meta.contains_key(f.as_str())) {
            return Err(ExecError::MissingMeta(f.clone()));
        }
    }
    let per_thread = est.block(&ir.body)?;
    Ok(scale(per_thread, launch.total_threads() as u64))
}
