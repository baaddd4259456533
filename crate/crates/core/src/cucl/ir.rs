//! Parsed form of an instantiated CUCL kernel.

use std::fmt;

/// Value types of the C subset. `Float(w)` is `float` for `w == 1`,
/// otherwise `float2`/`float4`/`float8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Float(u8),
}

impl Ty {
    pub fn from_name(s: &str) -> Option<Ty> {
        Some(match s {
            "int" => Ty::Int,
            "float" => Ty::Float(1),
            "float2" => Ty::Float(2),
            "float4" => Ty::Float(4),
            "float8" => Ty::Float(8),
            _ => return None,
        })
    }

    pub fn width(self) -> u8 {
        match self {
            Ty::Int => 1,
            Ty::Float(w) => w,
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Int => f.write_str("int"),
            Ty::Float(1) => f.write_str("float"),
            Ty::Float(w) => write!(f, "float{w}"),
        }
    }
}

/// Thread-geometry idioms usable as expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    LocalId,
    GroupId,
    LocalSize,
    GlobalId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
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
    And,
    Or,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Intrinsic {
    Fma,
    Fmax,
    Fmin,
}

impl Intrinsic {
    pub fn arity(self) -> usize {
        match self {
            Intrinsic::Fma => 3,
            Intrinsic::Fmax | Intrinsic::Fmin => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f32),
    Var(String),
    Builtin(Builtin),
    /// `meta->field`
    Meta(String),
    Index(String, Box<Expr>),
    /// Vector component extract, `v.x` / `v.s3`.
    Comp(Box<Expr>, u8),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Intrinsic, Vec<Expr>),
}

impl Expr {
    /// Folds literal integer arithmetic; `None` if anything non-literal appears.
    pub fn const_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            Expr::Unary(UnOp::Neg, e) => e.const_int().map(|v| -v),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.const_int()?, b.const_int()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div if b != 0 => a / b,
                    BinOp::Rem if b != 0 => a % b,
                    _ => return None,
                })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(String),
    Index(String, Expr),
    Comp(String, u8),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Decl { ty: Ty, name: String, init: Option<Expr> },
    /// `op` is `Some` for compound assignment (`+=` etc).
    Assign { target: LValue, op: Option<BinOp>, value: Expr },
    If { cond: Expr, then: Vec<Stmt>, els: Vec<Stmt> },
    For { var: String, start: Expr, end: Expr, body: Vec<Stmt>, unroll: bool, const_trip: Option<i64> },
    Barrier,
    Block(Vec<Stmt>),
}

/// A `GLOBAL_MEM` buffer parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufParam {
    pub name: String,
    pub elem: Ty,
    pub is_const: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalArray {
    pub name: String,
    pub elem: Ty,
    pub len: usize,
}

/// The metadata struct passed as the trailing `meta` argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaDecl {
    pub type_name: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelIr {
    pub name: String,
    pub params: Vec<BufParam>,
    pub meta: Option<MetaDecl>,
    /// `LOCAL_MEM` arrays, hoisted out of the body in declaration order.
    pub locals: Vec<LocalArray>,
    pub body: Vec<Stmt>,
}

impl KernelIr {
    pub fn param(&self, name: &str) -> Option<&BufParam> {
        self.params.iter().find(|p| p.name == name)
    }
}
