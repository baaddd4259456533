//! Recursive-descent parser for the C subset that instantiated kernels use.

use super::ir::*;
use super::lex::{lex, Tok, Token};
use super::CuclError;

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "while", "do", "return", "goto", "switch", "case", "break", "continue", "struct", "typedef", "unsigned", "double",
    "char", "long", "short", "void", "sizeof",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, CuclError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: &str) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(CuclError::Parse { line: t.line, col: t.col, expected: format!("{expected}, found {}", show(&t.tok)) })
    }

    fn unsupported<T>(&self) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(CuclError::Unsupported { token: show(&t.tok), line: t.line, col: t.col })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(q) if q == s)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_ident(&mut self, s: &str) -> bool {
        if self.is_ident(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(&format!("`{p}`"))
        }
    }

    fn expect_ident(&mut self, s: &str) -> PResult<()> {
        if self.eat_ident(s) {
            Ok(())
        } else {
            self.err(&format!("`{s}`"))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => self.unsupported(),
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err("identifier"),
        }
    }

    fn ty(&mut self) -> Option<Ty> {
        match self.peek() {
            Tok::Ident(s) => {
                let t = Ty::from_name(s)?;
                self.bump();
                Some(t)
            }
            _ => None,
        }
    }

    fn peek_is_type(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => Ty::from_name(s).is_some() || s == "const",
            _ => false,
        }
    }

    // --- kernels -------------------------------------------------------

    fn kernel(&mut self) -> PResult<KernelIr> {
        let meta = if self.eat_ident("typedef") {
            self.expect_ident("struct")?;
            self.expect_punct("{")?;
            let mut fields = Vec::new();
            while !self.eat_punct("}") {
                self.expect_ident("int")?;
                fields.push(self.name()?);
                self.expect_punct(";")?;
            }
            let type_name = self.name()?;
            self.expect_punct(";")?;
            Some(MetaDecl { type_name, fields })
        } else {
            None
        };
        self.expect_ident("KERNEL_QUAL")?;
        self.expect_ident("void")?;
        let name = self.name()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        let mut saw_meta = false;
        let mut more = !self.eat_punct(")");
        while more {
            self.eat_ident("GLOBAL_MEM");
            let mut is_const = self.eat_ident("const");
            match self.ty() {
                Some(elem) => {
                    is_const |= self.eat_ident("const");
                    self.expect_punct("*")?;
                    let pname = self.name()?;
                    if saw_meta {
                        return self.err("`meta` as the last parameter");
                    }
                    params.push(BufParam { name: pname, elem, is_const });
                }
                None => {
                    let ty_name = self.name()?;
                    if meta.as_ref().map(|m| &m.type_name) != Some(&ty_name) {
                        return self.err("parameter type");
                    }
                    self.eat_ident("const");
                    self.expect_punct("*")?;
                    self.expect_ident("meta")?;
                    saw_meta = true;
                }
            }
            if self.eat_punct(")") {
                more = false;
            } else {
                self.expect_punct(",")?;
            }
        }
        if meta.is_some() && !saw_meta {
            return self.err("`meta` parameter");
        }
        self.expect_punct("{")?;
        let mut locals = Vec::new();
        let mut body = Vec::new();
        while !self.eat_punct("}") {
            if self.eat_ident("LOCAL_MEM") {
                let elem = match self.ty() {
                    Some(t) => t,
                    None => return self.err("local array type"),
                };
                let lname = self.name()?;
                self.expect_punct("[")?;
                let len_expr = self.expr()?;
                self.expect_punct("]")?;
                self.expect_punct(";")?;
                let len = match len_expr.const_int() {
                    Some(v) if v > 0 => v as usize,
                    _ => return self.err("positive constant local array length"),
                };
                locals.push(LocalArray { name: lname, elem, len });
            } else {
                body.push(self.stmt()?);
            }
        }
        if *self.peek() != Tok::Eof {
            return self.err("end of input");
        }
        Ok(KernelIr { name, params, meta, locals, body })
    }

    // --- statements ----------------------------------------------------

    fn block_or_stmt(&mut self) -> PResult<Vec<Stmt>> {
        if self.eat_punct("{") {
            self.stmts_until_brace()
        } else {
            Ok(vec![self.stmt()?])
        }
    }

    fn stmts_until_brace(&mut self) -> PResult<Vec<Stmt>> {
        let mut v = Vec::new();
        while !self.eat_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.err("`}`");
            }
            v.push(self.stmt()?);
        }
        Ok(v)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if let Tok::Pragma(p) = self.peek().clone() {
            if p != "unroll" {
                return self.unsupported();
            }
            self.bump();
            if !self.is_ident("for") {
                return self.err("`for` after `#pragma unroll`");
            }
            return self.for_stmt(true);
        }
        if self.eat_punct("{") {
            return Ok(Stmt::Block(self.stmts_until_brace()?));
        }
        if self.is_ident("if") {
            self.bump();
            self.expect_punct("(")?;
            let cond = self.expr()?;
            self.expect_punct(")")?;
            let then = self.block_or_stmt()?;
            let els = if self.eat_ident("else") { self.block_or_stmt()? } else { Vec::new() };
            return Ok(Stmt::If { cond, then, els });
        }
        if self.is_ident("for") {
            return self.for_stmt(false);
        }
        if self.eat_ident("BARRIER_SYNC") {
            self.expect_punct(";")?;
            return Ok(Stmt::Barrier);
        }
        if self.is_ident("LOCAL_MEM") {
            return self.unsupported();
        }
        if self.peek_is_type() {
            let mut saw_const = self.eat_ident("const");
            let ty = match self.ty() {
                Some(t) => t,
                None => return self.err("type"),
            };
            saw_const |= self.eat_ident("const");
            let name = self.name()?;
            let init = if self.eat_punct("=") { Some(self.expr()?) } else { None };
            if saw_const && init.is_none() {
                return self.err("initializer for const declaration");
            }
            self.expect_punct(";")?;
            return Ok(Stmt::Decl { ty, name, init });
        }
        let target = self.lvalue()?;
        let op = match self.bump() {
            Tok::Punct("=") => None,
            Tok::Punct("+=") => Some(BinOp::Add),
            Tok::Punct("-=") => Some(BinOp::Sub),
            Tok::Punct("*=") => Some(BinOp::Mul),
            Tok::Punct("/=") => Some(BinOp::Div),
            Tok::Punct("%=") => Some(BinOp::Rem),
            _ => {
                self.pos -= 1;
                return self.err("assignment operator");
            }
        };
        let value = self.expr()?;
        self.expect_punct(";")?;
        Ok(Stmt::Assign { target, op, value })
    }

    fn for_stmt(&mut self, unroll: bool) -> PResult<Stmt> {
        self.expect_ident("for")?;
        self.expect_punct("(")?;
        self.expect_ident("int")?;
        let var = self.name()?;
        self.expect_punct("=")?;
        let start = self.expr()?;
        self.expect_punct(";")?;
        let cv = self.name()?;
        if cv != var {
            return self.err(&format!("loop variable `{var}`"));
        }
        self.expect_punct("<")?;
        let end = self.expr()?;
        self.expect_punct(";")?;
        if self.eat_punct("++") {
            let v = self.name()?;
            if v != var {
                return self.err(&format!("loop variable `{var}`"));
            }
        } else {
            let v = self.name()?;
            if v != var {
                return self.err(&format!("loop variable `{var}`"));
            }
            self.expect_punct("++")?;
        }
        self.expect_punct(")")?;
        let body = self.block_or_stmt()?;
        let const_trip = match (start.const_int(), end.const_int()) {
            (Some(a), Some(b)) => Some((b - a).max(0)),
            _ => None,
        };
        Ok(Stmt::For { var, start, end, body, unroll, const_trip })
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let name = self.name()?;
        if self.eat_punct("[") {
            let idx = self.expr()?;
            self.expect_punct("]")?;
            return Ok(LValue::Index(name, idx));
        }
        if self.eat_punct(".") {
            let c = self.component()?;
            return Ok(LValue::Comp(name, c));
        }
        Ok(LValue::Var(name))
    }

    fn component(&mut self) -> PResult<u8> {
        let c = self.name()?;
        let idx = match c.as_str() {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            "w" => Some(3),
            s => s.strip_prefix('s').and_then(|d| d.parse::<u8>().ok()).filter(|&d| d < 8),
        };
        match idx {
            Some(i) => Ok(i),
            None => {
                self.pos -= 1;
                self.err("vector component")
            }
        }
    }

    // --- expressions ---------------------------------------------------

    fn expr(&mut self) -> PResult<Expr> {
        let cond = self.binary(0)?;
        if self.eat_punct("?") {
            let a = self.expr()?;
            self.expect_punct(":")?;
            let b = self.expr()?;
            return Ok(Expr::Ternary(Box::new(cond), Box::new(a), Box::new(b)));
        }
        Ok(cond)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let (op, prec) = match self.peek() {
                Tok::Punct("||") => (BinOp::Or, 1),
                Tok::Punct("&&") => (BinOp::And, 2),
                Tok::Punct("==") => (BinOp::Eq, 3),
                Tok::Punct("!=") => (BinOp::Ne, 3),
                Tok::Punct("<") => (BinOp::Lt, 4),
                Tok::Punct("<=") => (BinOp::Le, 4),
                Tok::Punct(">") => (BinOp::Gt, 4),
                Tok::Punct(">=") => (BinOp::Ge, 4),
                Tok::Punct("+") => (BinOp::Add, 5),
                Tok::Punct("-") => (BinOp::Sub, 5),
                Tok::Punct("*") => (BinOp::Mul, 6),
                Tok::Punct("/") => (BinOp::Div, 6),
                Tok::Punct("%") => (BinOp::Rem, 6),
                _ => return Ok(lhs),
            };
            if prec < min_prec {
                return Ok(lhs);
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_punct("-") {
            return Ok(match self.unary()? {
                Expr::Int(v) => Expr::Int(-v),
                Expr::Float(v) => Expr::Float(-v),
                e => Expr::Unary(UnOp::Neg, Box::new(e)),
            });
        }
        if self.eat_punct("!") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        if self.eat_punct("+") {
            return self.unary();
        }
        if self.is_punct("++") || self.is_punct("--") {
            return self.unsupported();
        }
        let mut e = self.primary()?;
        while self.eat_punct(".") {
            let c = self.component()?;
            e = Expr::Comp(Box::new(e), c);
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::Punct("(") => {
                self.bump();
                if self.peek_is_type() {
                    return self.unsupported();
                }
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(s) => {
                let builtin = match s.as_str() {
                    "LOCAL_ID_1D" => Some(Builtin::LocalId),
                    "GROUP_ID_1D" => Some(Builtin::GroupId),
                    "LOCAL_SZ_1D" => Some(Builtin::LocalSize),
                    "GLOBAL_ID_1D" => Some(Builtin::GlobalId),
                    _ => None,
                };
                if let Some(b) = builtin {
                    self.bump();
                    return Ok(Expr::Builtin(b));
                }
                if s == "INFINITY" {
                    self.bump();
                    return Ok(Expr::Float(f32::INFINITY));
                }
                if s == "meta" && matches!(self.peek_at(1), Tok::Punct("->")) {
                    self.bump();
                    self.bump();
                    return Ok(Expr::Meta(self.name()?));
                }
                if matches!(self.peek_at(1), Tok::Punct("(")) {
                    let f = match s.as_str() {
                        "fma" => Intrinsic::Fma,
                        "fmax" => Intrinsic::Fmax,
                        "fmin" => Intrinsic::Fmin,
                        _ => return self.unsupported(),
                    };
                    self.bump();
                    self.bump();
                    let mut args = Vec::new();
                    if !self.eat_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat_punct(")") {
                                break;
                            }
                            self.expect_punct(",")?;
                        }
                    }
                    if args.len() != f.arity() {
                        return self.err(&format!("{} arguments", f.arity()));
                    }
                    return Ok(Expr::Call(f, args));
                }
                let name = self.name()?;
                if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect_punct("]")?;
                    return Ok(Expr::Index(name, Box::new(idx)));
                }
                Ok(Expr::Var(name))
            }
            _ => self.err("expression"),
        }
    }
}

fn show(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => v.to_string(),
        Tok::Float(v) => format!("{v}f"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Pragma(p) => format!("`#pragma {p}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a full kernel in idiom form (pre-render, template vars resolved).
pub fn parse_kernel(src: &str) -> Result<KernelIr, CuclError> {
    if let Some(pos) = src.find("%(") {
        let line = src[..pos].matches('\n').count() + 1;
        return Err(CuclError::Unsupported { token: "%(".into(), line, col: 1 });
    }
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    p.kernel()
}

/// Parses a bare statement list, e.g. a listing taken out of a kernel body.
pub fn parse_body(src: &str) -> Result<Vec<Stmt>, CuclError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let mut v = Vec::new();
    while *p.peek() != Tok::Eof {
        v.push(p.stmt()?);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guarded_load_loop_listing() {
        let src = "for(int i = 0; i < ((W-1)/N)+1; ++i) {\n\
                   int const ix = i*N + thread_id;\n\
                   if(ix< W){filts_buf[ix] = filts[ix];}\n\
                   }";
        let body = parse_body(src).unwrap();
        assert_eq!(body.len(), 1);
        let Stmt::For { var, body: inner, const_trip, .. } = &body[0] else { panic!("{body:?}") };
        assert_eq!(var, "i");
        assert_eq!(*const_trip, None);
        assert_eq!(inner.len(), 2);
        assert!(matches!(&inner[0], Stmt::Decl { ty: Ty::Int, name, .. } if name == "ix"));
        let Stmt::If { then, els, .. } = &inner[1] else { panic!() };
        assert!(els.is_empty());
        assert!(matches!(&then[..], [Stmt::Assign { target: LValue::Index(b, _), op: None, .. }] if b == "filts_buf"));
    }

    #[test]
    fn single_store() {
        let body = parse_body("filts_buf[0+thread_id] = filts[thread_id];").unwrap();
        assert_eq!(
            body,
            vec![Stmt::Assign {
                target: LValue::Index(
                    "filts_buf".into(),
                    Expr::Binary(BinOp::Add, Box::new(Expr::Int(0)), Box::new(Expr::Var("thread_id".into())))
                ),
                op: None,
                value: Expr::Index("filts".into(), Box::new(Expr::Var("thread_id".into()))),
            }]
        );
    }

    #[test]
    fn empty_body() {
        assert!(parse_body("").unwrap().is_empty());
        let k = parse_kernel("KERNEL_QUAL void k(GLOBAL_MEM float * out) { }").unwrap();
        assert!(k.body.is_empty());
        assert_eq!(k.params, vec![BufParam { name: "out".into(), elem: Ty::Float(1), is_const: false }]);
    }

    #[test]
    fn full_kernel_with_meta_and_locals() {
        let src = r#"
typedef struct {
  int in_x_size;
} k_meta_t;
KERNEL_QUAL void k(GLOBAL_MEM float4 const * in, GLOBAL_MEM float * out, GLOBAL_MEM k_meta_t const * meta) {
  LOCAL_MEM float4 buf[2*8];
  int const tid = LOCAL_ID_1D;
  #pragma unroll
  for (int i = 0; i < 4; ++i) {
    buf[tid] = in[tid];
  }
  BARRIER_SYNC;
  float4 v = buf[tid];
  out[tid] = (tid < meta->in_x_size) ? fma(v.x, v.s1, 1.5f) : -INFINITY;
}
"#;
        let k = parse_kernel(src).unwrap();
        assert_eq!(k.meta.as_ref().unwrap().fields, vec!["in_x_size".to_string()]);
        assert_eq!(k.locals, vec![LocalArray { name: "buf".into(), elem: Ty::Float(4), len: 16 }]);
        assert!(matches!(k.body[1], Stmt::For { unroll: true, const_trip: Some(4), .. }));
        assert_eq!(k.body[2], Stmt::Barrier);
    }

    #[test]
    fn precedence() {
        let b = parse_body("x = a + b * c < d && e || f;").unwrap();
        let Stmt::Assign { value, .. } = &b[0] else { panic!() };
        let Expr::Binary(BinOp::Or, lhs, _) = value else { panic!("{value:?}") };
        let Expr::Binary(BinOp::And, cmp, _) = &**lhs else { panic!() };
        let Expr::Binary(BinOp::Lt, sum, _) = &**cmp else { panic!() };
        assert!(matches!(&**sum, Expr::Binary(BinOp::Add, _, m) if matches!(&**m, Expr::Binary(BinOp::Mul, _, _))));
    }

    #[test]
    fn rejects_unsupported() {
        assert!(matches!(parse_body("while (1) { x = 1; }"), Err(CuclError::Unsupported { .. })));
        assert!(matches!(parse_body("x = foo(1);"), Err(CuclError::Unsupported { .. })));
        assert!(matches!(parse_body("#include <x>"), Err(CuclError::Unsupported { .. })));
        assert!(matches!(parse_body("x = (float)y;"), Err(CuclError::Unsupported { .. })));
        assert!(matches!(parse_body("x = ;"), Err(CuclError::Parse { line: 1, col: 5, .. })));
        assert!(matches!(parse_kernel("KERNEL_QUAL void k() { x = %(a); }"), Err(CuclError::Unsupported { .. })));
    }
}
