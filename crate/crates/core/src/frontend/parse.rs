use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::{Activation, ComputeGraph, ConvParams, FrontendError, OpKind, OpNode, PoolParams};
use crate::nda::DimsSpec;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(usize),
    Colon,
    LBrace,
    RBrace,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Str(s) => format!("\"{s}\""),
        Tok::Int(i) => i.to_string(),
        Tok::Colon => "`:`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FrontendError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            ':' => {
                chars.next();
                out.push((Tok::Colon, line));
            }
            '{' => {
                chars.next();
                out.push((Tok::LBrace, line));
            }
            '}' => {
                chars.next();
                out.push((Tok::RBrace, line));
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\n') | None => {
                            return Err(FrontendError::SyntaxError { line, expected: "closing `\"`".into() })
                        }
                        Some(c) => s.push(c),
                    }
                }
                out.push((Tok::Str(s), line));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if !c.is_ascii_digit() {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                let v = s.parse().map_err(|_| FrontendError::SyntaxError { line, expected: "integer".into() })?;
                out.push((Tok::Int(v), line));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if !(c.is_ascii_alphanumeric() || c == '_') {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                out.push((Tok::Ident(s), line));
            }
            _ => return Err(FrontendError::SyntaxError { line, expected: format!("token, found `{c}`") }),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |t| t.1)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn err<T>(&self, expected: &str) -> Result<T, FrontendError> {
        let found = self.peek().map_or("end of input".to_string(), describe);
        Err(FrontendError::SyntaxError { line: self.line(), expected: format!("{expected}, found {found}") })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), FrontendError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&describe(&want))
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("field name"),
        }
    }

    fn string_value(&mut self) -> Result<String, FrontendError> {
        self.expect(Tok::Colon)?;
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("string"),
        }
    }

    fn int_value(&mut self) -> Result<usize, FrontendError> {
        self.expect(Tok::Colon)?;
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("integer"),
        }
    }
}

#[derive(Default)]
struct WindowFields {
    num_output: Option<usize>,
    kernel_size: Option<usize>,
    stride: Option<usize>,
    pad: Option<usize>,
    pool_max: bool,
}

fn set_once<T>(slot: &mut Option<T>, v: T, field: &str, p: &Parser) -> Result<(), FrontendError> {
    if slot.is_some() {
        return Err(FrontendError::SyntaxError { line: p.line(), expected: format!("single `{field}`") });
    }
    *slot = Some(v);
    Ok(())
}

fn parse_param_block(p: &mut Parser, pooling: bool) -> Result<WindowFields, FrontendError> {
    p.expect(Tok::LBrace)?;
    let mut w = WindowFields::default();
    loop {
        if p.peek() == Some(&Tok::RBrace) {
            p.pos += 1;
            return Ok(w);
        }
        let field = p.ident()?;
        match field.as_str() {
            "num_output" if !pooling => {
                let v = p.int_value()?;
                set_once(&mut w.num_output, v, "num_output", p)?
            }
            "kernel_size" => {
                let v = p.int_value()?;
                set_once(&mut w.kernel_size, v, "kernel_size", p)?
            }
            "stride" => {
                let v = p.int_value()?;
                set_once(&mut w.stride, v, "stride", p)?
            }
            "pad" => {
                let v = p.int_value()?;
                set_once(&mut w.pad, v, "pad", p)?
            }
            "pool" if pooling => {
                p.expect(Tok::Colon)?;
                match p.next() {
                    Some(Tok::Ident(m)) if m == "MAX" => w.pool_max = true,
                    _ => {
                        p.pos -= 1;
                        return p.err("`MAX`");
                    }
                }
            }
            _ => {
                p.pos -= 1;
                return p.err(if pooling { "pooling_param field" } else { "convolution_param field" });
            }
        }
    }
}

/// Parses a network description into a compute graph.
///
/// When an `input` block is present the graph comes back with every edge
/// shape inferred.
pub fn parse_net(text: &str) -> Result<ComputeGraph, FrontendError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut g = ComputeGraph::default();
    // caffe blob name -> graph edge name (in-place layers get fresh edges)
    let mut latest: BTreeMap<String, String> = BTreeMap::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut input_dims = None;

    if p.peek() == Some(&Tok::Ident("input".into())) {
        p.pos += 1;
        let name = p.string_value()?;
        let mut sizes = Vec::new();
        for _ in 0..4 {
            match p.ident()?.as_str() {
                "input_dim" => sizes.push(p.int_value()?),
                _ => {
                    p.pos -= 1;
                    return p.err("`input_dim`");
                }
            }
        }
        let dims = DimsSpec::new(&["img", "chan", "y", "x"], &sizes)
            .map_err(|e| FrontendError::SyntaxError { line: p.line(), expected: e.to_string() })?;
        g.nodes.push(OpNode {
            name: name.clone(),
            kind: OpKind::Input,
            inputs: vec![],
            outputs: vec![name.clone()],
            fused_activation: None,
        });
        g.sources.push(name.clone());
        latest.insert(name.clone(), name.clone());
        used.insert(name);
        input_dims = Some(dims);
    }

    while p.peek().is_some() {
        match p.ident()?.as_str() {
            "layer" => {}
            _ => {
                p.pos -= 1;
                return p.err("`layer`");
            }
        }
        let layer_line = p.line();
        p.expect(Tok::LBrace)?;
        let (mut name, mut ty) = (None, None);
        let (mut bottoms, mut tops) = (Vec::new(), Vec::new());
        let (mut conv, mut pool) = (None, None);
        loop {
            if p.peek() == Some(&Tok::RBrace) {
                p.pos += 1;
                break;
            }
            let field = p.ident()?;
            match field.as_str() {
                "name" => {
                    let v = p.string_value()?;
                    set_once(&mut name, v, "name", &p)?
                }
                "type" => {
                    let v = p.string_value()?;
                    set_once(&mut ty, v, "type", &p)?
                }
                "bottom" => bottoms.push(p.string_value()?),
                "top" => tops.push(p.string_value()?),
                "convolution_param" => {
                    let v = parse_param_block(&mut p, false)?;
                    set_once(&mut conv, v, "convolution_param", &p)?
                }
                "pooling_param" => {
                    let v = parse_param_block(&mut p, true)?;
                    set_once(&mut pool, v, "pooling_param", &p)?
                }
                _ => {
                    p.pos -= 1;
                    return p.err("layer field");
                }
            }
        }
        let name = name.ok_or(FrontendError::SyntaxError { line: layer_line, expected: "`name` in layer".into() })?;
        let ty = ty.ok_or(FrontendError::SyntaxError { line: layer_line, expected: "`type` in layer".into() })?;
        let bad = |msg: &str| FrontendError::BadLayer { layer: name.clone(), msg: msg.to_string() };
        if bottoms.len() != 1 || tops.len() != 1 {
            return Err(bad("expected exactly one bottom and one top"));
        }
        let kind = match ty.as_str() {
            "Convolution" => {
                let c = conv.take().ok_or_else(|| bad("missing convolution_param"))?;
                let p = ConvParams {
                    out_chans: c.num_output.ok_or_else(|| bad("missing num_output"))?,
                    ksz: c.kernel_size.ok_or_else(|| bad("missing kernel_size"))?,
                    stride: c.stride.unwrap_or(1),
                    pad: c.pad.unwrap_or(0),
                };
                if p.out_chans == 0 || p.ksz == 0 || p.stride == 0 {
                    return Err(bad("num_output, kernel_size and stride must be positive"));
                }
                OpKind::Convolution(p)
            }
            "Pooling" => {
                let c = pool.take().ok_or_else(|| bad("missing pooling_param"))?;
                if !c.pool_max {
                    return Err(bad("missing `pool: MAX`"));
                }
                let p = PoolParams {
                    ksz: c.kernel_size.ok_or_else(|| bad("missing kernel_size"))?,
                    stride: c.stride.unwrap_or(1),
                    pad: c.pad.unwrap_or(0),
                };
                if p.ksz == 0 || p.stride == 0 {
                    return Err(bad("kernel_size and stride must be positive"));
                }
                OpKind::Pooling(p)
            }
            "ReLU" => OpKind::Activation(Activation::Relu),
            other => return Err(FrontendError::UnknownLayerType { line: layer_line, ty: other.to_string() }),
        };
        if conv.is_some() || pool.is_some() {
            return Err(bad("parameter block does not match layer type"));
        }
        let bottom = latest
            .get(&bottoms[0])
            .cloned()
            .ok_or_else(|| FrontendError::DanglingBottom { layer: name.clone(), edge: bottoms[0].clone() })?;
        let top = fresh_edge(&tops[0], &name, &mut used);
        latest.insert(tops[0].clone(), top.clone());
        let mut inputs = vec![bottom];
        if matches!(kind, OpKind::Convolution(_)) {
            for suffix in ["filts", "biases"] {
                let e = format!("{name}_{suffix}");
                if !used.insert(e.clone()) {
                    return Err(bad(&format!("synthesized edge `{e}` collides with an existing edge")));
                }
                g.params.insert(e.clone());
                inputs.push(e);
            }
        }
        if g.nodes.iter().any(|n| n.name == name) {
            return Err(bad("duplicate layer name"));
        }
        g.nodes.push(OpNode { name, kind, inputs, outputs: vec![top], fused_activation: None });
    }
    g.recompute_sinks();
    for s in &g.sources {
        if !g.nodes.iter().any(|n| n.inputs.contains(s)) && !g.sinks.contains(s) {
            g.sinks.push(s.clone());
        }
    }
    g.validate()?;
    match input_dims {
        Some(d) => super::infer_shapes(&g, &d),
        None => Ok(g),
    }
}

fn fresh_edge(top: &str, layer: &str, used: &mut BTreeSet<String>) -> String {
    let mut cand = top.to_string();
    if used.contains(&cand) {
        cand = layer.to_string();
    }
    let mut k = 1;
    while used.contains(&cand) {
        cand = format!("{layer}_{k}");
        k += 1;
    }
    used.insert(cand.clone());
    cand
}

/// Writes `g` back in the network-file grammar. Graphs that carry
/// conversions or fused activations have no textual form.
pub fn pretty_print(g: &ComputeGraph) -> Result<String, FrontendError> {
    let mut out = String::new();
    for n in &g.nodes {
        if n.fused_activation.is_some() {
            return Err(FrontendError::BadLayer { layer: n.name.clone(), msg: "fused activation".into() });
        }
        match &n.kind {
            OpKind::Input => {
                let d = g.dims(&n.outputs[0])?;
                writeln!(out, "input: \"{}\"", n.outputs[0]).unwrap();
                for dim in d.dims() {
                    writeln!(out, "input_dim: {}", dim.size).unwrap();
                }
            }
            OpKind::Conversion { .. } => {
                return Err(FrontendError::BadLayer { layer: n.name.clone(), msg: "conversion node".into() })
            }
            kind => {
                writeln!(out, "layer {{").unwrap();
                writeln!(out, "  name: \"{}\"", n.name).unwrap();
                writeln!(out, "  type: \"{}\"", kind.type_name()).unwrap();
                writeln!(out, "  bottom: \"{}\"", n.inputs[0]).unwrap();
                writeln!(out, "  top: \"{}\"", n.outputs[0]).unwrap();
                match kind {
                    OpKind::Convolution(p) => {
                        writeln!(out, "  convolution_param {{").unwrap();
                        writeln!(out, "    num_output: {}", p.out_chans).unwrap();
                        writeln!(out, "    kernel_size: {}", p.ksz).unwrap();
                        writeln!(out, "    stride: {}", p.stride).unwrap();
                        writeln!(out, "    pad: {}", p.pad).unwrap();
                        writeln!(out, "  }}").unwrap();
                    }
                    OpKind::Pooling(p) => {
                        writeln!(out, "  pooling_param {{").unwrap();
                        writeln!(out, "    pool: MAX").unwrap();
                        writeln!(out, "    kernel_size: {}", p.ksz).unwrap();
                        writeln!(out, "    stride: {}", p.stride).unwrap();
                        writeln!(out, "    pad: {}", p.pad).unwrap();
                        writeln!(out, "  }}").unwrap();
                    }
                    _ => {}
                }
                writeln!(out, "}}").unwrap();
            }
        }
    }
    Ok(out)
}
