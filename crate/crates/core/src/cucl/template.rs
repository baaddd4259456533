//! Kernel templates with `%(name)` variables and their instantiation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::Arc;

use super::ir::Ty;
use super::CuclError;
use crate::nda::{dims_check, is_dim_name, DimsSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgDir {
    In,
    Out,
}

/// A dimension-decorated ND-Array argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgDecl {
    pub name: String,
    pub dir: ArgDir,
    pub dims: Vec<String>,
    /// Element type as seen by the kernel; vector types view the float
    /// buffer `w` elements at a time.
    pub elem: Ty,
}

impl ArgDecl {
    pub fn input(name: &str, dims: &[&str]) -> Self {
        ArgDecl { name: name.into(), dir: ArgDir::In, dims: dims.iter().map(|d| d.to_string()).collect(), elem: Ty::Float(1) }
    }

    pub fn output(name: &str, dims: &[&str]) -> Self {
        ArgDecl { dir: ArgDir::Out, ..ArgDecl::input(name, dims) }
    }

    pub fn with_elem(mut self, elem: Ty) -> Self {
        self.elem = elem;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuclTemplate {
    pub name: String,
    pub args: Vec<ArgDecl>,
    pub body: String,
    pub free_vars: BTreeSet<String>,
}

/// Every `%(name)` reference in `text`, in order of appearance.
pub fn template_refs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find("%(") {
        let after = &rest[pos + 2..];
        match after.find(')') {
            Some(end) => {
                out.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => {
                out.push(after.to_string());
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MetaKind {
    Size,
    Stride,
}

impl CuclTemplate {
    /// Checks that every `%(v)` in `body` is a free variable or a
    /// `<arg>_<dim>_size` / `<arg>_<dim>_stride` reference.
    pub fn new(name: &str, args: Vec<ArgDecl>, body: &str, free_vars: &[&str]) -> Result<Self, CuclError> {
        let t = CuclTemplate {
            name: name.to_string(),
            args,
            body: body.to_string(),
            free_vars: free_vars.iter().map(|s| s.to_string()).collect(),
        };
        for a in &t.args {
            if !is_dim_name(&a.name) || a.dims.iter().any(|d| !is_dim_name(d)) {
                return Err(CuclError::BadTemplate(format!("invalid argument or dimension name in `{}`", a.name)));
            }
        }
        let derived = t.derived_vars()?;
        for v in &t.free_vars {
            if derived.contains_key(v) {
                return Err(CuclError::BadTemplate(format!("free variable `{v}` shadows a size/stride reference")));
            }
        }
        for r in template_refs(&t.body) {
            if !t.free_vars.contains(&r) && !derived.contains_key(&r) {
                return Err(CuclError::UnknownTemplateVar(r));
            }
        }
        Ok(t)
    }

    fn derived_vars(&self) -> Result<BTreeMap<String, (usize, usize, MetaKind)>, CuclError> {
        let mut m = BTreeMap::new();
        for (ai, a) in self.args.iter().enumerate() {
            for (di, d) in a.dims.iter().enumerate() {
                for (suffix, kind) in [("size", MetaKind::Size), ("stride", MetaKind::Stride)] {
                    let v = format!("{}_{}_{}", a.name, d, suffix);
                    if m.insert(v.clone(), (ai, di, kind)).is_some() {
                        return Err(CuclError::BadTemplate(format!("`{v}` is ambiguous")));
                    }
                }
            }
        }
        Ok(m)
    }

    /// Field names of the dynamic metadata struct, in argument order.
    pub fn meta_fields(&self) -> Vec<String> {
        let mut v = Vec::new();
        for a in &self.args {
            for d in &a.dims {
                v.push(format!("{}_{}_size", a.name, d));
                v.push(format!("{}_{}_stride", a.name, d));
            }
        }
        v
    }

    pub fn meta_type_name(&self) -> String {
        format!("{}_meta_t", self.name)
    }
}

/// Names-only type check of every argument binding.
pub fn check_args(t: &CuclTemplate, bindings: &BTreeMap<String, DimsSpec>) -> Result<(), CuclError> {
    for a in &t.args {
        let b = bindings.get(&a.name).ok_or_else(|| CuclError::UnboundArg(a.name.clone()))?;
        dims_check(a.dims.iter().map(String::as_str), b.names())
            .map_err(|m| CuclError::ArgMismatch { arg: a.name.clone(), mismatch: m })?;
    }
    if let Some(extra) = bindings.keys().find(|k| !t.args.iter().any(|a| &a.name == *k)) {
        return Err(CuclError::UnexpectedArg(extra.clone()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstMode {
    /// Sizes and strides become decimal constants.
    Static,
    /// Sizes and strides are read from the trailing `meta` argument.
    Dynamic,
}

impl InstMode {
    pub fn tag(self) -> &'static str {
        match self {
            InstMode::Static => "static",
            InstMode::Dynamic => "dynamic",
        }
    }
}

/// A template bound to concrete arrays plus metacode-generated snippets.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiation {
    pub template: Arc<CuclTemplate>,
    pub bindings: BTreeMap<String, DimsSpec>,
    pub mode: InstMode,
    pub var_values: BTreeMap<String, String>,
}

impl Instantiation {
    /// `(field, value)` pairs for the metadata argument, in struct order.
    pub fn meta_values(&self) -> Result<Vec<(String, i64)>, CuclError> {
        let mut v = Vec::new();
        for a in &self.template.args {
            let b = self.bindings.get(&a.name).ok_or_else(|| CuclError::UnboundArg(a.name.clone()))?;
            for d in &a.dims {
                let info = b.get(d).ok_or_else(|| CuclError::UnboundArg(format!("{}.{}", a.name, d)))?;
                v.push((format!("{}_{}_size", a.name, d), info.size as i64));
                v.push((format!("{}_{}_stride", a.name, d), info.stride as i64));
            }
        }
        Ok(v)
    }

    pub fn with_mode(&self, mode: InstMode) -> Instantiation {
        Instantiation { mode, ..self.clone() }
    }
}

fn signature(t: &CuclTemplate, mode: InstMode) -> String {
    let mut params: Vec<String> = t
        .args
        .iter()
        .map(|a| {
            let c = if a.dir == ArgDir::In { " const" } else { "" };
            format!("GLOBAL_MEM {}{c} * {}", a.elem, a.name)
        })
        .collect();
    if mode == InstMode::Dynamic {
        params.push(format!("GLOBAL_MEM {} const * meta", t.meta_type_name()));
    }
    format!("KERNEL_QUAL void {}({})", t.name, params.join(", "))
}

/// Expands a template into CUCL source (idiom form).
pub fn instantiate(inst: &Instantiation) -> Result<String, CuclError> {
    let t = &*inst.template;
    check_args(t, &inst.bindings)?;
    for v in &t.free_vars {
        if !inst.var_values.contains_key(v) {
            return Err(CuclError::MissingVarValue(v.clone()));
        }
    }
    let derived = t.derived_vars()?;
    let resolve = |name: &str| -> Option<String> {
        let &(ai, di, kind) = derived.get(name)?;
        let a = &t.args[ai];
        let info = inst.bindings[&a.name].get(&a.dims[di]).expect("checked by check_args");
        Some(match inst.mode {
            InstMode::Static => match kind {
                MetaKind::Size => info.size.to_string(),
                MetaKind::Stride => info.stride.to_string(),
            },
            InstMode::Dynamic => format!("meta->{name}"),
        })
    };
    // free vars first: their snippets may carry size/stride references
    let spliced = expand(&t.body, |n| {
        if t.free_vars.contains(n) {
            Some(inst.var_values[n].clone())
        } else {
            None
        }
    });
    let body = expand(&spliced, resolve);
    if let Some(left) = template_refs(&body).into_iter().next() {
        return Err(match inst.mode {
            InstMode::Static => CuclError::UnresolvedInStatic(left),
            InstMode::Dynamic => CuclError::UnknownTemplateVar(left),
        });
    }
    let mut out = String::new();
    if inst.mode == InstMode::Dynamic {
        out.push_str("typedef struct {\n");
        for f in t.meta_fields() {
            writeln!(out, "  int {f};").unwrap();
        }
        writeln!(out, "}} {};", t.meta_type_name()).unwrap();
    }
    out.push_str(&signature(t, inst.mode));
    out.push_str(" {\n");
    out.push_str(&body);
    if !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("}\n");
    Ok(out)
}

/// Replaces `%(name)` where `f` knows the name; other references stay.
pub fn expand(text: &str, f: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find("%(") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 2..];
        match after.find(')') {
            Some(end) => {
                let name = &after[..end];
                match f(name) {
                    Some(v) => out.push_str(&v),
                    None => {
                        out.push_str("%(");
                        out.push_str(name);
                        out.push(')');
                    }
                }
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[pos..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nda::DimsMismatch;

    fn filts_template(body: &str) -> CuclTemplate {
        CuclTemplate::new(
            "k",
            vec![ArgDecl::input("filts", &["out_chan", "in_chan", "y", "x"]), ArgDecl::output("out", &["x"])],
            body,
            &[],
        )
        .unwrap()
    }

    fn bindings(filts: &str) -> BTreeMap<String, DimsSpec> {
        BTreeMap::from([
            ("filts".to_string(), DimsSpec::parse(filts).unwrap()),
            ("out".to_string(), DimsSpec::parse("x:4").unwrap()),
        ])
    }

    #[test]
    fn check_args_examples() {
        let t = CuclTemplate::new(
            "k",
            vec![ArgDecl::input("filts", &["in_chan", "out_chan", "y", "x"])],
            "",
            &[],
        )
        .unwrap();
        let b = BTreeMap::from([("filts".to_string(), DimsSpec::parse("img:1,chan:3,y:4,x:4").unwrap())]);
        match check_args(&t, &b) {
            Err(CuclError::ArgMismatch { arg, mismatch: DimsMismatch::Name { position: 0, .. } }) => {
                assert_eq!(arg, "filts")
            }
            other => panic!("{other:?}"),
        }
        let ok = BTreeMap::from([("filts".to_string(), DimsSpec::parse("in_chan:1,out_chan:3,y:4,x:4").unwrap())]);
        assert!(check_args(&t, &ok).is_ok());
        assert_eq!(check_args(&t, &BTreeMap::new()), Err(CuclError::UnboundArg("filts".into())));
    }

    #[test]
    fn static_and_dynamic_expansion() {
        let body = "for(i=0;i<%(filts_out_chan_size);++i)";
        let inst = Instantiation {
            template: Arc::new(filts_template(body)),
            bindings: bindings("out_chan:96,in_chan:3,y:11,x:11"),
            mode: InstMode::Static,
            var_values: BTreeMap::new(),
        };
        let s = instantiate(&inst).unwrap();
        assert!(s.contains("for(i=0;i<96;++i)"), "{s}");
        let d = instantiate(&inst.with_mode(InstMode::Dynamic)).unwrap();
        assert!(d.contains("for(i=0;i<meta->filts_out_chan_size;++i)"), "{d}");
        assert!(d.contains("GLOBAL_MEM k_meta_t const * meta)"), "{d}");
        assert!(d.contains("  int filts_out_chan_size;\n"));
        assert!(!s.contains("%(") && !d.contains("%("));
    }

    #[test]
    fn no_vars_identity() {
        let body = "out[0] = filts[1];\n";
        let inst = Instantiation {
            template: Arc::new(filts_template(body)),
            bindings: bindings("out_chan:1,in_chan:1,y:1,x:2"),
            mode: InstMode::Static,
            var_values: BTreeMap::new(),
        };
        let s = instantiate(&inst).unwrap();
        assert!(s.contains(body));
        assert_eq!(instantiate(&inst).unwrap(), s);
    }

    #[test]
    fn unknown_and_missing_vars() {
        let err = CuclTemplate::new("k", vec![ArgDecl::output("out", &["x"])], "%(out_y_size)", &[]);
        assert_eq!(err.unwrap_err(), CuclError::UnknownTemplateVar("out_y_size".into()));
        let t = CuclTemplate::new("k", vec![ArgDecl::output("out", &["x"])], "%(loads)", &["loads"]).unwrap();
        let mut inst = Instantiation {
            template: Arc::new(t),
            bindings: BTreeMap::from([("out".to_string(), DimsSpec::parse("x:4").unwrap())]),
            mode: InstMode::Static,
            var_values: BTreeMap::new(),
        };
        assert_eq!(instantiate(&inst), Err(CuclError::MissingVarValue("loads".into())));
        inst.var_values.insert("loads".into(), "out[0] = %(out_x_size);".into());
        assert!(instantiate(&inst).unwrap().contains("out[0] = 4;"));
        inst.var_values.insert("loads".into(), "%(bogus)".into());
        assert_eq!(instantiate(&inst), Err(CuclError::UnresolvedInStatic("bogus".into())));
    }
}
