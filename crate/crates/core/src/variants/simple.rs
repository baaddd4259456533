//! One-thread-per-output kernels: max pooling, activations, layout changes.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::*;
use crate::cucl::ArgDecl;

const POOL_BODY: &str = "  int gid = GLOBAL_ID_1D;
  if (gid < %(out_img_size)*%(out_chan_size)*%(out_y_size)*%(out_x_size)) {
    int ox = gid % %(out_x_size);
    int oy = (gid / %(out_x_size)) % %(out_y_size);
    int c = (gid / (%(out_x_size)*%(out_y_size))) % %(out_chan_size);
    int img = gid / (%(out_x_size)*%(out_y_size)*%(out_chan_size));
    float acc = -INFINITY;
    for (int ky = 0; ky < %(ksz); ++ky) {
      int iy = oy*%(stride) - %(pad) + ky;
      for (int kx = 0; kx < %(ksz); ++kx) {
        int ix = ox*%(stride) - %(pad) + kx;
        %(tap)
      }
    }
    out[img*%(out_img_stride) + c*%(out_chan_stride) + oy*%(out_y_stride) + ox*%(out_x_stride)] = acc;
  }
";

const POOL_TAP: &str =
    "acc = fmax(acc, in[img*%(in_img_stride) + c*%(in_chan_stride) + iy*%(in_y_stride) + ix*%(in_x_stride)]);";

/// Max pooling; padding cells never win the max.
pub fn gen_pool_max(op: &PoolOp, mode: InstMode) -> Result<KernelPlan, GenError> {
    let t = CuclTemplate::new(
        "pool_max",
        vec![ArgDecl::input("in", &CANONICAL), ArgDecl::output("out", &CANONICAL)],
        POOL_BODY,
        &["ksz", "stride", "pad", "tap"],
    )?;
    let tap = if op.params.pad > 0 {
        format!("if (iy >= 0 && iy < {} && ix >= 0 && ix < {}) {{ {POOL_TAP} }}", sz("in", "y"), sz("in", "x"))
    } else {
        POOL_TAP.to_string()
    };
    let bindings = BTreeMap::from([("in".to_string(), op.input.clone()), ("out".to_string(), op.out.clone())]);
    let vars = [
        ("ksz", op.params.ksz.to_string()),
        ("stride", op.params.stride.to_string()),
        ("pad", op.params.pad.to_string()),
        ("tap", tap),
    ];
    let launch = LaunchConfig::covering(op.out.elem_count(), SIMPLE_WG);
    Ok(KernelPlan::new(Variant::PoolMax, None, t, bindings, &vars, mode, launch, &["in"]))
}

/// Declares one coordinate per dimension of `arg`, decoded from `gid` in
/// row-major order, and returns the guard on the total element count.
fn decode(body: &mut String, arg: &str, dims: &DimsSpec) -> String {
    let names: Vec<&str> = dims.names().collect();
    for (i, d) in names.iter().enumerate() {
        let inner: Vec<String> = names[i + 1..].iter().map(|n| sz(arg, n)).collect();
        let q = if inner.is_empty() { "gid".to_string() } else { format!("(gid / ({}))", inner.join("*")) };
        if i == 0 {
            writeln!(body, "    int c_{d} = {q};").unwrap();
        } else {
            writeln!(body, "    int c_{d} = {q} % {};", sz(arg, d)).unwrap();
        }
    }
    names.iter().map(|n| sz(arg, n)).collect::<Vec<_>>().join("*")
}

fn offset(arg: &str, dims: &DimsSpec) -> String {
    dims.names().map(|d| format!("c_{d}*{}", st(arg, d))).collect::<Vec<_>>().join(" + ")
}

/// Elementwise activation; `out` may differ from `in` only in strides.
pub fn gen_activation(op: &ActOp, mode: InstMode) -> Result<KernelPlan, GenError> {
    let names: Vec<&str> = op.out.names().collect();
    if !op.input.names().eq(names.iter().copied()) {
        return inapplicable(Variant::Activation, "input and output dimension orders differ");
    }
    let mut decl = String::new();
    let total = decode(&mut decl, "out", &op.out);
    let body = format!(
        "  int gid = GLOBAL_ID_1D;\n  if (gid < {total}) {{\n{decl}    float v = in[{}];\n    out[{}] = {};\n  }}\n",
        offset("in", &op.input),
        offset("out", &op.out),
        write_xform(Some(op.act), "v"),
    );
    let t = CuclTemplate::new(
        &format!("act_{}", op.act.tag()),
        vec![ArgDecl::input("in", &names), ArgDecl::output("out", &names)],
        &body,
        &[],
    )?;
    let bindings = BTreeMap::from([("in".to_string(), op.input.clone()), ("out".to_string(), op.out.clone())]);
    let launch = LaunchConfig::covering(op.out.elem_count(), SIMPLE_WG);
    Ok(KernelPlan::new(Variant::Activation, None, t, bindings, &[], mode, launch, &["in"]))
}

/// Reorders `in` into the layout of `out`, zero-filling grown dimensions
/// and cropping shrunk ones.
pub fn gen_xpose(op: &XposeOp, mode: InstMode) -> Result<KernelPlan, GenError> {
    let mut a: Vec<&str> = op.input.names().collect();
    let mut b: Vec<&str> = op.out.names().collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(GenError::BadOp(format!("cannot convert {} to {}", op.input.names_joined(), op.out.names_joined())));
    }
    if !op.out.is_dense() {
        return inapplicable(Variant::Xpose, "target layout must be dense");
    }
    let mut decl = String::new();
    let total = decode(&mut decl, "out", &op.out);
    // cells past the source extent are padding
    let inside: Vec<String> = op
        .out
        .names()
        .filter(|d| op.input.size_of(d) < op.out.size_of(d))
        .map(|d| format!("c_{d} < {}", sz("in", d)))
        .collect();
    let read = format!("in[{}]", offset("in", &op.input));
    let value = if inside.is_empty() { read } else { format!("({}) ? {read} : 0.0f", inside.join(" && ")) };
    let body = format!(
        "  int gid = GLOBAL_ID_1D;\n  if (gid < {total}) {{\n{decl}    out[{}] = {value};\n  }}\n",
        offset("out", &op.out)
    );
    let in_names: Vec<&str> = op.input.names().collect();
    let out_names: Vec<&str> = op.out.names().collect();
    let t = CuclTemplate::new("xpose", vec![ArgDecl::input("in", &in_names), ArgDecl::output("out", &out_names)], &body, &[])?;
    let bindings = BTreeMap::from([("in".to_string(), op.input.clone()), ("out".to_string(), op.out.clone())]);
    let launch = LaunchConfig::covering(op.out.elem_count(), SIMPLE_WG);
    Ok(KernelPlan::new(Variant::Xpose, None, t, bindings, &[], mode, launch, &["in"]))
}
