//! The fallback convolution: one thread per output element.

use std::collections::BTreeMap;

use super::*;
use crate::cucl::ArgDecl;

const BODY: &str = "  int gid = GLOBAL_ID_1D;
  if (gid < %(out_img_size)*%(out_chan_size)*%(out_y_size)*%(out_x_size)) {
    int ox = gid % %(out_x_size);
    int oy = (gid / %(out_x_size)) % %(out_y_size);
    int oc = (gid / (%(out_x_size)*%(out_y_size))) % %(out_chan_size);
    int img = gid / (%(out_x_size)*%(out_y_size)*%(out_chan_size));
    float acc = 0.0f;
    for (int ic = 0; ic < %(filts_in_chan_size); ++ic) {
      for (int ky = 0; ky < %(filts_y_size); ++ky) {
        int iy = oy*%(stride) - %(pad) + ky;
        for (int kx = 0; kx < %(filts_x_size); ++kx) {
          int ix = ox*%(stride) - %(pad) + kx;
          %(tap)
        }
      }
    }
    float v = acc + biases[oc*%(biases_out_chan_stride)];
    out[img*%(out_img_stride) + oc*%(out_chan_stride) + oy*%(out_y_stride) + ox*%(out_x_stride)] = %(out_write_xform);
  }
";

const TAP: &str = "acc = fma(in[img*%(in_img_stride) + ic*%(in_chan_stride) + iy*%(in_y_stride) + ix*%(in_x_stride)], \
filts[oc*%(filts_out_chan_stride) + ic*%(filts_in_chan_stride) + ky*%(filts_y_stride) + kx*%(filts_x_stride)], acc);";

pub fn gen_conv_simple(op: &ConvOp, mode: InstMode) -> Result<KernelPlan, GenError> {
    let t = CuclTemplate::new(
        "conv_simple",
        vec![
            ArgDecl::input("in", &CANONICAL),
            ArgDecl::input("filts", &["out_chan", "in_chan", "y", "x"]),
            ArgDecl::input("biases", &["out_chan"]),
            ArgDecl::output("out", &CANONICAL),
        ],
        BODY,
        &["stride", "pad", "tap", "out_write_xform"],
    )?;
    // padding taps are skipped, so only padded convolutions need the guard
    let tap = if op.params.pad > 0 {
        format!("if (iy >= 0 && iy < {} && ix >= 0 && ix < {}) {{ {TAP} }}", sz("in", "y"), sz("in", "x"))
    } else {
        TAP.to_string()
    };
    let bindings = BTreeMap::from([
        ("in".to_string(), op.input.clone()),
        ("filts".to_string(), op.filts_dims()),
        ("biases".to_string(), op.biases_dims()),
        ("out".to_string(), op.out.clone()),
    ]);
    let vars = [
        ("stride", op.params.stride.to_string()),
        ("pad", op.params.pad.to_string()),
        ("tap", tap),
        ("out_write_xform", write_xform(op.act, "v")),
    ];
    let launch = LaunchConfig::covering(op.out.elem_count(), SIMPLE_WG);
    Ok(KernelPlan::new(Variant::ConvSimple, None, t, bindings, &vars, mode, launch, &["in", "filts", "biases"]))
}
