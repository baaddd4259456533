//! Emitted kernel sources compared byte-for-byte with checked-in copies.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test --test golden`.

use std::path::PathBuf;

use cucl_core::backend::emit_file_name;
use cucl_core::cucl::{Dialect, InstMode};
use cucl_core::frontend::{Activation, ConvParams, PoolParams};
use cucl_core::tuner::signature;
use cucl_core::variants::{canonical, generate, ActOp, ConvOp, OpDesc, PoolOp, TuneParams, Variant, XposeOp};
use cucl_core::nda::DimsSpec;

fn cases() -> Vec<(Variant, OpDesc, Option<TuneParams>, InstMode)> {
    let conv = |k, s, p, oc, b, ic, y, x, act| OpDesc::Conv(ConvOp::new(ConvParams { ksz: k, stride: s, pad: p, out_chans: oc }, act, b, ic, y, x).unwrap());
    let t = TuneParams { mnt: (2, 4), mnb: (8, 8), kb: 4, vw: 4, local_filts: false, local_in: false };
    let tl = TuneParams { local_filts: true, local_in: true, ..t };
    let c3 = conv(3, 1, 1, 32, 1, 6, 10, 10, None);
    let c1 = conv(1, 1, 0, 32, 2, 10, 7, 7, Some(Activation::Relu));
    let fc = conv(6, 1, 0, 64, 4, 8, 6, 6, None);
    let input = canonical(&[1, 4, 9, 9]);
    vec![
        (Variant::ConvSimple, c3.clone(), None, InstMode::Static),
        (Variant::ConvSimple, c3.clone(), None, InstMode::Dynamic),
        (Variant::ConvTiled, c3.clone(), Some(t), InstMode::Static),
        (Variant::ConvTiled, c3, Some(tl), InstMode::Static),
        (Variant::Conv1x1, c1.clone(), Some(t), InstMode::Static),
        (Variant::Conv1x1, c1, Some(tl), InstMode::Dynamic),
        (Variant::ConvFc, fc, Some(TuneParams { mnt: (1, 4), ..t }), InstMode::Static),
        (
            Variant::PoolMax,
            OpDesc::Pool(PoolOp { params: PoolParams { ksz: 3, stride: 2, pad: 1 }, input: input.clone(), out: canonical(&[1, 4, 5, 5]) }),
            None,
            InstMode::Static,
        ),
        (Variant::Activation, OpDesc::Act(ActOp { act: Activation::Relu, input: input.clone(), out: input.clone() }), None, InstMode::Static),
        (
            Variant::Xpose,
            OpDesc::Xpose(XposeOp { input, out: DimsSpec::new(&["img", "y", "x", "chan"], &[1, 9, 9, 8]).unwrap() }),
            None,
            InstMode::Static,
        ),
    ]
}

#[test]
fn emitted_sources_match_golden() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut mismatched = Vec::new();
    for (v, op, t, mode) in cases() {
        let plan = generate(v, &op, t.as_ref(), mode).unwrap();
        let label = format!("{}{}", plan.file_tag(), if mode == InstMode::Dynamic { "-dyn" } else { "" });
        for d in Dialect::ALL {
            let src = plan.emit(d).unwrap();
            let path = dir.join(emit_file_name(&signature(&op), &label, d));
            if update {
                std::fs::create_dir_all(&dir).unwrap();
                std::fs::write(&path, &src).unwrap();
            } else {
                let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                if want != src {
                    mismatched.push(path.display().to_string());
                }
            }
        }
    }
    assert!(mismatched.is_empty(), "differs from golden: {mismatched:?}");
}
