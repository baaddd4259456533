use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backend::run_kernel;
use crate::cucl::ir::KernelIr;
use crate::nda::make_nda;
use crate::oracle::{compare, noise, ref_conv, ref_pool_max, ref_relu, ToleranceSpec};

fn parse(src: &str) -> KernelIr {
    crate::cucl::parse_kernel(src).unwrap()
}

#[allow(clippy::too_many_arguments)]
fn conv(ksz: usize, stride: usize, pad: usize, oc: usize, b: usize, ic: usize, iy: usize, ix: usize) -> ConvOp {
    ConvOp::new(ConvParams { ksz, stride, pad, out_chans: oc }, None, b, ic, iy, ix).unwrap()
}

fn inputs(op: &ConvOp, seed: u64) -> (NdArray, NdArray, NdArray) {
    (noise(op.input.clone(), seed), noise(op.filts_dims(), seed + 1), noise(op.biases_dims(), seed + 2))
}

fn run_conv(plan: &KernelPlan, x: &(NdArray, NdArray, NdArray)) -> (NdArray, CostReport) {
    plan.run(&[&x.0, &x.1, &x.2]).unwrap_or_else(|e| panic!("{}: {e}\n{}", plan.label(), plan.source().unwrap()))
}

fn oracle(op: &ConvOp, x: &(NdArray, NdArray, NdArray)) -> NdArray {
    ref_conv(&x.0, &x.1, &x.2, op.params, op.act).unwrap()
}

fn check_oracle(op: &ConvOp, plan: &KernelPlan, seed: u64) {
    let x = inputs(op, seed);
    let (got, _) = run_conv(plan, &x);
    let want = oracle(op, &x);
    let tol = ToleranceSpec::for_reduction(op.in_chans() * op.params.ksz * op.params.ksz);
    let c = compare(&got, &want, tol).unwrap();
    assert!(c.pass, "{} on {:?}: max rel err {}", plan.label(), op, c.max_rel_err);
}

fn tp(mnt: (usize, usize), mnb: (usize, usize), kb: usize, vw: usize, lf: bool, li: bool) -> TuneParams {
    TuneParams { mnt, mnb, kb, vw, local_filts: lf, local_in: li }
}

#[test]
fn tune_params_text_round_trip() {
    let t = TuneParams::default();
    assert_eq!(t.to_string(), "MNt=4:4,MNb=16:16,Kb=4,vw=4,lf=0,li=0");
    assert_eq!(t.to_string().parse::<TuneParams>().unwrap(), t);
    assert!("MNt=4:3,MNb=16:16,Kb=4,vw=4,lf=0,li=0".parse::<TuneParams>().is_err());
    assert!("MNt=4:4,MNb=64:32,Kb=4,vw=4,lf=0,li=0".parse::<TuneParams>().is_err());
    assert!("garbage".parse::<TuneParams>().is_err());
}

#[test]
fn coop_load_counts_on_the_device() {
    for (w, n) in [(256, 96), (256, 64), (70, 100), (5, 5)] {
        let loads: String = gen_coop_load(&CoopLoadSpec::new(w, n, "filts", "filts_buf")).join("\n  ");
        let src = format!(
            "KERNEL_QUAL void k(GLOBAL_MEM float const * filts, GLOBAL_MEM float * out) {{
  LOCAL_MEM float filts_buf[{w}];
  int thread_id = LOCAL_ID_1D;
  {loads}
  BARRIER_SYNC;
  if (thread_id == 0) {{ for (int i = 0; i < {w}; ++i) {{ out[i] = filts_buf[i]; }} }}
}}"
        );
        let ir = parse(&src);
        let vals: Vec<f32> = (0..w).map(|v| v as f32 + 0.5).collect();
        let mut bufs = BTreeMap::from([
            ("filts".to_string(), make_nda(&["x"], &[w]).map(|a| NdArray::from_vec(a.dims().clone(), vals.clone()).unwrap()).unwrap()),
            ("out".to_string(), make_nda(&["x"], &[w]).unwrap()),
        ]);
        let r = run_kernel(&ir, LaunchConfig::new(1, n), &mut bufs, None).unwrap();
        assert_eq!(bufs["out"].elems(), &vals[..]);
        assert_eq!((r.global_loads, r.local_stores), (w as u64, w as u64), "W={w} N={n}");
    }
}

#[test]
fn conv_simple_single_tap() {
    let op = conv(1, 1, 0, 1, 1, 1, 1, 1);
    let plan = gen_conv_simple(&op, InstMode::Static).unwrap();
    let d = |dims: DimsSpec, v: f32| NdArray::from_vec(dims, vec![v]).unwrap();
    let (out, r) = plan.run(&[&d(op.input.clone(), 3.0), &d(op.filts_dims(), 2.0), &d(op.biases_dims(), 0.0)]).unwrap();
    assert_eq!(out.elems(), &[6.0]);
    assert_eq!(r.global_loads, 3);
}

#[test]
fn conv_simple_fig2_launch_geometry() {
    let op = conv(11, 4, 0, 96, 5, 3, 227, 227);
    assert_eq!(op.out.elem_count(), 55 * 55 * 96 * 5);
    let plan = gen_conv_simple(&op, InstMode::Static).unwrap();
    assert_eq!(plan.launch, LaunchConfig::new((55 * 55 * 96 * 5usize).div_ceil(256), 256));
}

#[test]
fn conv_simple_global_load_count() {
    // per output: the window and the filter once each, plus one bias
    for (k, ic, oc) in [(1, 1, 1), (3, 2, 3), (2, 4, 1)] {
        let op = conv(k, 1, 0, oc, 2, ic, 5, 4);
        let plan = gen_conv_simple(&op, InstMode::Static).unwrap();
        let (_, r) = run_conv(&plan, &inputs(&op, 3));
        let outs = op.out.elem_count() as u64;
        assert_eq!(r.global_loads, outs * (2 * (ic * k * k) as u64 + 1));
        assert_eq!(r.global_stores, outs);
    }
}

#[test]
fn every_conv_variant_matches_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    let mut cases = 0;
    while cases < 220 {
        let ksz = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=2);
        let pad = if rng.gen_bool(0.5) { rng.gen_range(0..ksz) } else { 0 };
        let iy = rng.gen_range(ksz.max(1)..=7);
        let ix = rng.gen_range(ksz.max(1)..=7);
        let (b, ic, oc) = (rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=9));
        let mut op = conv(ksz, stride, pad, oc, b, ic, iy, ix);
        if rng.gen_bool(0.3) {
            op.act = Some(Activation::Relu);
        }
        let vw = [1, 2, 4][rng.gen_range(0..3)];
        let t = tp(
            (rng.gen_range(1..=3), vw * rng.gen_range(1..=2)),
            (rng.gen_range(1..=4), rng.gen_range(1..=4)),
            rng.gen_range(1..=5),
            vw,
            rng.gen_bool(0.5),
            rng.gen_bool(0.5),
        );
        for v in Variant::CONV {
            let Ok(plan) = generate(v, &OpDesc::Conv(op.clone()), Some(&t), InstMode::Static) else { continue };
            check_oracle(&op, &plan, cases);
            cases += 1;
        }
    }
}

#[test]
fn fc_and_1x1_shapes() {
    let fc = conv(6, 1, 0, 40, 5, 3, 6, 6);
    let fc_op = OpDesc::Conv(fc.clone());
    assert_eq!(select_variant(&fc_op, None).0, Variant::ConvFc);
    let t = tp((2, 4), (2, 4), 4, 4, false, false);
    for (lf, li) in [(false, false), (true, false), (false, true), (true, true)] {
        let t = TuneParams { local_filts: lf, local_in: li, ..t };
        check_oracle(&fc, &gen_conv_fc(&fc, &t, InstMode::Static).unwrap(), 9);
        check_oracle(&fc, &gen_conv_fc(&fc, &t, InstMode::Dynamic).unwrap(), 9);
    }
    let fig2 = OpDesc::Conv(conv(11, 4, 0, 96, 5, 3, 227, 227));
    assert!(matches!(Variant::ConvFc.check(&fig2, Some(&t)), Err(GenError::Inapplicable { .. })));
    assert_eq!(select_variant(&fig2, None).0, Variant::ConvTiled);
    let one = conv(1, 1, 0, 24, 2, 16, 5, 5);
    assert_eq!(select_variant(&OpDesc::Conv(one.clone()), None).0, Variant::Conv1x1);
    check_oracle(&one, &gen_conv_1x1(&one, &t, InstMode::Static).unwrap(), 4);
    // appendix FC row
    let big = OpDesc::Conv(conv(6, 1, 0, 4096, 5, 256, 6, 6));
    assert!(Variant::ConvFc.check(&big, Some(&TuneParams::default())).is_ok());
}

#[test]
fn paper_tuning_point_on_1x1() {
    let op = conv(1, 1, 0, 512, 1, 8, 8, 8);
    let t = TuneParams::default();
    let plan = gen_conv_1x1(&op, &t, InstMode::Static).unwrap();
    assert_eq!(plan.launch.local_size, 256);
    let src = plan.source().unwrap();
    assert!(src.contains("acc_3_3") && !src.contains("acc_4_"));
    check_oracle(&op, &plan, 1);
}

#[test]
fn degenerate_blocking_equals_conv_simple() {
    let t = tp((1, 1), (1, 1), 1, 1, false, false);
    for op in [conv(3, 1, 1, 4, 2, 3, 5, 6), conv(2, 2, 0, 3, 1, 2, 6, 5), conv(1, 1, 0, 2, 2, 3, 3, 3)] {
        let x = inputs(&op, 11);
        let (a, _) = run_conv(&gen_conv_simple(&op, InstMode::Static).unwrap(), &x);
        let (b, _) = run_conv(&gen_conv_tiled(&op, &t, InstMode::Static).unwrap(), &x);
        assert_eq!(a, b);
    }
}

#[test]
fn fused_equals_unfused_then_relu() {
    let t = tp((2, 2), (2, 2), 3, 2, true, false);
    let mut op = conv(3, 1, 1, 5, 2, 3, 5, 5);
    let x = inputs(&op, 21);
    // shift values so the activation actually clips
    let shifted = NdArray::from_vec(x.2.dims().clone(), x.2.elems().iter().map(|v| v - 4.0).collect()).unwrap();
    let x = (x.0, x.1, shifted);
    for v in [Variant::ConvSimple, Variant::ConvTiled] {
        op.act = None;
        let plain = run_conv(&generate(v, &OpDesc::Conv(op.clone()), Some(&t), InstMode::Static).unwrap(), &x).0;
        op.act = Some(Activation::Relu);
        let fused = run_conv(&generate(v, &OpDesc::Conv(op.clone()), Some(&t), InstMode::Static).unwrap(), &x).0;
        let act = OpDesc::Act(ActOp { act: Activation::Relu, input: plain.dims().clone(), out: plain.dims().clone() });
        let (relu, _) = generate(Variant::Activation, &act, None, InstMode::Static).unwrap().run(&[&plain]).unwrap();
        assert_eq!(fused, relu);
        assert!(fused.elems().contains(&0.0));
    }
}

#[test]
fn unrolled_regions_are_loop_free() {
    let op = conv(3, 1, 1, 8, 2, 4, 6, 6);
    for kb in [1, 4, 5, 36, 40] {
        let t = tp((2, 4), (4, 2), kb, 4, kb % 2 == 0, kb == 4);
        let src = gen_conv_tiled(&op, &t, InstMode::Static).unwrap().source().unwrap();
        // only the chunk loop over K survives; register blocks and the
        // Kb-fold unroll are straight-line code
        let fors = src.matches("for (").count();
        assert_eq!(fors, (36 >= kb) as usize, "Kb={kb}");
    }
}

#[test]
fn pool_relu_and_xpose() {
    let input = NdArray::from_vec(canonical(&[1, 2, 7, 7]), vec![0.25; 98]).unwrap();
    let pool = PoolOp { params: PoolParams { ksz: 3, stride: 2, pad: 0 }, input: input.dims().clone(), out: canonical(&[1, 2, 3, 3]) };
    let (out, _) = gen_pool_max(&pool, InstMode::Static).unwrap().run(&[&input]).unwrap();
    assert!(out.elems().iter().all(|&v| v == 0.25));

    let rnd = noise(canonical(&[2, 3, 6, 5]), 5);
    for pad in [0, 1] {
        let p = PoolParams { ksz: 3, stride: 2, pad };
        let want = ref_pool_max(&rnd, p).unwrap();
        let op = PoolOp { params: p, input: rnd.dims().clone(), out: want.dims().clone() };
        let (got, _) = gen_pool_max(&op, InstMode::Dynamic).unwrap().run(&[&rnd]).unwrap();
        assert_eq!(got, want);
    }

    let x = NdArray::from_vec(DimsSpec::new(&["x"], &[3]).unwrap(), vec![-1.0, 0.0, 2.0]).unwrap();
    let act = ActOp { act: Activation::Relu, input: x.dims().clone(), out: x.dims().clone() };
    let (y, _) = gen_activation(&act, InstMode::Static).unwrap().run(&[&x]).unwrap();
    assert_eq!(y.elems(), &[0.0, 0.0, 2.0]);
    let act = ActOp { act: Activation::Relu, input: rnd.dims().clone(), out: rnd.dims().clone() };
    assert_eq!(gen_activation(&act, InstMode::Static).unwrap().run(&[&rnd]).unwrap().0, ref_relu(&rnd));

    // canonical -> channel-padded, permuted -> canonical
    let padded = DimsSpec::new(&["chan", "img", "y", "x"], &[8, 2, 6, 5]).unwrap();
    let fwd = XposeOp { input: rnd.dims().clone(), out: padded.clone() };
    let (mid, _) = gen_xpose(&fwd, InstMode::Static).unwrap().run(&[&rnd]).unwrap();
    assert_eq!(mid, convert_format(&rnd, &padded).unwrap());
    // dropping the padding again
    let rev = XposeOp { input: padded, out: canonical(&[2, 3, 6, 5]) };
    let (round, _) = gen_xpose(&rev, InstMode::Static).unwrap().run(&[&mid]).unwrap();
    assert_eq!(round, rnd);
    assert!(mid.elems()[3 * 60..].iter().all(|&v| v == 0.0));
}

#[test]
fn shipped_kernels_are_thread_order_independent() {
    let op = conv(3, 2, 1, 6, 2, 3, 7, 6);
    let x = inputs(&op, 8);
    let descr = OpDesc::Conv(op.clone());
    for t in [tp((2, 2), (2, 3), 2, 2, true, true), tp((1, 2), (4, 2), 3, 1, true, false), tp((2, 1), (3, 3), 4, 1, false, true)] {
        for v in Variant::CONV {
            let Ok(plan) = generate(v, &descr, Some(&t), InstMode::Static) else { continue };
            let base = run_conv(&plan, &x);
            for seed in 0..3 {
                let again = plan.run_ordered(&[&x.0, &x.1, &x.2], ThreadOrder::Shuffled(seed)).unwrap();
                assert_eq!(again.0, base.0, "{}", plan.label());
                assert_eq!(again.1.counters(), base.1.counters());
            }
        }
    }
}

#[test]
fn static_and_dynamic_agree() {
    let op = conv(3, 1, 1, 5, 2, 3, 5, 5);
    let x = inputs(&op, 2);
    let t = tp((2, 2), (2, 2), 2, 2, true, true);
    for v in Variant::CONV {
        let s = generate(v, &OpDesc::Conv(op.clone()), Some(&t), InstMode::Static);
        let Ok(s) = s else { continue };
        let d = generate(v, &OpDesc::Conv(op.clone()), Some(&t), InstMode::Dynamic).unwrap();
        let (a, ra) = run_conv(&s, &x);
        let (b, rb) = run_conv(&d, &x);
        assert_eq!(a, b);
        assert_eq!(ra.counters(), rb.counters());
        assert!(d.source().unwrap().contains("meta->"));
    }
}

#[test]
fn static_estimate_tracks_the_interpreter() {
    // guard-free kernels: the model is exact
    let op = conv(1, 1, 0, 8, 1, 4, 4, 4);
    let t = tp((2, 4), (8, 2), 2, 4, false, false);
    let plan = gen_conv_1x1(&op, &t, InstMode::Static).unwrap();
    let (_, r) = run_conv(&plan, &inputs(&op, 1));
    assert_eq!(plan.estimate().unwrap(), r.counters());
}

#[test]
fn emitted_dialects_run_identically() {
    let op = OpDesc::Conv(conv(3, 1, 1, 8, 1, 3, 6, 6));
    let t = TuneParams { mnt: (2, 2), mnb: (4, 4), kb: 4, vw: 1, local_filts: true, local_in: true };
    for mode in [InstMode::Static, InstMode::Dynamic] {
        let plan = generate(Variant::ConvTiled, &op, Some(&t), mode).unwrap();
        let inputs = crate::tuner::op_inputs(&op, 1);
        let refs: Vec<&NdArray> = inputs.iter().collect();
        let (want, _) = plan.run(&refs).unwrap();
        for d in Dialect::ALL {
            let prog = plan.compile_emitted(d).unwrap();
            let (got, _) = plan.run_compiled(&prog, &refs, ThreadOrder::Ascending).unwrap();
            assert_eq!(got, want, "{d:?}");
        }
    }
}
