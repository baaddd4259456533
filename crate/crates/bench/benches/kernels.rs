use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use cucl_bench::{conv1x1, conv3x3};
use cucl_core::backend::ThreadOrder;
use cucl_core::cucl::InstMode;
use cucl_core::nda::NdArray;
use cucl_core::tuner::{op_inputs, sweep, SweepConfig, TuneSpace};
use cucl_core::variants::{gen_coop_load, generate, CoopLoadSpec, TuneParams, Variant};

fn interpreter(c: &mut Criterion) {
    let mut g = c.benchmark_group("interpret");
    let t = TuneParams::default();
    for (name, op, variants) in [
        ("conv3x3", conv3x3(200_000), [Variant::ConvSimple, Variant::ConvTiled]),
        ("conv1x1", conv1x1(200_000), [Variant::ConvSimple, Variant::Conv1x1]),
    ] {
        let inputs = op_inputs(&op, 1);
        let refs: Vec<&NdArray> = inputs.iter().collect();
        for v in variants {
            let plan = generate(v, &op, v.is_tunable().then_some(&t), InstMode::Static).unwrap();
            let prog = plan.compile().unwrap();
            g.bench_function(format!("{name}/{v}"), |b| {
                b.iter(|| plan.run_compiled(&prog, black_box(&refs), ThreadOrder::Ascending).unwrap())
            });
        }
    }
    g.finish();
}

fn codegen(c: &mut Criterion) {
    let op = conv3x3(2_000_000);
    let t = TuneParams { local_filts: true, local_in: true, ..TuneParams::default() };
    c.bench_function("generate+compile/conv_tiled", |b| {
        b.iter(|| generate(Variant::ConvTiled, black_box(&op), Some(&t), InstMode::Static).unwrap().compile().unwrap())
    });
    c.bench_function("estimate/conv_tiled", |b| {
        let plan = generate(Variant::ConvTiled, &op, Some(&t), InstMode::Static).unwrap();
        b.iter(|| plan.estimate().unwrap())
    });
    c.bench_function("coop_load/256x96", |b| b.iter(|| gen_coop_load(black_box(&CoopLoadSpec::new(256, 96, "filts", "filts_buf")))));
}

fn tuning(c: &mut Criterion) {
    let op = conv1x1(50_000);
    let cfg = SweepConfig { space: TuneSpace::manual(), jobs: Some(1), ..Default::default() };
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("conv1x1/manual", |b| b.iter(|| sweep(black_box(&op), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, interpreter, codegen, tuning);
criterion_main!(benches);
