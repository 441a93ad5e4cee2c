//! Benchmarks of the reduction pipeline on generated chains.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use lumpkit::aggregation::{build_partitioned, induced_dynamics, proportional_alpha};
use lumpkit::benchlab::{gen_aggregatable, gen_exactly_lumpable, perturb, GenSpec};
use lumpkit::bounds::error_matrix_parts;
use lumpkit::chain::{dtmc_transient, DistVector, MarkovChain};
use lumpkit::lumpability::coarsest_exactly_lumpable;
use lumpkit::schur::{schur_dynamic_exact, SchurConfig};
use lumpkit::search::{refine_almost_exact, svd_dir, RefineConfig, SvdConfig};

fn desk_chain() -> lumpkit::TransitionMatrix {
    let spec = GenSpec {
        n: 200,
        m: 20,
        block_zero_prob: 0.5,
        perturb_magnitude: 0.002,
        seed: 1,
    };
    let (p, _, _) = gen_aggregatable(&spec).unwrap();
    perturb(&p, spec.perturb_magnitude, 2)
}

fn bench_search(c: &mut Criterion) {
    let p = desk_chain();
    c.bench_function("svd_dir n=200", |b| {
        b.iter(|| {
            svd_dir(
                black_box(&p),
                &SvdConfig {
                    eps: 0.2,
                    delta: 0.05,
                    fixed_l: None,
                },
            )
        })
    });
    let chain = MarkovChain::Dtmc(p.clone());
    c.bench_function("refine n=200 eps=0.1", |b| {
        b.iter(|| {
            refine_almost_exact(
                black_box(&chain),
                &RefineConfig {
                    eps: 0.1,
                    ..RefineConfig::default()
                },
            )
        })
    });
}

fn bench_model_error(c: &mut Criterion) {
    let p = desk_chain();
    let chain = MarkovChain::Dtmc(p);
    let partition = refine_almost_exact(
        &chain,
        &RefineConfig {
            eps: 0.1,
            ..RefineConfig::default()
        },
    );
    c.bench_function("induced model + error norm", |b| {
        b.iter(|| {
            let alpha = proportional_alpha(&chain, &partition, true).unwrap();
            let disagg = build_partitioned(&partition, &alpha).unwrap();
            let dynamics = induced_dynamics(&disagg, &chain).unwrap();
            error_matrix_parts(disagg.a(), &dynamics, &chain)
                .unwrap()
                .inf_norm
        })
    });
}

fn bench_partition_refinement(c: &mut Criterion) {
    let (p, _) = gen_exactly_lumpable(300, 25, 3).unwrap();
    let chain = MarkovChain::Dtmc(p);
    c.bench_function("coarsest exactly lumpable n=300", |b| {
        b.iter(|| coarsest_exactly_lumpable(black_box(&chain)))
    });
}

fn bench_schur(c: &mut Criterion) {
    let (p, _, _) = gen_aggregatable(&GenSpec {
        n: 100,
        m: 10,
        block_zero_prob: 0.3,
        perturb_magnitude: 0.0,
        seed: 5,
    })
    .unwrap();
    let p = perturb(&p, 0.01, 6);
    let chain = MarkovChain::Dtmc(p);
    c.bench_function("schur reduction n=100 m=10", |b| {
        b.iter(|| schur_dynamic_exact(black_box(&chain), 10, &SchurConfig::default()).unwrap())
    });
}

fn bench_transient(c: &mut Criterion) {
    let p = desk_chain();
    let p0 = DistVector::uniform(200);
    c.bench_function("dtmc transient k=100 n=200", |b| {
        b.iter(|| dtmc_transient(black_box(&p), &p0, 100))
    });
}

criterion_group!(
    benches,
    bench_search,
    bench_model_error,
    bench_partition_refinement,
    bench_schur,
    bench_transient
);
criterion_main!(benches);
