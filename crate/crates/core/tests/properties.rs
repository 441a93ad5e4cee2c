//! Cross-module invariants on randomized instances.

mod common;

use common::*;
use lumpkit::aggregation::{
    aggregate_initial, build_partitioned, induced_dynamics, optimal_pi0,
    reduced_transient_continuous, uniform_alpha, ReducedModel,
};
use lumpkit::benchlab::builtin_fixture;
use lumpkit::bounds::{actual_error, error_matrix, initial_error, TimePoint};
use lumpkit::chain::{ctmc_transient, weighted_abs_inner, DistVector, MarkovChain, DEFAULT_TOL};
use lumpkit::linalg::l1_norm;
use lumpkit::schur::{schur_dynamic_exact, SchurConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    /// Both halves of the norm-product inequality:
    /// ||v^T A||_1 <= <|v|, |A| 1> <= ||v||_1 ||A||_inf.
    #[test]
    fn norm_product_chain(
        v in proptest::collection::vec(-2.0f64..2.0, 4),
        a in proptest::collection::vec(-2.0f64..2.0, 4 * 6),
    ) {
        let v = DVector::from_vec(v);
        let a = DMatrix::from_row_slice(4, 6, &a);
        let lhs = l1_norm(&(a.transpose() * &v));
        let mid = weighted_abs_inner(&v, &a).unwrap();
        let rhs = l1_norm(&v) * lumpkit::linalg::inf_norm(&a);
        prop_assert!(lhs <= mid + 1e-12);
        prop_assert!(mid <= rhs + 1e-12);
    }
}

#[test]
fn constant_error_law_for_dominating_initial_vectors() {
    // Dynamic-exact model with pi0^T A >= p0^T entrywise keeps the error
    // frozen at the initial error for every step.
    let f = builtin_fixture("CHAIN_C").unwrap();
    let disagg =
        build_partitioned(f.partition.as_ref().unwrap(), f.alpha.as_ref().unwrap()).unwrap();
    let dynamics = induced_dynamics(&disagg, &f.chain).unwrap();
    let mut r = rng(414);
    for _ in 0..10 {
        let p0 = random_p0(&mut r, 3);
        // Dominating reduced vector: aggregate masses scaled up.
        let mut pi0 = aggregate_initial(&p0, &disagg).unwrap();
        let a = disagg.a();
        for chi in 0..2 {
            let mut scale = 1.0f64;
            for s in 0..3 {
                if a[(chi, s)] > 0.0 {
                    scale = scale.max(p0.values()[s] / a[(chi, s)]);
                }
            }
            pi0[chi] = scale;
        }
        let back = a.transpose() * &pi0;
        for s in 0..3 {
            assert!(back[s] >= p0.values()[s] - 1e-12);
        }
        let initial = initial_error(&pi0, a, &p0);
        let model =
            ReducedModel::new(disagg.clone(), dynamics.clone(), pi0, true, DEFAULT_TOL).unwrap();
        let p = match &f.chain {
            MarkovChain::Dtmc(p) => p,
            _ => unreachable!(),
        };
        for k in 0..=50 {
            let err = actual_error(&f.chain, &model, &p0, TimePoint::Step(k)).unwrap();
            assert!((err - initial).abs() <= 1e-10, "k={k}: {err} vs {initial}");
            // The approximation also stays an entrywise upper envelope.
            let (_, approx) = lumpkit::aggregation::reduced_transient_discrete(&model, k);
            let exact = lumpkit::chain::dtmc_transient(p, &p0, k);
            for s in 0..3 {
                assert!(approx[s] >= exact.values()[s] - 1e-12, "k={k} s={s}");
            }
        }
    }
}

#[test]
fn dynamic_exact_ctmc_marginals_follow_reduced_exponential() {
    // For a dynamic-exact CTMC aggregation and compatible p0:
    // p0^T e^{Qt} Lambda = p0^T Lambda e^{Theta t}.
    let (p, partition) = lumpkit::benchlab::gen_exactly_lumpable(20, 4, 99).unwrap();
    // Q = P - I is a generator, exactly lumpable for the same partition.
    let n = 20;
    let mut dense = p.matrix().to_dense();
    for i in 0..n {
        dense[(i, i)] -= 1.0;
    }
    let q = lumpkit::chain::GeneratorMatrix::new_unchecked(
        lumpkit::sparse::SparseMatrix::from_dense(&dense),
    )
    .unwrap();
    let chain = MarkovChain::Ctmc(q.clone());
    let alpha = uniform_alpha(&partition);
    let disagg = build_partitioned(&partition, &alpha).unwrap();
    let theta = induced_dynamics(&disagg, &chain).unwrap();
    let err = error_matrix(
        &ReducedModel::new(
            disagg.clone(),
            theta.clone(),
            DVector::zeros(4),
            false,
            DEFAULT_TOL,
        )
        .unwrap(),
        &chain,
    )
    .unwrap();
    assert!(
        err.inf_norm < 1e-12,
        "aggregation not dynamic-exact: {}",
        err.inf_norm
    );

    let p0 = DistVector::uniform(n); // compatible with uniform alpha
    let pi0 = aggregate_initial(&p0, &disagg).unwrap();
    let model = ReducedModel::new(disagg.clone(), theta, pi0, false, DEFAULT_TOL).unwrap();
    for t in [0.25, 0.5, 1.0, 2.0] {
        let full = ctmc_transient(&q, &p0, t, 1e-13).unwrap();
        let marginals =
            aggregate_initial(&DistVector::signed(full.values.clone()), &disagg).unwrap();
        let (pi_t, _) = reduced_transient_continuous(&model, t).unwrap();
        assert!(
            l1_norm(&(marginals - pi_t)) < 1e-8,
            "marginal law violated at t={t}"
        );
    }
}

#[test]
fn schur_with_optimal_pi0_meets_corollary_bound() {
    // Dynamic-exact reductions bound the error by the initial error alone;
    // pinned at 1/18 for the three-state comparison fixture and at 1 for
    // the cycle.
    let b = builtin_fixture("CHAIN_B").unwrap();
    let red = schur_dynamic_exact(&b.chain, 2, &SchurConfig::default()).unwrap();
    let p0 = b.p0.as_ref().unwrap();
    let (pi0, objective) = optimal_pi0(&red.a, p0, false).unwrap();
    assert!((objective - 1.0 / 18.0).abs() < 1e-10);
    let model = ReducedModel::new(
        lumpkit::aggregation::Disaggregation::new_abstract(red.a.clone()),
        red.dynamics.clone(),
        pi0,
        true,
        DEFAULT_TOL,
    )
    .unwrap();
    for k in 0..=100 {
        let err = actual_error(&b.chain, &model, p0, TimePoint::Step(k)).unwrap();
        assert!(err <= objective + 1e-10, "k={k}: {err}");
    }
    // The approximation converges to (133/450, 76/225, 19/45); with the
    // transient mode decaying as (-1/4)^k, step 100 is at the limit.
    let (_, approx) = lumpkit::aggregation::reduced_transient_discrete(&model, 100);
    let limit = [133.0 / 450.0, 76.0 / 225.0, 19.0 / 45.0];
    for s in 0..3 {
        assert!(
            (approx[s] - limit[s]).abs() < 1e-9,
            "state {s}: {}",
            approx[s]
        );
    }

    let cyc = builtin_fixture("CHAIN_CYC").unwrap();
    let cfg = SchurConfig {
        drop_stationary: true,
        ..SchurConfig::default()
    };
    let red = schur_dynamic_exact(&cyc.chain, 2, &cfg).unwrap();
    let p0 = cyc.p0.as_ref().unwrap();
    let (pi0, objective) = optimal_pi0(&red.a, p0, false).unwrap();
    assert!((objective - 1.0).abs() < 1e-9);
    let model = ReducedModel::new(
        lumpkit::aggregation::Disaggregation::new_abstract(red.a.clone()),
        red.dynamics.clone(),
        pi0,
        true,
        DEFAULT_TOL,
    )
    .unwrap();
    for k in 0..=30 {
        let err = actual_error(&cyc.chain, &model, p0, TimePoint::Step(k)).unwrap();
        assert!(err <= objective + 1e-9, "k={k}: {err}");
    }
}

#[test]
fn tightness_ratio_converges_for_ctmcs() {
    // ||e_t||_1 / t approaches ||pi0||_1 ||E||_inf as t -> 0.
    let mut r = rng(2718);
    for trial in 0..10 {
        let n = 4 + (trial % 5);
        let q = random_ctmc(&mut r, n);
        let chain = MarkovChain::Ctmc(q.clone());
        let m = 2 + (trial % 2);
        let partition = random_partition(&mut r, n, m);
        let alpha = random_alpha(&mut r, &partition);
        let disagg = build_partitioned(&partition, &alpha).unwrap();
        let theta = induced_dynamics(&disagg, &chain).unwrap();
        let inst = match lumpkit::bounds::tightness_instance(disagg.a(), &theta, &chain) {
            Ok(inst) => inst,
            Err(_) => continue, // vanishing error matrix
        };
        let model =
            ReducedModel::new(disagg.clone(), theta, inst.pi0.clone(), false, DEFAULT_TOL).unwrap();
        for t in [1e-3, 1e-4, 1e-5] {
            let err = actual_error(&chain, &model, &inst.p0, TimePoint::Time(t)).unwrap();
            let ratio = err / t / inst.achieved;
            assert!(
                (ratio - 1.0).abs() < 0.01,
                "trial {trial} t={t}: ratio {ratio}"
            );
        }
    }
}
