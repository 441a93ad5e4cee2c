//! Certified error bounds for reduced-model transient and stationary
//! approximations, the tightness construction, and actual-error measurement
//! against the exact solvers.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::aggregation::{reduced_transient_continuous, reduced_transient_discrete, ReducedModel};
use crate::chain::{ctmc_transient, dtmc_transient, DistVector, MarkovChain, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{expm, inf_norm, l1_norm};

/// `E = Pi A - A P` (resp. `Theta A - A Q`) with its absolute row sums
/// `tau` and `||E||_inf = max tau`.
#[derive(Debug, Clone)]
pub struct ErrorMatrix {
    pub e: DMatrix<f64>,
    pub tau: DVector<f64>,
    pub inf_norm: f64,
}

/// Error matrix from the raw pieces; `a` is m-by-n.
pub fn error_matrix_parts(
    a: &DMatrix<f64>,
    dynamics: &DMatrix<f64>,
    chain: &MarkovChain,
) -> Result<ErrorMatrix> {
    if a.ncols() != chain.n() || dynamics.nrows() != a.nrows() || dynamics.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "error matrix needs A ({}x{}) and dynamics ({}x{}) matching an n={} chain",
            a.nrows(),
            a.ncols(),
            dynamics.nrows(),
            dynamics.ncols(),
            chain.n()
        )));
    }
    let e = dynamics * a - chain.matrix().dense_mul_left(a);
    let tau = DVector::from_iterator(
        e.nrows(),
        (0..e.nrows()).map(|i| (0..e.ncols()).map(|j| e[(i, j)].abs()).sum::<f64>()),
    );
    let inf_norm = tau.max();
    Ok(ErrorMatrix { e, tau, inf_norm })
}

pub fn error_matrix(model: &ReducedModel, chain: &MarkovChain) -> Result<ErrorMatrix> {
    if model.discrete != chain.is_discrete() {
        return Err(Error::Precondition(
            "model and chain disagree on time kind".into(),
        ));
    }
    error_matrix_parts(model.disagg.a(), &model.dynamics, chain)
}

/// `||pi_0^T A - p_0^T||_1`, the part of the error independent of the
/// dynamics.
pub fn initial_error(pi0: &DVector<f64>, a: &DMatrix<f64>, p0: &DistVector) -> f64 {
    l1_norm(&(a.transpose() * pi0 - p0.values()))
}

fn is_probability_vector(v: &DVector<f64>, tol: f64) -> bool {
    v.iter().all(|&x| x >= -tol) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Per-step bound curves for a reduced DTMC model.
#[derive(Debug, Clone, Serialize)]
pub struct DtmcBoundReport {
    pub initial_error: f64,
    /// Running sums of the per-step scalar products; index k.
    pub precise: Vec<f64>,
    /// Geometric-sum bound; index k.
    pub general: Vec<f64>,
    /// Stochastic-case bound, present only when its preconditions hold.
    pub simple: Option<Vec<f64>>,
    /// Why `simple` is missing, when it is.
    pub simple_omitted: Option<String>,
    pub pi_inf_norm: f64,
    pub e_inf_norm: f64,
    /// Preconditions that were checked, for the record.
    pub dynamics_stochastic: bool,
    pub pi0_probability: bool,
}

/// All three transient bound variants over `k = 0..=k_max`.
pub fn dtmc_bounds(
    model: &ReducedModel,
    chain: &MarkovChain,
    p0: &DistVector,
    k_max: usize,
) -> Result<DtmcBoundReport> {
    if !model.discrete || !chain.is_discrete() {
        return Err(Error::UnsupportedKind("DTMC models".into()));
    }
    let err = error_matrix(model, chain)?;
    let initial = initial_error(&model.pi0, model.disagg.a(), p0);
    let pi_inf_norm = inf_norm(&model.dynamics);

    let mut precise = Vec::with_capacity(k_max + 1);
    precise.push(initial);
    let mut pi = model.pi0.clone();
    for _ in 0..k_max {
        let inner: f64 = pi
            .iter()
            .zip(err.tau.iter())
            .map(|(&p, &t)| p.abs() * t)
            .sum();
        precise.push(precise.last().unwrap() + inner);
        pi = model.dynamics.transpose() * pi;
    }

    let pi0_l1 = l1_norm(&model.pi0);
    let mut general = Vec::with_capacity(k_max + 1);
    if (pi_inf_norm - 1.0).abs() < 1e-8 {
        // Direct summation avoids cancellation in the closed form.
        let mut geom = 0.0;
        let mut power = 1.0;
        for k in 0..=k_max {
            general.push(initial + pi0_l1 * err.inf_norm * geom);
            if k < k_max {
                geom += power;
                power *= pi_inf_norm;
            }
        }
    } else {
        for k in 0..=k_max {
            let geom = (pi_inf_norm.powi(k as i32) - 1.0) / (pi_inf_norm - 1.0);
            general.push(initial + pi0_l1 * err.inf_norm * geom);
        }
    }

    let dynamics_stochastic = model.stochastic_flag;
    let pi0_probability = is_probability_vector(&model.pi0, DEFAULT_TOL);
    let (simple, simple_omitted) = if dynamics_stochastic && pi0_probability {
        let curve = (0..=k_max)
            .map(|k| initial + k as f64 * err.inf_norm)
            .collect();
        (Some(curve), None)
    } else {
        let mut reasons = Vec::new();
        if !dynamics_stochastic {
            reasons.push("reduced dynamics is not stochastic");
        }
        if !pi0_probability {
            reasons.push("pi0 is not a probability distribution");
        }
        (None, Some(reasons.join("; ")))
    };

    Ok(DtmcBoundReport {
        initial_error: initial,
        precise,
        general,
        simple,
        simple_omitted,
        pi_inf_norm,
        e_inf_norm: err.inf_norm,
        dynamics_stochastic,
        pi0_probability,
    })
}

/// Bound curves for a reduced CTMC model over a uniform time grid.
#[derive(Debug, Clone, Serialize)]
pub struct CtmcBoundReport {
    pub initial_error: f64,
    /// Grid points `0, h, .., t_max`.
    pub times: Vec<f64>,
    /// Trapezoid estimate of the integral bound. NOT certified: the
    /// quadrature error is unqualified.
    pub precise_estimate: Vec<f64>,
    /// Exponential-growth bound; certified.
    pub general: Vec<f64>,
    /// Generator-case linear bound; certified when present.
    pub simple: Option<Vec<f64>>,
    pub simple_omitted: Option<String>,
    pub quad_step: f64,
    pub theta_inf_norm: f64,
    pub e_inf_norm: f64,
    pub dynamics_generator: bool,
    pub pi0_probability: bool,
}

pub fn ctmc_bounds(
    model: &ReducedModel,
    chain: &MarkovChain,
    p0: &DistVector,
    t_max: f64,
    quad_steps: usize,
) -> Result<CtmcBoundReport> {
    if model.discrete || chain.is_discrete() {
        return Err(Error::UnsupportedKind("CTMC models".into()));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Precondition(format!(
            "t_max must be finite and >= 0, got {t_max}"
        )));
    }
    if quad_steps == 0 {
        return Err(Error::Precondition("quad_steps must be at least 1".into()));
    }
    let err = error_matrix(model, chain)?;
    let initial = initial_error(&model.pi0, model.disagg.a(), p0);
    let theta_inf = inf_norm(&model.dynamics);
    let pi0_l1 = l1_norm(&model.pi0);

    let h = if t_max > 0.0 {
        t_max / quad_steps as f64
    } else {
        0.0
    };
    let times: Vec<f64> = (0..=quad_steps).map(|i| i as f64 * h).collect();

    // One matrix exponential per step size, reused across the grid.
    let step = expm(&(model.dynamics.transpose() * h));
    let mut pi = model.pi0.clone();
    let inner = |pi: &DVector<f64>| -> f64 {
        pi.iter()
            .zip(err.tau.iter())
            .map(|(&p, &t)| p.abs() * t)
            .sum()
    };
    let mut precise = Vec::with_capacity(quad_steps + 1);
    precise.push(initial);
    let mut prev = inner(&pi);
    for _ in 0..quad_steps {
        pi = &step * pi;
        let cur = inner(&pi);
        precise.push(precise.last().unwrap() + h * (prev + cur) / 2.0);
        prev = cur;
    }

    let general = times
        .iter()
        .map(|&t| {
            let x = t * theta_inf;
            // (e^{t L} - 1) / L, with the t limit at L = 0.
            let factor = if theta_inf == 0.0 {
                t
            } else {
                x.exp_m1() / theta_inf
            };
            initial + pi0_l1 * err.inf_norm * factor
        })
        .collect();

    let dynamics_generator = model.stochastic_flag;
    let pi0_probability = is_probability_vector(&model.pi0, DEFAULT_TOL);
    let (simple, simple_omitted) = if dynamics_generator && pi0_probability {
        (
            Some(times.iter().map(|&t| initial + t * err.inf_norm).collect()),
            None,
        )
    } else {
        let mut reasons = Vec::new();
        if !dynamics_generator {
            reasons.push("reduced dynamics is not a generator");
        }
        if !pi0_probability {
            reasons.push("pi0 is not a probability distribution");
        }
        (None, Some(reasons.join("; ")))
    };

    Ok(CtmcBoundReport {
        initial_error: initial,
        times,
        precise_estimate: precise,
        general,
        simple,
        simple_omitted,
        quad_step: h,
        theta_inf_norm: theta_inf,
        e_inf_norm: err.inf_norm,
        dynamics_generator,
        pi0_probability,
    })
}

/// How far the disaggregated vector `pi^T A` is from stationarity, and the
/// certified bound on that distance.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryBoundReport {
    /// `||pi^T A P - pi^T A||_1` (DTMC) or `||pi^T A Q||_1` (CTMC).
    pub measure: f64,
    /// `||pi||_1 ||E||_inf + residual * ||A||_inf`.
    pub bound: f64,
    /// `||pi^T Pi - pi^T||_1` (DTMC) or `||pi^T Theta||_1` (CTMC).
    pub eigen_residual: f64,
    pub e_inf_norm: f64,
    pub a_inf_norm: f64,
}

pub fn stationary_bound(
    model: &ReducedModel,
    chain: &MarkovChain,
    pi: &DVector<f64>,
) -> Result<StationaryBoundReport> {
    if pi.len() != model.m() {
        return Err(Error::Dimension("stationary vector length mismatch".into()));
    }
    let err = error_matrix(model, chain)?;
    let a = model.disagg.a();
    let pi_a = a.transpose() * pi;
    let pi_a_moved = chain.matrix().vec_mat(&pi_a);
    let measure = if model.discrete {
        l1_norm(&(&pi_a_moved - &pi_a))
    } else {
        l1_norm(&pi_a_moved)
    };
    let pi_dyn = model.dynamics.transpose() * pi;
    let eigen_residual = if model.discrete {
        l1_norm(&(&pi_dyn - pi))
    } else {
        l1_norm(&pi_dyn)
    };
    let a_inf_norm = inf_norm(a);
    let bound = l1_norm(pi) * err.inf_norm + eigen_residual * a_inf_norm;
    Ok(StationaryBoundReport {
        measure,
        bound,
        eigen_residual,
        e_inf_norm: err.inf_norm,
        a_inf_norm,
    })
}

/// Worst-case initial vectors constructed in the tightness theorem.
#[derive(Debug, Clone)]
pub struct TightnessInstance {
    pub pi0: DVector<f64>,
    pub p0: DistVector,
    /// 0-based index of the maximizing reduced state.
    pub chi_star: usize,
    /// `||pi_0||_1 ||E||_inf`: the one-step error (DTMC) or the error
    /// growth rate at t = 0 (CTMC) this instance achieves.
    pub achieved: f64,
}

/// For a model with entrywise nonnegative `A` (each row containing some
/// positive entry) and a nonzero error matrix, builds `pi_0` and
/// `p_0 = pi_0^T A` that attain the bound.
pub fn tightness_instance(
    a: &DMatrix<f64>,
    dynamics: &DMatrix<f64>,
    chain: &MarkovChain,
) -> Result<TightnessInstance> {
    for i in 0..a.nrows() {
        let mut has_positive = false;
        for j in 0..a.ncols() {
            if a[(i, j)] < 0.0 {
                return Err(Error::Precondition(format!(
                    "A has a negative entry at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            has_positive |= a[(i, j)] > 0.0;
        }
        if !has_positive {
            return Err(Error::Precondition(format!("row {} of A is zero", i + 1)));
        }
    }
    let err = error_matrix_parts(a, dynamics, chain)?;
    if err.inf_norm <= 0.0 {
        return Err(Error::Precondition(
            "error matrix vanishes; every bound is trivial".into(),
        ));
    }
    let chi_star = err.tau.imax();
    let row_l1: f64 = (0..a.ncols()).map(|j| a[(chi_star, j)].abs()).sum();
    let mut pi0 = DVector::zeros(a.nrows());
    pi0[chi_star] = 1.0 / row_l1;
    let p0 = DistVector::probability(a.transpose() * &pi0, 1e-9)?;
    let achieved = l1_norm(&pi0) * err.inf_norm;
    Ok(TightnessInstance {
        pi0,
        p0,
        chi_star,
        achieved,
    })
}

/// Where to measure an actual error.
#[derive(Debug, Clone, Copy)]
pub enum TimePoint {
    Step(usize),
    Time(f64),
}

/// `||p~ - p||_1` against the exact solvers.
pub fn actual_error(
    chain: &MarkovChain,
    model: &ReducedModel,
    p0: &DistVector,
    at: TimePoint,
) -> Result<f64> {
    match (chain, at) {
        (MarkovChain::Dtmc(p), TimePoint::Step(k)) => {
            if !model.discrete {
                return Err(Error::Precondition(
                    "continuous model with a step index".into(),
                ));
            }
            let (_, approx) = reduced_transient_discrete(model, k);
            let exact = dtmc_transient(p, p0, k);
            Ok(l1_norm(&(approx - exact.values())))
        }
        (MarkovChain::Ctmc(q), TimePoint::Time(t)) => {
            if model.discrete {
                return Err(Error::Precondition(
                    "discrete model with a time point".into(),
                ));
            }
            let (_, approx) = reduced_transient_continuous(model, t)?;
            let exact = ctmc_transient(q, p0, t, 1e-12)?;
            Ok(l1_norm(&(approx - &exact.values)))
        }
        _ => Err(Error::Precondition(
            "time point kind does not match the chain".into(),
        )),
    }
}
