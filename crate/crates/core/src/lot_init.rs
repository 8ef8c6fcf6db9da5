//! Low-rank linear OT and the first-lower-bound initialization.
//!
//! `lot_solve` minimizes `<C, Q Diag(1/g) R^T>` over `C(a, b, r, α)` by
//! mirror descent in KL geometry, each step projected with LR-Dykstra. The
//! gradients are `C R Diag(1/g)`, `C^T Q Diag(1/g)` and
//! `-diag(Q^T C R) / g^2`.

use std::time::Instant;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

use crate::costs::{Cost, FactoredCost};
use crate::entropic_gw::{small_change, squared_moments, SolveReport, StopReason};
use crate::linalg::check_probability;
use crate::lr_dykstra::{self, project, random_feasible_triple, stabilized_kernels, symmetric_kl, uniform_triple, DykstraParams, LowRankCoupling};
use crate::{Error, Result};

/// Which table the initialization cost factorizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitCostVariant {
    /// `(sqrt(x̃_i) - sqrt(ỹ_j))^2`, the cost of the proved lower bound.
    #[default]
    LowerBound,
    /// `(x̃_i - ỹ_j)^2`, the squared moments without the square root.
    Algo3Literal,
}

/// Starting triple for mirror descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitTriple {
    /// Seeded random strictly positive feasible triple.
    #[default]
    Random,
    /// `Q = a g^T`, `R = b g^T`, `g` uniform. Symmetric in the rank index,
    /// so mirror descent on symmetric costs keeps all columns equal.
    Uniform,
}

impl InitTriple {
    pub(crate) fn build(self, a: ArrayView1<f64>, b: ArrayView1<f64>, rank: usize, seed: u64) -> Result<LowRankCoupling> {
        match self {
            InitTriple::Random => random_feasible_triple(a, b, rank, seed),
            InitTriple::Uniform => Ok(uniform_triple(a, b, rank)),
        }
    }
}

/// Rank-3 factors of the initialization cost: `C̃ = c1 c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitCostFactors {
    /// `n x 3`
    pub c1: Array2<f64>,
    /// `3 x m`
    pub c2: Array2<f64>,
}

impl InitCostFactors {
    pub fn as_cost(&self) -> Result<Cost> {
        Ok(Cost::Factored(FactoredCost::new(self.c1.clone(), self.c2.t().to_owned())?))
    }

    pub fn densify(&self) -> Array2<f64> {
        self.c1.dot(&self.c2)
    }
}

/// Factors `c1 = [s^2, 1, -sqrt(2) s]`, `c2 = [1; t^2; sqrt(2) t]` with
/// `s = sqrt(A^{⊙2} a)`, `t = sqrt(B^{⊙2} b)` (or the moments themselves for
/// [`InitCostVariant::Algo3Literal`]). Factored costs are squared through
/// their flattened outer-product factors, in time linear in `n + m`.
pub fn build_init_cost(a_cost: &Cost, a: ArrayView1<f64>, b_cost: &Cost, b: ArrayView1<f64>, variant: InitCostVariant) -> Result<InitCostFactors> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    if !a_cost.is_square() || !b_cost.is_square() || a_cost.nrows() != a.len() || b_cost.nrows() != b.len() {
        return Err(Error::dim(
            "build_init_cost",
            format!("A {0}x{0}, B {1}x{1}", a.len(), b.len()),
            format!("A {}x{}, B {}x{}", a_cost.nrows(), a_cost.ncols(), b_cost.nrows(), b_cost.ncols()),
        ));
    }
    let (x, y) = squared_moments(a_cost, b_cost, a, b)?;
    let (s, t) = match variant {
        InitCostVariant::LowerBound => (x.mapv(f64::sqrt), y.mapv(f64::sqrt)),
        InitCostVariant::Algo3Literal => (x, y),
    };
    let s2 = std::f64::consts::SQRT_2;
    let col = |v: Array1<f64>| v.insert_axis(Axis(1));
    let c1 = concatenate![Axis(1), col(s.mapv(|v| v * v)), col(Array1::ones(s.len())), col(s.mapv(|v| -s2 * v))];
    let c2 = concatenate![
        Axis(0),
        Array1::ones(t.len()).insert_axis(Axis(0)),
        t.mapv(|v| v * v).insert_axis(Axis(0)),
        t.mapv(|v| s2 * v).insert_axis(Axis(0))
    ];
    Ok(InitCostFactors { c1, c2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotConfig {
    pub rank: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub dykstra_delta: f64,
    pub dykstra_max_iter: usize,
    pub max_outer: usize,
    /// Relative objective change that ends the loop.
    pub rel_tol: f64,
    pub seed: u64,
    pub init: InitTriple,
}

impl LotConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            alpha: 1e-10,
            gamma: 100.0,
            dykstra_delta: lr_dykstra::DEFAULT_DELTA,
            dykstra_max_iter: lr_dykstra::DEFAULT_MAX_ITER,
            max_outer: 50,
            rel_tol: 1e-7,
            seed: 0,
            init: InitTriple::Random,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        validate_rank_alpha_gamma(self.rank, self.alpha, self.gamma)
    }
}

pub(crate) fn validate_rank_alpha_gamma(rank: usize, alpha: f64, gamma: f64) -> Result<()> {
    if rank == 0 {
        return Err(Error::Input("rank must be at least 1".into()));
    }
    if !(alpha > 0.0) || alpha * rank as f64 > 1.0 + 1e-12 {
        return Err(Error::Input(format!("alpha={alpha} must satisfy 0 < alpha <= 1/r (r={rank})")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Input(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `<C, Q Diag(1/g) R^T>` given `C R`.
fn linear_objective(q: &Array2<f64>, cr: &Array2<f64>, g: &Array1<f64>) -> f64 {
    let omega = (q * cr).sum_axis(Axis(0));
    (&omega / g).sum()
}

/// Gradient blocks of `<C, Q Diag(1/g) R^T>`.
pub fn lot_gradient(cost: &Cost, triple: &LowRankCoupling) -> Result<crate::gw_lr::GradientTriple> {
    let ginv = triple.g.mapv(|v| 1.0 / v);
    let cr = cost.apply(triple.r.view())?;
    let ctq = cost.apply_t(triple.q.view())?;
    let omega = (&triple.q * &cr).sum_axis(Axis(0));
    Ok(crate::gw_lr::GradientTriple {
        dq: &cr * &ginv,
        dr: &ctq * &ginv,
        dg: -&omega * &ginv.mapv(|v| v * v),
    })
}

/// Low-rank OT by mirror descent over `C(a, b, r, α)`; returns the triple
/// with the lowest objective seen (the initial one included).
pub fn lot_solve(cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &LotConfig) -> Result<(LowRankCoupling, SolveReport)> {
    cfg.validate()?;
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    if cost.nrows() != a.len() || cost.ncols() != b.len() {
        return Err(Error::dim(
            "lot_solve",
            format!("{}x{} cost", a.len(), b.len()),
            format!("{}x{}", cost.nrows(), cost.ncols()),
        ));
    }
    let started = Instant::now();
    let params = DykstraParams {
        alpha: cfg.alpha,
        delta: cfg.dykstra_delta,
        max_iter: cfg.dykstra_max_iter,
    };
    let mut xi = cfg.init.build(a, b, cfg.rank, cfg.seed)?;
    let mut obj = linear_objective(&xi.q, &cost.apply(xi.r.view())?, &xi.g);
    let mut report = SolveReport::start(obj);
    let mut best = (obj, xi.clone());

    for it in 1..=cfg.max_outer {
        let grad = lot_gradient(cost, &xi)?;
        let (lq, lr, lg) = xi.ln();
        let kernels = stabilized_kernels(lq - &grad.dq * cfg.gamma, lr - &grad.dr * cfg.gamma, lg - &grad.dg * cfg.gamma)
            .map_err(|e| e.at_iteration(it))?;
        let step = project(&kernels, a, b, &params).map_err(|e| e.at_iteration(it))?;
        let next = step.coupling;
        let delta = symmetric_kl(&xi, &next) / (cfg.gamma * cfg.gamma);
        let next_obj = linear_objective(&next.q, &cost.apply(next.r.view())?, &next.g);
        if !next_obj.is_finite() {
            return Err(Error::Numerical {
                context: "lot_solve",
                detail: "objective became non-finite; reduce gamma".into(),
            }
            .at_iteration(it));
        }
        report.push(next_obj, Some(delta), step.iterations, started);
        xi = next;
        if next_obj < best.0 {
            best = (next_obj, xi.clone());
        }
        let done = small_change(obj, next_obj, cfg.rel_tol);
        obj = next_obj;
        if done {
            report.finish(StopReason::RelativeChange);
            return Ok((best.1, report));
        }
    }
    report.finish(StopReason::MaxIter);
    Ok((best.1, report))
}

/// Result of [`first_lower_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBound {
    pub triple: LowRankCoupling,
    /// LOT objective `<C̃, Q Diag(1/g) R^T>` at `triple`.
    pub bound: f64,
    pub report: SolveReport,
}

/// Low-rank OT on the first-lower-bound cost; the triple initializes the
/// low-rank GW solvers.
pub fn first_lower_bound(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &LotConfig, variant: InitCostVariant) -> Result<LowerBound> {
    let factors = build_init_cost(a_cost, a, b_cost, b, variant)?;
    let cost = factors.as_cost()?;
    let (triple, report) = lot_solve(&cost, a, b, cfg)?;
    let bound = linear_objective(&triple.q, &cost.apply(triple.r.view())?, &triple.g);
    Ok(LowerBound { triple, bound, report })
}
