//! Low-rank GW: mirror descent over couplings `P = Q Diag(1/g) R^T`.
//!
//! With `D = Diag(1/g)`, `X = Q^T A Q` and `Y = R^T B R` (both `r x r`), the
//! objective is
//!
//! `F_ε(Q, R, g) = c1 - 2 tr(D X D Y) + ε Σ_blocks Σ x (log x - 1)`
//!
//! where `c1 = <A^{⊙2} a, a> + <B^{⊙2} b, b>`. Its gradients (for symmetric
//! `A`, `B`) are
//!
//! * `∇_Q = -4 A P B R D + ε log Q = -4 (A Q) D Y D + ε log Q`
//! * `∇_R = -4 B P^T A Q D + ε log R = -4 (B R) D X D + ε log R`
//! * `∇_g = 4 ω / g^2 + ε log g`, `ω = diag(X D Y)`
//!
//! and each step projects `exp(log ξ - γ ∇F_ε(ξ))` onto `C(a, b, r, α)`.
//! Only `A Q` and `B R` touch the costs, so factored costs give a step linear
//! in `n + m`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::costs::{Cost, DenseCost, FactoredCost};
use crate::entropic_gw::{small_change, squared_moments, SolveReport, StopReason};
use crate::linalg::{check_probability, spectral_norm};
use crate::lot_init::{first_lower_bound, validate_rank_alpha_gamma, InitCostVariant, InitTriple, LotConfig};
use crate::lr_dykstra::{self, project, random_feasible_triple, stabilized_kernels, symmetric_kl, DykstraParams, KernelTriple, LowRankCoupling};
use crate::sinkhorn::Coupling;
use crate::{Error, Result};

/// Largest exponent accepted by [`step_kernels`].
pub const OVERFLOW_GUARD: f64 = 700.0;

/// Largest `n * m` accepted by [`densify`].
pub const DENSIFY_CAP: usize = 10_000_000;

/// Gradient blocks of a scalar field over `(Q, R, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    pub dq: Array2<f64>,
    pub dr: Array2<f64>,
    pub dg: Array1<f64>,
}

impl GradientTriple {
    pub fn is_finite(&self) -> bool {
        self.dq.iter().chain(self.dr.iter()).chain(self.dg.iter()).all(|x| x.is_finite())
    }

    /// Largest entrywise `|self - other| / max(|other|, floor)`.
    pub fn max_relative_error(&self, other: &GradientTriple, floor: f64) -> f64 {
        self.dq
            .iter()
            .zip(other.dq.iter())
            .chain(self.dr.iter().zip(other.dr.iter()))
            .chain(self.dg.iter().zip(other.dg.iter()))
            .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
            .fold(0.0, f64::max)
    }
}

/// How the solvers pick the starting triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GwLrInit {
    /// Low-rank OT on the first-lower-bound cost.
    #[default]
    LowerBound,
    /// The triple built by [`InitTriple`] directly.
    Triple(InitTriple),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwLrConfig {
    pub rank: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Entropic weight; 0 gives the unregularized objective.
    pub epsilon: f64,
    pub outer_iter: usize,
    pub dykstra_delta: f64,
    pub dykstra_max_iter: usize,
    /// Tolerance for both the relative loss change and the Δ criterion.
    pub stop_tol: f64,
    pub seed: u64,
    pub init: GwLrInit,
    pub init_variant: InitCostVariant,
    /// Outer budget of the low-rank OT initialization.
    pub init_outer: usize,
}

impl Default for GwLrConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            alpha: 1e-10,
            gamma: 100.0,
            epsilon: 0.0,
            outer_iter: 50,
            dykstra_delta: lr_dykstra::DEFAULT_DELTA,
            dykstra_max_iter: lr_dykstra::DEFAULT_MAX_ITER,
            stop_tol: 1e-6,
            seed: 0,
            init: GwLrInit::LowerBound,
            init_variant: InitCostVariant::LowerBound,
            init_outer: 50,
        }
    }
}

impl GwLrConfig {
    fn validate(&self) -> Result<()> {
        validate_rank_alpha_gamma(self.rank, self.alpha, self.gamma)?;
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Input(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.outer_iter == 0 {
            return Err(Error::Input("outer_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn dykstra(&self) -> DykstraParams {
        DykstraParams {
            alpha: self.alpha,
            delta: self.dykstra_delta,
            max_iter: self.dykstra_max_iter,
        }
    }
}

/// `A Q`, `B R`, `X = Q^T A Q`, `Y = R^T B R` at one triple.
struct Products {
    aq: Array2<f64>,
    br: Array2<f64>,
    x: Array2<f64>,
    y: Array2<f64>,
}

impl Products {
    fn new(a_cost: &Cost, b_cost: &Cost, t: &LowRankCoupling) -> Result<Self> {
        let aq = a_cost.apply(t.q.view())?;
        let br = b_cost.apply(t.r.view())?;
        let x = t.q.t().dot(&aq);
        let y = t.r.t().dot(&br);
        Ok(Self { aq, br, x, y })
    }

    /// `ω = diag(X D Y)`.
    fn omega(&self, g: &Array1<f64>) -> Array1<f64> {
        let r = g.len();
        Array1::from_shape_fn(r, |l| (0..r).map(|k| self.x[[l, k]] * self.y[[k, l]] / g[k]).sum())
    }

    /// `tr(D X D Y) = <A P B, P>`.
    fn cross(&self, g: &Array1<f64>) -> f64 {
        (&self.omega(g) / g).sum()
    }

    fn gradient(&self, t: &LowRankCoupling, epsilon: f64) -> GradientTriple {
        let ginv = t.g.mapv(|v| 1.0 / v);
        let dyd = Array2::from_shape_fn(self.y.dim(), |(k, l)| ginv[k] * self.y[[k, l]] * ginv[l]);
        let dxd = Array2::from_shape_fn(self.x.dim(), |(k, l)| ginv[k] * self.x[[k, l]] * ginv[l]);
        let mut dq = self.aq.dot(&dyd) * -4.0;
        let mut dr = self.br.dot(&dxd) * -4.0;
        let mut dg = self.omega(&t.g) * &ginv.mapv(|v| 4.0 * v * v);
        if epsilon > 0.0 {
            let (lq, lr, lg) = t.ln();
            dq.scaled_add(epsilon, &lq);
            dr.scaled_add(epsilon, &lr);
            dg.scaled_add(epsilon, &lg);
        }
        GradientTriple { dq, dr, dg }
    }
}

fn check_problem(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, context: &'static str) -> Result<()> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    let (n, m) = (a.len(), b.len());
    if !a_cost.is_square() || !b_cost.is_square() || a_cost.nrows() != n || b_cost.nrows() != m {
        return Err(Error::dim(
            context,
            format!("A {n}x{n}, B {m}x{m}"),
            format!("A {}x{}, B {}x{}", a_cost.nrows(), a_cost.ncols(), b_cost.nrows(), b_cost.ncols()),
        ));
    }
    Ok(())
}

fn check_triple(a_cost: &Cost, b_cost: &Cost, t: &LowRankCoupling) -> Result<()> {
    let r = t.g.len();
    if t.q.dim() != (a_cost.nrows(), r) || t.r.dim() != (b_cost.nrows(), r) {
        return Err(Error::dim(
            "low-rank triple",
            format!("Q {}x{r}, R {}x{r}", a_cost.nrows(), b_cost.nrows()),
            format!("Q {:?}, R {:?}", t.q.dim(), t.r.dim()),
        ));
    }
    if !t.is_interior() {
        return Err(Error::Input("triple must have strictly positive finite entries".into()));
    }
    Ok(())
}

/// `∇F_ε` at `triple`, through `A Q` and `B R` only.
pub fn gradient(a_cost: &Cost, b_cost: &Cost, triple: &LowRankCoupling, epsilon: f64) -> Result<GradientTriple> {
    check_triple(a_cost, b_cost, triple)?;
    Ok(Products::new(a_cost, b_cost, triple)?.gradient(triple, epsilon))
}

/// `F_ε` without the constant `c1`: `-2 tr(D X D Y) + ε Σ x (log x - 1)`.
pub fn objective_variable_part(a_cost: &Cost, b_cost: &Cost, triple: &LowRankCoupling, epsilon: f64) -> Result<f64> {
    let p = Products::new(a_cost, b_cost, triple)?;
    let mut value = -2.0 * p.cross(&triple.g);
    if epsilon > 0.0 {
        let ent: f64 = triple
            .q
            .iter()
            .chain(triple.r.iter())
            .chain(triple.g.iter())
            .map(|&x| if x > 0.0 { x * (x.ln() - 1.0) } else { 0.0 })
            .sum();
        value += epsilon * ent;
    }
    Ok(value)
}

/// Mirror-descent kernels `exp(log ξ - γ ∇F_ε(ξ))`, i.e.
/// `K1 = exp(4γ A P B R D + (1 - γε) log Q)` and its `R`, `g` analogues.
/// Fails when any exponent exceeds [`OVERFLOW_GUARD`] in magnitude.
pub fn step_kernels(a_cost: &Cost, b_cost: &Cost, triple: &LowRankCoupling, cfg: &GwLrConfig) -> Result<KernelTriple> {
    let grad = gradient(a_cost, b_cost, triple, cfg.epsilon)?;
    let (lq, lr, lg) = triple.ln();
    let e1 = lq - &grad.dq * cfg.gamma;
    let e2 = lr - &grad.dr * cfg.gamma;
    let e3 = lg - &grad.dg * cfg.gamma;
    let worst = e1.iter().chain(e2.iter()).chain(e3.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    if !(worst <= OVERFLOW_GUARD) {
        return Err(Error::Numerical {
            context: "step_kernels",
            detail: format!("kernel exponent {worst:.3e} exceeds the overflow guard {OVERFLOW_GUARD}; reduce gamma or normalize the costs"),
        });
    }
    KernelTriple::new(e1.mapv(f64::exp), e2.mapv(f64::exp), e3.mapv(f64::exp))
}

/// One mirror-descent step with stabilized kernels.
fn md_step(prod: &Products, xi: &LowRankCoupling, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &GwLrConfig) -> Result<(LowRankCoupling, usize)> {
    let grad = prod.gradient(xi, cfg.epsilon);
    let (lq, lr, lg) = xi.ln();
    let kernels = stabilized_kernels(lq - &grad.dq * cfg.gamma, lr - &grad.dr * cfg.gamma, lg - &grad.dg * cfg.gamma)?;
    let mut step = project(&kernels, a, b, &cfg.dykstra())?;
    let c = &mut step.coupling;
    c.q.mapv_inplace(|x| x.max(f64::MIN_POSITIVE));
    c.r.mapv_inplace(|x| x.max(f64::MIN_POSITIVE));
    Ok((step.coupling, step.iterations))
}

/// `Δ = (KL(ξ, G) + KL(G, ξ)) / γ^2` with `G` one mirror-descent step from
/// `triple`; also returns `G`.
pub fn delta_criterion(
    a_cost: &Cost,
    b_cost: &Cost,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    triple: &LowRankCoupling,
    cfg: &GwLrConfig,
) -> Result<(f64, LowRankCoupling)> {
    check_problem(a_cost, b_cost, a, b, "delta_criterion")?;
    check_triple(a_cost, b_cost, triple)?;
    let prod = Products::new(a_cost, b_cost, triple)?;
    let (g, _) = md_step(&prod, triple, a, b, cfg)?;
    let delta = symmetric_kl(triple, &g) / (cfg.gamma * cfg.gamma);
    Ok((delta, g))
}

/// Relative-smoothness constant `L = 27 (||A||_2 ||B||_2 / α^4 + ε)` and the
/// matching step `γ = 1 / (2L)`. A zero `L` gives `γ = +inf` and a warning.
pub fn smoothness_constants(a_cost: &Cost, b_cost: &Cost, alpha: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::Input(format!("alpha must be positive, got {alpha}")));
    }
    let norm = |c: &Cost| {
        spectral_norm(
            c.ncols(),
            |x| c.apply_vec(x.view()).expect("matching length"),
            |y| c.apply_t_vec(y.view()).expect("matching length"),
            1e-9,
            100_000,
        )
    };
    let l = 27.0 * (norm(a_cost) * norm(b_cost) / alpha.powi(4) + epsilon);
    let gamma = if l > 0.0 {
        1.0 / (2.0 * l)
    } else {
        log::warn!("smoothness constant is zero; theoretical step size is unbounded");
        f64::INFINITY
    };
    Ok((l, gamma))
}

/// Materializes `P = Q Diag(1/g) R^T`, refusing above [`DENSIFY_CAP`] entries.
pub fn densify(triple: &LowRankCoupling) -> Result<Coupling> {
    let (n, m) = (triple.q.nrows(), triple.r.nrows());
    if n.saturating_mul(m) > DENSIFY_CAP {
        return Err(Error::Refused(format!("densify limited to {DENSIFY_CAP} entries, got {n}x{m}")));
    }
    let ginv = triple.g.mapv(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let plan = (&triple.q * &ginv.view().insert_axis(Axis(0))).dot(&triple.r.t());
    Ok(Coupling {
        plan,
        a: triple.q.sum_axis(Axis(1)),
        b: triple.r.sum_axis(Axis(1)),
    })
}

fn initial_triple(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &GwLrConfig) -> Result<(LowRankCoupling, bool)> {
    match cfg.init {
        GwLrInit::Triple(kind) => Ok((kind.build(a, b, cfg.rank, cfg.seed)?, false)),
        GwLrInit::LowerBound => {
            let lot = LotConfig {
                alpha: cfg.alpha,
                gamma: cfg.gamma,
                dykstra_delta: cfg.dykstra_delta,
                dykstra_max_iter: cfg.dykstra_max_iter,
                max_outer: cfg.init_outer,
                seed: cfg.seed,
                ..LotConfig::new(cfg.rank)
            };
            match first_lower_bound(a_cost, b_cost, a, b, &lot, cfg.init_variant) {
                Ok(lb) if lb.triple.is_interior() => Ok((lb.triple, false)),
                Ok(_) => {
                    log::warn!("lower-bound initialization has zero entries; using a random feasible triple");
                    Ok((random_feasible_triple(a, b, cfg.rank, cfg.seed)?, true))
                }
                Err(e @ (Error::Convergence { .. } | Error::Numerical { .. } | Error::AtIteration { .. })) => {
                    log::warn!("lower-bound initialization failed ({e}); using a random feasible triple");
                    Ok((random_feasible_triple(a, b, cfg.rank, cfg.seed)?, true))
                }
                Err(e) => Err(e),
            }
        }
    }
}

fn run(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &GwLrConfig) -> Result<(LowRankCoupling, SolveReport)> {
    cfg.validate()?;
    check_problem(a_cost, b_cost, a, b, "gw_lr")?;
    let started = Instant::now();
    let (x, y) = squared_moments(a_cost, b_cost, a, b)?;
    let c1 = x.dot(&a) + y.dot(&b);

    let (mut xi, fallback) = initial_triple(a_cost, b_cost, a, b, cfg)?;
    let mut prod = Products::new(a_cost, b_cost, &xi)?;
    let mut loss = c1 - 2.0 * prod.cross(&xi.g);
    let mut report = SolveReport::start(loss);
    report.init_fallback = fallback;

    for it in 1..=cfg.outer_iter {
        let (next, inner) = md_step(&prod, &xi, a, b, cfg).map_err(|e| e.at_iteration(it))?;
        let delta = symmetric_kl(&xi, &next) / (cfg.gamma * cfg.gamma);
        xi = next;
        prod = Products::new(a_cost, b_cost, &xi)?;
        let next_loss = c1 - 2.0 * prod.cross(&xi.g);
        if !next_loss.is_finite() || !delta.is_finite() {
            return Err(Error::Numerical {
                context: "gw_lr",
                detail: "loss or criterion became non-finite; reduce gamma or normalize the costs".into(),
            }
            .at_iteration(it));
        }
        report.push(next_loss, Some(delta), inner, started);
        let changed_little = small_change(loss, next_loss, cfg.stop_tol);
        loss = next_loss;
        if changed_little {
            report.finish(StopReason::RelativeChange);
            return Ok((xi, report));
        }
        if delta < cfg.stop_tol {
            report.finish(StopReason::Criterion);
            return Ok((xi, report));
        }
    }
    report.finish(StopReason::MaxIter);
    Ok((xi, report))
}

/// Low-rank GW with dense costs: `O((n^2 + m^2) r)` per step.
pub fn solve_gw_lr(a_cost: &DenseCost, b_cost: &DenseCost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &GwLrConfig) -> Result<(LowRankCoupling, SolveReport)> {
    run(&Cost::Dense(a_cost.clone()), &Cost::Dense(b_cost.clone()), a, b, cfg)
}

/// Low-rank GW with factored costs: `O((n + m)(d + d') r)` per step and no
/// buffer larger than `max(n, m) * max(r, d^2, d'^2)`.
pub fn solve_gw_lr_linear(
    a_cost: &FactoredCost,
    b_cost: &FactoredCost,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    cfg: &GwLrConfig,
) -> Result<(LowRankCoupling, SolveReport)> {
    run(&Cost::Factored(a_cost.clone()), &Cost::Factored(b_cost.clone()), a, b, cfg)
}

/// Either solver, picked by the cost form.
pub fn solve(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &GwLrConfig) -> Result<(LowRankCoupling, SolveReport)> {
    run(a_cost, b_cost, a, b, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{dense_cost, squared_euclidean_factors, PointCloud};
    use crate::linalg::uniform;
    use crate::oracle_metrics::{finite_difference_gradient, gw_quadruple_sum};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(Array2::from_shape_fn((n, 2), |_| rng.random_range(0.0..1.0))).unwrap()
    }

    fn instance(seed: u64) -> (Cost, Cost, Array1<f64>, Array1<f64>, LowRankCoupling) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (cloud(6, &mut rng), cloud(5, &mut rng));
        let (a, b) = (uniform(6), uniform(5));
        let t = random_feasible_triple(a.view(), b.view(), 3, seed).unwrap();
        (Cost::Dense(dense_cost(&x, 1.0).unwrap()), Cost::Dense(dense_cost(&y, 1.0).unwrap()), a, b, t)
    }

    fn zero(n: usize) -> Cost {
        Cost::Dense(DenseCost::new(Array2::zeros((n, n))).unwrap())
    }

    #[test]
    fn zero_costs_give_zero_gradient() {
        let (_, _, _, _, t) = instance(1);
        let g = gradient(&zero(6), &zero(5), &t, 0.0).unwrap();
        assert!(g.dq.iter().chain(g.dr.iter()).chain(g.dg.iter()).all(|&v| v == 0.0));
        let g = gradient(&zero(6), &zero(5), &t, 0.3).unwrap();
        let (lq, _, lg) = t.ln();
        assert!(g.dq.iter().zip(lq.iter()).all(|(d, l)| (d - 0.3 * l).abs() < 1e-15));
        assert!(g.dg.iter().zip(lg.iter()).all(|(d, l)| (d - 0.3 * l).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for eps in [0.0, 0.1] {
            let (ca, cb, _, _, t) = instance(2);
            let f = |p: &LowRankCoupling| objective_variable_part(&ca, &cb, p, eps).unwrap();
            let fd = finite_difference_gradient(f, &t, 1e-6).unwrap();
            let an = gradient(&ca, &cb, &t, eps).unwrap();
            let err = an.max_relative_error(&fd, 1e-2);
            assert!(err <= 1e-5, "eps {eps}: {err}");
        }
    }

    #[test]
    fn gradient_matches_dense_formula() {
        let (ca, cb, _, _, t) = instance(3);
        let (da, db) = (ca.densify(), cb.densify());
        let p = densify(&t).unwrap().plan;
        let d = Array2::from_diag(&t.g.mapv(|v| 1.0 / v));
        let dq = da.dot(&p).dot(&db).dot(&t.r).dot(&d) * -4.0;
        let dr = db.dot(&p.t()).dot(&da).dot(&t.q).dot(&d) * -4.0;
        let g = gradient(&ca, &cb, &t, 0.0).unwrap();
        for (x, y) in g.dq.iter().zip(dq.iter()).chain(g.dr.iter().zip(dr.iter())) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn kernels_are_exp_of_log_minus_gradient() {
        for eps in [0.0, 0.05] {
            let (ca, cb, _, _, t) = instance(4);
            let cfg = GwLrConfig { gamma: 3.0, epsilon: eps, ..GwLrConfig::default() };
            let k = step_kernels(&ca, &cb, &t, &cfg).unwrap();
            let g = gradient(&ca, &cb, &t, eps).unwrap();
            let (lq, lr, lg) = t.ln();
            let check = |k: f64, l: f64, d: f64| {
                let e = (l - cfg.gamma * d).exp();
                assert!((k - e).abs() <= 1e-10 * e);
            };
            for ((k, l), d) in k.k1.iter().zip(lq.iter()).zip(g.dq.iter()) {
                check(*k, *l, *d);
            }
            for ((k, l), d) in k.k2.iter().zip(lr.iter()).zip(g.dr.iter()) {
                check(*k, *l, *d);
            }
            for ((k, l), d) in k.k3.iter().zip(lg.iter()).zip(g.dg.iter()) {
                check(*k, *l, *d);
            }
        }
    }

    #[test]
    fn zero_costs_kernels_equal_triple() {
        let (_, _, _, _, t) = instance(5);
        let k = step_kernels(&zero(6), &zero(5), &t, &GwLrConfig::default()).unwrap();
        for (x, y) in k.k1.iter().zip(t.q.iter()) {
            assert!((x - y).abs() <= 1e-15 * y.abs());
        }
    }

    #[test]
    fn overflow_guard_trips() {
        let (ca, cb, _, _, t) = instance(6);
        let cfg = GwLrConfig { gamma: 1e6, ..GwLrConfig::default() };
        let err = step_kernels(&ca, &cb, &t, &cfg).unwrap_err();
        assert!(err.to_string().contains("reduce gamma"), "{err}");
    }

    #[test]
    fn one_point_spaces() {
        let c = DenseCost::new(array![[0.0]]).unwrap();
        let one = array![1.0];
        let cfg = GwLrConfig { rank: 1, ..GwLrConfig::default() };
        let (_, rep) = solve_gw_lr(&c, &c, one.view(), one.view(), &cfg).unwrap();
        assert!(rep.final_loss().abs() < 1e-15);
    }

    #[test]
    fn losses_match_step_by_step_reference() {
        let (ca, cb, a, b, t0) = instance(7);
        let cfg = GwLrConfig {
            rank: 3,
            gamma: 5.0,
            outer_iter: 3,
            stop_tol: 0.0,
            dykstra_delta: 1e-12,
            dykstra_max_iter: 100_000,
            alpha: 1e-6,
            init: GwLrInit::Triple(InitTriple::Random),
            seed: 7,
            ..GwLrConfig::default()
        };
        let (_, rep) = solve(&ca, &cb, a.view(), b.view(), &cfg).unwrap();
        let (da, db) = (ca.densify(), cb.densify());
        // Reference: dense gradients, unshifted kernels, quadruple-sum loss.
        let mut t = t0;
        for k in 0..3 {
            let p = densify(&t).unwrap().plan;
            let d = Array2::from_diag(&t.g.mapv(|v| 1.0 / v));
            let apb = da.dot(&p).dot(&db);
            let dq = apb.dot(&t.r).dot(&d) * -4.0;
            let dr = apb.t().dot(&t.q).dot(&d) * -4.0;
            let omega = t.q.t().dot(&apb).dot(&t.r).diag().to_owned();
            let dg = &omega / &t.g.mapv(|v| v * v) * 4.0;
            let kern = KernelTriple::new(
                (&t.q.mapv(f64::ln) - &dq * cfg.gamma).mapv(f64::exp),
                (&t.r.mapv(f64::ln) - &dr * cfg.gamma).mapv(f64::exp),
                (&t.g.mapv(f64::ln) - &dg * cfg.gamma).mapv(f64::exp),
            )
            .unwrap();
            t = project(&kern, a.view(), b.view(), &cfg.dykstra()).unwrap().coupling;
            let loss = gw_quadruple_sum(da.view(), db.view(), densify(&t).unwrap().plan.view()).unwrap();
            assert!((loss - rep.losses[k]).abs() <= 1e-8 * loss.abs(), "iteration {k}: {loss} vs {}", rep.losses[k]);
        }
    }

    #[test]
    fn dense_and_linear_trajectories_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = (cloud(10, &mut rng), cloud(10, &mut rng));
        let w = uniform(10);
        let cfg = GwLrConfig {
            rank: 3,
            outer_iter: 3,
            stop_tol: 0.0,
            gamma: 10.0,
            ..GwLrConfig::default()
        };
        let (td, rd) = solve_gw_lr(&dense_cost(&x, 2.0).unwrap(), &dense_cost(&y, 2.0).unwrap(), w.view(), w.view(), &cfg).unwrap();
        let (tl, rl) = solve_gw_lr_linear(&squared_euclidean_factors(&x), &squared_euclidean_factors(&y), w.view(), w.view(), &cfg).unwrap();
        assert_eq!(rd.losses.len(), 3);
        for (l1, l2) in rd.losses.iter().zip(rl.losses.iter()) {
            assert!((l1 - l2).abs() <= 1e-8 * l1.abs(), "{l1} vs {l2}");
        }
        for (p, q) in td.q.iter().zip(tl.q.iter()) {
            assert!((p - q).abs() <= 1e-8 * p.abs().max(1e-12));
        }
    }

    #[test]
    fn zero_factors_give_zero_loss() {
        let z = FactoredCost::new(Array2::zeros((7, 2)), Array2::zeros((7, 2))).unwrap();
        let w = uniform(7);
        let cfg = GwLrConfig { rank: 2, ..GwLrConfig::default() };
        let (_, rep) = solve_gw_lr_linear(&z, &z, w.view(), w.view(), &cfg).unwrap();
        assert!(rep.losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn delta_vanishes_at_fixed_point() {
        let (_, _, a, b, t) = instance(9);
        let (d, g) = delta_criterion(&zero(6), &zero(5), a.view(), b.view(), &t, &GwLrConfig { rank: 3, dykstra_delta: 1e-12, dykstra_max_iter: 100_000, ..Default::default() }).unwrap();
        assert!(d.abs() < 1e-12, "{d}");
        assert!(symmetric_kl(&t, &g) < 1e-8);
    }

    #[test]
    fn smoothness_constants_cases() {
        let (l, g) = smoothness_constants(&zero(3), &zero(3), 0.5, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.is_infinite());
        let id = Cost::Dense(DenseCost::new(Array2::eye(4)).unwrap());
        let (l, g) = smoothness_constants(&id, &id, 1.0, 0.0).unwrap();
        assert!((l - 27.0).abs() < 1e-6);
        assert!((g - 1.0 / 54.0).abs() < 1e-9);
        let (l, _) = smoothness_constants(&id, &id, 1.0, 1.0).unwrap();
        assert!((l - 54.0).abs() < 1e-6);
    }

    #[test]
    fn densify_cases() {
        let a = array![0.2, 0.8];
        let b = array![0.5, 0.25, 0.25];
        let p = densify(&LowRankCoupling::rank_one(a.view(), b.view())).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((p.plan[[i, j]] - a[i] * b[j]).abs() < 1e-16);
            }
        }
        // Two diagonal blocks.
        let w = uniform(4);
        let t = LowRankCoupling {
            q: array![[0.25, 0.0], [0.25, 0.0], [0.0, 0.25], [0.0, 0.25]],
            r: array![[0.25, 0.0], [0.25, 0.0], [0.0, 0.25], [0.0, 0.25]],
            g: array![0.5, 0.5],
        };
        let p = densify(&t).unwrap();
        assert_eq!(p.plan, array![[0.125, 0.125, 0.0, 0.0], [0.125, 0.125, 0.0, 0.0], [0.0, 0.0, 0.125, 0.125], [0.0, 0.0, 0.125, 0.125]]);
        assert!(p.is_feasible(1e-15));
        assert_eq!(p.a, w);
        let big = LowRankCoupling {
            q: Array2::zeros((5000, 1)),
            r: Array2::zeros((5000, 1)),
            g: array![1.0],
        };
        assert!(matches!(densify(&big), Err(Error::Refused(_))));
    }
}
