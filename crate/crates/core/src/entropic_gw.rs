//! Entropic GW baselines and GW objective evaluation.
//!
//! The objective uses the reformulation
//! `GW(P) = <A^{⊙2} a, a> + <B^{⊙2} b, b> - 2 <A P B, P>`
//! with `a = P 1`, `b = P^T 1`. Both solvers iterate
//! `C = -4 A P B`, `K = exp(-C / ε)`, `P = proj_{Π(a,b)}(K)`; the quadratic
//! one computes `A P B` through the cost factors.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::costs::{Cost, DenseCost, FactoredCost};
use crate::linalg::check_probability;
use crate::sinkhorn::{self, kl_project_log_annealed, kl_project_warm, Coupling, ScalingState};
use crate::{Error, Result};

/// Exponents below this are treated as underflowing to zero.
const EXP_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropicInit {
    Product,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicConfig {
    pub epsilon: f64,
    pub outer_iter: usize,
    pub inner_delta: f64,
    pub inner_max_iter: usize,
    pub init: EntropicInit,
    /// Stop once `|loss_k - loss_{k-1}| <= stop_tol * |loss_{k-1}|`; 0 disables.
    pub stop_tol: f64,
}

impl EntropicConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            outer_iter: 50,
            inner_delta: sinkhorn::DEFAULT_DELTA,
            inner_max_iter: sinkhorn::DEFAULT_MAX_ITER,
            init: EntropicInit::LowerBound,
            stop_tol: 1e-9,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Input(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.outer_iter == 0 {
            return Err(Error::Input("outer_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// What ended an outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The outer iteration budget ran out.
    MaxIter,
    /// Relative loss change fell below the tolerance.
    RelativeChange,
    /// The Δ stationarity criterion fell below the tolerance.
    Criterion,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIter => "max_iter",
            StopReason::RelativeChange => "relative_change",
            StopReason::Criterion => "criterion",
        }
    }
}

/// Per-outer-iteration trace shared by all solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub losses: Vec<f64>,
    /// Δ criterion per iteration; empty for solvers that do not compute it.
    pub deltas: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    /// Cumulative wall time at the end of each iteration.
    pub elapsed_ms: Vec<f64>,
    pub initial_loss: f64,
    /// `D0`: initial loss minus the best recorded loss.
    pub initial_gap: f64,
    pub stop_reason: StopReason,
    /// Set when the requested initialization failed and a fallback was used.
    pub init_fallback: bool,
}

impl SolveReport {
    pub(crate) fn start(initial_loss: f64) -> Self {
        Self {
            losses: Vec::new(),
            deltas: Vec::new(),
            inner_iterations: Vec::new(),
            elapsed_ms: Vec::new(),
            initial_loss,
            initial_gap: 0.0,
            stop_reason: StopReason::MaxIter,
            init_fallback: false,
        }
    }

    pub(crate) fn push(&mut self, loss: f64, delta: Option<f64>, inner: usize, started: Instant) {
        self.losses.push(loss);
        if let Some(d) = delta {
            self.deltas.push(d);
        }
        self.inner_iterations.push(inner);
        let ms = started.elapsed().as_secs_f64() * 1e3;
        self.elapsed_ms.push((ms * 1e3).round() / 1e3);
    }

    pub(crate) fn finish(&mut self, reason: StopReason) {
        self.stop_reason = reason;
        let best = self.losses.iter().copied().fold(self.initial_loss, f64::min);
        self.initial_gap = self.initial_loss - best;
    }

    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn total_ms(&self) -> f64 {
        self.elapsed_ms.last().copied().unwrap_or(0.0)
    }
}

/// Relative-change stopping test.
pub(crate) fn small_change(prev: f64, next: f64, tol: f64) -> bool {
    tol > 0.0 && (next - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

fn check_shapes(a_cost: &Cost, b_cost: &Cost, n: usize, m: usize, context: &'static str) -> Result<()> {
    if !a_cost.is_square() || !b_cost.is_square() || a_cost.nrows() != n || b_cost.nrows() != m {
        return Err(Error::dim(
            context,
            format!("A {n}x{n}, B {m}x{m}"),
            format!("A {}x{}, B {}x{}", a_cost.nrows(), a_cost.ncols(), b_cost.nrows(), b_cost.ncols()),
        ));
    }
    Ok(())
}

/// `A P B` computed according to the cost forms; for two factored costs
/// this is `A1 (A2^T P B1) B2^T`.
pub(crate) fn cross_product(a_cost: &Cost, b_cost: &Cost, plan: ArrayView2<f64>) -> Result<Array2<f64>> {
    match (a_cost, b_cost) {
        (Cost::Factored(fa), Cost::Factored(fb)) => {
            let g2 = fa.right().t().dot(&plan).dot(&fb.left());
            Ok(fa.left().dot(&g2).dot(&fb.right().t()))
        }
        _ => {
            let ap = a_cost.apply(plan)?;
            // (A P) B = (B^T (A P)^T)^T
            Ok(b_cost.apply_t(ap.t())?.reversed_axes())
        }
    }
}

/// `<A^{⊙2} a, a> + <B^{⊙2} b, b>` for the given marginals.
pub(crate) fn constant_term(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    Ok(a_cost.hadamard_square_apply(a)?.dot(&a) + b_cost.hadamard_square_apply(b)?.dot(&b))
}

/// GW objective of `coupling` through the reformulation.
///
/// With two factored costs the cross term is `1^T (G1 ⊙ G2) 1` for
/// `G1 = A1^T P B2`, `G2 = A2^T P B1`, so no `n x m` intermediate other than
/// `P` is formed.
pub fn eval_gw_objective(a_cost: &Cost, b_cost: &Cost, coupling: &Coupling) -> Result<f64> {
    let plan = coupling.plan.view();
    let (n, m) = plan.dim();
    check_shapes(a_cost, b_cost, n, m, "eval_gw_objective")?;
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    let constant = constant_term(a_cost, b_cost, rows.view(), cols.view())?;
    let cross = match (a_cost, b_cost) {
        (Cost::Factored(fa), Cost::Factored(fb)) => {
            let g1 = fa.left().t().dot(&plan).dot(&fb.right());
            let g2 = fa.right().t().dot(&plan).dot(&fb.left());
            (&g1 * &g2).sum()
        }
        _ => (&cross_product(a_cost, b_cost, plan)? * &plan).sum(),
    };
    Ok(constant - 2.0 * cross)
}

/// `x̃ = A^{⊙2} a`, `ỹ = B^{⊙2} b`.
pub(crate) fn squared_moments(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut x = a_cost.hadamard_square_apply(a)?;
    let mut y = b_cost.hadamard_square_apply(b)?;
    // Factored evaluation can leave rounding-level negatives.
    for v in [&mut x, &mut y] {
        let scale = v.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        v.mapv_inplace(|e| if e < 0.0 && e >= -1e-9 * scale { 0.0 } else { e });
    }
    if x.iter().chain(y.iter()).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Numerical {
            context: "squared_moments",
            detail: "A^{⊙2} a or B^{⊙2} b has negative or non-finite entries".into(),
        });
    }
    Ok((x, y))
}

/// Entropic OT plan for the first-lower-bound cost
/// `C̃_ij = (sqrt(x̃_i) - sqrt(ỹ_j))^2`.
pub fn init_lower_bound_entropic(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, epsilon: f64) -> Result<Coupling> {
    lower_bound_plan(a_cost, b_cost, a, b, epsilon, sinkhorn::DEFAULT_DELTA, sinkhorn::DEFAULT_MAX_ITER)
}

fn lower_bound_plan(
    a_cost: &Cost,
    b_cost: &Cost,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    epsilon: f64,
    delta: f64,
    max_iter: usize,
) -> Result<Coupling> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    check_shapes(a_cost, b_cost, a.len(), b.len(), "init_lower_bound_entropic")?;
    if !(epsilon > 0.0) {
        return Err(Error::Input(format!("epsilon must be positive, got {epsilon}")));
    }
    let (x, y) = squared_moments(a_cost, b_cost, a, b)?;
    let (s, t) = (x.mapv(f64::sqrt), y.mapv(f64::sqrt));
    let log_kernel = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| -(s[i] - t[j]).powi(2) / epsilon);
    let (c, _) = kl_project_log_annealed(log_kernel.view(), a, b, delta, max_iter, None)?;
    Ok(c)
}

/// One KL projection of `exp(log_kernel)`: plain scalings when the shifted
/// kernel stays representable, annealed log-domain otherwise, on overflow, or
/// when plain scalings run out of sweeps.
fn project_exp(
    mut log_kernel: Array2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    cfg: &EntropicConfig,
    warm: Option<&ScalingState>,
) -> Result<(Coupling, ScalingState)> {
    if log_kernel.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical {
            context: "entropic_gw",
            detail: "cost matrix C = -4 A P B has non-finite entries".into(),
        });
    }
    for mut row in log_kernel.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| x - max);
    }
    let representable = log_kernel.iter().all(|&x| x >= EXP_FLOOR);
    if representable {
        let kernel = log_kernel.mapv(f64::exp);
        match kl_project_warm(kernel.view(), a, b, cfg.inner_delta, cfg.inner_max_iter, warm) {
            Err(Error::Numerical { .. } | Error::Convergence { .. }) => {}
            other => return other,
        }
    }
    kl_project_log_annealed(log_kernel.view(), a, b, cfg.inner_delta, cfg.inner_max_iter, warm)
}

fn run_entropic(a_cost: &Cost, b_cost: &Cost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &EntropicConfig) -> Result<(Coupling, SolveReport)> {
    cfg.validate()?;
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    check_shapes(a_cost, b_cost, a.len(), b.len(), "entropic_gw")?;
    let started = Instant::now();
    let (x, y) = squared_moments(a_cost, b_cost, a, b)?;
    let loss_of = |plan: &Array2<f64>, apb: &Array2<f64>| {
        plan.sum_axis(Axis(1)).dot(&x) + plan.sum_axis(Axis(0)).dot(&y) - 2.0 * (apb * plan).sum()
    };

    let mut fallback = false;
    let mut coupling = match cfg.init {
        EntropicInit::Product => Coupling::product(a, b),
        EntropicInit::LowerBound => match lower_bound_plan(a_cost, b_cost, a, b, cfg.epsilon, cfg.inner_delta, cfg.inner_max_iter) {
            Ok(c) => c,
            Err(e @ (Error::Convergence { .. } | Error::Numerical { .. })) => {
                log::warn!("lower-bound initialization failed ({e}); starting from the product coupling");
                fallback = true;
                Coupling::product(a, b)
            }
            Err(e) => return Err(e),
        },
    };
    let mut apb = cross_product(a_cost, b_cost, coupling.plan.view())?;
    let mut loss = loss_of(&coupling.plan, &apb);
    let mut report = SolveReport::start(loss);
    report.init_fallback = fallback;
    let mut warm: Option<ScalingState> = None;

    for it in 1..=cfg.outer_iter {
        let log_kernel = apb.mapv(|v| 4.0 * v / cfg.epsilon);
        let (next, state) = project_exp(log_kernel, a, b, cfg, warm.as_ref()).map_err(|e| e.at_iteration(it))?;
        coupling = next;
        apb = cross_product(a_cost, b_cost, coupling.plan.view())?;
        let next_loss = loss_of(&coupling.plan, &apb);
        if !next_loss.is_finite() {
            return Err(Error::Numerical {
                context: "entropic_gw",
                detail: "loss became non-finite".into(),
            }
            .at_iteration(it));
        }
        report.push(next_loss, None, state.iterations, started);
        warm = Some(state);
        let converged = small_change(loss, next_loss, cfg.stop_tol);
        loss = next_loss;
        if converged {
            report.finish(StopReason::RelativeChange);
            return Ok((coupling, report));
        }
    }
    report.finish(StopReason::MaxIter);
    Ok((coupling, report))
}

/// Entropic GW with dense costs; each outer step costs `O(n^2 m + n m^2)`.
pub fn solve_entropic_gw(a_cost: &DenseCost, b_cost: &DenseCost, a: ArrayView1<f64>, b: ArrayView1<f64>, cfg: &EntropicConfig) -> Result<(Coupling, SolveReport)> {
    run_entropic(&Cost::Dense(a_cost.clone()), &Cost::Dense(b_cost.clone()), a, b, cfg)
}

/// Entropic GW with factored costs; each outer step costs `O(nm(d + d'))`.
pub fn solve_quad_entropic_gw(
    a_cost: &FactoredCost,
    b_cost: &FactoredCost,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    cfg: &EntropicConfig,
) -> Result<(Coupling, SolveReport)> {
    run_entropic(&Cost::Factored(a_cost.clone()), &Cost::Factored(b_cost.clone()), a, b, cfg)
}
