//! Cost construction, method/cost compatibility and dispatch to the solvers.

use std::path::Path;

use lrgw::costs::{dense_cost, knn_shortest_path_cost, lr_distance_approx, squared_euclidean_factors, Cost, DenseCost, GroundMetric, LrDistanceParams, PointCloud};
use lrgw::datasets_io::load_point_cloud;
use lrgw::entropic_gw::{solve_entropic_gw, solve_quad_entropic_gw, EntropicConfig, EntropicInit, SolveReport};
use lrgw::gw_lr::{self, GwLrConfig, GwLrInit};
use lrgw::linalg::uniform;
use lrgw::lot_init::InitTriple;
use lrgw::lr_dykstra::LowRankCoupling;
use lrgw::sinkhorn::Coupling;
use ndarray::Array1;
use serde::Serialize;

use crate::args::{CostArgs, CostKind, InitKind, Method, Normalize, SolverArgs};
use crate::error::CliError;

/// Largest `n^2` densified for the dense-cost methods.
pub const DENSE_CAP: usize = 100_000_000;

pub const DEFAULT_ENTROPIC_EPSILON: f64 = 0.01;

pub struct Problem {
    pub a_cost: Cost,
    pub b_cost: Cost,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub scales: Scales,
}

/// Factors each cost was divided by.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Scales {
    pub source: f64,
    pub target: f64,
}

pub enum Solution {
    Dense(Coupling),
    LowRank(LowRankCoupling),
}

fn cloud_cost(x: &PointCloud, cost: &CostArgs, seed: u64) -> Result<(Cost, f64), CliError> {
    let (x, cloud_scale) = match (cost.normalize, cost.cost) {
        (Normalize::Max, CostKind::Sqeuclidean | CostKind::Euclidean | CostKind::LrEuclidean) => {
            let s = x.diameter_bound();
            if s > 0.0 {
                (x.scaled(s), s)
            } else {
                (x.clone(), 1.0)
            }
        }
        _ => (x.clone(), 1.0),
    };
    match cost.cost {
        CostKind::Sqeuclidean => Ok((Cost::Factored(squared_euclidean_factors(&x)), cloud_scale * cloud_scale)),
        CostKind::Euclidean => Ok((Cost::Dense(dense_cost(&x, 1.0)?), cloud_scale)),
        CostKind::LrEuclidean => {
            let params = LrDistanceParams::new(cost.cost_rank, seed, GroundMetric::Euclidean);
            Ok((Cost::Factored(lr_distance_approx(&x, &x, &params)?), cloud_scale))
        }
        CostKind::Knn => {
            let c = knn_shortest_path_cost(&x, cost.knn_k)?;
            Ok(max_normalized(c, cost.normalize)?)
        }
    }
}

fn max_normalized(c: DenseCost, normalize: Normalize) -> Result<(Cost, f64), CliError> {
    let max = c.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if normalize == Normalize::Max && max > 0.0 {
        Ok((Cost::Dense(DenseCost::new(c.into_inner() / max)?), max))
    } else {
        Ok((Cost::Dense(c), 1.0))
    }
}

fn file_cost(path: &Path, normalize: Normalize) -> Result<(Cost, f64), CliError> {
    let m = load_point_cloud(path)?.into_inner();
    if m.nrows() != m.ncols() {
        return Err(CliError::Usage(format!("cost file {} must be square, got {}x{}", path.display(), m.nrows(), m.ncols())));
    }
    max_normalized(DenseCost::new(m)?, normalize)
}

fn describe(cost: &CostArgs) -> String {
    if cost.source_cost.is_some() {
        "dense cost files".into()
    } else {
        format!("--cost {}", cost.cost.as_str())
    }
}

fn needs_factors_error(method: Method, what: &str) -> CliError {
    CliError::Usage(format!(
        "--method {} requires factored costs: its linear per-iteration cost needs each cost as a low-rank product \
         A = A1 A2^T (use --cost sqeuclidean or --cost lr-euclidean); {what} gives a dense matrix with no factorization",
        method.as_str()
    ))
}

fn check_compatible(method: Method, cost: &CostArgs) -> Result<(), CliError> {
    let dense = cost.source_cost.is_some() || matches!(cost.cost, CostKind::Euclidean | CostKind::Knn);
    if method.needs_factors() && dense {
        return Err(needs_factors_error(method, &describe(cost)));
    }
    Ok(())
}

/// Brings both costs into the form `method` consumes.
fn adapt(method: Method, c: Cost, what: &str) -> Result<Cost, CliError> {
    match (method.needs_factors(), c) {
        (true, Cost::Dense(_)) => Err(needs_factors_error(method, what)),
        (false, Cost::Factored(f)) => {
            let n = f.left().nrows();
            if n.saturating_mul(n) > DENSE_CAP {
                return Err(CliError::Usage(format!(
                    "--method {} needs a dense {n}x{n} cost; use a factored method (quad-ent, lin-lr) at this size",
                    method.as_str()
                )));
            }
            Ok(Cost::Dense(DenseCost::new(f.densify())?))
        }
        (_, c) => Ok(c),
    }
}

pub fn problem_from_clouds(x: &PointCloud, y: &PointCloud, method: Method, cost: &CostArgs, seed: u64) -> Result<Problem, CliError> {
    check_compatible(method, cost)?;
    let what = describe(cost);
    let (ca, sa) = cloud_cost(x, cost, seed)?;
    let (cb, sb) = cloud_cost(y, cost, seed.wrapping_add(1))?;
    Ok(Problem {
        a_cost: adapt(method, ca, &what)?,
        b_cost: adapt(method, cb, &what)?,
        a: uniform(x.len()),
        b: uniform(y.len()),
        scales: Scales { source: sa, target: sb },
    })
}

/// Loads the two spaces named on the command line.
pub fn load_problem(source: Option<&Path>, target: Option<&Path>, method: Method, cost: &CostArgs, seed: u64) -> Result<Problem, CliError> {
    check_compatible(method, cost)?;
    if let (Some(sp), Some(tp)) = (&cost.source_cost, &cost.target_cost) {
        let what = describe(cost);
        let (ca, sa) = file_cost(sp, cost.normalize)?;
        let (cb, sb) = file_cost(tp, cost.normalize)?;
        let (n, m) = (ca.nrows(), cb.nrows());
        return Ok(Problem {
            a_cost: adapt(method, ca, &what)?,
            b_cost: adapt(method, cb, &what)?,
            a: uniform(n),
            b: uniform(m),
            scales: Scales { source: sa, target: sb },
        });
    }
    let (Some(sp), Some(tp)) = (source, target) else {
        return Err(CliError::Usage("give --source and --target point clouds, or --source-cost and --target-cost".into()));
    };
    let x = load_point_cloud(sp)?;
    let y = load_point_cloud(tp)?;
    problem_from_clouds(&x, &y, method, cost, seed)
}

pub fn entropic_config(s: &SolverArgs) -> EntropicConfig {
    let mut cfg = EntropicConfig::new(s.epsilon.unwrap_or(DEFAULT_ENTROPIC_EPSILON));
    cfg.outer_iter = s.outer_iter;
    if let Some(t) = s.stop_tol {
        cfg.stop_tol = t;
    }
    if let Some(d) = s.inner_delta {
        cfg.inner_delta = d;
    }
    if let Some(m) = s.inner_max_iter {
        cfg.inner_max_iter = m;
    }
    cfg.init = match s.init {
        InitKind::LowerBound => EntropicInit::LowerBound,
        InitKind::Random | InitKind::Uniform => EntropicInit::Product,
    };
    cfg
}

pub fn low_rank_config(s: &SolverArgs) -> GwLrConfig {
    let d = GwLrConfig::default();
    GwLrConfig {
        rank: s.rank,
        alpha: s.alpha,
        gamma: s.gamma,
        epsilon: s.epsilon.unwrap_or(0.0),
        outer_iter: s.outer_iter,
        dykstra_delta: s.inner_delta.unwrap_or(d.dykstra_delta),
        dykstra_max_iter: s.inner_max_iter.unwrap_or(d.dykstra_max_iter),
        stop_tol: s.stop_tol.unwrap_or(d.stop_tol),
        seed: s.seed,
        init: match s.init {
            InitKind::LowerBound => GwLrInit::LowerBound,
            InitKind::Random => GwLrInit::Triple(InitTriple::Random),
            InitKind::Uniform => GwLrInit::Triple(InitTriple::Uniform),
        },
        ..d
    }
}

pub fn run_method(method: Method, p: &Problem, s: &SolverArgs) -> Result<(Solution, SolveReport), CliError> {
    let (a, b) = (p.a.view(), p.b.view());
    let out = match (method, &p.a_cost, &p.b_cost) {
        (Method::Ent, Cost::Dense(ca), Cost::Dense(cb)) => {
            let (c, r) = solve_entropic_gw(ca, cb, a, b, &entropic_config(s))?;
            (Solution::Dense(c), r)
        }
        (Method::QuadEnt, Cost::Factored(ca), Cost::Factored(cb)) => {
            let (c, r) = solve_quad_entropic_gw(ca, cb, a, b, &entropic_config(s))?;
            (Solution::Dense(c), r)
        }
        (Method::Lr, Cost::Dense(ca), Cost::Dense(cb)) => {
            let (t, r) = gw_lr::solve_gw_lr(ca, cb, a, b, &low_rank_config(s))?;
            (Solution::LowRank(t), r)
        }
        (Method::LinLr, Cost::Factored(ca), Cost::Factored(cb)) => {
            let (t, r) = gw_lr::solve_gw_lr_linear(ca, cb, a, b, &low_rank_config(s))?;
            (Solution::LowRank(t), r)
        }
        _ => return Err(CliError::Usage(format!("cost form does not match --method {}", method.as_str()))),
    };
    Ok(out)
}
