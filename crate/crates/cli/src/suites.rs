//! Property suites behind `lrgw validate`.

use lrgw::costs::{dense_cost, squared_euclidean_factors, Cost, PointCloud};
use lrgw::datasets_io::{generate, DatasetKind, DatasetSpec};
use lrgw::entropic_gw::eval_gw_objective;
use lrgw::gw_lr::{gradient, objective_variable_part, solve_gw_lr_linear, GwLrConfig, GwLrInit};
use lrgw::linalg::uniform;
use lrgw::lot_init::{build_init_cost, InitCostVariant, InitTriple};
use lrgw::lr_dykstra::{project, random_feasible_triple, DykstraParams, KernelTriple, LowRankCoupling};
use lrgw::oracle_metrics::{allocation_scope, finite_difference_gradient, gw_quadruple_sum};
use lrgw::sinkhorn::{kl_project, Coupling};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::Suite;

/// One measured property: passes when `value <= limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
    PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0))).expect("finite points")
}

fn positive(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-2.0f64..2.0).exp())
}

fn random_coupling(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Coupling {
    let (a, b) = (uniform(n), uniform(m));
    kl_project(positive(rng, (n, m)).view(), a.view(), b.view(), 1e-13, 100_000)
        .expect("Sinkhorn on a bounded positive kernel")
        .0
}

fn feasibility(seed: u64) -> lrgw::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DykstraParams {
        alpha: 1e-3,
        ..DykstraParams::default()
    };
    let (mut worst, mut floor) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (n, m, r) = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=4));
        let k = KernelTriple::new(positive(&mut rng, (n, r)), positive(&mut rng, (m, r)), positive(&mut rng, (r, 1)).column(0).to_owned())?;
        let out = project(&k, uniform(n).view(), uniform(m).view(), &params)?;
        let res = out.coupling.residuals(uniform(n).view(), uniform(m).view(), params.alpha);
        worst = worst.max(res.max_marginal());
        floor = floor.max(res.floor_violation);
    }
    Ok(vec![
        Check {
            name: "feasibility.max_marginal_residual",
            value: worst,
            limit: params.delta,
        },
        Check {
            name: "feasibility.floor_violation",
            value: floor,
            limit: 0.0,
        },
    ])
}

fn objective(seed: u64) -> lrgw::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dense, mut factored) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (x, y) = (cloud(&mut rng, n, 2), cloud(&mut rng, m, 3));
        let p = random_coupling(&mut rng, n, m);
        let (ca, cb) = (dense_cost(&x, 2.0)?, dense_cost(&y, 2.0)?);
        let reference = gw_quadruple_sum(ca.values(), cb.values(), p.plan.view())?;
        let scale = 1.0 + reference.abs();
        let d = eval_gw_objective(&Cost::Dense(ca), &Cost::Dense(cb), &p)?;
        let f = eval_gw_objective(&Cost::Factored(squared_euclidean_factors(&x)), &Cost::Factored(squared_euclidean_factors(&y)), &p)?;
        dense = dense.max((d - reference).abs() / scale);
        factored = factored.max((f - reference).abs() / scale);
    }
    Ok(vec![
        Check {
            name: "objective.dense_vs_quadruple_sum",
            value: dense,
            limit: 1e-9,
        },
        Check {
            name: "objective.factored_vs_quadruple_sum",
            value: factored,
            limit: 1e-9,
        },
    ])
}

fn gradient_suite(seed: u64) -> lrgw::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let eps = if i % 2 == 0 { 0.0 } else { 0.1 };
        let (n, m, r) = (rng.random_range(2..=7), rng.random_range(2..=7), rng.random_range(1..=3));
        let (ca, cb) = (Cost::Dense(dense_cost(&cloud(&mut rng, n, 2), 2.0)?), Cost::Dense(dense_cost(&cloud(&mut rng, m, 2), 2.0)?));
        let t = random_feasible_triple(uniform(n).view(), uniform(m).view(), r, rng.random())?;
        let f = |p: &LowRankCoupling| objective_variable_part(&ca, &cb, p, eps).expect("matching shapes");
        let fd = finite_difference_gradient(f, &t, 1e-6)?;
        let an = gradient(&ca, &cb, &t, eps)?;
        worst = worst.max(an.max_relative_error(&fd, 1e-2));
    }
    Ok(vec![Check {
        name: "gradient.max_relative_error",
        value: worst,
        limit: 1e-5,
    }])
}

fn bound(seed: u64) -> lrgw::Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (x, y) = (cloud(&mut rng, n, 2), cloud(&mut rng, m, 2));
        let (ca, cb) = (dense_cost(&x, 1.0)?, dense_cost(&y, 1.0)?);
        let (a, b) = (uniform(n), uniform(m));
        let p = random_coupling(&mut rng, n, m);
        let gw = gw_quadruple_sum(ca.values(), cb.values(), p.plan.view())?;
        let c = build_init_cost(&Cost::Dense(ca), a.view(), &Cost::Dense(cb), b.view(), InitCostVariant::LowerBound)?.densify();
        let linear = (&c * &p.plan).sum();
        worst = worst.max(linear - gw);
    }
    Ok(vec![Check {
        name: "bound.linear_minus_gw",
        value: worst,
        limit: 1e-10,
    }])
}

fn alloc(n: usize, seed: u64) -> lrgw::Result<Vec<Check>> {
    let spec = DatasetSpec::new(DatasetKind::Blobs, n, seed).with_clusters(5, 10.0);
    let x = generate(&spec)?;
    let y = generate(&DatasetSpec { seed: seed.wrapping_add(1), ..spec })?;
    let (x, y) = (x.scaled(x.diameter_bound()), y.scaled(y.diameter_bound()));
    let (fa, fb) = (squared_euclidean_factors(&x), squared_euclidean_factors(&y));
    let w = uniform(n);
    let cfg = GwLrConfig {
        rank: 10,
        outer_iter: 5,
        init: GwLrInit::Triple(InitTriple::Random),
        seed,
        ..GwLrConfig::default()
    };
    let threshold = n * n;
    let (out, stats) = allocation_scope("lin-lr", threshold, || solve_gw_lr_linear(&fa, &fb, w.view(), w.view(), &cfg))?;
    out?;
    Ok(vec![
        Check {
            name: "alloc.large_buffer_events",
            value: stats.large_buffer_count as f64,
            limit: 0.0,
        },
        Check {
            name: "alloc.peak_buffer_fraction_of_nm",
            value: stats.peak_buffer_elements as f64 / threshold as f64,
            limit: 1.0,
        },
    ])
}

/// Runs `suite` (or all of them) and returns the measured checks.
pub fn run_suite(suite: Suite, n: usize, seed: u64) -> lrgw::Result<Vec<Check>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Feasibility {
        out.extend(feasibility(seed)?);
    }
    if all || suite == Suite::Objective {
        out.extend(objective(seed)?);
    }
    if all || suite == Suite::Gradient {
        out.extend(gradient_suite(seed)?);
    }
    if all || suite == Suite::Bound {
        out.extend(bound(seed)?);
    }
    if all || suite == Suite::Alloc {
        out.extend(alloc(n, seed)?);
    }
    Ok(out)
}
