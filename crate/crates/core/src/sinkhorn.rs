//! KL projection of a positive kernel onto the transport polytope `Π(a, b)`.
//!
//! Two variants: plain scaling updates on `K`, and a log-domain variant that
//! works on `log K` with log-sum-exp updates and never overflows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::linalg::check_probability;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// A transport plan together with its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl Coupling {
    /// Wraps a plan, taking the marginals from its row and column sums.
    pub fn from_plan(plan: Array2<f64>) -> Self {
        let a = plan.sum_axis(Axis(1));
        let b = plan.sum_axis(Axis(0));
        Self { plan, a, b }
    }

    /// The independent coupling `a b^T`.
    pub fn product(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Self {
        let plan = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j]);
        Self {
            plan,
            a: a.to_owned(),
            b: b.to_owned(),
        }
    }

    /// `(||P 1 - a||_1, ||P^T 1 - b||_1)`.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let rows = self.plan.sum_axis(Axis(1));
        let cols = self.plan.sum_axis(Axis(0));
        let e_a = (&rows - &self.a).mapv(f64::abs).sum();
        let e_b = (&cols - &self.b).mapv(f64::abs).sum();
        (e_a, e_b)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        let (ea, eb) = self.marginal_errors();
        self.plan.iter().all(|&x| x >= 0.0) && ea <= tol && eb <= tol
    }
}

/// Final scalings. Stored as logarithms so the log-domain variant can report
/// scalings that would not fit in a float.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingState {
    pub log_u: Array1<f64>,
    pub log_v: Array1<f64>,
    pub iterations: usize,
}

impl ScalingState {
    pub fn u(&self) -> Array1<f64> {
        self.log_u.mapv(f64::exp)
    }

    pub fn v(&self) -> Array1<f64> {
        self.log_v.mapv(f64::exp)
    }
}

fn check_inputs(shape: (usize, usize), a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    if shape != (a.len(), b.len()) {
        return Err(Error::dim("kl_project", format!("{}x{}", a.len(), b.len()), format!("{}x{}", shape.0, shape.1)));
    }
    Ok(())
}

/// Projects `kernel` onto `Π(a, b)` in KL geometry by alternating scalings
/// `u = a / K v`, `v = b / K^T u`. Stops once the row-marginal `ℓ1` error
/// after a full sweep drops below `delta`.
pub fn kl_project(
    kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
) -> Result<(Coupling, ScalingState)> {
    kl_project_warm(kernel, a, b, delta, max_iter, None)
}

/// [`kl_project`] starting from the column scaling of `warm` when it has the
/// right length and is representable.
pub fn kl_project_warm(
    kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
    warm: Option<&ScalingState>,
) -> Result<(Coupling, ScalingState)> {
    check_inputs(kernel.dim(), a, b)?;
    if kernel.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
        return Err(Error::Input("kernel must be strictly positive and finite".into()));
    }
    let overflow = || Error::Numerical {
        context: "kl_project",
        detail: "scalings overflowed or underflowed; use the log-domain projection".into(),
    };

    let mut v = match warm.map(|w| w.v()) {
        Some(v) if v.len() == b.len() && v.iter().all(|x| x.is_finite() && *x > 0.0) => v,
        _ => Array1::<f64>::ones(b.len()),
    };
    let mut err = f64::INFINITY;
    for it in 1..=max_iter {
        let kv = kernel.dot(&v);
        let u = &a / &kv;
        let ktu = kernel.t().dot(&u);
        v = &b / &ktu;
        if u.iter().chain(v.iter()).any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(overflow());
        }
        let row = &u * &kernel.dot(&v);
        err = (&row - &a).mapv(f64::abs).sum();
        if err <= delta {
            let plan = Array2::from_shape_fn(kernel.dim(), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
            if plan.iter().any(|x| !x.is_finite()) {
                return Err(overflow());
            }
            let state = ScalingState {
                log_u: u.mapv(f64::ln),
                log_v: v.mapv(f64::ln),
                iterations: it,
            };
            return Ok((
                Coupling {
                    plan,
                    a: a.to_owned(),
                    b: b.to_owned(),
                },
                state,
            ));
        }
    }
    Err(Error::Convergence {
        solver: "sinkhorn",
        iterations: max_iter,
        residual: err,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain variant of [`kl_project`] taking `log K`. Optional warm-start
/// potentials (`log u`, `log v`) only affect the iteration count.
pub fn kl_project_log(
    log_kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
) -> Result<(Coupling, ScalingState)> {
    kl_project_log_warm(log_kernel, a, b, delta, max_iter, None)
}

pub fn kl_project_log_warm(
    log_kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
    warm: Option<&ScalingState>,
) -> Result<(Coupling, ScalingState)> {
    check_log_inputs(log_kernel, a, b)?;
    let g0 = warm_potential(warm, b.len(), 1.0);
    let sweep = log_sweeps(log_kernel, a, b, delta, max_iter, g0)?;
    sweep.finish(log_kernel, a, b, max_iter)
}

/// Spread of `log K` above which [`kl_project_log_annealed`] starts from a
/// flattened kernel.
pub const ANNEAL_SPREAD: f64 = 50.0;

/// Log-domain projection for sharply peaked kernels: solves for
/// `t log K` with `t` rising geometrically to 1, warm-starting each stage from
/// the previous potentials scaled by the ratio of consecutive `t`. Only the
/// final stage (`t = 1`) must reach `delta`; the result is the same projection
/// as [`kl_project_log`], reached in fewer sweeps.
pub fn kl_project_log_annealed(
    log_kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
    warm: Option<&ScalingState>,
) -> Result<(Coupling, ScalingState)> {
    check_log_inputs(log_kernel, a, b)?;
    let spread = log_kernel
        .rows()
        .into_iter()
        .map(|row| {
            let finite = row.iter().copied().filter(|x| x.is_finite());
            let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if hi >= lo {
                hi - lo
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    if spread <= ANNEAL_SPREAD {
        return kl_project_log_warm(log_kernel, a, b, delta, max_iter, warm);
    }
    let mut t = ANNEAL_SPREAD / spread;
    let mut g = warm_potential(warm, b.len(), t);
    let mut used = 0;
    while t < 1.0 {
        let staged = log_kernel.mapv(|x| t * x);
        let budget = (max_iter / 20).max(10).min(max_iter.saturating_sub(used));
        let sweep = log_sweeps(staged.view(), a, b, delta.max(1e-3), budget, g)?;
        used += sweep.iterations;
        let next = (t * 4.0).min(1.0);
        g = sweep.g.mapv(|x| x * next / t);
        t = next;
    }
    let sweep = log_sweeps(log_kernel, a, b, delta, max_iter.saturating_sub(used), g)?;
    let mut out = sweep.finish(log_kernel, a, b, max_iter)?;
    out.1.iterations += used;
    Ok(out)
}

fn check_log_inputs(log_kernel: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    check_inputs(log_kernel.dim(), a, b)?;
    if log_kernel.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Input("log kernel has NaN or +inf entries".into()));
    }
    Ok(())
}

fn warm_potential(warm: Option<&ScalingState>, m: usize, factor: f64) -> Array1<f64> {
    match warm {
        Some(w) if w.log_v.len() == m && w.log_v.iter().all(|x| x.is_finite()) => w.log_v.mapv(|x| x * factor),
        _ => Array1::zeros(m),
    }
}

struct LogSweep {
    f: Array1<f64>,
    g: Array1<f64>,
    iterations: usize,
    err: f64,
    converged: bool,
}

impl LogSweep {
    fn finish(self, log_kernel: ArrayView2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>, max_iter: usize) -> Result<(Coupling, ScalingState)> {
        if !self.converged {
            return Err(Error::Convergence {
                solver: "sinkhorn (log domain)",
                iterations: max_iter,
                residual: self.err,
            });
        }
        let (f, g) = (self.f, self.g);
        let plan = Array2::from_shape_fn(log_kernel.dim(), |(i, j)| (log_kernel[[i, j]] + f[i] + g[j]).exp());
        Ok((
            Coupling {
                plan,
                a: a.to_owned(),
                b: b.to_owned(),
            },
            ScalingState {
                log_u: f,
                log_v: g,
                iterations: self.iterations,
            },
        ))
    }
}

fn log_sweeps(
    log_kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    delta: f64,
    max_iter: usize,
    mut g: Array1<f64>,
) -> Result<LogSweep> {
    let (n, m) = log_kernel.dim();
    let log_a = a.mapv(f64::ln);
    let log_b = b.mapv(f64::ln);
    let mut f = Array1::<f64>::zeros(n);
    let mut err = f64::INFINITY;
    for it in 1..=max_iter {
        for i in 0..n {
            let row = log_kernel.row(i);
            f[i] = log_a[i] - log_sum_exp(row.iter().zip(g.iter()).map(|(k, gj)| k + gj));
        }
        for j in 0..m {
            let col = log_kernel.column(j);
            g[j] = log_b[j] - log_sum_exp(col.iter().zip(f.iter()).map(|(k, fi)| k + fi));
        }
        err = 0.0;
        for i in 0..n {
            let row = log_kernel.row(i);
            let s: f64 = row.iter().zip(g.iter()).map(|(k, gj)| (k + gj + f[i]).exp()).sum();
            err += (s - a[i]).abs();
        }
        if !err.is_finite() {
            return Err(Error::Numerical {
                context: "kl_project_log",
                detail: "marginal error became non-finite".into(),
            });
        }
        if err <= delta {
            return Ok(LogSweep {
                f,
                g,
                iterations: it,
                err,
                converged: true,
            });
        }
    }
    Ok(LogSweep {
        f,
        g,
        iterations: max_iter,
        err,
        converged: false,
    })
}
