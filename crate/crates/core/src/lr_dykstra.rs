//! Dykstra projection onto `C(a, b, r, α)`: the KL projection of a kernel
//! triple `(K1, K2, k3)` onto triples `(Q, R, g)` with `Q 1 = a`, `R 1 = b`,
//! `Q^T 1 = R^T 1 = g` and `g ≥ α`.
//!
//! Each sweep updates the row scalings, clamps `g` from below (tracking the
//! Dykstra correction `q3_1`), then sets `g` to the geometric mean of the three
//! column-side proposals (tracking `q3_2`, `q1`, `q2`). The order is fixed:
//! swapping the clamp and the geometric mean changes the iterates.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::linalg::check_probability;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 5_000;

/// `P = Q Diag(1/g) R^T`, held by its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCoupling {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub g: Array1<f64>,
}

/// Residuals of the `C(a, b, r, α)` constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityResiduals {
    /// `||Q 1 - a||_1`
    pub row_q: f64,
    /// `||R 1 - b||_1`
    pub row_r: f64,
    /// `||Q^T 1 - g||_1`
    pub col_q: f64,
    /// `||R^T 1 - g||_1`
    pub col_r: f64,
    /// `|Σ g - 1|`
    pub mass: f64,
    /// `max(α - min g, 0)`
    pub floor_violation: f64,
    pub min_entry: f64,
}

impl FeasibilityResiduals {
    pub fn max_marginal(&self) -> f64 {
        self.row_q.max(self.row_r).max(self.col_q).max(self.col_r).max(self.mass)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_marginal() <= tol && self.floor_violation == 0.0 && self.min_entry >= 0.0
    }
}

impl std::fmt::Display for FeasibilityResiduals {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "|Q1-a|={:.3e} |R1-b|={:.3e} |Q'1-g|={:.3e} |R'1-g|={:.3e} |sum g-1|={:.3e} floor={:.3e} min={:.3e}",
            self.row_q, self.row_r, self.col_q, self.col_r, self.mass, self.floor_violation, self.min_entry
        )
    }
}

impl LowRankCoupling {
    pub fn rank(&self) -> usize {
        self.g.len()
    }

    /// The rank-one triple `(a, b, (1))`, i.e. `P = a b^T`.
    pub fn rank_one(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Self {
        Self {
            q: a.to_owned().insert_axis(Axis(1)),
            r: b.to_owned().insert_axis(Axis(1)),
            g: Array1::ones(1),
        }
    }

    pub fn is_interior(&self) -> bool {
        self.q.iter().chain(self.r.iter()).chain(self.g.iter()).all(|&x| x > 0.0 && x.is_finite())
    }

    pub fn residuals(&self, a: ArrayView1<f64>, b: ArrayView1<f64>, alpha: f64) -> FeasibilityResiduals {
        let l1 = |x: Array1<f64>, y: ArrayView1<f64>| (&x - &y).mapv(f64::abs).sum();
        let min_g = self.g.iter().copied().fold(f64::INFINITY, f64::min);
        let min_entry = self
            .q
            .iter()
            .chain(self.r.iter())
            .chain(self.g.iter())
            .copied()
            .fold(f64::INFINITY, f64::min);
        FeasibilityResiduals {
            row_q: l1(self.q.sum_axis(Axis(1)), a),
            row_r: l1(self.r.sum_axis(Axis(1)), b),
            col_q: l1(self.q.sum_axis(Axis(0)), self.g.view()),
            col_r: l1(self.r.sum_axis(Axis(0)), self.g.view()),
            mass: (self.g.sum() - 1.0).abs(),
            floor_violation: (alpha - min_g).max(0.0),
            min_entry,
        }
    }

    /// Row marginals `(Q 1, R 1)`.
    pub fn marginals(&self) -> (Array1<f64>, Array1<f64>) {
        (self.q.sum_axis(Axis(1)), self.r.sum_axis(Axis(1)))
    }

    /// Entrywise logarithms of the three blocks.
    pub fn ln(&self) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        (self.q.mapv(f64::ln), self.r.mapv(f64::ln), self.g.mapv(f64::ln))
    }
}

/// Positive kernels `(K1: n x r, K2: m x r, k3: r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTriple {
    pub k1: Array2<f64>,
    pub k2: Array2<f64>,
    pub k3: Array1<f64>,
}

impl KernelTriple {
    pub fn new(k1: Array2<f64>, k2: Array2<f64>, k3: Array1<f64>) -> Result<Self> {
        let r = k3.len();
        if k1.ncols() != r || k2.ncols() != r {
            return Err(Error::dim(
                "KernelTriple",
                format!("{r} columns"),
                format!("K1 {} and K2 {} columns", k1.ncols(), k2.ncols()),
            ));
        }
        let t = Self { k1, k2, k3 };
        if !t.is_positive() {
            return Err(Error::Input("kernel triple must be strictly positive and finite".into()));
        }
        Ok(t)
    }

    pub fn is_positive(&self) -> bool {
        self.k1.iter().chain(self.k2.iter()).chain(self.k3.iter()).all(|&x| x > 0.0 && x.is_finite())
    }

    /// Kernels equal to a triple; projecting them returns the triple itself
    /// when it is feasible.
    pub fn from_coupling(c: &LowRankCoupling) -> Self {
        Self {
            k1: c.q.clone(),
            k2: c.r.clone(),
            k3: c.g.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DykstraParams {
    pub alpha: f64,
    pub delta: f64,
    pub max_iter: usize,
}

impl Default for DykstraParams {
    fn default() -> Self {
        Self {
            alpha: 1e-10,
            delta: DEFAULT_DELTA,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Final scalings; `Q = Diag(u1) K1 Diag(v1)` and `R = Diag(u2) K2 Diag(v2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DykstraScalings {
    pub u1: Array1<f64>,
    pub v1: Array1<f64>,
    pub u2: Array1<f64>,
    pub v2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coupling: LowRankCoupling,
    pub iterations: usize,
    pub residual: f64,
    pub scalings: DykstraScalings,
}

/// Entrywise `num / den` with `0/0 = 0`; a positive numerator over a zero
/// denominator is an error.
fn safe_div(num: &Array1<f64>, den: &Array1<f64>, what: &'static str) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(num.len());
    for ((o, &x), &y) in out.iter_mut().zip(num.iter()).zip(den.iter()) {
        *o = if y == 0.0 {
            if x == 0.0 {
                0.0
            } else {
                return Err(Error::Numerical {
                    context: "lr_dykstra",
                    detail: format!("division of {x:.3e} by zero in {what}"),
                });
            }
        } else {
            x / y
        };
        if !o.is_finite() {
            return Err(Error::Numerical {
                context: "lr_dykstra",
                detail: format!("non-finite scaling in {what}"),
            });
        }
    }
    Ok(out)
}

/// Diag(u) K Diag(v).
pub fn scale(u: &Array1<f64>, k: &Array2<f64>, v: &Array1<f64>) -> Array2<f64> {
    let mut out = k.clone();
    Zip::from(out.rows_mut()).and(u).for_each(|mut row, &ui| {
        Zip::from(&mut row).and(v).for_each(|x, &vj| *x = ui * *x * vj);
    });
    out
}

/// KL projection of `kernels` onto `C(a, b, r, α)`.
pub fn project(kernels: &KernelTriple, a: ArrayView1<f64>, b: ArrayView1<f64>, params: &DykstraParams) -> Result<Projection> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    let r = kernels.k3.len();
    if kernels.k1.dim() != (a.len(), r) || kernels.k2.dim() != (b.len(), r) {
        return Err(Error::dim(
            "lr_dykstra::project",
            format!("K1 {}x{r}, K2 {}x{r}", a.len(), b.len()),
            format!("K1 {:?}, K2 {:?}", kernels.k1.dim(), kernels.k2.dim()),
        ));
    }
    if !(params.alpha >= 0.0) || params.alpha * r as f64 > 1.0 + 1e-12 {
        return Err(Error::Input(format!("alpha={} must satisfy 0 <= alpha <= 1/r (r={r})", params.alpha)));
    }
    if !kernels.is_positive() {
        return Err(Error::Input("kernel triple must be strictly positive and finite".into()));
    }
    let (k1, k2) = (&kernels.k1, &kernels.k2);
    let a = a.to_owned();
    let b = b.to_owned();

    let ones = || Array1::<f64>::ones(r);
    let mut g_tilde = kernels.k3.clone();
    let (mut q3_1, mut q3_2) = (ones(), ones());
    let (mut v1_tilde, mut v2_tilde) = (ones(), ones());
    let (mut q1, mut q2) = (ones(), ones());
    let mut residual = f64::INFINITY;

    for it in 1..=params.max_iter {
        let u1 = safe_div(&a, &k1.dot(&v1_tilde), "u1")?;
        let u2 = safe_div(&b, &k2.dot(&v2_tilde), "u2")?;

        // Clamp step with its Dykstra correction.
        let proposal = &g_tilde * &q3_1;
        let mut g = proposal.mapv(|x| x.max(params.alpha));
        q3_1 = safe_div(&proposal, &g, "q3_1")?;
        g_tilde = g.clone();

        // Geometric-mean step.
        let k1tu1 = k1.t().dot(&u1);
        let k2tu2 = k2.t().dot(&u2);
        g = Array1::from_shape_fn(r, |l| {
            (g_tilde[l] * q3_2[l]).cbrt()
                * (v1_tilde[l] * q1[l] * k1tu1[l]).cbrt()
                * (v2_tilde[l] * q2[l] * k2tu2[l]).cbrt()
        });
        let v1 = safe_div(&g, &k1tu1, "v1")?;
        let v2 = safe_div(&g, &k2tu2, "v2")?;
        q1 = safe_div(&(&v1_tilde * &q1), &v1, "q1")?;
        q2 = safe_div(&(&v2_tilde * &q2), &v2, "q2")?;
        q3_2 = safe_div(&(&g_tilde * &q3_2), &g, "q3_2")?;
        v1_tilde = v1.clone();
        v2_tilde = v2.clone();
        g_tilde = g.clone();

        let e1 = (&(&u1 * &k1.dot(&v1)) - &a).mapv(f64::abs).sum();
        let e2 = (&(&u2 * &k2.dot(&v2)) - &b).mapv(f64::abs).sum();
        residual = e1 + e2;
        if !residual.is_finite() {
            return Err(Error::Numerical {
                context: "lr_dykstra",
                detail: "marginal residual became non-finite".into(),
            });
        }
        if residual < params.delta {
            // The geometric-mean step can leave g slightly below the floor.
            let floored = g.mapv(|x| x.max(params.alpha));
            let (v1, v2, residual) = if floored == g {
                (v1, v2, residual)
            } else {
                let v1 = safe_div(&floored, &k1tu1, "v1")?;
                let v2 = safe_div(&floored, &k2tu2, "v2")?;
                let e1 = (&(&u1 * &k1.dot(&v1)) - &a).mapv(f64::abs).sum();
                let e2 = (&(&u2 * &k2.dot(&v2)) - &b).mapv(f64::abs).sum();
                (v1, v2, e1 + e2)
            };
            if residual < params.delta {
                let q = scale(&u1, k1, &v1);
                let rr = scale(&u2, k2, &v2);
                return Ok(Projection {
                    coupling: LowRankCoupling { q, r: rr, g: floored },
                    iterations: it,
                    residual,
                    scalings: DykstraScalings { u1, v1, u2, v2 },
                });
            }
        }
    }
    Err(Error::Convergence {
        solver: "lr_dykstra",
        iterations: params.max_iter,
        residual,
    })
}

/// Exponents below this are floored so kernels stay strictly positive.
pub(crate) const EXP_FLOOR: f64 = -700.0;

/// Kernels `exp(e1)`, `exp(e2)`, `exp(e3)` after shifting each row of `e1`
/// and `e2` and all of `e3` by their maxima. The projection is unchanged:
/// row scalings of `K1`, `K2` are absorbed by the Dykstra row scalings and a
/// global factor on `k3` only adds a constant on the feasible set, where
/// `Σ g = 1`.
pub(crate) fn stabilized_kernels(mut e1: Array2<f64>, mut e2: Array2<f64>, mut e3: Array1<f64>) -> Result<KernelTriple> {
    if e1.iter().chain(e2.iter()).chain(e3.iter()).any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Numerical {
            context: "mirror descent step",
            detail: "kernel exponent is NaN or +inf; reduce gamma or normalize the costs".into(),
        });
    }
    let shift = |v: &mut ndarray::ArrayViewMut1<f64>| {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        v.mapv_inplace(|x| (x - max).max(EXP_FLOOR).exp());
    };
    for mut row in e1.rows_mut() {
        shift(&mut row);
    }
    for mut row in e2.rows_mut() {
        shift(&mut row);
    }
    shift(&mut e3.view_mut());
    Ok(KernelTriple { k1: e1, k2: e2, k3: e3 })
}

/// `Σ (x - y)(log x - log y)` over the three blocks: the symmetrized KL
/// divergence between two triples.
pub fn symmetric_kl(x: &LowRankCoupling, y: &LowRankCoupling) -> f64 {
    fn term(p: f64, q: f64) -> f64 {
        if p == q {
            0.0
        } else {
            (p - q) * (p.ln() - q.ln())
        }
    }
    let pairs = x
        .q
        .iter()
        .zip(y.q.iter())
        .chain(x.r.iter().zip(y.r.iter()))
        .chain(x.g.iter().zip(y.g.iter()));
    pairs.map(|(&p, &q)| term(p, q)).sum()
}

/// `Q = a g^T`, `R = b g^T` with uniform `g`.
pub fn uniform_triple(a: ArrayView1<f64>, b: ArrayView1<f64>, rank: usize) -> LowRankCoupling {
    let g = crate::linalg::uniform(rank);
    LowRankCoupling {
        q: Array2::from_shape_fn((a.len(), rank), |(i, l)| a[i] * g[l]),
        r: Array2::from_shape_fn((b.len(), rank), |(j, l)| b[j] * g[l]),
        g,
    }
}

/// A strictly positive feasible triple drawn from `seed`: uniform `g`, and
/// `Q`, `R` the projections of random matrices with entries in `[0.5, 1.5)`
/// onto `Π(a, g)` and `Π(b, g)`.
pub fn random_feasible_triple(a: ArrayView1<f64>, b: ArrayView1<f64>, rank: usize, seed: u64) -> Result<LowRankCoupling> {
    use rand::{Rng, SeedableRng};
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    if rank == 0 {
        return Err(Error::Input("rank must be at least 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = crate::linalg::uniform(rank);
    let mut side = |p: ArrayView1<f64>| -> Result<Array2<f64>> {
        let k = Array2::from_shape_fn((p.len(), rank), |_| rng.random_range(0.5..1.5));
        Ok(crate::sinkhorn::kl_project(k.view(), p, g.view(), 1e-10, 10_000)?.0.plan)
    };
    let q = side(a)?;
    let r = side(b)?;
    Ok(LowRankCoupling { q, r, g })
}
