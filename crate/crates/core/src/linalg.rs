//! Small dense helpers shared by the solvers: probability-vector checks,
//! thin SVD through nalgebra, and power iteration for spectral norms.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Tolerance on `sum(p) == 1` accepted for marginals.
pub const MARGINAL_SUM_TOL: f64 = 1e-12;

pub(crate) fn check_probability(p: ArrayView1<f64>, name: &'static str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Input(format!("{name} is empty")));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Input(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = p.sum();
    // Tolerance scales mildly with length to absorb summation error.
    let tol = MARGINAL_SUM_TOL.max(p.len() as f64 * f64::EPSILON * 4.0);
    if (s - 1.0).abs() > tol {
        return Err(Error::Input(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// Uniform probability vector of length `n`.
pub fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

pub(crate) fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD with singular values sorted in decreasing order.
pub(crate) fn svd_sorted(m: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let svd = to_nalgebra(m).svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => {
            return Err(Error::Numerical {
                context: "svd",
                detail: "decomposition did not produce singular vectors".into(),
            })
        }
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u_sorted = Array2::from_shape_fn((u.nrows(), order.len()), |(i, k)| u[(i, order[k])]);
    let vt_sorted = Array2::from_shape_fn((order.len(), vt.ncols()), |(k, j)| vt[(order[k], j)]);
    let s_sorted = Array1::from_iter(order.iter().map(|&k| s[k]));
    Ok((u_sorted, s_sorted, vt_sorted))
}

/// Inverse of a small square matrix, failing with its condition number when
/// it is numerically singular.
pub(crate) fn inverse_checked(m: ArrayView2<f64>, context: &'static str) -> Result<Array2<f64>> {
    let (_, s, _) = svd_sorted(m)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::Numerical {
            context,
            detail: format!(
                "singular {}x{} Gram matrix (condition number {cond:.3e}, sigma_max {smax:.3e}, sigma_min {smin:.3e})",
                m.nrows(),
                m.ncols()
            ),
        });
    }
    let inv = to_nalgebra(m).try_inverse().ok_or_else(|| Error::Numerical {
        context,
        detail: format!("matrix inversion failed (condition number {cond:.3e})"),
    })?;
    Ok(from_nalgebra(&inv))
}

/// Largest singular value of a linear operator given by `apply` (x -> M x)
/// and `apply_t` (y -> M^T y), by power iteration on `M^T M`.
pub fn spectral_norm<F, G>(dim: usize, apply: F, apply_t: G, rel_tol: f64, max_iter: usize) -> f64
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
    G: Fn(&Array1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    // Deterministic start with no special alignment to coordinate axes.
    let mut x = Array1::from_shape_fn(dim, |i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    let norm = x.dot(&x).sqrt();
    x /= norm;
    let mut sigma = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let z = apply_t(&y);
        let zn = z.dot(&z).sqrt();
        if zn == 0.0 {
            return 0.0;
        }
        let next = y.dot(&y).sqrt();
        x = z / zn;
        if (next - sigma).abs() <= rel_tol * next {
            return next;
        }
        sigma = next;
    }
    sigma
}
