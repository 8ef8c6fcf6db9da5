//! Sampling-based low-rank approximation of a distance matrix between two
//! point clouds, computed without forming the full `n x m` matrix.
//!
//! Structure: importance-sample `t` rows, then `t` columns of the row sample,
//! take the top singular vectors of the resulting `t x t` block to get a
//! right factor `N`, and finally regress uniformly sampled columns of the
//! distance matrix onto `N` to get the left factor `M`, so that
//! `D ≈ M N^T`.

use ndarray::{Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{squared_euclidean, FactoredCost, PointCloud};
use crate::linalg::{inverse_checked, svd_sorted};
use crate::{Error, Result};

/// Additive smoothing applied to both sampling distributions before
/// normalization.
pub const SAMPLING_SMOOTHING: f64 = 1e-12;

/// Which entrywise function of the Euclidean distance is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundMetric {
    Euclidean,
    SqEuclidean,
}

impl GroundMetric {
    fn eval(self, x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>) -> f64 {
        let d2 = squared_euclidean(x, y);
        match self {
            GroundMetric::Euclidean => d2.sqrt(),
            GroundMetric::SqEuclidean => d2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrDistanceParams {
    pub target_rank: usize,
    /// Row/column sample count `t`; defaults to `10 * target_rank`.
    pub samples: usize,
    pub seed: u64,
    pub metric: GroundMetric,
}

impl LrDistanceParams {
    pub fn new(target_rank: usize, seed: u64, metric: GroundMetric) -> Self {
        Self {
            target_rank,
            samples: 10 * target_rank,
            seed,
            metric,
        }
    }
}

fn sampling_distribution(weights: &Array1<f64>, what: &str) -> Result<WeightedIndex<f64>> {
    let smoothed: Vec<f64> = weights.iter().map(|w| w + SAMPLING_SMOOTHING).collect();
    let total: f64 = smoothed.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Input(format!("degenerate {what} sampling distribution (total mass {total})")));
    }
    let normalized: Vec<f64> = smoothed.iter().map(|w| w / total).collect();
    WeightedIndex::new(normalized).map_err(|e| Error::Input(format!("degenerate {what} sampling distribution: {e}")))
}

/// Approximates the `n x m` matrix `metric(x_i, y_j)` as `M N^T` with `M: n x rank`
/// and `N: m x rank`. Deterministic given `params.seed`.
pub fn lr_distance_approx(x: &PointCloud, y: &PointCloud, params: &LrDistanceParams) -> Result<FactoredCost> {
    let (n, m) = (x.len(), y.len());
    let rank = params.target_rank;
    let t = params.samples;
    if rank == 0 {
        return Err(Error::Input("target_rank must be positive".into()));
    }
    if t < rank {
        return Err(Error::Input(format!("sample count t={t} must be at least target_rank={rank}")));
    }
    if x.dim() != y.dim() {
        return Err(Error::dim("lr_distance_approx", format!("dimension {}", x.dim()), format!("dimension {}", y.dim())));
    }
    let c = |i: usize, j: usize| params.metric.eval(x.point(i), y.point(j));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Row importance weights from a random anchor pair.
    let i_star = rng.random_range(0..n);
    let j_star = rng.random_range(0..m);
    let anchor_row_mean = (0..m).map(|j| c(i_star, j).powi(2)).sum::<f64>() / m as f64;
    let anchor = c(i_star, j_star).powi(2);
    let p_raw: Array1<f64> = (0..n).map(|i| c(i, j_star).powi(2) + anchor + anchor_row_mean).collect();
    let p_dist = sampling_distribution(&p_raw, "row")?;
    let p_total: f64 = p_raw.iter().map(|w| w + SAMPLING_SMOOTHING).sum();
    let p = p_raw.mapv(|w| (w + SAMPLING_SMOOTHING) / p_total);

    // S: t x m, sampled rows rescaled by 1/sqrt(t p_i).
    let rows: Vec<usize> = (0..t).map(|_| p_dist.sample(&mut rng)).collect();
    let mut s = Array2::zeros((t, m));
    for (k, &i) in rows.iter().enumerate() {
        let scale = 1.0 / (t as f64 * p[i]).sqrt();
        for j in 0..m {
            s[[k, j]] = c(i, j) * scale;
        }
    }

    // Column importance weights from the row sample.
    let col_norms: Array1<f64> = s.map_axis(Axis(0), |col| col.dot(&col));
    let fro2: f64 = col_norms.sum();
    let q_raw = if fro2 > 0.0 { &col_norms / fro2 } else { col_norms.clone() };
    let q_dist = sampling_distribution(&q_raw, "column")?;
    let q_total: f64 = q_raw.iter().map(|w| w + SAMPLING_SMOOTHING).sum();
    let q = q_raw.mapv(|w| (w + SAMPLING_SMOOTHING) / q_total);
    let cols: Vec<usize> = (0..t).map(|_| q_dist.sample(&mut rng)).collect();
    let mut w = Array2::zeros((t, t));
    for (k, &j) in cols.iter().enumerate() {
        let scale = 1.0 / (t as f64 * q[j]).sqrt();
        for r in 0..t {
            w[[r, k]] = s[[r, j]] * scale;
        }
    }

    // Right factor: N = S^T U_1[:, :rank] / ||W^T U_1[:, :rank]||_F.
    let (u1, _, _) = svd_sorted(w.view())?;
    let top = u1.slice(ndarray::s![.., ..rank]).to_owned();
    let wn = w.t().dot(&top);
    let wn_norm = wn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut right = s.t().dot(&top);
    if wn_norm > 0.0 {
        right /= wn_norm;
    }

    // Regression of uniformly sampled columns of the distance matrix onto N.
    let sampled: Vec<usize> = (0..t).map(|_| rng.random_range(0..m)).collect();
    let sqrt_t = (t as f64).sqrt();
    let d_t = Array2::from_shape_fn((n, t), |(i, k)| c(i, sampled[k]) / sqrt_t);
    let gram = right.t().dot(&right);
    let (u2, d2, _) = svd_sorted(gram.view())?;
    let dmax = d2.first().copied().unwrap_or(0.0);
    if d2.iter().any(|&v| !(v > dmax * 1e-14)) {
        let dmin = d2.last().copied().unwrap_or(0.0);
        return Err(Error::Numerical {
            context: "lr_distance_approx",
            detail: format!(
                "rank-deficient right factor: N^T N singular values range {dmax:.3e}..{dmin:.3e}; lower target_rank or raise the sample count"
            ),
        });
    }
    let u2 = &u2 / &d2.view().insert_axis(Axis(0));
    let n_t = Array2::from_shape_fn((t, rank), |(k, l)| right[[sampled[k], l]]);
    let b = u2.t().dot(&n_t.t()) / sqrt_t;
    let a = inverse_checked(b.dot(&b.t()).view(), "lr_distance_approx (B B^T)")?;
    let z = a.dot(&b).dot(&d_t.t());
    let left = z.t().dot(&u2.t());
    FactoredCost::new(left, right)
}
