//! Intra-space cost matrices: dense construction from point clouds, exact
//! low-rank factorizations, and the shared cost-times-matrix product used by
//! every solver.
//!
//! A cost is either a [`DenseCost`] or a [`FactoredCost`] (`left * right^T`).
//! Solvers consume the [`Cost`] enum and only ever touch it through
//! [`Cost::apply`], [`Cost::apply_t`] and [`Cost::hadamard_square_apply`], so a
//! factored cost is never densified on a solver path.

mod knn;
mod lr_distance;

pub use knn::knn_shortest_path_cost;
pub use lr_distance::{lr_distance_approx, GroundMetric, LrDistanceParams};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result};

/// `n` points in `d` dimensions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Input(format!(
                "point cloud must have at least one point and one dimension, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if let Some(pos) = points.iter().position(|x| !x.is_finite()) {
            let (i, j) = (pos / points.ncols(), pos % points.ncols());
            return Err(Error::Input(format!("non-finite coordinate at point {i}, dimension {j}")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.points
    }

    /// Divides all coordinates by `s`, scaling squared distances by `1/s^2`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: &self.points / s,
        }
    }

    /// Twice the largest distance to the centroid; an upper bound on the
    /// diameter computed in linear time.
    pub fn diameter_bound(&self) -> f64 {
        let mean = self.points.mean_axis(Axis(0)).expect("non-empty cloud");
        let r = self
            .points
            .rows()
            .into_iter()
            .map(|p| euclidean(p, mean.view()))
            .fold(0.0, f64::max);
        2.0 * r
    }
}

pub(crate) fn squared_euclidean(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn euclidean(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    squared_euclidean(x, y).sqrt()
}

/// A dense cost matrix (`n x m`, square for intra-space costs).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCost {
    values: Array2<f64>,
}

impl DenseCost {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("cost matrix has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let v = &self.values;
        if v.nrows() != v.ncols() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..v.nrows() {
            for j in 0..i {
                worst = worst.max((v[[i, j]] - v[[j, i]]).abs());
            }
        }
        worst
    }

    /// True when the matrix is symmetric to 1e-12, has a zero diagonal and
    /// no negative entries.
    pub fn is_metric_like(&self) -> bool {
        self.asymmetry() <= 1e-12
            && self.values.diag().iter().all(|&x| x == 0.0)
            && self.values.iter().all(|&x| x >= 0.0)
    }
}

/// A cost held as `left * right^T` with `left: n x k`, `right: m x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredCost {
    left: Array2<f64>,
    right: Array2<f64>,
}

impl FactoredCost {
    pub fn new(left: Array2<f64>, right: Array2<f64>) -> Result<Self> {
        if left.ncols() != right.ncols() {
            return Err(Error::dim("FactoredCost", format!("{} columns", left.ncols()), format!("{} columns", right.ncols())));
        }
        if left.ncols() == 0 {
            return Err(Error::Input("factored cost needs rank_hint >= 1".into()));
        }
        if left.iter().chain(right.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Input("factored cost has non-finite entries".into()));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> ArrayView2<'_, f64> {
        self.left.view()
    }

    pub fn right(&self) -> ArrayView2<'_, f64> {
        self.right.view()
    }

    pub fn rank_hint(&self) -> usize {
        self.left.ncols()
    }

    /// Materializes `left * right^T`. Intended for tests and small problems.
    pub fn densify(&self) -> Array2<f64> {
        self.left.dot(&self.right.t())
    }
}

/// Either form of cost matrix accepted by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Cost {
    Dense(DenseCost),
    Factored(FactoredCost),
}

impl From<DenseCost> for Cost {
    fn from(c: DenseCost) -> Self {
        Cost::Dense(c)
    }
}

impl From<FactoredCost> for Cost {
    fn from(c: FactoredCost) -> Self {
        Cost::Factored(c)
    }
}

impl Cost {
    pub fn nrows(&self) -> usize {
        match self {
            Cost::Dense(c) => c.values.nrows(),
            Cost::Factored(f) => f.left.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Cost::Dense(c) => c.values.ncols(),
            Cost::Factored(f) => f.right.nrows(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Cost::Factored(_))
    }

    /// `cost * m`; see [`cost_apply`].
    pub fn apply(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        cost_apply(self, m)
    }

    /// `cost^T * m`.
    pub fn apply_t(&self, m: ArrayView2<f64>) -> Result<Array2<f64>> {
        if m.nrows() != self.nrows() {
            return Err(Error::dim("cost_apply_t", format!("{} rows", self.nrows()), format!("{} rows", m.nrows())));
        }
        Ok(match self {
            Cost::Dense(c) => c.values.t().dot(&m),
            Cost::Factored(f) => f.right.dot(&f.left.t().dot(&m)),
        })
    }

    /// `cost * v` for a vector.
    pub fn apply_vec(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::dim("cost_apply", format!("length {}", self.ncols()), format!("length {}", v.len())));
        }
        Ok(match self {
            Cost::Dense(c) => c.values.dot(&v),
            Cost::Factored(f) => f.left.dot(&f.right.t().dot(&v)),
        })
    }

    /// `cost^T * v` for a vector.
    pub fn apply_t_vec(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.nrows() {
            return Err(Error::dim("cost_apply_t", format!("length {}", self.nrows()), format!("length {}", v.len())));
        }
        Ok(match self {
            Cost::Dense(c) => c.values.t().dot(&v),
            Cost::Factored(f) => f.right.dot(&f.left.t().dot(&v)),
        })
    }

    /// `cost^{⊙2} * v` (elementwise square of the cost times a vector).
    /// Factored costs go through [`hadamard_square_factors`], so the cost is
    /// `O(n k^2)` rather than `O(n m)`.
    pub fn hadamard_square_apply(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::dim("hadamard_square_apply", format!("length {}", self.ncols()), format!("length {}", v.len())));
        }
        Ok(match self {
            Cost::Dense(c) => c
                .values
                .rows()
                .into_iter()
                .map(|row| row.iter().zip(v.iter()).map(|(x, y)| x * x * y).sum())
                .collect(),
            Cost::Factored(f) => {
                let sq = hadamard_square_factors(f);
                sq.left.dot(&sq.right.t().dot(&v))
            }
        })
    }

    /// Multiplies every entry of the cost by `s`.
    pub fn scaled(&self, s: f64) -> Cost {
        match self {
            Cost::Dense(c) => Cost::Dense(DenseCost {
                values: &c.values * s,
            }),
            Cost::Factored(f) => Cost::Factored(FactoredCost {
                left: &f.left * s,
                right: f.right.clone(),
            }),
        }
    }

    /// Materializes the cost. Never called on solver paths.
    pub fn densify(&self) -> Array2<f64> {
        match self {
            Cost::Dense(c) => c.values.clone(),
            Cost::Factored(f) => f.densify(),
        }
    }
}

/// Pairwise cost `||x_i - x_j||^q`.
pub fn dense_cost(points: &PointCloud, q: f64) -> Result<DenseCost> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Input(format!("exponent q must be positive, got {q}")));
    }
    let n = points.len();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let d2 = squared_euclidean(points.point(i), points.point(j));
            let v = if q == 2.0 { d2 } else { d2.powf(q / 2.0) };
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    DenseCost::new(values)
}

/// Exact rank-`d+2` factorization of the squared Euclidean distance matrix:
/// `left = [z, 1, -sqrt(2) X]`, `right = [1, z, sqrt(2) X]` with `z_i = ||x_i||^2`.
pub fn squared_euclidean_factors(points: &PointCloud) -> FactoredCost {
    let (n, d) = (points.len(), points.dim());
    let x = points.points();
    let s2 = std::f64::consts::SQRT_2;
    let mut left = Array2::zeros((n, d + 2));
    let mut right = Array2::zeros((n, d + 2));
    for i in 0..n {
        let z: f64 = x.row(i).iter().map(|v| v * v).sum();
        left[[i, 0]] = z;
        left[[i, 1]] = 1.0;
        right[[i, 0]] = 1.0;
        right[[i, 1]] = z;
        for k in 0..d {
            left[[i, 2 + k]] = -s2 * x[[i, k]];
            right[[i, 2 + k]] = s2 * x[[i, k]];
        }
    }
    FactoredCost { left, right }
}

/// Factors of the elementwise square of `left * right^T`, built row-wise with
/// the flattened outer product `psi(u) = vec(u u^T)`; the rank grows to `k^2`.
pub fn hadamard_square_factors(cost: &FactoredCost) -> FactoredCost {
    fn psi(m: ArrayView2<f64>) -> Array2<f64> {
        let k = m.ncols();
        let mut out = Array2::zeros((m.nrows(), k * k));
        for (row, mut dst) in m.rows().into_iter().zip(out.rows_mut()) {
            for a in 0..k {
                for b in 0..k {
                    dst[a * k + b] = row[a] * row[b];
                }
            }
        }
        out
    }
    FactoredCost {
        left: psi(cost.left.view()),
        right: psi(cost.right.view()),
    }
}

/// `cost * m`. For a factored cost this is `left * (right^T * m)`; no
/// `n x m` buffer is ever formed.
pub fn cost_apply(cost: &Cost, m: ArrayView2<f64>) -> Result<Array2<f64>> {
    if m.nrows() != cost.ncols() {
        return Err(Error::dim("cost_apply", format!("{} rows", cost.ncols()), format!("{} rows", m.nrows())));
    }
    Ok(match cost {
        Cost::Dense(c) => c.values.dot(&m),
        Cost::Factored(f) => f.left.dot(&f.right.t().dot(&m)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn rel_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        let scale = b.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    #[test]
    fn dense_cost_unit_segment() {
        let p = PointCloud::new(array![[0.0], [1.0]]).unwrap();
        assert_eq!(dense_cost(&p, 2.0).unwrap().into_inner(), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn dense_cost_coincident_points() {
        let p = PointCloud::new(array![[0.0], [0.0]]).unwrap();
        assert_eq!(dense_cost(&p, 1.0).unwrap().into_inner(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn dense_cost_matches_pairwise_loop() {
        let p = random_cloud(5, 3, 11);
        let c = dense_cost(&p, 2.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    let diff = p.points()[[i, k]] - p.points()[[j, k]];
                    s += diff * diff;
                }
                assert!((c.values()[[i, j]] - s).abs() < 1e-14);
            }
        }
        assert!(c.is_metric_like());
    }

    #[test]
    fn dense_cost_rejects_bad_exponent() {
        let p = random_cloud(3, 2, 1);
        assert!(dense_cost(&p, 0.0).is_err());
        assert!(dense_cost(&p, -1.0).is_err());
    }

    #[test]
    fn point_cloud_rejects_non_finite() {
        assert!(PointCloud::new(array![[0.0, f64::NAN]]).is_err());
        assert!(PointCloud::new(Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn squared_euclidean_factors_unit_segment_and_single_point() {
        let p = PointCloud::new(array![[0.0], [1.0]]).unwrap();
        let f = squared_euclidean_factors(&p);
        assert_eq!(f.rank_hint(), 3);
        assert!(rel_close(&f.densify(), &array![[0.0, 1.0], [1.0, 0.0]], 1e-15));
        let single = PointCloud::new(array![[3.5, -2.0]]).unwrap();
        let d = squared_euclidean_factors(&single).densify();
        assert!(d[[0, 0]].abs() < 1e-12);
    }

    #[test]
    fn squared_euclidean_factors_match_dense() {
        let p = random_cloud(6, 2, 3);
        let f = squared_euclidean_factors(&p);
        assert!(rel_close(&f.densify(), &dense_cost(&p, 2.0).unwrap().into_inner(), 1e-10));
    }

    #[test]
    fn hadamard_square_rank_one() {
        let f = FactoredCost::new(array![[1.0], [2.0]], array![[1.0], [2.0]]).unwrap();
        let sq = hadamard_square_factors(&f);
        assert_eq!(sq.left(), array![[1.0], [4.0]]);
        assert_eq!(sq.densify(), array![[1.0, 4.0], [4.0, 16.0]]);
    }

    #[test]
    fn hadamard_square_zero() {
        let f = FactoredCost::new(Array2::zeros((3, 2)), Array2::zeros((3, 2))).unwrap();
        assert_eq!(hadamard_square_factors(&f).densify(), Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn hadamard_square_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let f = FactoredCost::new(l, r).unwrap();
        let expected = f.densify().mapv(|x| x * x);
        assert!(rel_close(&hadamard_square_factors(&f).densify(), &expected, 1e-10));
    }

    #[test]
    fn cost_apply_small_cases() {
        let c = Cost::from(DenseCost::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap());
        assert_eq!(c.apply(array![[1.0], [0.0]].view()).unwrap(), array![[0.0], [1.0]]);
        let z = Cost::from(FactoredCost::new(Array2::zeros((4, 2)), Array2::zeros((4, 2))).unwrap());
        let out = z.apply(Array2::from_elem((4, 3), 7.0).view()).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cost_apply_factored_matches_densified() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let m = Array2::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let f = FactoredCost::new(l, r).unwrap();
        let dense = f.densify().dot(&m);
        let fast = Cost::from(f).apply(m.view()).unwrap();
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_apply_dimension_mismatch() {
        let c = Cost::from(DenseCost::new(Array2::zeros((3, 3))).unwrap());
        assert!(matches!(c.apply(Array2::zeros((2, 1)).view()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hadamard_square_apply_agrees_between_forms() {
        let p = random_cloud(7, 2, 21);
        let v = Array1::from_shape_fn(7, |i| (i as f64 + 1.0) / 28.0);
        let dense = Cost::from(dense_cost(&p, 2.0).unwrap()).hadamard_square_apply(v.view()).unwrap();
        let fact = Cost::from(squared_euclidean_factors(&p)).hadamard_square_apply(v.view()).unwrap();
        for (a, b) in dense.iter().zip(fact.iter()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }
}
