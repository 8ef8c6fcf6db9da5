//! Synthetic point clouds for the alignment experiments, and CSV persistence
//! for clouds, couplings and solver reports.
//!
//! Every generator is a pure function of its [`DatasetSpec`].

mod files;

pub use files::{
    load_coupling, load_low_rank, load_point_cloud, low_rank_paths, save_coupling, save_low_rank, save_point_cloud, save_report,
    write_report, REPORT_HEADER,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::costs::PointCloud;
use crate::{Error, Result};

/// Centroid draws allowed before a separation is declared infeasible.
pub const REJECTION_BUDGET: usize = 10_000;

/// Half-width per cluster of the box centroids are drawn from.
pub const CENTROID_SPREAD: f64 = 10.0;

/// Orthogonality tolerance for supplied rotation matrices.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Gaussian mixture with Wishart covariances.
    Mixture,
    /// Axis-anisotropic Gaussian blobs.
    Blobs,
    /// Archimedean spiral in the plane.
    Curve2d,
    /// Circular helix in 3-D.
    Curve3d,
    /// Uniform samples in `[0, 1]^d`.
    UnitSquare,
    /// Blobs plus a rigidly moved copy; [`generate`] returns the source.
    IsometricPair,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 6] = [
        DatasetKind::Mixture,
        DatasetKind::Blobs,
        DatasetKind::Curve2d,
        DatasetKind::Curve3d,
        DatasetKind::UnitSquare,
        DatasetKind::IsometricPair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mixture => "mixture",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Curve2d => "curve2d",
            DatasetKind::Curve3d => "curve3d",
            DatasetKind::UnitSquare => "unit_square",
            DatasetKind::IsometricPair => "isometric_pair",
        }
    }

    /// Dimension used when none is given.
    pub fn default_dim(self) -> usize {
        match self {
            DatasetKind::Curve3d => 3,
            _ => 2,
        }
    }

    fn is_clustered(self) -> bool {
        matches!(self, DatasetKind::Mixture | DatasetKind::Blobs | DatasetKind::IsometricPair)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown dataset kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub d: usize,
    /// Number of clusters (clustered kinds only).
    pub clusters: usize,
    /// Minimum pairwise centroid distance (clustered kinds only).
    pub separation: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            d: kind.default_dim(),
            clusters: 1,
            separation: 10.0,
            seed,
        }
    }

    pub fn with_clusters(self, clusters: usize, separation: f64) -> Self {
        Self { clusters, separation, ..self }
    }

    pub fn with_dim(self, d: usize) -> Self {
        Self { d, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("n must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Input("d must be at least 1".into()));
        }
        match self.kind {
            DatasetKind::Curve2d if self.d != 2 => return Err(Error::Input(format!("curve2d needs d = 2, got {}", self.d))),
            DatasetKind::Curve3d if self.d != 3 => return Err(Error::Input(format!("curve3d needs d = 3, got {}", self.d))),
            DatasetKind::IsometricPair if self.d < 2 => {
                return Err(Error::Input("isometric_pair needs d >= 2 for a rotation plane".into()))
            }
            _ => {}
        }
        if self.kind.is_clustered() {
            if self.clusters == 0 || self.clusters > self.n {
                return Err(Error::Input(format!("clusters must lie in 1..={}, got {}", self.n, self.clusters)));
            }
            if !(self.separation >= 0.0) || !self.separation.is_finite() {
                return Err(Error::Input(format!("separation must be finite and >= 0, got {}", self.separation)));
            }
        }
        Ok(())
    }
}

/// Points of `spec` together with the cluster label of each point (all zero
/// for unclustered kinds).
pub fn generate_labeled(spec: &DatasetSpec) -> Result<(PointCloud, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (points, labels) = match spec.kind {
        DatasetKind::Mixture => clustered(spec, &mut rng, mixture_cluster)?,
        DatasetKind::Blobs | DatasetKind::IsometricPair => clustered(spec, &mut rng, blob_cluster)?,
        DatasetKind::UnitSquare => (Array2::from_shape_fn((spec.n, spec.d), |_| rng.random_range(0.0..1.0)), vec![0; spec.n]),
        DatasetKind::Curve2d => (spiral(spec.n), vec![0; spec.n]),
        DatasetKind::Curve3d => (helix(spec.n), vec![0; spec.n]),
    };
    Ok((PointCloud::new(points)?, labels))
}

pub fn generate(spec: &DatasetSpec) -> Result<PointCloud> {
    generate_labeled(spec).map(|(cloud, _)| cloud)
}

/// Draws a cluster: `(rng, centroid, count) -> count x d` samples.
type ClusterSampler = fn(&mut ChaCha8Rng, ArrayView1<f64>, usize) -> Array2<f64>;

fn clustered(spec: &DatasetSpec, rng: &mut ChaCha8Rng, sample: ClusterSampler) -> Result<(Array2<f64>, Vec<usize>)> {
    let centroids = separated_centroids(spec, rng)?;
    let k = spec.clusters;
    let mut points = Array2::zeros((spec.n, spec.d));
    let mut labels = vec![0; spec.n];
    let mut row = 0;
    for c in 0..k {
        let count = spec.n / k + usize::from(c < spec.n % k);
        let block = sample(rng, centroids.row(c), count);
        for (i, p) in block.rows().into_iter().enumerate() {
            points.row_mut(row + i).assign(&p);
            labels[row + i] = c;
        }
        row += count;
    }
    Ok((points, labels))
}

/// `k` centroids in `[-10k, 10k]^d`, pairwise at least `separation` apart.
fn separated_centroids(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let half = CENTROID_SPREAD * spec.clusters as f64;
    let mut accepted: Vec<Array1<f64>> = Vec::with_capacity(spec.clusters);
    let mut draws = 0;
    while accepted.len() < spec.clusters {
        if draws == REJECTION_BUDGET {
            return Err(Error::Input(format!(
                "rejection budget of {REJECTION_BUDGET} draws exhausted placing {} centroids {} apart; separation is infeasible",
                spec.clusters, spec.separation
            )));
        }
        draws += 1;
        let c = Array1::from_shape_fn(spec.d, |_| rng.random_range(-half..=half));
        if accepted.iter().all(|o| (&c - o).dot(&(&c - o)).sqrt() >= spec.separation) {
            accepted.push(c);
        }
    }
    let mut out = Array2::zeros((spec.clusters, spec.d));
    for (i, c) in accepted.iter().enumerate() {
        out.row_mut(i).assign(c);
    }
    Ok(out)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian with per-axis standard deviation drawn from `[0.5, 2]`.
fn blob_cluster(rng: &mut ChaCha8Rng, centroid: ArrayView1<f64>, count: usize) -> Array2<f64> {
    let d = centroid.len();
    let scales = Array1::from_shape_fn(d, |_| rng.random_range(0.5..2.0));
    Array2::from_shape_fn((count, d), |(_, j)| centroid[j] + scales[j] * normal(rng))
}

/// Gaussian whose covariance `W = Z^T Z` is a Wishart draw with identity scale
/// and `d + 2` degrees of freedom (`Z` has `d + 2` standard normal rows), so a
/// sample is `centroid + Z^T w` with `w ~ N(0, I_{d+2})`.
fn mixture_cluster(rng: &mut ChaCha8Rng, centroid: ArrayView1<f64>, count: usize) -> Array2<f64> {
    let d = centroid.len();
    let z = Array2::from_shape_fn((d + 2, d), |_| normal(rng));
    let w = Array2::from_shape_fn((count, d + 2), |_| normal(rng));
    w.dot(&z) + centroid
}

/// Arc-length fractions `0, 1/(n-1), ..., 1` (a single point sits at 0).
fn arc_fractions(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 })
}

/// Archimedean spiral `θ (cos θ, sin θ) / (4π)`, `θ ∈ [0, 4π]`, sampled at
/// equal arc-length steps by inverting a fine cumulative-length table.
fn spiral(n: usize) -> Array2<f64> {
    const GRID: usize = 20_000;
    let turns = 4.0 * PI;
    let at = |t: f64| (t * t.cos() / turns, t * t.sin() / turns);
    let mut params = Vec::with_capacity(GRID + 1);
    let mut lengths = Vec::with_capacity(GRID + 1);
    let mut total = 0.0;
    let mut prev = at(0.0);
    for s in 0..=GRID {
        let t = turns * s as f64 / GRID as f64;
        let p = at(t);
        total += ((p.0 - prev.0).powi(2) + (p.1 - prev.1).powi(2)).sqrt();
        prev = p;
        params.push(t);
        lengths.push(total);
    }
    let mut out = Array2::zeros((n, 2));
    for (i, frac) in arc_fractions(n).enumerate() {
        let target = frac * total;
        let hi = lengths.partition_point(|&l| l < target).min(GRID);
        let t = if hi == 0 {
            0.0
        } else {
            let (l0, l1) = (lengths[hi - 1], lengths[hi]);
            let w = if l1 > l0 { (target - l0) / (l1 - l0) } else { 0.0 };
            params[hi - 1] + w * (params[hi] - params[hi - 1])
        };
        let p = at(t);
        out[[i, 0]] = p.0;
        out[[i, 1]] = p.1;
    }
    out
}

/// Helix `(cos t, sin t, t / (2π))`, `t ∈ [0, 4π]`; constant speed, so equal
/// parameter steps are equal arc-length steps.
fn helix(n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, 3));
    for (i, frac) in arc_fractions(n).enumerate() {
        let t = 4.0 * PI * frac;
        out[[i, 0]] = t.cos();
        out[[i, 1]] = t.sin();
        out[[i, 2]] = t / (2.0 * PI);
    }
    out
}

/// How [`isometric_pair`] rotates.
#[derive(Debug, Clone, PartialEq)]
pub enum Rotation {
    /// Rotation by an angle (radians) in the plane of the first two axes.
    Angle(f64),
    /// A `d x d` orthogonal matrix applied as `y = M x`.
    Matrix(Array2<f64>),
}

/// A cloud, its rigid motion, and the ground-truth matching.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometricPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// `target[perm[i]]` is the image of `source[i]`.
    pub perm: Vec<usize>,
}

fn check_orthogonal(m: ArrayView2<f64>) -> Result<()> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::Input(format!("rotation must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let gram = m.t().dot(&m);
    let err = gram.indexed_iter().map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
    if !(err <= ORTHOGONALITY_TOL) {
        return Err(Error::Input(format!("rotation matrix is not orthogonal: max |M^T M - I| = {err:.3e}")));
    }
    Ok(())
}

/// `Y = rotate(X) + t`; squared distances within `X` and `Y` agree.
pub fn isometric_pair(x: &PointCloud, rotation: &Rotation, translation: ArrayView1<f64>) -> Result<IsometricPair> {
    let d = x.dim();
    if translation.len() != d {
        return Err(Error::dim("isometric_pair translation", d, translation.len()));
    }
    let m = match rotation {
        Rotation::Angle(theta) => {
            if d < 2 {
                return Err(Error::Input("an angle rotation needs d >= 2".into()));
            }
            if !theta.is_finite() {
                return Err(Error::Input(format!("rotation angle must be finite, got {theta}")));
            }
            let mut m = Array2::eye(d);
            let (s, c) = theta.sin_cos();
            m[[0, 0]] = c;
            m[[0, 1]] = -s;
            m[[1, 0]] = s;
            m[[1, 1]] = c;
            m
        }
        Rotation::Matrix(m) => {
            if m.nrows() != d {
                return Err(Error::dim("isometric_pair rotation", format!("{d}x{d}"), format!("{}x{}", m.nrows(), m.ncols())));
            }
            check_orthogonal(m.view())?;
            m.clone()
        }
    };
    let y = x.points().dot(&m.t()) + translation;
    Ok(IsometricPair {
        source: x.clone(),
        target: PointCloud::new(y)?,
        perm: (0..x.len()).collect(),
    })
}

/// Source from `spec` (blobs) and a copy under a seeded random angle in
/// `[0, 2π)` and translation in `[-1, 1]^d`.
pub fn generate_isometric_pair(spec: &DatasetSpec) -> Result<IsometricPair> {
    let (x, _) = generate_labeled(&DatasetSpec { kind: DatasetKind::IsometricPair, ..*spec })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let theta = rng.random_range(0.0..2.0 * PI);
    let t = Array1::from_shape_fn(spec.d, |_| rng.random_range(-1.0..1.0));
    isometric_pair(&x, &Rotation::Angle(theta), t.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::dense_cost;
    use ndarray::array;

    #[test]
    fn unit_square_is_reproducible() {
        let spec = DatasetSpec::new(DatasetKind::UnitSquare, 4, 7);
        let x = generate(&spec).unwrap();
        assert_eq!(x.points().dim(), (4, 2));
        assert!(x.points().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(x, generate(&spec).unwrap());
        assert_ne!(x, generate(&DatasetSpec { seed: 8, ..spec }).unwrap());
    }

    #[test]
    fn blob_centroids_are_separated() {
        for seed in 0..20 {
            let spec = DatasetSpec::new(DatasetKind::Blobs, 50, seed).with_clusters(2, 10.0);
            let (x, labels) = generate_labeled(&spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = separated_centroids(&spec, &mut rng).unwrap();
            let gap = &c.row(0) - &c.row(1);
            assert!(gap.dot(&gap).sqrt() >= 10.0);
            assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 25);
            assert_eq!(x.len(), 50);
        }
    }

    #[test]
    fn infeasible_separation_is_an_input_error() {
        let spec = DatasetSpec::new(DatasetKind::Blobs, 10, 0).with_clusters(2, 1e9);
        let err = generate(&spec).unwrap_err();
        assert!(matches!(err, Error::Input(ref m) if m.contains("rejection budget")), "{err}");
    }

    #[test]
    fn spec_validation() {
        assert!(generate(&DatasetSpec::new(DatasetKind::UnitSquare, 0, 0)).is_err());
        assert!(generate(&DatasetSpec::new(DatasetKind::Curve2d, 5, 0).with_dim(3)).is_err());
        assert!(generate(&DatasetSpec::new(DatasetKind::Blobs, 3, 0).with_clusters(4, 1.0)).is_err());
        assert!(generate(&DatasetSpec::new(DatasetKind::Blobs, 3, 0).with_clusters(0, 1.0)).is_err());
        assert_eq!("unit_square".parse::<DatasetKind>().unwrap(), DatasetKind::UnitSquare);
        assert!("square".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn curves_are_equally_spaced() {
        for (kind, n) in [(DatasetKind::Curve2d, 200), (DatasetKind::Curve3d, 200)] {
            let x = generate(&DatasetSpec::new(kind, n, 0)).unwrap();
            let steps: Vec<f64> = (1..n)
                .map(|i| {
                    let g = &x.point(i) - &x.point(i - 1);
                    g.dot(&g).sqrt()
                })
                .collect();
            let (lo, hi) = steps.iter().fold((f64::MAX, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
            // Chords undershoot arcs where curvature is high, near the spiral centre.
            assert!(hi / lo < 1.03, "{kind}: chord steps {lo}..{hi}");
        }
        assert_eq!(generate(&DatasetSpec::new(DatasetKind::Curve2d, 1, 0)).unwrap().points(), array![[0.0, 0.0]]);
    }

    #[test]
    fn identity_motion_is_identity() {
        let x = generate(&DatasetSpec::new(DatasetKind::UnitSquare, 5, 1)).unwrap();
        let p = isometric_pair(&x, &Rotation::Angle(0.0), array![0.0, 0.0].view()).unwrap();
        assert_eq!(p.target, x);
        assert_eq!(p.perm, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn quarter_turn_of_segment() {
        let x = PointCloud::new(array![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]).unwrap();
        let p = isometric_pair(&x, &Rotation::Angle(PI / 2.0), array![1.0, 1.0].view()).unwrap();
        let expect = array![[1.0, 1.0], [1.0, 1.5], [1.0, 2.0]];
        assert!(p.target.points().iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn motion_preserves_squared_distances() {
        for seed in 0..5 {
            let pair = generate_isometric_pair(&DatasetSpec::new(DatasetKind::IsometricPair, 40, seed).with_clusters(3, 5.0)).unwrap();
            let (cx, cy) = (dense_cost(&pair.source, 2.0).unwrap(), dense_cost(&pair.target, 2.0).unwrap());
            let err = cx.values().iter().zip(cy.values().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "{err}");
        }
    }

    #[test]
    fn matrix_rotations() {
        let x = generate(&DatasetSpec::new(DatasetKind::UnitSquare, 6, 2).with_dim(3)).unwrap();
        let perm = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let p = isometric_pair(&x, &Rotation::Matrix(perm), array![0.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(p.target.points()[[0, 0]], x.points()[[0, 1]]);
        let shear = array![[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            isometric_pair(&x, &Rotation::Matrix(shear), array![0.0, 0.0, 0.0].view()),
            Err(Error::Input(_))
        ));
    }

    /// Connected components of the graph linking points closer than `radius`.
    fn single_linkage_clusters(x: &PointCloud, radius: f64) -> usize {
        let n = x.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, i: usize) -> usize {
            if p[i] != i {
                let r = find(p, p[i]);
                p[i] = r;
            }
            p[i]
        }
        for i in 0..n {
            for j in 0..i {
                let g = &x.point(i) - &x.point(j);
                if g.dot(&g).sqrt() < radius {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    #[test]
    fn mixture_has_the_requested_cluster_count() {
        for seed in 0..5 {
            let spec = DatasetSpec::new(DatasetKind::Mixture, 100, seed).with_dim(5).with_clusters(3, 60.0);
            let x = generate(&spec).unwrap();
            assert_eq!(single_linkage_clusters(&x, spec.separation / 2.0), 3, "seed {seed}");
        }
    }
}
