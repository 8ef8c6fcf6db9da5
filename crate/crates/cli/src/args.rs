use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "lrgw", version, about = "Gromov-Wasserstein alignment of point clouds", propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic point cloud.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Align two spaces and write the coupling, report and manifest.
    #[command(args_override_self = true)]
    Solve(SolveArgs),
    /// Sweep one parameter over repeated seeded runs.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Check solver properties against reference oracles.
    #[command(args_override_self = true)]
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Mixture,
    Blobs,
    Curve2d,
    Curve3d,
    #[value(name = "unit_square", alias = "unit-square")]
    #[serde(rename = "unit_square")]
    UnitSquare,
    #[value(name = "isometric_pair", alias = "isometric-pair")]
    #[serde(rename = "isometric_pair")]
    IsometricPair,
}

impl From<Kind> for lrgw::datasets_io::DatasetKind {
    fn from(k: Kind) -> Self {
        use lrgw::datasets_io::DatasetKind as D;
        match k {
            Kind::Mixture => D::Mixture,
            Kind::Blobs => D::Blobs,
            Kind::Curve2d => D::Curve2d,
            Kind::Curve3d => D::Curve3d,
            Kind::UnitSquare => D::UnitSquare,
            Kind::IsometricPair => D::IsometricPair,
        }
    }
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct DatasetArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Number of points.
    #[arg(long)]
    pub n: usize,
    /// Dimension; defaults to 3 for curve3d and 2 otherwise.
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of clusters.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Minimum centroid separation.
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct GenArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// For isometric_pair: where to write the moved copy (default `<out stem>.target.csv`).
    #[arg(long)]
    pub out_target: Option<PathBuf>,
    /// Omit wall-clock timestamps from the manifest.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Entropic GW on dense costs.
    Ent,
    /// Entropic GW on factored costs.
    QuadEnt,
    /// Low-rank coupling GW on dense costs.
    Lr,
    /// Low-rank coupling GW on factored costs, linear time.
    LinLr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ent => "ent",
            Method::QuadEnt => "quad-ent",
            Method::Lr => "lr",
            Method::LinLr => "lin-lr",
        }
    }

    pub fn needs_factors(self) -> bool {
        matches!(self, Method::QuadEnt | Method::LinLr)
    }

    pub fn is_low_rank(self) -> bool {
        matches!(self, Method::Lr | Method::LinLr)
    }
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// Squared Euclidean distances; exact rank d+2 factors.
    Sqeuclidean,
    /// Euclidean distances, dense.
    Euclidean,
    /// Euclidean distances through a sampled low-rank factorization.
    LrEuclidean,
    /// Shortest-path distances on the k-NN graph, dense.
    Knn,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::Sqeuclidean => "sqeuclidean",
            CostKind::Euclidean => "euclidean",
            CostKind::LrEuclidean => "lr-euclidean",
            CostKind::Knn => "knn",
        }
    }
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    /// Scale so that every cost entry is at most 1.
    Max,
    None,
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Lower-bound initialization (low-rank OT for lr methods, entropic OT for ent methods).
    LowerBound,
    /// Seeded random feasible triple (lr) or the product coupling (ent).
    Random,
    /// Uniform triple (lr) or the product coupling (ent).
    Uniform,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct CostArgs {
    #[arg(long, value_enum, default_value_t = CostKind::Sqeuclidean)]
    pub cost: CostKind,
    /// Dense source cost matrix (CSV); replaces the cloud-derived cost.
    #[arg(long, requires = "target_cost")]
    pub source_cost: Option<PathBuf>,
    /// Dense target cost matrix (CSV).
    #[arg(long, requires = "source_cost")]
    pub target_cost: Option<PathBuf>,
    /// Neighbours per point for `--cost knn`.
    #[arg(long, default_value_t = 10)]
    pub knn_k: usize,
    /// Factorization rank for `--cost lr-euclidean`.
    #[arg(long, default_value_t = 10)]
    pub cost_rank: usize,
    #[arg(long, value_enum, default_value_t = Normalize::Max)]
    pub normalize: Normalize,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct SolverArgs {
    /// Coupling rank (lr, lin-lr).
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    /// Mirror-descent step size (lr, lin-lr).
    #[arg(long, default_value_t = 100.0)]
    pub gamma: f64,
    /// Lower bound on the inner marginal g (lr, lin-lr).
    #[arg(long, default_value_t = 1e-10)]
    pub alpha: f64,
    /// Entropic weight; defaults to 0.01 for ent methods and 0 for lr methods.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub outer_iter: usize,
    /// Relative-change (and, for lr methods, Δ) tolerance; defaults to 1e-9 for ent and 1e-6 for lr methods.
    #[arg(long)]
    pub stop_tol: Option<f64>,
    /// Inner projection tolerance; defaults to 1e-6 (Sinkhorn) or 1e-3 (Dykstra).
    #[arg(long)]
    pub inner_delta: Option<f64>,
    /// Inner projection iteration budget.
    #[arg(long)]
    pub inner_max_iter: Option<usize>,
    #[arg(long, value_enum, default_value_t = InitKind::LowerBound)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Source point cloud (CSV).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target point cloud (CSV).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[command(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output files are `<prefix>.report.csv`, `<prefix>.manifest.json` and
    /// `<prefix>.coupling.csv` (ent methods) or `<prefix>.{Q,R,g}.csv` (lr methods).
    #[arg(long)]
    pub out_prefix: PathBuf,
    /// Zero wall-clock columns and omit timestamps so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Gamma,
    Rank,
    Epsilon,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Gamma => "gamma",
            Sweep::Rank => "rank",
            Sweep::Epsilon => "epsilon",
        }
    }
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    /// Comma-separated grid of swept values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = Method::LinLr)]
    pub method: Method,
    /// With `--sweep epsilon`: read the grid as γ values and run with ε = 1/γ.
    #[arg(long)]
    pub eps_from_gamma: bool,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub cost: CostArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Run cells on a thread pool; rows are identical to a sequential run.
    #[arg(long)]
    pub parallel: bool,
    /// Zero the total_ms column and omit manifest timestamps.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(ValueEnum, Serialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Feasibility,
    Objective,
    Gradient,
    Bound,
    Alloc,
    All,
}

#[derive(Args, Serialize, Debug, Clone)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Problem size for the alloc suite.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
