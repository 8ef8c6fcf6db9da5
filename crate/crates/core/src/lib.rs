//! Gromov-Wasserstein alignment between two discrete metric-measure spaces.
//!
//! Four solver tiers share the same cost and coupling types:
//!
//! * [`entropic_gw::solve_entropic_gw`]: cubic entropic GW on dense costs.
//! * [`entropic_gw::solve_quad_entropic_gw`]: quadratic entropic GW on factored costs.
//! * [`gw_lr::solve_gw_lr`]: low-rank couplings `P = Q Diag(1/g) R^T`, dense costs.
//! * [`gw_lr::solve_gw_lr_linear`]: low-rank couplings and factored costs, linear in `n + m`.
//!
//! ```
//! use lrgw::costs::{squared_euclidean_factors, PointCloud};
//! use lrgw::gw_lr::{solve_gw_lr_linear, GwLrConfig};
//! use lrgw::linalg::uniform;
//! use ndarray::array;
//!
//! let x = PointCloud::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]]).unwrap();
//! let a = squared_euclidean_factors(&x);
//! let w = uniform(4);
//! let cfg = GwLrConfig { rank: 2, outer_iter: 5, ..GwLrConfig::default() };
//! let (triple, report) = solve_gw_lr_linear(&a, &a, w.view(), w.view(), &cfg).unwrap();
//! assert_eq!(triple.rank(), 2);
//! assert!(report.losses.iter().all(|l| l.is_finite()));
//! ```

pub mod costs;
pub mod datasets_io;
pub mod entropic_gw;
mod error;
pub mod gw_lr;
pub mod linalg;
pub mod lot_init;
pub mod lr_dykstra;
pub mod oracle_metrics;
pub mod sinkhorn;

pub use error::{Error, Result};
