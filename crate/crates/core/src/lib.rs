//! Parametric density estimation by minimum weighted L2 distance and by
//! localized Kullback–Leibler (local likelihood) criteria.
//!
//! [`asymptotics`] gives sandwich variances and influence curves;
//! [`simharness`] checks them by seeded simulation.

pub mod asymptotics;
pub mod error;
pub mod fit;
pub mod kernel;
pub mod minl2;
pub mod ml;
pub mod model;
pub mod numerics;
pub mod robustkl;
pub mod simharness;

pub use error::{Error, Result};
pub use fit::FitResult;
pub use kernel::{KernelKind, KernelSpec};
pub use minl2::{fit_min_l2, Weight, WeightFunction};
pub use ml::{fit_ml_mvn, fit_ml_normal};
pub use model::{MvnModel, MvnParams, NormalModel, NormalParams, ParametricModel, UnivariateModel};
pub use numerics::{QuadratureSpec, SolverConfig};
pub use robustkl::{fit_mvn_robust, fit_robust_kl, LocalFitSpec, MvnFitResult, MvnLocalFitSpec};
pub use simharness::{run_scenario, ScenarioSpec, SimulationReport};
