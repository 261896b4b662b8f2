//! Global treatment effects in sharp regression discontinuity designs.
//!
//! A sharp design never shows treated and control units at the same value of
//! the running variable, so the global means `tau_w = E[Y(w)]` are not
//! identified from the main sample alone. An auxiliary sample recording a
//! variable `u` (that screens off the running variable from the potential
//! outcomes) together with the running variable restores identification
//! through two bridge functions:
//!
//! * the outcome bridge `h(u, w)`, solving `E[h(U, W) | X, W] = E[Y | X, W]`;
//! * the treatment bridge `f(x, w)`, solving `E[f(X, W) | U, W] = 1 / p(W | U)`.
//!
//! [`minimax`] fits both by penalized minimax estimation, [`estimators`]
//! turns them into three estimates of `tau_w`, and [`inference`] wraps the
//! whole pipeline in a percentile bootstrap. [`oracle`] provides finite
//! discrete models in which every quantity is exact, and [`simstudy`]
//! reruns the Monte Carlo experiments.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod features;
pub mod inference;
pub mod minimax;
pub mod netfn;
pub mod oracle;
pub mod rng;
pub mod simstudy;

pub use dataset::{load_aux_csv, load_main_csv, positivity_diagnostic, AuxSample, MainSample, PositivityDiagnostic};
pub use error::{Error, Result};
pub use estimators::{estimate_all, Bridge, EstimatorKind, PointEstimates};
pub use features::{BasisKind, BasisSpec};
pub use inference::{bootstrap, BootstrapOptions, BootstrapResult, Target};
pub use minimax::{fit_bridges, FitConfig, FittedBridge, FittedBridges, MomentProblem};
pub use netfn::{AdamState, FunctionModel, ModelKind};
