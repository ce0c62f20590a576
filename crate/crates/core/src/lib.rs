//! Simulator for bias-variance reduced local perturbed SGD (BVR-L-PSGD) and its
//! baseline family on an in-process multi-worker cluster.
//!
//! The crate is organized around the lifecycle of a simulated run:
//!
//! * [`problems`] — objective suite (quartic saddle, softmax regression, softplus
//!   MLP), synthetic data generation and the label-skew partitioner;
//! * [`oracle`] — minibatch sampling and gradient-pair evaluation with exact
//!   budget accounting;
//! * [`estimators`] — the SARAH-style bias-variance reduced estimator recursions
//!   and the uniform-ball perturbation;
//! * [`simnet`] — round-structured message exchange with a communication ledger;
//! * [`optimizers`] — the full drivers plus the theory-guided hyperparameter
//!   recommender;
//! * [`diagnostics`] — gradient norms, smallest Hessian eigenvalue (Lanczos),
//!   second-order-stationarity certification and heterogeneity estimation;
//! * [`harness`] — configuration, experiment orchestration and CSV/JSON output.
//!
//! Core numerics are generic over the [`scalar::Float`] scalar type; concrete
//! `f64` aliases live at the crate root and are what the harness instantiates.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod scalar;
pub mod simnet;
mod serde_util;

pub use error::{Error, Result};
pub use scalar::Float;

/// Default scalar type used by the harness and the CLI.
pub type Scalar = f64;

/// Dense model vector in `R^d`.
pub type ParamVector<F> = Vec<F>;

/// Concrete aliases for the default scalar.
pub type Problem64 = problems::Problem<Scalar>;
pub type Trace64 = optimizers::Trace;
