//! Semiparametric density estimation with penalized likelihood and smoothing
//! splines.
//!
//! A model for `m` samples takes the form `f_l ∝ exp(eta_l(x; theta, h))`, where
//! `theta` is a finite-dimensional parameter and `h` lives in a reproducing-kernel
//! Hilbert space with roughness penalty `J`. Estimation profiles out `h` by
//! penalized likelihood with the smoothing parameter chosen by approximate
//! cross-validation.

mod error;

pub mod evaluation;
pub mod fitted;
pub mod forms;
pub mod functionals;
pub mod inner;
pub mod model;
pub mod nonlinear;
pub mod optim;
pub mod profile;
pub mod simulation;
pub mod space;
pub mod transform;

pub use error::{Error, Result};
pub use fitted::{FitOptions, FitResult};
pub use forms::ParametricForm;
pub use functionals::{make_rule, QuadratureRule};
pub use inner::{choose_knots, default_knot_count, LambdaSearch, NewtonConfig, SplineRep};
pub use model::{Composition, ModelSpec, NonlinearLink, SampleSet, TransformConvention};
pub use nonlinear::fit_nonlinear;
pub use profile::{fit_additive, profile_objective, OuterLambda};
pub use space::{make_space, Domain, DomainKind, RkhsSpace, SpaceFamily};
pub use transform::fit_transformation;
