//! Joint models for a Gaussian longitudinal marker and a continuous-time Markov
//! multi-state process linked by shared random effects.
//!
//! The crate covers the whole pipeline: data validation and transition-at-risk
//! expansion, maximum-likelihood estimation with nested Gauss–Hermite /
//! Gauss–Kronrod quadrature, simulation by intensity inversion, and parametric
//! and Aalen–Johansen transition probabilities for goodness of fit.
//!
//! The numerical kernels and the non-parametric estimators are generic over the
//! scalar type ([`Real`]); the estimation stack works in `f64`. Concrete `f64`
//! aliases are exported at the crate root.

// `!(a < b)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod design;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod estimate;
pub mod io;
pub mod likelihood;
pub mod lmm;
pub mod msprep;
pub mod numerics;
pub mod optim;
pub mod simulate;
pub mod transprob;

use std::fmt::{Debug, Display};

pub use error::{Error, Result};

/// Floating-point scalar accepted by the generic kernels.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + nalgebra::Scalar
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::iter::Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type BSplineBasis64 = numerics::BSplineBasis<f64>;
pub type QuadratureRule64 = numerics::QuadratureRule<f64>;
pub type StepFunctionMatrix64 = numerics::StepFunctionMatrix<f64>;
pub type CountingProcessPanel64 = transprob::CountingProcessPanel<f64>;
pub type BSplineBasis32 = numerics::BSplineBasis<f32>;
pub type StepFunctionMatrix32 = numerics::StepFunctionMatrix<f32>;

pub use domain::{
    JointDataset, LongitudinalRecord, ModelSpec, ParameterVector, SubjectHistory,
    TransitionTopology,
};
pub use estimate::{fit, FitControl, FitResult};
pub use msprep::{expand_covariates, expand_transitions, TransitionRow};
