//! Core domain types shared by every stage of the pipeline.

mod dataset;
mod params;
mod spec;
mod topology;

pub use dataset::{validate_dataset, JointDataset, LongitudinalRecord, Subject, SubjectHistory};
pub use params::{pack, packed_from_d, unpack, ParameterLayout, ParameterVector, Parameters};
pub(crate) use params::{cholesky_from_packed, unpack_slice};
pub use spec::{
    BaselineGroup, CovariateEffect, DependenceForm, DerivDesign, Factor, ModelSpec,
    QuadratureSpec, SplineSpec, Term, TimeBasis, TimeBasisKind,
};
pub use topology::TransitionTopology;
