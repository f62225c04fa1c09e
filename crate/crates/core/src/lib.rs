//! Generalized convexity and smoothness tools for analysing training of
//! small networks: norm powers and their conjugates, a reverse-mode
//! autodiff engine, structural-matrix diagnostics with empirical-risk
//! bounds, SGD with the generalized-smoothness step, and gradient
//! independence statistics.

// `!(x > 0.0)` is the NaN-rejecting form used for argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gicstat;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod normpower;
pub mod optim;
pub mod rngs;

pub use autodiff::{Activation, Graph};
pub use data::Dataset;
pub use diagnostics::{
    DatasetReport, DiagnosticSettings, Sample, StructuralError, StructuralReport, StructuralWeights,
};
pub use error::{Error, Result};
pub use gicstat::GicReport;
pub use linalg::Tensor;
pub use loss::{LossKind, ProfileContext, SmoothnessProfile};
pub use model::{Head, InitKind, InitScheme, ModelConfig, ParamModel, Variant};
pub use normpower::{Norm, NormPower, RelaxedBound};
pub use optim::{OmegaSpec, SgdState};
