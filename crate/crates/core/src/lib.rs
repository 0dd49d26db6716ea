#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod graph_model;
pub mod harmonic;
pub mod lie_core;
pub mod spec;
pub mod stats;
pub mod tensor_free;
pub mod verify;
pub mod walk_sim;

pub use diffusion::{DiffusionSpec, DriftKind};
pub use error::{Error, Result};
pub use graph_model::{HomologicalDirection, InvariantMeasure, VoltageGraph};
pub use harmonic::{AlbaneseData, DriftBeta, Realization};
pub use lie_core::{GradedLieAlgebra, GroupElement, HomogeneousNorm, Product};
pub use spec::{ExperimentReport, GraphSpecFile};
pub use tensor_free::{FreeNilpotent, Level2RoughPath, TensorElement};
pub use walk_sim::{PathEnsemble, WalkConfig};
