//! Harmonic-Ricci flow on compact surfaces with boundary.
//!
//! Finite-difference geometry on single-chart surfaces, the entropy
//! functionals `E_∂`, `F` and `W` of the coupled metric/map system, explicit
//! integrators for the flows, and verifiers for the first-variation and
//! monotonicity identities.

pub mod calculus;
pub mod chart;
pub mod config;
pub mod elliptic;
pub mod error;
pub mod flows;
pub mod functionals;
pub mod harness;
pub mod presets;
pub mod snapshot;
pub mod stencil;
pub mod variations;
pub mod verify;

pub use chart::{
    Chart, ComponentKind, FlowState, MapComponent, MapField, MetricField, ScalarField,
    SymTensorField, Topology, VectorField,
};
pub use error::{Error, Result};
