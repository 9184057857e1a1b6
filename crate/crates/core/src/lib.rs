//! Simulation toolkit for volume–surface reaction–diffusion systems on a disk.
//!
//! Bulk species diffuse and react inside the disk, surface species diffuse
//! along the boundary circle and react there, and the two are coupled by a
//! nonlinear flux condition. The crate parses models from a small text
//! format, probes their structural growth hypotheses by sampling, integrates
//! them with a mass-conservative finite-volume IMEX scheme, and records the
//! norms and windowed integrals that uniform-boundedness results control.

pub mod builtins;
pub mod cli;
pub mod diagnostics;
pub mod dsl;
pub mod expr;
pub mod hypothesis;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod operators;
pub mod oracle;
pub mod stepper;

pub use dsl::{parse_expr, parse_model, render_model};
pub use expr::Expr;
pub use model::{eval_kinetics, validate_model, ModelSpec, StatePoint};
