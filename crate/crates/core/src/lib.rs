//! Semilinear heat equations `u_t = Δu + f(u)` on weighted graphs.
//!
//! * [`graph`]: weighted graphs, the Laplacian, balls and cutoffs.
//! * [`spectral`]: Dirichlet truncations, heat kernels, `λ₁` estimates.
//! * [`semilinear`]: nonlinear sources, Duhamel/Picard mild solutions,
//!   supersolutions and ball exhaustion.
//! * [`blowup`]: the backward-kernel functional `Φ`, comparison bounds,
//!   the hypothesis classifier and the numerical blow-up detector.
//! * [`experiment`]: configuration files and the batch pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod semilinear;
pub mod spectral;

pub use graph::{generate_graph, Ball, GraphBuilder, GraphFamily, VertexFunction, WeightedGraph};
pub use spectral::{dirichlet_generator, lambda1_estimate, SpectralEstimate, TruncatedGenerator};
