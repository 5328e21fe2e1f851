//! Simulation laboratory for Kac's random walk on the special orthogonal
//! group SO(n).
//!
//! The walk applies, at each step, a rotation by a uniform angle in a
//! uniformly chosen two-coordinate plane. This crate implements the chain
//! itself together with the machinery used to study its convergence to the
//! Haar measure:
//!
//! * [`son_core`]: SO(n)/so(n) primitives: plane indexing, sparse plane
//!   rotations, the orthonormal skew basis, projections, the matrix
//!   exponential, Haar sampling, and re-orthonormalization.
//! * [`kac_walk`]: the chain engine: update sequences, walk evolution and
//!   the sphere projection.
//! * [`coupling`]: a locally contractive coupling of two walks, greedy and
//!   lazy marked-time schedules, and a numerical coalescence engine that
//!   maximally couples the perturbation pushforwards of two induced maps.
//! * [`jacobian`]: the induced perturbation map, its derivative, the N×N
//!   Gram-type matrix D of the map at 0, its Haar-rotation idealization
//!   D∞, Gram volume factors, and numerical rank diagnostics.
//! * [`randmat_lab`]: singular-value experiments: the φ quantile of the
//!   smallest singular value, and Monte Carlo oracles for a family of
//!   matrix and anti-concentration inequalities.
//! * [`stats`]: Kolmogorov–Smirnov distances, contraction-rate fits,
//!   schedule-time statistics, a total-variation proxy, and mixing-bound
//!   arithmetic.
//!
//! All randomness flows through explicit [`rng`] streams derived from a
//! 64-bit master seed, so every experiment is reproducible bit-for-bit,
//! including under parallel execution.

pub mod coupling;
pub mod error;
pub mod jacobian;
pub mod kac_walk;
pub mod linalg;
pub mod randmat_lab;
pub mod rng;
pub mod son_core;
pub mod stats;

pub use error::{Error, Result};
