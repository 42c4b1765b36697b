//! Exact finite-depth laboratory for matrix-weighted dyadic harmonic analysis.
//!
//! Every object lives on the dyadic tree of `[0,1)` truncated at a fixed depth
//! `N`: weights and functions are piecewise constant on the `2^N` finest cells,
//! so averages, suprema over intervals and quadratic forms are finite sums and
//! can be evaluated exactly (up to floating point).
//!
//! Modules:
//! - [`dyadic`]: interval indexing and traversal.
//! - [`weights`]: matrix weights, averages, the A2 characteristic.
//! - [`maximal`]: the weighted maximal functions and norm lower bounds.
//! - [`carleson`]: testing constants, the exact embedding constant, stopping times.
//! - [`seqspaces`]: H1/BMO-type matrix sequence spaces and their pairing.
//! - [`sparse`]: sparse families, sparse operators and their weighted norms.
//! - [`experiments`]: generators, invariant checks and reproducible sweeps.

pub mod carleson;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod maximal;
pub mod seqspaces;
pub mod sparse;
pub mod weights;

pub use error::{LabError, Result};

pub use carleson::{CarlesonSequence, StoppingDecomposition};
pub use dyadic::{DyadicIndex, DyadicTree};
pub use maximal::{GridScalarFn, MaximalKind};
pub use seqspaces::{MatrixSequence, OmegaDecomposition};
pub use sparse::{SparseFamily, SparseStrategy};
pub use weights::{GridVectorFn, MatrixWeight, SpdMatrix};
