//! Diagonal state-space models, semiseparable matrices and their
//! masked-attention duals.
//!
//! * [`ss_matrix`]: lower-triangular and semiseparable primitives;
//! * [`ssm`]: recurrence, SSD and materialized forward paths;
//! * [`duality`]: 1-SS masked-attention duals and representability;
//! * [`sss_extract`]: general SSS representations from a matrix;
//! * [`limits`]: the softmax and non-dualizable counterexamples;
//! * [`bench`]: exact operation counts and scaling fits.

pub mod bench;
pub mod duality;
pub mod error;
pub mod io;
pub mod limits;
pub mod linalg;
pub mod numeric;
pub mod random;
pub mod ss_matrix;
pub mod ssm;
pub mod sss_extract;

pub use error::{Result, SsdError};
pub use linalg::DEFAULT_EPS;
pub use ss_matrix::{LowerTriangularMatrix, MaskVector};
pub use ssm::{DiagonalSsm, SequenceData};
