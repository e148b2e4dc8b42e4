//! Dense linear-algebra kernels.

pub mod cholesky;
pub mod conv;
pub mod expm;
pub(crate) mod gemm;
pub mod lu;
pub mod matrix;
pub mod oracle;
pub mod power;
pub mod triangular;

pub use cholesky::cholesky;
pub use conv::{ConvShape, SpatialShape};
pub use expm::mat_exp;
pub use lu::{inverse, solve_general, LuFactors};
pub use matrix::Matrix;
pub use oracle::{modified_gram_schmidt_rows, spectral_norm_oracle};
pub use power::{power_iteration, SpectralEstimate};
pub use triangular::{solve_triangular, solve_upper_triangular};
