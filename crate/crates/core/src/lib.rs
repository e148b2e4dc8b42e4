pub mod autodiff;
pub mod certify;
pub mod data;
pub mod error;
pub mod layers;
pub mod numerics;
pub mod train;

pub use error::{Error, Origin, Result};
pub use numerics::Matrix;
