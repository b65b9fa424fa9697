pub mod binning;
pub mod convergence;
pub mod error;
pub mod fields;
pub mod grid_oracle;
pub mod io;
pub mod kernels;
pub mod lyapunov;
pub mod minor_geom;
pub mod pdmp;
pub mod quadrature;
pub mod rates;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
