//! Multivariate Q-Q plots, potential plots and two-sample tests built on
//! optimal transport and its entropic regularization.

pub mod analysis;
pub mod error;
pub mod exact;
pub mod geometric;
pub mod io;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use model::{CompactRegion, PointCloud, RunConfig, StandardizeTransform};
