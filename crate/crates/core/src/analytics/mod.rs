//! Numerical building blocks of the bundled analytics plugins.

pub mod kde;
pub mod meanshift;
pub mod normalize;
pub mod pca;
pub mod tsne;

pub use kde::{kde_grid, KdeGrid};
pub use meanshift::{mean_shift, MeanShift};
pub use normalize::{normalize, NormalizeMode};
pub use pca::{pca_fit, PcaResult};
pub use tsne::{Metric, Tsne, TsneParams};
