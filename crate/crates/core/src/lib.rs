//! Correlation-structure dynamics of multivariate time series.
//!
//! The pipeline runs from a price panel to locally normalized returns
//! ([`ingest`]), rolling Pearson correlation matrices and the mean
//! correlation coefficient ([`corrwin`]), spectral analysis and PCA of the
//! flattened correlation vectors ([`geometry`]), bisecting k-means market
//! states ([`states`]), and finally a nonparametric Kramers–Moyal
//! reconstruction of the Langevin drift, diffusion and potential of the mean
//! correlation ([`kramers`]). [`sde_sim`] provides Euler–Maruyama paths with
//! known coefficients that every estimator is validated against.

pub mod corrwin;
pub mod error;
pub mod export;
pub mod geometry;
pub mod ingest;
pub mod kramers;
pub mod sde_sim;
pub mod states;
mod stats;

pub use error::{Error, Result};
