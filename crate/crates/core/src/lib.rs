//! Numerical laboratory for (log-)epiperimetric inequalities of
//! multiplicity-one stationary cones built over products of round spheres.

pub mod competitor;
pub mod decay;
pub mod error;
pub mod functional;
pub mod geometry;
pub mod quad;
pub mod reduction;
pub mod run;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};

/// Order-preserving map, parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: rayon::iter::IntoParallelIterator,
    I::Item: Send,
    T: Send,
    F: Fn(I::Item) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: IntoIterator,
    F: Fn(I::Item) -> T,
{
    items.into_iter().map(f).collect()
}
