//! Flow matching on 2D point clouds with cluster-wise optimal transport
//! couplings.
//!
//! The crate is organised bottom-up:
//!
//! * [`datasets`]: seeded synthetic targets and the Gaussian source,
//! * [`net`]: the MLP velocity field, its CFM loss gradients and Adam,
//! * [`coupling`]: random, exact, batch-OT, cluster-OT and reflow pairings,
//! * [`clustering`]: k-means over the target samples,
//! * [`flow`]: Euler integration forwards and backwards, per-cluster Gaussian
//!   sources and the mixture sampler,
//! * [`metrics`]: exact squared 2-Wasserstein, trajectory curvature, timing,
//! * [`pipeline`]: training loops, the alternating cluster-OT procedure and
//!   the benchmark matrix,
//! * [`io`] and [`plot`]: file formats and SVG figures.

pub mod clustering;
pub mod coupling;
pub mod datasets;
pub mod error;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod plot;
pub mod rng;

pub use error::{Error, Result};

/// A point in the plane.
pub type Vec2 = [f64; 2];

#[inline]
pub fn sq_dist(a: Vec2, b: Vec2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T, F>(range: std::ops::Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}
