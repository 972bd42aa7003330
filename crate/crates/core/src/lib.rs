#![cfg_attr(not(any(test, feature = "std")), no_std)]

//! Algorithmic core for scale-sensitive coarse geometry on finite balls.
//!
//! The crate is organized around a sublinear scale function `kappa` and the
//! renormalized radius it induces. Everything downstream measures geometry
//! of pointed graph balls relative to that scale: gauge estimation for
//! quasi-geodesics, slim-triangle defects and coarse center sets, boundary
//! direction atlases with visual quasi-metrics, covering-number dimension
//! estimates, and fitting of stable bounded-error maps between balls.
//!
//! All computation is deterministic: seeded ChaCha streams drive every
//! sampling routine, and no result depends on iteration order of a hash map
//! (ordered structures only). The crate is `no_std + alloc`; the companion
//! CLI crate supplies IO and file formats.

extern crate alloc;

/// Crate version, re-exported for artifact manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod boundary;
pub mod kappa;
pub mod metric_analysis;
pub mod morse;
mod numeric;
pub mod sbe;
pub mod space;

pub use boundary::{BoundaryAtlas, QuasiMetric, TreeBoundary};
pub use kappa::SublinearFunction;
pub use metric_analysis::FiniteMetricSpace;
pub use sbe::{CorrespondenceMap, SbeEstimate};
pub use space::{GroupPresentation, Path, PointedSpace};
