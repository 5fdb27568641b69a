//! Analysis toolkit for piecewise-linear recurrent networks and planar
//! piecewise-linear maps: cycle search, invariant manifolds, basins,
//! homoclinic tests and trajectory metrics.

pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod inversion;
pub mod io;
pub mod manifold;
pub mod metrics;
pub mod model;
pub mod orbit;
pub mod pl2d;
pub mod scalar;
pub mod scyfi;

pub use eigen::{eigen_structure, EigClass, EigenStructure};
pub use error::{Error, Result};
pub use model::{AffinePiece, Map2D, PlModel, RegionCode, Variant};
pub use orbit::orbit_closed_form;
pub use scalar::Real;

pub type PlModelF64 = PlModel<f64>;
pub type PlModelF32 = PlModel<f32>;
pub type Map2DF64 = Map2D<f64>;
