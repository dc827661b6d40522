pub mod backends;
pub mod bump;
pub mod cknorm;
pub mod conformal;
pub mod construction;
pub mod curve;
pub mod distance;
pub mod error;
pub mod export;
pub mod fermi;
pub mod geodesic;
pub mod metric;
pub mod net;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod spline;
