//! Minimal surfaces in H² × R built by gluing catenoidal necks along a
//! network of geodesics.

pub mod catenoid;
pub mod gluing;
pub mod hyperbolic;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod network;
pub mod solver;

pub use catenoid::{CatenoidError, CatenoidSpec, KillingField, KillingTag, RefineParams};
pub use gluing::{AssembledSurface, CatenoidLibrary, GluingError, MeanCurvatureReport};
pub use hyperbolic::{eta0, BoundaryPoint, DiskPoint, Geodesic, GeometryError, HPoint, PlaneIsometry};
pub use mesh::{MeshError, Region, ScalarField, SurfaceMesh};
pub use model::{DecayFit, ModelError, PlanarField};
pub use network::{DeformationVector, GeodesicNetwork, NetworkError, NetworkMetrics, RejectionReport};
pub use solver::{ContractionParams, ContractionState, SolverError};
