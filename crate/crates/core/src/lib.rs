//! Adaptive triangulation of polygon meshes by longest-edge bisection, with
//! a concurrent binary tree managing a fixed-size pool of bisectors.
//!
//! The [`sequential`] engine is the single-threaded reference; the
//! [`pipeline`] runs the same update as nine data-parallel stages.

pub mod bisector;
pub mod cbt;
pub mod conformity;
pub mod export;
pub mod lod;
pub mod mesh;
pub mod pipeline;
pub mod sequential;
pub mod shapes;
pub mod state;

pub use bisector::{BisectorError, HeapId, RootLayout};
pub use cbt::{Cbt, CbtError};
pub use lod::{Camera, Lod, LodConfig, LodDecision};
pub use mesh::{HalfedgeMesh, MeshError};
pub use pipeline::{Pipeline, UpdateStats};
pub use state::{Edge, StateError, TriangulationState};
