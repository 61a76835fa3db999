//! A forest-of-quadtrees/octrees adaptive mesh refinement library with a
//! simulated multi-rank parallel model.
//!
//! The mesh is a collection of adaptively refined trees (quadtrees in 2D,
//! octrees in 3D) whose roots tile the simulation domain. Leaves are stored
//! linearly in Morton (z-order) per tree, partitioned between simulated ranks
//! along the space-filling curve. All cross-rank interaction flows through a
//! superstep transport with a recordable transcript, so distributed protocols
//! (ghost exchange, balanced marking, repartitioning) can be exercised and
//! asserted deterministically inside a single process.
//!
//! The main layers, bottom up:
//!
//! * [`quadrant`] - fixed-point quadrant/octant arithmetic inside one tree,
//! * [`connectivity`] - immutable inter-tree topology with face orientations,
//! * [`transport`] - the superstep scheduler and message transcript,
//! * [`forest`] - per-rank leaf storage, adaptation and SFC repartitioning,
//! * [`ghost`] - face ghost layers and handshake-free data exchange,
//! * [`meshiter`] - balanced-mesh face iteration and intersection tables,
//! * [`balance`] - the iterative 2:1 balanced marking and a monolithic fallback,
//! * [`indices`] - global entity ids, persistent and leaf index sets,
//! * [`fvsolver`] - an explicit finite volume Euler solver with HLLC flux,
//! * [`mod@bench`] - the rotating-ball stress benchmark, timers and CLI driver.

// Per-rank data lives in parallel arrays indexed by rank; plain index loops
// keep that structure readable.
#![allow(clippy::needless_range_loop)]

pub mod balance;
pub mod bench;
pub mod cli;
pub mod connectivity;
pub mod forest;
pub mod fvsolver;
pub mod ghost;
pub mod indices;
pub mod meshiter;
pub mod quadrant;
pub mod transport;
pub mod vtk;

pub use connectivity::Connectivity;
pub use forest::{Forest, Leaf, Marking};
pub use ghost::GhostLayer;
pub use quadrant::Quadrant;
pub use transport::World;
