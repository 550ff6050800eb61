//! Tomography of free-fermion correlation matrices from occupation snapshots.
//!
//! A quantum gas microscope only measures site occupations. Quenching the
//! state with random non-interacting Hamiltonians before the snapshot rotates
//! the measurement basis, and the stacked occupation expectations become a
//! linear image of the initial two-point correlation matrix. This crate
//! builds that linear map, inverts it with variance-optimal weighting,
//! predicts how many snapshots a target accuracy needs, and simulates the
//! whole experiment exactly so the predictions can be checked end to end.
//!
//! Modules follow the pipeline:
//!
//! - [`lattice`]: geometries, site indexing, sublattice structure, patches
//! - [`gaussian`]: correlation matrices, quench Hamiltonians, propagators,
//!   and the Hermitian-matrix/real-vector isometry
//! - [`ensemble`]: random quench ensembles (local scheme) and the fixed
//!   expansion quench (global scheme)
//! - [`tomo`]: measurement map `F`, noise matrix `W`, optimal and truncated
//!   inverses
//! - [`complexity`]: single-shot variances and repetition counts
//! - [`simulator`]: exact determinantal snapshot sampling and the linear
//!   estimators
//! - [`robustness`]: bias under miscalibrated quench Hamiltonians
//! - [`fourpoint`]: density-density data reused to estimate four-point
//!   correlators
//! - [`fock`]: brute-force many-body reference for small systems (test oracle)
//! - [`io`]: binary matrix container, shot-dataset CSV, JSON sidecars

pub mod complexity;
pub mod ensemble;
mod error;
pub mod fock;
pub mod fourpoint;
pub mod gaussian;
pub mod io;
pub mod lattice;
pub mod robustness;
pub mod simulator;
pub mod tomo;

pub use error::{Error, Result};
pub use tomo::{InverseBundle, MeasurementMap, NoiseMatrix};
pub use simulator::{EstimateResult, ShotDataset};
pub use gaussian::{CorrelationMatrix, HermitianBasis, ObservableVec, SingleParticleHamiltonian};
pub use lattice::{ExpansionLayout, Lattice, LatticeKind};
pub use ensemble::{QuenchEnsemble, QuenchParams};


