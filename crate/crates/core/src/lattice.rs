//! Lattice geometries, site indexing, sublattice structure, and patches.
//!
//! Sites are labelled in row-major order, `index = y * lx + x`, with open
//! boundaries everywhere. That ordering fixes the vectorization conventions
//! used by every downstream module.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Supported geometries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    Chain,
    Grid,
}

/// A rectangular lattice with open-boundary nearest-neighbor edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    kind: LatticeKind,
    lx: usize,
    ly: usize,
    edges: Vec<(usize, usize)>,
}

impl Lattice {
    /// Build a lattice of the given kind and dimensions.
    pub fn build(kind: LatticeKind, lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::InvalidArgument(format!(
                "lattice dimensions must be positive, got {lx} x {ly}"
            )));
        }
        if kind == LatticeKind::Chain && ly != 1 {
            return Err(Error::InvalidArgument(format!(
                "a chain must have ly = 1, got ly = {ly}"
            )));
        }
        let mut edges = Vec::with_capacity(2 * lx * ly);
        for y in 0..ly {
            for x in 0..lx {
                let i = y * lx + x;
                if x + 1 < lx {
                    edges.push((i, i + 1));
                }
                if y + 1 < ly {
                    edges.push((i, i + lx));
                }
            }
        }
        Ok(Lattice { kind, lx, ly, edges })
    }

    /// 1d chain of `n` sites.
    pub fn chain(n: usize) -> Result<Self> {
        Self::build(LatticeKind::Chain, n, 1)
    }

    /// 2d grid of `lx` by `ly` sites.
    pub fn grid(lx: usize, ly: usize) -> Result<Self> {
        Self::build(LatticeKind::Grid, lx, ly)
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    /// Total number of sites.
    pub fn num_sites(&self) -> usize {
        self.lx * self.ly
    }

    /// Nearest-neighbor edge list, each pair ordered `(low, high)`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Cartesian coordinates of a site index.
    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.lx, site / self.lx)
    }

    /// Row-major site index of coordinates `(x, y)`.
    pub fn site_index(&self, x: usize, y: usize) -> usize {
        y * self.lx + x
    }

    /// +1 on sublattice A (`x + y` even), -1 on sublattice B.
    ///
    /// The diagonal matrix of these signs anticommutes with the pure hopping
    /// matrix on any bipartite lattice.
    pub fn sublattice_sign(&self, site: usize) -> f64 {
        let (x, y) = self.coords(site);
        if (x + y) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Sites within Chebyshev distance `ell` of `center`, clipped to the
    /// lattice, in canonical (row-major) order.
    pub fn chebyshev_patch(&self, center: usize, ell: usize) -> Vec<usize> {
        let (cx, cy) = self.coords(center);
        let x_lo = cx.saturating_sub(ell);
        let x_hi = (cx + ell).min(self.lx - 1);
        let y_lo = cy.saturating_sub(ell);
        let y_hi = (cy + ell).min(self.ly - 1);
        let mut sites = Vec::with_capacity((x_hi - x_lo + 1) * (y_hi - y_lo + 1));
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                sites.push(self.site_index(x, y));
            }
        }
        sites
    }
}

/// Embedding of an `n`-site chain into an `n x (n + 11)` grid.
///
/// The chain occupies one designated row; the remaining `n^2 + 10n` sites are
/// ancillas into which the state expands during the quench.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionLayout {
    lattice: Lattice,
    system_row: usize,
    n_system: usize,
}

impl ExpansionLayout {
    /// Expansion layout for an `n`-site system, hosted on row `system_row`.
    pub fn new(n: usize, system_row: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "expansion layout needs n >= 2, got {n}"
            )));
        }
        let ly = n + 11;
        if system_row >= ly {
            return Err(Error::InvalidArgument(format!(
                "system_row {system_row} out of range for {ly} rows"
            )));
        }
        Ok(ExpansionLayout {
            lattice: Lattice::grid(n, ly)?,
            system_row,
            n_system: n,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn system_row(&self) -> usize {
        self.system_row
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }

    /// Site indices of the system row, in chain order.
    pub fn system_sites(&self) -> Vec<usize> {
        let base = self.system_row * self.n_system;
        (base..base + self.n_system).collect()
    }

    /// Site indices of the ancilla region, in canonical order.
    pub fn ancilla_sites(&self) -> Vec<usize> {
        let system_lo = self.system_row * self.n_system;
        let system_hi = system_lo + self.n_system;
        (0..self.lattice.num_sites())
            .filter(|&i| i < system_lo || i >= system_hi)
            .collect()
    }

    pub fn ancilla_count(&self) -> usize {
        self.lattice.num_sites() - self.n_system
    }
}
