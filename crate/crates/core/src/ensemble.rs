//! Quench ensembles: the randomized local scheme and the fixed global
//! (expansion) scheme.
//!
//! An ensemble is a weighted list of quench parameters on a total lattice,
//! together with the designation of which sites carry the system. Local
//! schemes use the whole lattice as the system; the global scheme embeds a
//! chain into one row of a grid and treats the rest as empty ancillas.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gaussian::{PotentialParams, SingleParticleHamiltonian};
use crate::lattice::{ExpansionLayout, Lattice};
use crate::{Error, Result};

/// Parameters of a single quench member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchParams {
    /// Evolution time in hopping times.
    pub time: f64,
    /// Potential strength `h`.
    pub strength: f64,
    /// Potential phase `phi`.
    pub phase: f64,
    /// Laser angle `theta_L`.
    pub laser_angle: f64,
}

impl QuenchParams {
    pub fn potential(&self) -> PotentialParams {
        PotentialParams {
            strength: self.strength,
            phase: self.phase,
            laser_angle: self.laser_angle,
        }
    }
}

/// Figure-calibrated parameter presets.
pub mod presets {
    /// Local scheme on 1d chains: `t_max`, `h_max`, `theta_L`, `S`.
    pub const LOCAL_CHAIN_T_MAX: f64 = 5.0;
    pub const LOCAL_CHAIN_H_MAX: f64 = 6.0;
    pub const LOCAL_CHAIN_THETA_L: f64 = 2.0 / 3.0;
    pub const LOCAL_CHAIN_MEMBERS: usize = 400;

    /// Local scheme on 2d grids.
    pub const LOCAL_GRID_T_MAX: f64 = 1.5;
    pub const LOCAL_GRID_H_MAX: f64 = 6.0;
    pub const LOCAL_GRID_THETA_L: f64 = 2.0 / 3.0;
    pub const LOCAL_GRID_MEMBERS: usize = 1000;

    /// Global (expansion) scheme.
    pub const GLOBAL_STRENGTH: f64 = 1.0;
    pub const GLOBAL_PHASE: f64 = 0.0;
    pub const GLOBAL_THETA_L: f64 = 0.798;
    pub const GLOBAL_TIME_PER_SITE: f64 = 0.75;

    /// Parameter-grid resolution for the local sampler.
    pub const GRID_POINTS: usize = 30;

    /// Default relative singular-value truncation.
    pub const DELTA: f64 = 1e-3;
    /// Default noise-matrix regularization floor.
    pub const W_FLOOR: f64 = 1e-8;
}

/// A weighted quench ensemble on a fixed total lattice.
///
/// An optional shared on-site disorder models a systematic miscalibration:
/// the same diagonal shift applies to every member's Hamiltonian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuenchEnsemble {
    lattice: Lattice,
    system_sites: Vec<usize>,
    members: Vec<(f64, QuenchParams)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagonal_disorder: Option<Vec<f64>>,
}

impl QuenchEnsemble {
    /// Assemble from parts, checking that the weights form a distribution.
    pub fn new(
        lattice: Lattice,
        system_sites: Vec<usize>,
        members: Vec<(f64, QuenchParams)>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        let total: f64 = members.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-12 || members.iter().any(|(p, _)| *p <= 0.0) {
            return Err(Error::InvalidArgument(
                "member probabilities must be positive and sum to 1".into(),
            ));
        }
        let n = lattice.num_sites();
        if system_sites.is_empty() || system_sites.iter().any(|&s| s >= n) {
            return Err(Error::InvalidArgument("system sites out of range".into()));
        }
        Ok(QuenchEnsemble {
            lattice,
            system_sites,
            members,
            diagonal_disorder: None,
        })
    }

    /// Random local-scheme ensemble: `s` tuples `(t, h, phi)` drawn uniformly
    /// with replacement from the discretized grid of
    /// `(0, t_max] x (0, h_max] x (0, 2*pi)`, each axis split into
    /// `grid_points` intervals with values at the right endpoints. All
    /// members share the laser angle and get weight `1/s`.
    pub fn sample_local(
        lattice: Lattice,
        s: usize,
        t_max: f64,
        h_max: f64,
        theta_l: f64,
        grid_points: usize,
        seed: u64,
    ) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
        }
        if t_max <= 0.0 || h_max <= 0.0 {
            return Err(Error::InvalidArgument("t_max and h_max must be positive".into()));
        }
        if grid_points == 0 {
            return Err(Error::InvalidArgument("grid_points must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid_points as f64;
        let tau = 2.0 * std::f64::consts::PI;
        let p = 1.0 / s as f64;
        let members = (0..s)
            .map(|_| {
                let it = rng.random_range(1..=grid_points) as f64;
                let ih = rng.random_range(1..=grid_points) as f64;
                let ip = rng.random_range(1..=grid_points) as f64;
                (
                    p,
                    QuenchParams {
                        time: t_max * it / g,
                        strength: h_max * ih / g,
                        phase: tau * ip / g,
                        laser_angle: theta_l,
                    },
                )
            })
            .collect();
        let system_sites = (0..lattice.num_sites()).collect();
        QuenchEnsemble::new(lattice, system_sites, members)
    }

    /// The local chain ensemble at the calibrated defaults.
    pub fn local_chain(n: usize, s: usize, seed: u64) -> Result<Self> {
        Self::sample_local(
            Lattice::chain(n)?,
            s,
            presets::LOCAL_CHAIN_T_MAX,
            presets::LOCAL_CHAIN_H_MAX,
            presets::LOCAL_CHAIN_THETA_L,
            presets::GRID_POINTS,
            seed,
        )
    }

    /// Fixed global-scheme quench: a single member with `t = 0.75 n`,
    /// `h = 1`, `phi = 0`, `theta_L = 0.798` on the expansion layout.
    pub fn global_scheme(n: usize, system_row: usize) -> Result<Self> {
        Self::global_scheme_with_potential(
            n,
            system_row,
            presets::GLOBAL_STRENGTH,
            presets::GLOBAL_PHASE,
        )
    }

    /// Global-scheme quench with a custom potential strength and phase,
    /// used when scanning for robust parameter combinations.
    pub fn global_scheme_with_potential(
        n: usize,
        system_row: usize,
        strength: f64,
        phase: f64,
    ) -> Result<Self> {
        let layout = ExpansionLayout::new(n, system_row)?;
        let params = QuenchParams {
            time: presets::GLOBAL_TIME_PER_SITE * n as f64,
            strength,
            phase,
            laser_angle: presets::GLOBAL_THETA_L,
        };
        QuenchEnsemble::new(
            layout.lattice().clone(),
            layout.system_sites(),
            vec![(1.0, params)],
        )
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn system_sites(&self) -> &[usize] {
        &self.system_sites
    }

    pub fn n_system(&self) -> usize {
        self.system_sites.len()
    }

    pub fn n_total(&self) -> usize {
        self.lattice.num_sites()
    }

    pub fn n_ancilla(&self) -> usize {
        self.n_total() - self.n_system()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[(f64, QuenchParams)] {
        &self.members
    }

    pub fn probability(&self, s: usize) -> f64 {
        self.members[s].0
    }

    pub fn params(&self, s: usize) -> QuenchParams {
        self.members[s].1
    }

    /// Attach a shared on-site disorder to every member Hamiltonian.
    pub fn set_diagonal_disorder(&mut self, shift: Vec<f64>) {
        assert_eq!(shift.len(), self.n_total(), "disorder length mismatch");
        self.diagonal_disorder = Some(shift);
    }

    /// Hamiltonian of member `s` on the total lattice.
    pub fn hamiltonian(&self, s: usize) -> SingleParticleHamiltonian {
        let h = SingleParticleHamiltonian::build(&self.lattice, self.members[s].1.potential());
        match &self.diagonal_disorder {
            None => h,
            Some(shift) => h.with_diagonal_shift(shift),
        }
    }

    /// Propagator of member `s`.
    pub fn propagator(&self, s: usize) -> Result<ndarray::Array2<num_complex::Complex64>> {
        let params = self.members[s].1;
        self.hamiltonian(s).propagator(params.time)
    }

    /// All propagators, computed in parallel.
    pub fn propagators(&self) -> Result<Vec<ndarray::Array2<num_complex::Complex64>>> {
        use rayon::prelude::*;
        (0..self.len())
            .into_par_iter()
            .map(|s| self.propagator(s))
            .collect()
    }

    /// Content hash tying datasets and inverse bundles to the exact ensemble.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("ensemble serialization cannot fail");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..16])
    }

    /// Draw a member index according to the weights.
    pub fn draw_member<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (s, (p, _)) in self.members.iter().enumerate() {
            acc += p;
            if x < acc {
                return s;
            }
        }
        self.members.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degenerate_grid_pins_all_members() {
        let ens = QuenchEnsemble::sample_local(
            Lattice::chain(4).unwrap(),
            5,
            2.5,
            6.0,
            0.7,
            1,
            9,
        )
        .unwrap();
        for (_, q) in ens.members() {
            assert_abs_diff_eq!(q.time, 2.5, epsilon = 1e-15);
            assert_abs_diff_eq!(q.strength, 6.0, epsilon = 1e-15);
            assert_abs_diff_eq!(q.phase, 2.0 * std::f64::consts::PI, epsilon = 1e-15);
            assert_abs_diff_eq!(q.laser_angle, 0.7, epsilon = 1e-15);
        }
    }

    #[test]
    fn sampled_values_lie_in_open_intervals() {
        let ens = QuenchEnsemble::local_chain(6, 400, 3).unwrap();
        assert_eq!(ens.len(), 400);
        let mut total = 0.0;
        for (p, q) in ens.members() {
            total += p;
            assert!(q.time > 0.0 && q.time <= presets::LOCAL_CHAIN_T_MAX);
            assert!(q.strength > 0.0 && q.strength <= presets::LOCAL_CHAIN_H_MAX);
            assert!(q.phase > 0.0 && q.phase <= 2.0 * std::f64::consts::PI);
            assert_abs_diff_eq!(q.laser_angle, 2.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = QuenchEnsemble::local_chain(6, 50, 17).unwrap();
        let b = QuenchEnsemble::local_chain(6, 50, 17).unwrap();
        assert_eq!(a.members(), b.members());
        assert_eq!(a.content_hash(), b.content_hash());
        let c = QuenchEnsemble::local_chain(6, 50, 18).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn global_scheme_parameters() {
        let ens = QuenchEnsemble::global_scheme(4, 0).unwrap();
        assert_eq!(ens.len(), 1);
        assert_abs_diff_eq!(ens.probability(0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ens.params(0).time, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ens.params(0).strength, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ens.params(0).phase, 0.0, epsilon = 1e-15);
        assert_eq!(ens.n_system(), 4);
        assert_eq!(ens.n_ancilla(), 56);

        let ens = QuenchEnsemble::global_scheme(10, 0).unwrap();
        assert_abs_diff_eq!(ens.params(0).time, 7.5, epsilon = 1e-15);
    }

    #[test]
    fn draw_member_respects_weights() {
        use rand::SeedableRng;
        let ens = QuenchEnsemble::new(
            Lattice::chain(2).unwrap(),
            vec![0, 1],
            vec![
                (0.25, QuenchParams { time: 1.0, strength: 0.0, phase: 0.0, laser_angle: 0.0 }),
                (0.75, QuenchParams { time: 2.0, strength: 0.0, phase: 0.0, laser_angle: 0.0 }),
            ],
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 2];
        for _ in 0..20_000 {
            counts[ens.draw_member(&mut rng)] += 1;
        }
        let frac = counts[1] as f64 / 20_000.0;
        assert!((frac - 0.75).abs() < 0.02, "frac {frac}");
    }

    #[test]
    fn rejects_bad_ensembles() {
        let lat = Lattice::chain(2).unwrap();
        assert!(QuenchEnsemble::new(lat.clone(), vec![0, 1], vec![]).is_err());
        let q = QuenchParams { time: 1.0, strength: 0.0, phase: 0.0, laser_angle: 0.0 };
        assert!(QuenchEnsemble::new(lat.clone(), vec![0, 1], vec![(0.5, q)]).is_err());
        assert!(QuenchEnsemble::new(lat, vec![7], vec![(1.0, q)]).is_err());
        assert!(QuenchEnsemble::sample_local(Lattice::chain(3).unwrap(), 0, 1.0, 1.0, 0.5, 30, 1)
            .is_err());
    }
}
