//! Brute-force many-body reference for small systems.
//!
//! Everything here works on the full `2^n`-dimensional Fock space with
//! Jordan-Wigner sign conventions (basis index bit `j` = occupation of site
//! `j`). It exists to certify the Gaussian machinery and the four-point
//! transport against exact many-body linear algebra, so it deliberately
//! shares no code with the correlation-matrix pipeline beyond the
//! single-particle Hamiltonian matrix itself.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Largest site count the dense Fock representation accepts.
pub const MAX_SITES: usize = 12;

/// Dense operators on the `2^n` Fock space of `n` spinless modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    n: usize,
}

impl FockSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(Error::Resource(format!(
                "dense Fock space supports 1..={MAX_SITES} sites, got {n}"
            )));
        }
        Ok(FockSpace { n })
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// The annihilation operator `c_j` with Jordan-Wigner signs.
    pub fn annihilator(&self, j: usize) -> Array2<Complex64> {
        assert!(j < self.n);
        let dim = self.dim();
        let mut c = Array2::zeros((dim, dim));
        for b in 0..dim {
            if (b >> j) & 1 == 1 {
                let parity = (b & ((1 << j) - 1)).count_ones();
                let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
                c[[b ^ (1 << j), b]] = Complex64::new(sign, 0.0);
            }
        }
        c
    }

    pub fn creator(&self, j: usize) -> Array2<Complex64> {
        self.annihilator(j).t().mapv(|z| z.conj())
    }

    pub fn number_operator(&self, j: usize) -> Array2<Complex64> {
        let dim = self.dim();
        let mut nop = Array2::zeros((dim, dim));
        for b in 0..dim {
            if (b >> j) & 1 == 1 {
                nop[[b, b]] = Complex64::new(1.0, 0.0);
            }
        }
        nop
    }

    /// The many-body image of a quadratic Hamiltonian matrix.
    pub fn quadratic_hamiltonian(&self, hmat: &Array2<f64>) -> Result<Array2<Complex64>> {
        if hmat.nrows() != self.n || hmat.ncols() != self.n {
            return Err(Error::InvalidArgument(format!(
                "Hamiltonian is {} x {} but the Fock space has {} sites",
                hmat.nrows(),
                hmat.ncols(),
                self.n
            )));
        }
        let dim = self.dim();
        let mut big = Array2::zeros((dim, dim));
        for i in 0..self.n {
            for j in 0..self.n {
                if hmat[[i, j]] == 0.0 {
                    continue;
                }
                let term = self.creator(i).dot(&self.annihilator(j));
                big = big + term * Complex64::new(hmat[[i, j]], 0.0);
            }
        }
        Ok(big)
    }

    /// The many-body rotation `exp(-i t H)` for a quadratic `H`, built by
    /// exponentiating in Fock space (independent of the single-particle
    /// propagator path).
    pub fn many_body_rotation(&self, hmat: &Array2<f64>, t: f64) -> Result<Array2<Complex64>> {
        let big = self.quadratic_hamiltonian(hmat)?;
        let (evals, evecs) = big.eigh(UPLO::Lower)?;
        let dim = self.dim();
        let mut scaled = Array2::zeros((dim, dim));
        for k in 0..dim {
            let phase = Complex64::from_polar(1.0, -t * evals[k]);
            for i in 0..dim {
                scaled[[i, k]] = evecs[[i, k]] * phase;
            }
        }
        Ok(scaled.dot(&evecs.t().mapv(|z| z.conj())))
    }

    /// Haar-ish random normalized pure state (generically non-Gaussian).
    pub fn random_pure_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<Complex64> {
        let dim = self.dim();
        let mut psi = Array1::zeros(dim);
        for a in psi.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *a = Complex64::new(re, im);
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        psi / norm
    }

    /// The Fock basis state with the given occupation pattern.
    pub fn basis_state(&self, pattern: &[u8]) -> Array1<Complex64> {
        let mut index = 0usize;
        for (j, &bit) in pattern.iter().enumerate() {
            if bit == 1 {
                index |= 1 << j;
            }
        }
        let mut psi = Array1::zeros(self.dim());
        psi[index] = Complex64::new(1.0, 0.0);
        psi
    }

    pub fn expectation(&self, psi: &Array1<Complex64>, op: &Array2<Complex64>) -> Complex64 {
        let applied = op.dot(psi);
        psi.iter()
            .zip(applied.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Two-point correlators `<c_i^dagger c_j>` of a pure state.
    pub fn correlation_matrix(&self, psi: &Array1<Complex64>) -> Array2<Complex64> {
        let mut c = Array2::zeros((self.n, self.n));
        let annihilators: Vec<Array2<Complex64>> =
            (0..self.n).map(|j| self.annihilator(j)).collect();
        for i in 0..self.n {
            for j in 0..self.n {
                let op = annihilators[i].t().mapv(|z| z.conj()).dot(&annihilators[j]);
                c[[i, j]] = self.expectation(psi, &op);
            }
        }
        c
    }

    /// Four-point correlator `<c_i^dagger c_j c_k^dagger c_l>`.
    pub fn four_point(
        &self,
        psi: &Array1<Complex64>,
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    ) -> Complex64 {
        let op = self
            .creator(i)
            .dot(&self.annihilator(j))
            .dot(&self.creator(k))
            .dot(&self.annihilator(l));
        self.expectation(psi, &op)
    }

    /// Probabilities of all `2^n` occupation patterns when measuring in the
    /// number basis.
    pub fn occupation_distribution(&self, psi: &Array1<Complex64>) -> Vec<f64> {
        psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Occupation pattern for a Fock basis index.
    pub fn pattern_of(&self, index: usize) -> Vec<u8> {
        (0..self.n).map(|j| ((index >> j) & 1) as u8).collect()
    }

    /// Sample one occupation pattern from the number-basis distribution.
    pub fn sample_pattern<R: Rng + ?Sized>(
        &self,
        distribution: &[f64],
        rng: &mut R,
    ) -> Vec<u8> {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (index, &p) in distribution.iter().enumerate() {
            acc += p;
            if x < acc {
                return self.pattern_of(index);
            }
        }
        self.pattern_of(distribution.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{evolve_correlations, CorrelationMatrix, PotentialParams,
        SingleParticleHamiltonian};
    use crate::lattice::Lattice;
    use crate::simulator::pattern_probability;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn canonical_anticommutation_relations() {
        let fock = FockSpace::new(3).unwrap();
        let dim = fock.dim();
        for i in 0..3 {
            for j in 0..3 {
                let ci = fock.annihilator(i);
                let cj_dag = fock.creator(j);
                let anti = ci.dot(&cj_dag) + cj_dag.dot(&ci);
                for a in 0..dim {
                    for b in 0..dim {
                        let expect = if i == j && a == b { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(anti[[a, b]].re, expect, epsilon = 1e-14);
                        assert_abs_diff_eq!(anti[[a, b]].im, 0.0, epsilon = 1e-14);
                    }
                }
                let cj = fock.annihilator(j);
                let anti2 = ci.dot(&cj) + cj.dot(&ci);
                assert!(anti2.iter().all(|z| z.norm() < 1e-14));
            }
        }
    }

    #[test]
    fn basis_state_correlations() {
        let fock = FockSpace::new(4).unwrap();
        let psi = fock.basis_state(&[1, 0, 1, 0]);
        let c = fock.correlation_matrix(&psi);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j && (i == 0 || i == 2) { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(c[[i, j]].re, expect, epsilon = 1e-13);
                assert_abs_diff_eq!(c[[i, j]].im, 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn many_body_rotation_matches_correlation_transport() {
        // The one-body transport C -> U^* C U^T must agree with full
        // many-body evolution of a Fock state.
        let lat = Lattice::chain(4).unwrap();
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams { strength: 1.7, phase: 0.9, laser_angle: 0.67 },
        );
        let t = 1.3;
        let fock = FockSpace::new(4).unwrap();
        let u_many = fock.many_body_rotation(h.matrix(), t).unwrap();
        let psi = fock.basis_state(&[1, 1, 0, 0]);
        let psi_t = u_many.dot(&psi);
        let c_fock = fock.correlation_matrix(&psi_t);

        let c0 = CorrelationMatrix::diagonal(&[1.0, 1.0, 0.0, 0.0]);
        let u = h.propagator(t).unwrap();
        let c_transport = evolve_correlations(&c0, &u).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let diff = (c_fock[[i, j]] - c_transport.data()[[i, j]]).norm();
                assert!(diff < 1e-10, "({i},{j}) differs by {diff:.2e}");
            }
        }
    }

    #[test]
    fn gaussian_state_occupation_statistics_match_sampler() {
        // For a Gaussian (Slater) state the Fock number-basis distribution
        // equals the determinantal chain probabilities.
        let lat = Lattice::chain(3).unwrap();
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams { strength: 2.0, phase: 0.4, laser_angle: 0.67 },
        );
        let t = 0.8;
        let fock = FockSpace::new(3).unwrap();
        let u_many = fock.many_body_rotation(h.matrix(), t).unwrap();
        let psi = u_many.dot(&fock.basis_state(&[1, 0, 1]));
        let dist = fock.occupation_distribution(&psi);

        let c0 = CorrelationMatrix::diagonal(&[1.0, 0.0, 1.0]);
        let u = h.propagator(t).unwrap();
        let c_t = evolve_correlations(&c0, &u).unwrap();
        for index in 0..fock.dim() {
            let pattern = fock.pattern_of(index);
            let p_chain = pattern_probability(&c_t, &pattern).unwrap();
            assert_abs_diff_eq!(dist[index], p_chain, epsilon = 1e-10);
        }
    }

    #[test]
    fn idempotent_number_operator_in_four_point() {
        let fock = FockSpace::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = fock.random_pure_state(&mut rng);
        for j in 0..3 {
            let n_j = fock.expectation(&psi, &fock.number_operator(j));
            let nn = fock.four_point(&psi, j, j, j, j);
            assert_abs_diff_eq!(n_j.re, nn.re, epsilon = 1e-12);
            assert_abs_diff_eq!(nn.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn size_cap_is_enforced() {
        assert!(FockSpace::new(0).is_err());
        assert!(FockSpace::new(MAX_SITES + 1).is_err());
    }
}
