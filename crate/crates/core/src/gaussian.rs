//! Correlation matrices, quench Hamiltonians, propagators, and the
//! Hermitian-matrix/real-vector isometry.
//!
//! Everything downstream works in an orthonormal real basis for Hermitian
//! matrices, so the measurement map, noise matrix, and inverses are plain
//! real matrices. The basis for `n x n` Hermitian matrices is
//!
//! - `E_jj` for each site `j` (slots `0..n`),
//! - `(E_ab + E_ba)/sqrt(2)` and `i (E_ab - E_ba)/sqrt(2)` for each pair
//!   `a < b`, interleaved in lexicographic pair order after the diagonal
//!   block.
//!
//! The coefficients of a Hermitian `C` are `C_jj`, `sqrt(2) Re C_ab`, and
//! `sqrt(2) Im C_ab`; the map preserves Frobenius norms and inner products.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, QR, UPLO};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::lattice::Lattice;
use crate::{Error, Result};

const HERMITICITY_TOL: f64 = 1e-12;

/// Hermiticity defect `max |C - C^dagger|`.
pub fn hermiticity_defect(m: &Array2<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Two-point correlation matrix `C_ij = <c_i^dagger c_j>`.
///
/// Hermitian with spectrum in `[0, 1]`; the tomography target.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    data: Array2<Complex64>,
}

impl CorrelationMatrix {
    /// Wrap a Hermitian matrix, rejecting non-Hermitian input.
    ///
    /// The spectrum is not checked here; use [`CorrelationMatrix::spectrum_in_unit_interval`]
    /// when the physical validity matters.
    pub fn from_matrix(data: Array2<Complex64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::InvalidArgument(format!(
                "correlation matrix must be square, got {} x {}",
                data.nrows(),
                data.ncols()
            )));
        }
        let defect = hermiticity_defect(&data);
        if defect > HERMITICITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not Hermitian (defect {defect:.2e})"
            )));
        }
        Ok(CorrelationMatrix { data })
    }

    /// All sites empty.
    pub fn vacuum(n: usize) -> Self {
        CorrelationMatrix {
            data: Array2::zeros((n, n)),
        }
    }

    /// All sites occupied.
    pub fn filled(n: usize) -> Self {
        CorrelationMatrix {
            data: Array2::eye(n),
        }
    }

    /// The maximally mixed state, `C = I/2`.
    pub fn maximally_mixed(n: usize) -> Self {
        CorrelationMatrix {
            data: Array2::eye(n) * Complex64::new(0.5, 0.0),
        }
    }

    /// Diagonal kernel of independent site occupations.
    pub fn diagonal(probs: &[f64]) -> Self {
        let n = probs.len();
        let mut data = Array2::zeros((n, n));
        for (j, &p) in probs.iter().enumerate() {
            data[[j, j]] = Complex64::new(p, 0.0);
        }
        CorrelationMatrix { data }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    /// Check that all eigenvalues lie in `[-tol, 1 + tol]`.
    pub fn spectrum_in_unit_interval(&self, tol: f64) -> Result<bool> {
        let evals = self.data.eigh(UPLO::Lower)?.0;
        Ok(evals.iter().all(|&e| e >= -tol && e <= 1.0 + tol))
    }

    /// Sorted eigenvalues.
    pub fn spectrum(&self) -> Result<Array1<f64>> {
        Ok(self.data.eigh(UPLO::Lower)?.0)
    }

    pub fn trace(&self) -> Complex64 {
        self.data.diag().sum()
    }
}

/// Block-diagonal combination `C0 (+) C_anc` with the system block first.
pub fn direct_sum(c0: &CorrelationMatrix, c_anc: &CorrelationMatrix) -> CorrelationMatrix {
    let n0 = c0.dim();
    let n1 = c_anc.dim();
    let mut data = Array2::zeros((n0 + n1, n0 + n1));
    data.slice_mut(ndarray::s![..n0, ..n0]).assign(c0.data());
    data.slice_mut(ndarray::s![n0.., n0..]).assign(c_anc.data());
    CorrelationMatrix { data }
}

/// Scatter `c_sys` onto `system_sites` and `c_anc` onto the remaining sites
/// of an `n_tot`-site lattice. Generalizes [`direct_sum`] to system blocks
/// that are not the leading indices.
pub fn embed(
    c_sys: &CorrelationMatrix,
    system_sites: &[usize],
    c_anc: &CorrelationMatrix,
    n_tot: usize,
) -> Result<CorrelationMatrix> {
    if c_sys.dim() != system_sites.len() {
        return Err(Error::InvalidArgument(format!(
            "system block is {} x {} but {} system sites were given",
            c_sys.dim(),
            c_sys.dim(),
            system_sites.len()
        )));
    }
    if c_sys.dim() + c_anc.dim() != n_tot {
        return Err(Error::InvalidArgument(format!(
            "system ({}) + ancilla ({}) sites must equal n_tot ({n_tot})",
            c_sys.dim(),
            c_anc.dim()
        )));
    }
    let mut in_system = vec![false; n_tot];
    for &s in system_sites {
        if s >= n_tot {
            return Err(Error::InvalidArgument(format!("system site {s} out of range")));
        }
        in_system[s] = true;
    }
    let ancilla_sites: Vec<usize> = (0..n_tot).filter(|&i| !in_system[i]).collect();
    let mut data = Array2::zeros((n_tot, n_tot));
    for (a, &sa) in system_sites.iter().enumerate() {
        for (b, &sb) in system_sites.iter().enumerate() {
            data[[sa, sb]] = c_sys.data()[[a, b]];
        }
    }
    for (a, &sa) in ancilla_sites.iter().enumerate() {
        for (b, &sb) in ancilla_sites.iter().enumerate() {
            data[[sa, sb]] = c_anc.data()[[a, b]];
        }
    }
    Ok(CorrelationMatrix { data })
}

/// Heisenberg transport of a correlation matrix: `C -> U* C U^T`.
pub fn evolve_correlations(
    c_tot: &CorrelationMatrix,
    u: &Array2<Complex64>,
) -> Result<CorrelationMatrix> {
    let n = c_tot.dim();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "propagator is {} x {} but the correlation matrix has {n} sites",
            u.nrows(),
            u.ncols()
        )));
    }
    let u_conj = u.mapv(|z| z.conj());
    let data = u_conj.dot(c_tot.data()).dot(&u.t());
    Ok(CorrelationMatrix { data })
}

/// Quasiperiodic on-site potential parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PotentialParams {
    /// Potential strength `h` in units of the hopping amplitude.
    pub strength: f64,
    /// Phase offset `phi` in `[0, 2*pi)`.
    pub phase: f64,
    /// Laser angle `theta_L` in radians; sets the potential wavevector.
    pub laser_angle: f64,
}

/// Single-particle hopping Hamiltonian with a quasiperiodic potential.
///
/// Off-diagonal entries are `-1` exactly on nearest-neighbor edges. The
/// diagonal at site `i` is `h * cos(k . i + phi)` with
/// `k = 2*pi*(cos(theta_L), sin(theta_L))` on grids. On chains only the
/// projection `k = 2*pi*cos(theta_L)` enters, so a single laser angle
/// controls both cases.
#[derive(Debug, Clone)]
pub struct SingleParticleHamiltonian {
    matrix: Array2<f64>,
    params: PotentialParams,
}

impl SingleParticleHamiltonian {
    pub fn build(lattice: &Lattice, params: PotentialParams) -> Self {
        let n = lattice.num_sites();
        let mut matrix = Array2::zeros((n, n));
        for &(a, b) in lattice.edges() {
            matrix[[a, b]] = -1.0;
            matrix[[b, a]] = -1.0;
        }
        let kx = 2.0 * std::f64::consts::PI * params.laser_angle.cos();
        let ky = 2.0 * std::f64::consts::PI * params.laser_angle.sin();
        for site in 0..n {
            let (x, y) = lattice.coords(site);
            let arg = if lattice.ly() == 1 {
                kx * x as f64 + params.phase
            } else {
                kx * x as f64 + ky * y as f64 + params.phase
            };
            matrix[[site, site]] = params.strength * arg.cos();
        }
        SingleParticleHamiltonian { matrix, params }
    }

    /// Pure hopping, no potential.
    pub fn hopping_only(lattice: &Lattice) -> Self {
        Self::build(
            lattice,
            PotentialParams {
                strength: 0.0,
                phase: 0.0,
                laser_angle: 0.0,
            },
        )
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn params(&self) -> PotentialParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Add on-site disorder; used by the robustness module.
    pub fn with_diagonal_shift(&self, shift: &[f64]) -> SingleParticleHamiltonian {
        let mut matrix = self.matrix.clone();
        for (j, &s) in shift.iter().enumerate() {
            matrix[[j, j]] += s;
        }
        SingleParticleHamiltonian {
            matrix,
            params: self.params,
        }
    }

    /// Eigendecomposition, reusable across many evolution times.
    pub fn spectral(&self) -> Result<SpectralHamiltonian> {
        let (evals, evecs) = self.matrix.eigh(UPLO::Lower)?;
        Ok(SpectralHamiltonian { evals, evecs })
    }

    /// Propagator `U = exp(-i t H)`.
    pub fn propagator(&self, t: f64) -> Result<Array2<Complex64>> {
        Ok(self.spectral()?.propagator(t))
    }
}

/// Cached eigendecomposition of a real-symmetric Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpectralHamiltonian {
    evals: Array1<f64>,
    evecs: Array2<f64>,
}

impl SpectralHamiltonian {
    /// `U(t) = V exp(-i t lambda) V^T`, exact to machine precision.
    pub fn propagator(&self, t: f64) -> Array2<Complex64> {
        let n = self.evals.len();
        // V * diag(phase), done column by column to stay real-typed as long
        // as possible.
        let mut scaled = Array2::<Complex64>::zeros((n, n));
        for (k, col) in self.evecs.axis_iter(ndarray::Axis(1)).enumerate() {
            let phase = Complex64::from_polar(1.0, -t * self.evals[k]);
            for i in 0..n {
                scaled[[i, k]] = phase * col[i];
            }
        }
        let vt = self.evecs.t().mapv(|x| Complex64::new(x, 0.0));
        scaled.dot(&vt)
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.evals
    }
}

/// Unitarity defect `max |U^dagger U - I|`.
pub fn unitarity_defect(u: &Array2<Complex64>) -> f64 {
    let n = u.nrows();
    let prod = u.t().mapv(|z| z.conj()).dot(u);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            worst = worst.max((prod[[i, j]] - expect).norm());
        }
    }
    worst
}

/// Slot bookkeeping for the orthonormal Hermitian basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianBasis {
    n: usize,
}

impl HermitianBasis {
    pub fn new(n: usize) -> Self {
        HermitianBasis { n }
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    /// Number of real coefficients, `n^2`.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Slot of the diagonal element `E_jj`.
    pub fn diag_slot(&self, j: usize) -> usize {
        j
    }

    fn pair_rank(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < b && b < self.n);
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    /// Slot of the symmetric (real-part) element for the pair `a < b`.
    pub fn sym_slot(&self, a: usize, b: usize) -> usize {
        self.n + 2 * self.pair_rank(a, b)
    }

    /// Slot of the antisymmetric (imaginary-part) element for `a < b`.
    pub fn asym_slot(&self, a: usize, b: usize) -> usize {
        self.n + 2 * self.pair_rank(a, b) + 1
    }

    /// The site pair `(a, b)` (with `a <= b`) supporting a slot.
    pub fn slot_sites(&self, slot: usize) -> (usize, usize) {
        if slot < self.n {
            return (slot, slot);
        }
        let rank = (slot - self.n) / 2;
        // Invert the triangular pair enumeration by scanning rows.
        let mut a = 0;
        let mut offset = rank;
        loop {
            let row_len = self.n - a - 1;
            if offset < row_len {
                return (a, a + offset + 1);
            }
            offset -= row_len;
            a += 1;
        }
    }

    /// All slots whose supporting sites both lie in `sites`.
    pub fn slots_supported_on(&self, sites: &[usize]) -> Vec<usize> {
        let mut mask = vec![false; self.n];
        for &s in sites {
            mask[s] = true;
        }
        (0..self.dim())
            .filter(|&slot| {
                let (a, b) = self.slot_sites(slot);
                mask[a] && mask[b]
            })
            .collect()
    }

    /// Coefficients of a Hermitian matrix in this basis.
    pub fn to_vec(&self, m: &Array2<Complex64>) -> Result<Array1<f64>> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::InvalidArgument(format!(
                "expected a {0} x {0} matrix, got {1} x {2}",
                self.n,
                m.nrows(),
                m.ncols()
            )));
        }
        let defect = hermiticity_defect(m);
        if defect > HERMITICITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not Hermitian (defect {defect:.2e})"
            )));
        }
        let mut x = Array1::zeros(self.dim());
        let sqrt2 = std::f64::consts::SQRT_2;
        for j in 0..self.n {
            x[self.diag_slot(j)] = m[[j, j]].re;
        }
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                x[self.sym_slot(a, b)] = sqrt2 * m[[a, b]].re;
                x[self.asym_slot(a, b)] = sqrt2 * m[[a, b]].im;
            }
        }
        Ok(x)
    }

    /// Reconstruct the Hermitian matrix from its coefficients.
    pub fn to_matrix(&self, x: &Array1<f64>) -> Result<Array2<Complex64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                self.dim(),
                x.len()
            )));
        }
        let mut m = Array2::zeros((self.n, self.n));
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..self.n {
            m[[j, j]] = Complex64::new(x[self.diag_slot(j)], 0.0);
        }
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                let re = inv_sqrt2 * x[self.sym_slot(a, b)];
                let im = inv_sqrt2 * x[self.asym_slot(a, b)];
                m[[a, b]] = Complex64::new(re, im);
                m[[b, a]] = Complex64::new(re, -im);
            }
        }
        Ok(m)
    }
}

/// Vectorize a Hermitian matrix in the orthonormal basis.
pub fn hermitian_to_vec(m: &Array2<Complex64>) -> Result<Array1<f64>> {
    HermitianBasis::new(m.nrows()).to_vec(m)
}

/// Inverse of [`hermitian_to_vec`].
pub fn vec_to_hermitian(x: &Array1<f64>) -> Result<Array2<Complex64>> {
    let n2 = x.len();
    let n = (n2 as f64).sqrt().round() as usize;
    if n * n != n2 {
        return Err(Error::InvalidArgument(format!(
            "coefficient length {n2} is not a perfect square"
        )));
    }
    HermitianBasis::new(n).to_matrix(x)
}

/// A quadratic observable `O = sum_ij o_ij c_i^dagger c_j` as a real
/// functional on vectorized correlation matrices.
///
/// The stored coefficients are the vectorization of the conjugated
/// coefficient matrix, so `<O> = coeffs . hermitian_to_vec(C)` for every
/// Hermitian `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableVec {
    coeffs: Array1<f64>,
}

impl ObservableVec {
    /// From a Hermitian coefficient matrix `o`.
    pub fn from_matrix(o: &Array2<Complex64>) -> Result<Self> {
        let conj = o.mapv(|z| z.conj());
        Ok(ObservableVec {
            coeffs: hermitian_to_vec(&conj)?,
        })
    }

    /// From raw basis coefficients (already in dual form).
    pub fn from_coeffs(coeffs: Array1<f64>) -> Self {
        ObservableVec { coeffs }
    }

    /// The site density `n_j`.
    pub fn density(n: usize, j: usize) -> Self {
        let basis = HermitianBasis::new(n);
        let mut coeffs = Array1::zeros(basis.dim());
        coeffs[basis.diag_slot(j)] = 1.0;
        ObservableVec { coeffs }
    }

    /// The unit-norm basis observable at `slot`.
    pub fn basis_slot(n: usize, slot: usize) -> Self {
        let basis = HermitianBasis::new(n);
        let mut coeffs = Array1::zeros(basis.dim());
        coeffs[slot] = 1.0;
        ObservableVec { coeffs }
    }

    /// Functionals extracting `Re C_ab` and `Im C_ab` for `a < b`.
    ///
    /// These are the Hermitian parts of the bilinear `c_a^dagger c_b`, so a
    /// complex correlation element is estimated by combining the two.
    pub fn matrix_element_parts(n: usize, a: usize, b: usize) -> (Self, Self) {
        assert!(a < b, "matrix_element_parts expects a < b");
        let basis = HermitianBasis::new(n);
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut re = Array1::zeros(basis.dim());
        re[basis.sym_slot(a, b)] = inv_sqrt2;
        let mut im = Array1::zeros(basis.dim());
        im[basis.asym_slot(a, b)] = inv_sqrt2;
        (ObservableVec { coeffs: re }, ObservableVec { coeffs: im })
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Euclidean norm; equals the Frobenius norm of the coefficient matrix.
    pub fn norm(&self) -> f64 {
        self.coeffs.dot(&self.coeffs).sqrt()
    }

    /// Rescale to unit norm.
    pub fn normalized(&self) -> Self {
        let norm = self.norm();
        ObservableVec {
            coeffs: &self.coeffs / norm,
        }
    }

    /// `<O> = sum_ij o_ij C_ij` evaluated through the vectorization.
    pub fn expectation(&self, c: &CorrelationMatrix) -> Result<f64> {
        let x = hermitian_to_vec(c.data())?;
        if x.len() != self.coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "observable has {} slots but the state has {}",
                self.coeffs.len(),
                x.len()
            )));
        }
        Ok(self.coeffs.dot(&x))
    }
}

/// Haar-random unitary via QR of a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Array2<Complex64>> {
    let mut g = Array2::zeros((n, n));
    for elem in g.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *elem = Complex64::new(re, im);
    }
    let (q, r) = g.qr()?;
    // Fix the phase ambiguity so the distribution is exactly Haar.
    let mut q = q;
    for (k, mut col) in q.axis_iter_mut(ndarray::Axis(1)).enumerate() {
        let d = r[[k, k]];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        col.map_inplace(|z| *z *= phase.conj());
    }
    Ok(q)
}

/// Random correlation matrix `V diag(lambda) V^dagger` with Haar-random `V`
/// and i.i.d. uniform eigenvalues rescaled so their mean equals `filling`.
///
/// The rescaling is multiplicative toward 0 when the raw mean exceeds the
/// target and multiplicative on the holes (`1 - lambda`) otherwise, which
/// keeps every eigenvalue inside `[0, 1]`.
pub fn random_gaussian_state(n: usize, filling: f64, seed: u64) -> Result<CorrelationMatrix> {
    if !(0.0..=1.0).contains(&filling) {
        return Err(Error::InvalidArgument(format!(
            "filling must be in [0, 1], got {filling}"
        )));
    }
    if filling == 0.0 {
        return Ok(CorrelationMatrix::vacuum(n));
    }
    if filling == 1.0 {
        return Ok(CorrelationMatrix::filled(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mean = lambda.iter().sum::<f64>() / n as f64;
    if filling <= mean {
        let factor = filling / mean;
        for l in lambda.iter_mut() {
            *l *= factor;
        }
    } else {
        let factor = (1.0 - filling) / (1.0 - mean);
        for l in lambda.iter_mut() {
            *l = 1.0 - (1.0 - *l) * factor;
        }
    }
    let v = haar_unitary(n, &mut rng)?;
    let mut diag = Array2::zeros((n, n));
    for (j, &l) in lambda.iter().enumerate() {
        diag[[j, j]] = Complex64::new(l, 0.0);
    }
    let data = v.dot(&diag).dot(&v.t().mapv(|z| z.conj()));
    // Symmetrize away round-off so the constructor accepts it.
    let sym = (&data + &data.t().mapv(|z| z.conj())) * Complex64::new(0.5, 0.0);
    CorrelationMatrix::from_matrix(sym)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            m[[i, i]] = Complex64::new(rng.random::<f64>() - 0.5, 0.0);
            for j in (i + 1)..n {
                let z = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                m[[i, j]] = z;
                m[[j, i]] = z.conj();
            }
        }
        m
    }

    #[test]
    fn hamiltonian_two_site_hopping() {
        let lat = Lattice::chain(2).unwrap();
        let h = SingleParticleHamiltonian::hopping_only(&lat);
        assert_eq!(h.matrix(), &array![[0.0, -1.0], [-1.0, 0.0]]);
    }

    #[test]
    fn hamiltonian_phase_zeroes_diagonal() {
        let lat = Lattice::chain(3).unwrap();
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams {
                strength: 1.0,
                phase: std::f64::consts::FRAC_PI_2,
                laser_angle: 0.3,
            },
        );
        // Site 0 has k.i = 0, so the diagonal is cos(pi/2) = 0.
        assert_abs_diff_eq!(h.matrix()[[0, 0]], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_grid_diagonal_formula() {
        let lat = Lattice::grid(2, 2).unwrap();
        let theta = 2.0 / 3.0;
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams {
                strength: 2.0,
                phase: 0.0,
                laser_angle: theta,
            },
        );
        let tau = 2.0 * std::f64::consts::PI;
        for site in 0..4 {
            let (x, y) = lat.coords(site);
            let expected = 2.0 * (tau * (theta.cos() * x as f64 + theta.sin() * y as f64)).cos();
            assert_abs_diff_eq!(h.matrix()[[site, site]], expected, epsilon = 1e-14);
        }
        // Hopping entries are -1 exactly on edges, 0 elsewhere.
        for &(a, b) in lat.edges() {
            assert_eq!(h.matrix()[[a, b]], -1.0);
        }
        assert_eq!(h.matrix()[[0, 3]], 0.0);
    }

    #[test]
    fn propagator_identity_at_t_zero() {
        let lat = Lattice::chain(4).unwrap();
        let h = SingleParticleHamiltonian::hopping_only(&lat);
        let u = h.propagator(0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u[[i, j]].re, expect, epsilon = 1e-12);
                assert_abs_diff_eq!(u[[i, j]].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn propagator_two_site_analytic() {
        let lat = Lattice::chain(2).unwrap();
        let h = SingleParticleHamiltonian::hopping_only(&lat);
        for &t in &[0.3, 1.0, 2.7] {
            let u = h.propagator(t).unwrap();
            assert_abs_diff_eq!(u[[0, 0]].re, t.cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(u[[0, 1]].im, t.sin(), epsilon = 1e-12);
            assert_abs_diff_eq!(u[[1, 0]].im, t.sin(), epsilon = 1e-12);
            assert_abs_diff_eq!(u[[0, 1]].re, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn propagator_group_property_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lat = Lattice::grid(3, 2).unwrap();
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams {
                strength: 1.3,
                phase: 0.9,
                laser_angle: 0.67,
            },
        );
        let spectral = h.spectral().unwrap();
        for _ in 0..5 {
            let t1 = 4.0 * rng.random::<f64>();
            let t2 = 4.0 * rng.random::<f64>();
            let u1 = spectral.propagator(t1);
            let u2 = spectral.propagator(t2);
            let u12 = spectral.propagator(t1 + t2);
            let prod = u1.dot(&u2);
            let defect = (&prod - &u12).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(defect < 1e-10, "group property defect {defect:.2e}");
            assert!(unitarity_defect(&u1) < 1e-10);
            let back = spectral.propagator(-t1);
            let round = u1.dot(&back);
            for i in 0..6 {
                for j in 0..6 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((round[[i, j]].re - expect).abs() < 1e-10);
                    assert!(round[[i, j]].im.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn sublattice_structure_of_hopping_propagator() {
        // With h = 0 on a bipartite lattice the propagator is real between
        // same-sublattice sites and purely imaginary otherwise.
        for lat in [Lattice::chain(6).unwrap(), Lattice::grid(3, 3).unwrap()] {
            let h = SingleParticleHamiltonian::hopping_only(&lat);
            let u = h.propagator(1.7).unwrap();
            for i in 0..lat.num_sites() {
                for j in 0..lat.num_sites() {
                    let same = lat.sublattice_sign(i) == lat.sublattice_sign(j);
                    if same {
                        assert!(u[[i, j]].im.abs() < 1e-10);
                    } else {
                        assert!(u[[i, j]].re.abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_anticommutes_with_hopping() {
        for lat in [Lattice::chain(6).unwrap(), Lattice::grid(3, 4).unwrap()] {
            let h = SingleParticleHamiltonian::hopping_only(&lat);
            let n = lat.num_sites();
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let g_h_g = lat.sublattice_sign(i) * h.matrix()[[i, j]] * lat.sublattice_sign(j);
                    worst = worst.max((g_h_g + h.matrix()[[i, j]]).abs());
                }
            }
            assert!(worst < 1e-12);
        }
    }

    #[test]
    fn direct_sum_blocks() {
        let c0 = CorrelationMatrix::filled(1);
        let canc = CorrelationMatrix::vacuum(1);
        let tot = direct_sum(&c0, &canc);
        assert_eq!(tot.data()[[0, 0]], Complex64::new(1.0, 0.0));
        assert_eq!(tot.data()[[1, 1]], Complex64::new(0.0, 0.0));
        assert_eq!(tot.data()[[0, 1]], Complex64::new(0.0, 0.0));

        // Spectrum of a direct sum is the union of block spectra.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_gaussian_state(3, 0.4, rng.random()).unwrap();
        let b = random_gaussian_state(2, 0.8, rng.random()).unwrap();
        let tot = direct_sum(&a, &b);
        let mut expected: Vec<f64> = a
            .spectrum()
            .unwrap()
            .into_iter()
            .chain(b.spectrum().unwrap())
            .collect();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let got = tot.spectrum().unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn embed_matches_direct_sum_for_leading_block() {
        let sys = random_gaussian_state(3, 0.5, 11).unwrap();
        let anc = CorrelationMatrix::vacuum(4);
        let a = direct_sum(&sys, &anc);
        let b = embed(&sys, &[0, 1, 2], &anc, 7).unwrap();
        assert_eq!(a.data(), b.data());
        // Scattered placement puts the block on the right indices.
        let c = embed(&sys, &[2, 4, 6], &anc, 7).unwrap();
        assert_eq!(c.data()[[2, 4]], sys.data()[[0, 1]]);
        assert_eq!(c.data()[[6, 2]], sys.data()[[2, 0]]);
        assert_eq!(c.data()[[0, 0]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn evolution_preserves_structure() {
        let lat = Lattice::chain(5).unwrap();
        let h = SingleParticleHamiltonian::build(
            &lat,
            PotentialParams {
                strength: 2.0,
                phase: 1.1,
                laser_angle: 0.67,
            },
        );
        let u = h.propagator(2.3).unwrap();

        // Identity quench.
        let c = random_gaussian_state(5, 0.6, 21).unwrap();
        let id = Array2::eye(5).mapv(|x: f64| Complex64::new(x, 0.0));
        let same = evolve_correlations(&c, &id).unwrap();
        assert!(hermiticity_defect(same.data()) < 1e-12);
        let diff = (same.data() - c.data()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);

        // Maximally mixed state is invariant.
        let mixed = CorrelationMatrix::maximally_mixed(5);
        let evolved = evolve_correlations(&mixed, &u).unwrap();
        let diff = (evolved.data() - mixed.data())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);

        // Spectrum and trace are preserved.
        let evolved = evolve_correlations(&c, &u).unwrap();
        let s0 = c.spectrum().unwrap();
        let s1 = evolved.spectrum().unwrap();
        for (a, b) in s0.iter().zip(s1.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(c.trace().re, evolved.trace().re, epsilon = 1e-10);
    }

    #[test]
    fn evolution_two_site_analytic() {
        let lat = Lattice::chain(2).unwrap();
        let h = SingleParticleHamiltonian::hopping_only(&lat);
        let u = h.propagator(std::f64::consts::FRAC_PI_4).unwrap();
        let c = CorrelationMatrix::diagonal(&[1.0, 0.0]);
        let evolved = evolve_correlations(&c, &u).unwrap();
        assert_abs_diff_eq!(evolved.data()[[0, 0]].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(evolved.data()[[1, 1]].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(evolved.data()[[0, 1]].norm(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn evolution_rejects_dimension_mismatch() {
        let c = CorrelationMatrix::vacuum(3);
        let u = Array2::<Complex64>::eye(4);
        assert!(evolve_correlations(&c, &u).is_err());
    }

    #[test]
    fn vectorization_identity_example() {
        let id = Array2::<Complex64>::eye(2);
        let x = hermitian_to_vec(&id).unwrap();
        assert_eq!(x.len(), 4);
        assert_abs_diff_eq!(x[0], 1.0);
        assert_abs_diff_eq!(x[1], 1.0);
        assert_abs_diff_eq!(x[2], 0.0);
        assert_abs_diff_eq!(x[3], 0.0);
    }

    #[test]
    fn vectorization_round_trip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let m = random_hermitian(5, &mut rng);
            let x = hermitian_to_vec(&m).unwrap();
            let back = vec_to_hermitian(&x).unwrap();
            let defect = (&m - &back).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(defect < 1e-14);
            let frob: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert_abs_diff_eq!(x.dot(&x).sqrt(), frob, epsilon = 1e-12);
        }
        // Inner products transfer too.
        let a = random_hermitian(4, &mut rng);
        let b = random_hermitian(4, &mut rng);
        let xa = hermitian_to_vec(&a).unwrap();
        let xb = hermitian_to_vec(&b).unwrap();
        let frob_inner: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(p, q)| (p.conj() * q).re)
            .sum();
        assert_abs_diff_eq!(xa.dot(&xb), frob_inner, epsilon = 1e-12);
    }

    #[test]
    fn vectorization_rejects_non_hermitian() {
        let mut m = Array2::<Complex64>::eye(3);
        m[[0, 1]] = Complex64::new(0.5, 0.0);
        assert!(hermitian_to_vec(&m).is_err());
    }

    #[test]
    fn slot_round_trip() {
        let basis = HermitianBasis::new(6);
        for slot in 0..basis.dim() {
            let (a, b) = basis.slot_sites(slot);
            if a == b {
                assert_eq!(basis.diag_slot(a), slot);
            } else {
                assert!(basis.sym_slot(a, b) == slot || basis.asym_slot(a, b) == slot);
            }
        }
        let patch_slots = basis.slots_supported_on(&[1, 2]);
        assert_eq!(patch_slots.len(), 4); // two densities + one pair
    }

    #[test]
    fn observable_pairing_matches_matrix_sum() {
        // <O> = sum o_ij C_ij, including the sign-sensitive imaginary parts.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let o = random_hermitian(4, &mut rng);
            let c = random_gaussian_state(4, 0.5, rng.random()).unwrap();
            let direct: Complex64 = o
                .indexed_iter()
                .map(|((i, j), &oij)| oij * c.data()[[i, j]])
                .sum();
            assert!(direct.im.abs() < 1e-12);
            let obs = ObservableVec::from_matrix(&o).unwrap();
            assert_abs_diff_eq!(obs.expectation(&c).unwrap(), direct.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn matrix_element_parts_extract_re_im() {
        let c = random_gaussian_state(5, 0.5, 33).unwrap();
        let (re, im) = ObservableVec::matrix_element_parts(5, 1, 3);
        assert_abs_diff_eq!(re.expectation(&c).unwrap(), c.data()[[1, 3]].re, epsilon = 1e-12);
        assert_abs_diff_eq!(im.expectation(&c).unwrap(), c.data()[[1, 3]].im, epsilon = 1e-12);
    }

    #[test]
    fn random_state_endpoints_and_determinism() {
        let zero = random_gaussian_state(4, 0.0, 5).unwrap();
        assert_eq!(zero.data(), CorrelationMatrix::vacuum(4).data());
        let one = random_gaussian_state(4, 1.0, 5).unwrap();
        assert_eq!(one.data(), CorrelationMatrix::filled(4).data());

        let a = random_gaussian_state(6, 0.37, 123).unwrap();
        let b = random_gaussian_state(6, 0.37, 123).unwrap();
        assert_eq!(a.data(), b.data());
        let c = random_gaussian_state(6, 0.37, 124).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn random_state_is_valid_with_exact_filling() {
        for &filling in &[0.1, 0.5, 0.93] {
            let c = random_gaussian_state(8, filling, 77).unwrap();
            assert!(c.spectrum_in_unit_interval(1e-10).unwrap());
            let mean = c.trace().re / 8.0;
            assert_abs_diff_eq!(mean, filling, epsilon = 1e-10);
        }
    }
}
