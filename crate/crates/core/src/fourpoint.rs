//! Two- and four-point correlator estimation from the same occupation data.
//!
//! Four-point correlators `<c_i^dag c_j c_k^dag c_l>` carry heavy
//! anticommutation redundancy. The minimal coordinates used here are the
//! two-point matrix `C` plus the pair-space matrix
//! `M[(ik),(jl)] = <c_i^dag c_k^dag c_j c_l>` (`i<k`, `j<l`), which is
//! Hermitian over the `n(n-1)/2` site pairs. Under a Gaussian quench both
//! blocks transport independently: `C -> U^* C U^T` and `M -> W^* M W^T`
//! with `W` the second compound (exterior square) of `U`. Every raw
//! correlator is an explicit linear functional of these coordinates, so the
//! occupation data inverts exactly as in the two-point pipeline.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::QuenchEnsemble;
use crate::fock::FockSpace;
use crate::gaussian::{CorrelationMatrix, HermitianBasis};
use crate::simulator::{EstimateResult, ShotDataset};
use crate::tomo::truncated_pinv;
use crate::{Error, Result};

/// Default cap on the system size; the reduced space has `~n^4/4` slots.
pub const DEFAULT_SITE_CAP: usize = 8;

/// Pair-index bookkeeping for the `n(n-1)/2` ordered site pairs.
#[derive(Debug, Clone, Copy)]
pub struct PairBasis {
    n: usize,
}

impl PairBasis {
    pub fn new(n: usize) -> Self {
        PairBasis { n }
    }

    pub fn len(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rank of the pair `(a, b)` with `a < b` in lexicographic order.
    pub fn rank(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < b && b < self.n);
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn pair(&self, rank: usize) -> (usize, usize) {
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
}

/// Reduced real coordinates of all correlators up to fourth order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFourPoint {
    n: usize,
    coeffs: Array1<f64>,
}

impl ReducedFourPoint {
    /// Total real dimension: `n^2` for `C` plus `(n(n-1)/2)^2` for `M`.
    pub fn dim_for(n: usize) -> usize {
        let p = PairBasis::new(n).len();
        n * n + p * p
    }

    pub fn from_coeffs(n: usize, coeffs: Array1<f64>) -> Result<Self> {
        if coeffs.len() != Self::dim_for(n) {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients for {n} sites, got {}",
                Self::dim_for(n),
                coeffs.len()
            )));
        }
        Ok(ReducedFourPoint { n, coeffs })
    }

    /// Assemble from the two Hermitian blocks.
    pub fn from_blocks(c: &Array2<Complex64>, m: &Array2<Complex64>) -> Result<Self> {
        let n = c.nrows();
        let p = PairBasis::new(n).len();
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::InvalidArgument(format!(
                "pair block must be {p} x {p} for {n} sites"
            )));
        }
        let c_vec = HermitianBasis::new(n).to_vec(c)?;
        let m_vec = HermitianBasis::new(p).to_vec(m)?;
        let mut coeffs = Array1::zeros(Self::dim_for(n));
        coeffs.slice_mut(s![..n * n]).assign(&c_vec);
        coeffs.slice_mut(s![n * n..]).assign(&m_vec);
        Ok(ReducedFourPoint { n, coeffs })
    }

    /// Exact coordinates of a many-body pure state (oracle constructor).
    pub fn from_fock(fock: &FockSpace, psi: &Array1<Complex64>) -> Result<Self> {
        let n = fock.sites();
        let pairs = PairBasis::new(n);
        let c = fock.correlation_matrix(psi);
        let mut m = Array2::zeros((pairs.len(), pairs.len()));
        for pq in 0..pairs.len() {
            let (i, k) = pairs.pair(pq);
            for qr in 0..pairs.len() {
                let (j, l) = pairs.pair(qr);
                // <c_i^dag c_k^dag c_j c_l> = delta_jk <c_i^dag c_l>
                //                             - <c_i^dag c_j c_k^dag c_l>.
                let delta = if j == k { c[[i, l]] } else { Complex64::new(0.0, 0.0) };
                m[[pq, qr]] = delta - fock.four_point(psi, i, j, k, l);
            }
        }
        Self::from_blocks(&c, &m)
    }

    /// Wick coordinates of a Gaussian state (used for test targets only;
    /// the estimation pipeline never assumes Gaussianity).
    pub fn from_gaussian(c: &CorrelationMatrix) -> Result<Self> {
        let n = c.dim();
        let pairs = PairBasis::new(n);
        let cd = c.data();
        let mut m = Array2::zeros((pairs.len(), pairs.len()));
        for pq in 0..pairs.len() {
            let (i, k) = pairs.pair(pq);
            for qr in 0..pairs.len() {
                let (j, l) = pairs.pair(qr);
                // Wick: <c_i^dag c_k^dag c_j c_l> = C_il C_kj - C_ij C_kl.
                m[[pq, qr]] = cd[[i, l]] * cd[[k, j]] - cd[[i, j]] * cd[[k, l]];
            }
        }
        Self::from_blocks(cd, &m)
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }

    /// The two-point block as a matrix.
    pub fn c_matrix(&self) -> Result<Array2<Complex64>> {
        let c_vec = self.coeffs.slice(s![..self.n * self.n]).to_owned();
        HermitianBasis::new(self.n).to_matrix(&c_vec)
    }

    /// A two-point element `C_ij`.
    pub fn c_element(&self, i: usize, j: usize) -> Complex64 {
        let (re, im) = c_element_functionals(self.n, i, j);
        Complex64::new(re.dot(&self.coeffs), im.dot(&self.coeffs))
    }

    /// A raw four-point element `<c_i^dag c_j c_k^dag c_l>`.
    pub fn d_element(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        let (re, im) = d_element_functionals(self.n, i, j, k, l);
        Complex64::new(re.dot(&self.coeffs), im.dot(&self.coeffs))
    }
}

/// Real functionals extracting `Re` and `Im` of `C_ij` from reduced
/// coordinates.
pub fn c_element_functionals(n: usize, i: usize, j: usize) -> (Array1<f64>, Array1<f64>) {
    let dim = ReducedFourPoint::dim_for(n);
    let basis = HermitianBasis::new(n);
    let mut re = Array1::zeros(dim);
    let mut im = Array1::zeros(dim);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    match i.cmp(&j) {
        std::cmp::Ordering::Equal => re[basis.diag_slot(i)] = 1.0,
        std::cmp::Ordering::Less => {
            re[basis.sym_slot(i, j)] = inv_sqrt2;
            im[basis.asym_slot(i, j)] = inv_sqrt2;
        }
        std::cmp::Ordering::Greater => {
            re[basis.sym_slot(j, i)] = inv_sqrt2;
            im[basis.asym_slot(j, i)] = -inv_sqrt2;
        }
    }
    (re, im)
}

/// Real functionals extracting `Re` and `Im` of the pair-matrix element
/// `M[pq, qr]` from reduced coordinates.
fn m_element_functionals(n: usize, pq: usize, qr: usize) -> (Array1<f64>, Array1<f64>) {
    let dim = ReducedFourPoint::dim_for(n);
    let p = PairBasis::new(n).len();
    let basis = HermitianBasis::new(p);
    let offset = n * n;
    let mut re = Array1::zeros(dim);
    let mut im = Array1::zeros(dim);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    match pq.cmp(&qr) {
        std::cmp::Ordering::Equal => re[offset + basis.diag_slot(pq)] = 1.0,
        std::cmp::Ordering::Less => {
            re[offset + basis.sym_slot(pq, qr)] = inv_sqrt2;
            im[offset + basis.asym_slot(pq, qr)] = inv_sqrt2;
        }
        std::cmp::Ordering::Greater => {
            re[offset + basis.sym_slot(qr, pq)] = inv_sqrt2;
            im[offset + basis.asym_slot(qr, pq)] = -inv_sqrt2;
        }
    }
    (re, im)
}

/// Real functionals extracting `Re` and `Im` of the raw correlator
/// `<c_i^dag c_j c_k^dag c_l>`.
///
/// Uses `<c_i^dag c_j c_k^dag c_l> = delta_jk C_il - T[ik|jl]` with `T` the
/// antisymmetric extension of the pair matrix.
pub fn d_element_functionals(
    n: usize,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> (Array1<f64>, Array1<f64>) {
    let dim = ReducedFourPoint::dim_for(n);
    let mut re = Array1::zeros(dim);
    let mut im = Array1::zeros(dim);
    if j == k {
        let (cre, cim) = c_element_functionals(n, i, l);
        re += &cre;
        im += &cim;
    }
    if i != k && j != l {
        let pairs = PairBasis::new(n);
        let sign_ik = if i < k { 1.0 } else { -1.0 };
        let sign_jl = if j < l { 1.0 } else { -1.0 };
        let pq = pairs.rank(i.min(k), i.max(k));
        let qr = pairs.rank(j.min(l), j.max(l));
        let (mre, mim) = m_element_functionals(n, pq, qr);
        let sign = sign_ik * sign_jl;
        re.scaled_add(-sign, &mre);
        im.scaled_add(-sign, &mim);
    }
    (re, im)
}

/// Functional for the density-density expectation `<n_j n_j'>` (`j != j'`).
pub fn density_density_functional(n: usize, j: usize, jp: usize) -> Array1<f64> {
    assert_ne!(j, jp, "use a density functional for <n_j^2> = <n_j>");
    // <n_j n_j'> = -M[(j j'), (j j')].
    let pairs = PairBasis::new(n);
    let pq = pairs.rank(j.min(jp), j.max(jp));
    let (mut re, _) = m_element_functionals(n, pq, pq);
    re *= -1.0;
    re
}

/// Functional for the density `<n_j>` through the two-point block.
pub fn density_functional(n: usize, j: usize) -> Array1<f64> {
    let (re, _) = c_element_functionals(n, j, j);
    re
}

/// The second compound matrix (exterior square) of a unitary:
/// `W[(ik),(ac)] = U_ia U_kc - U_ic U_ka`.
pub fn compound_matrix(u: &Array2<Complex64>) -> Array2<Complex64> {
    let n = u.nrows();
    let pairs = PairBasis::new(n);
    let p = pairs.len();
    let mut w = Array2::zeros((p, p));
    for pq in 0..p {
        let (i, k) = pairs.pair(pq);
        for qr in 0..p {
            let (a, c) = pairs.pair(qr);
            w[[pq, qr]] = u[[i, a]] * u[[k, c]] - u[[i, c]] * u[[k, a]];
        }
    }
    w
}

/// The real transport matrix of the conjugation `A -> U^* A U^T` in the
/// orthonormal Hermitian basis.
fn conjugation_transport(u: &Array2<Complex64>) -> Result<Array2<f64>> {
    let n = u.nrows();
    let basis = HermitianBasis::new(n);
    let dim = basis.dim();
    let u_conj = u.mapv(|z| z.conj());
    let mut k = Array2::zeros((dim, dim));
    for col in 0..dim {
        let mut e = Array1::zeros(dim);
        e[col] = 1.0;
        let a = basis.to_matrix(&e)?;
        let b = u_conj.dot(&a).dot(&u.t());
        let out = basis.to_vec(&b)?;
        k.slice_mut(s![.., col]).assign(&out);
    }
    Ok(k)
}

/// The block-diagonal real transport of reduced four-point coordinates
/// under a Gaussian quench.
#[derive(Debug, Clone)]
pub struct U4Map {
    n: usize,
    k2: Array2<f64>,
    k4: Array2<f64>,
}

impl U4Map {
    /// Build the transport for a single-particle unitary.
    ///
    /// Quartic transport works in the `n(n-1)/2`-dimensional pair space, so
    /// a size cap keeps the dense maps tractable.
    pub fn build(u: &Array2<Complex64>, site_cap: Option<usize>) -> Result<Self> {
        let n = u.nrows();
        let cap = site_cap.unwrap_or(DEFAULT_SITE_CAP);
        if n > cap {
            return Err(Error::Resource(format!(
                "four-point transport for {n} sites exceeds the cap of {cap}"
            )));
        }
        let k2 = conjugation_transport(u)?;
        let k4 = conjugation_transport(&compound_matrix(u))?;
        Ok(U4Map { n, k2, k4 })
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    /// Transport of the two-point block.
    pub fn two_point_block(&self) -> &Array2<f64> {
        &self.k2
    }

    /// Transport of the pair (four-point) block.
    pub fn four_point_block(&self) -> &Array2<f64> {
        &self.k4
    }

    /// Apply to reduced coordinates.
    pub fn apply(&self, x: &ReducedFourPoint) -> Result<ReducedFourPoint> {
        if x.sites() != self.n {
            return Err(Error::InvalidArgument("site count mismatch".into()));
        }
        let n2 = self.n * self.n;
        let c_in = x.coeffs().slice(s![..n2]);
        let m_in = x.coeffs().slice(s![n2..]);
        let mut out = Array1::zeros(x.coeffs().len());
        out.slice_mut(s![..n2]).assign(&self.k2.dot(&c_in));
        out.slice_mut(s![n2..]).assign(&self.k4.dot(&m_in));
        ReducedFourPoint::from_coeffs(self.n, out)
    }

    /// The full block-diagonal matrix (for composition checks).
    pub fn dense(&self) -> Array2<f64> {
        let n2 = self.n * self.n;
        let p2 = self.k4.nrows();
        let mut m = Array2::zeros((n2 + p2, n2 + p2));
        m.slice_mut(s![..n2, ..n2]).assign(&self.k2);
        m.slice_mut(s![n2.., n2..]).assign(&self.k4);
        m
    }
}

/// The quartic data vector: site occupations followed by the distinct
/// pairwise products, `n + n(n-1)/2` entries.
pub fn quartic_measurement_vector(bits: &[u8]) -> Array1<f64> {
    let n = bits.len();
    let pairs = PairBasis::new(n);
    let mut v = Array1::zeros(n + pairs.len());
    for (j, &b) in bits.iter().enumerate() {
        v[j] = b as f64;
    }
    for rank in 0..pairs.len() {
        let (a, b) = pairs.pair(rank);
        v[n + rank] = (bits[a] * bits[b]) as f64;
    }
    v
}

/// The linear map from reduced coordinates to quartic expectations:
/// `E[n^{(4)}] = B x`.
pub fn quartic_expectation_map(n: usize) -> Array2<f64> {
    let pairs = PairBasis::new(n);
    let rows = n + pairs.len();
    let dim = ReducedFourPoint::dim_for(n);
    let mut b = Array2::zeros((rows, dim));
    for j in 0..n {
        b.row_mut(j).assign(&density_functional(n, j));
    }
    for rank in 0..pairs.len() {
        let (a, c) = pairs.pair(rank);
        b.row_mut(n + rank).assign(&density_density_functional(n, a, c));
    }
    b
}

/// The stacked quartic measurement map and its truncated inverse.
///
/// Four-point estimation assumes no ancillas: every lattice site is a
/// system site.
#[derive(Debug)]
pub struct FourPointBundle {
    n: usize,
    blocks: Vec<Array2<f64>>,
    g: Array2<f64>,
    basis: Array2<f64>,
    sing_vals: Array1<f64>,
    delta: f64,
    ensemble_hash: String,
}

/// Assemble `F_s = B U_s^{(4)}`, stack with the ensemble weights, and invert
/// by truncated SVD.
pub fn forward_map_4(
    ensemble: &QuenchEnsemble,
    delta: f64,
    site_cap: Option<usize>,
) -> Result<FourPointBundle> {
    if ensemble.n_ancilla() != 0 {
        return Err(Error::InvalidArgument(
            "four-point estimation runs without ancillas".into(),
        ));
    }
    let n = ensemble.n_system();
    let b = quartic_expectation_map(n);
    let blocks: Result<Vec<Array2<f64>>> = (0..ensemble.len())
        .into_par_iter()
        .map(|s| {
            let u = ensemble.propagator(s)?;
            let u4 = U4Map::build(&u, site_cap)?;
            Ok(b.dot(&u4.dense()) * ensemble.probability(s))
        })
        .collect();
    let blocks = blocks?;
    let rows_per = b.nrows();
    let dim = ReducedFourPoint::dim_for(n);
    let mut stacked = Array2::zeros((blocks.len() * rows_per, dim));
    for (s, block) in blocks.iter().enumerate() {
        stacked
            .slice_mut(s![s * rows_per..(s + 1) * rows_per, ..])
            .assign(block);
    }
    let (g, v_r, s_r) = truncated_pinv(&stacked, delta).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!(
            "quartic map is rank deficient ({msg}); rows = {}, dim = {dim}",
            blocks.len() * rows_per
        )),
        other => other,
    })?;
    Ok(FourPointBundle {
        n,
        blocks,
        g,
        basis: v_r,
        sing_vals: s_r,
        delta,
        ensemble_hash: ensemble.content_hash(),
    })
}

impl FourPointBundle {
    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn retained_rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        ReducedFourPoint::dim_for(self.n)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn ensemble_hash(&self) -> &str {
        &self.ensemble_hash
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.sing_vals
    }

    pub fn rows_per_member(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn rows(&self) -> usize {
        self.blocks.len() * self.rows_per_member()
    }

    /// Exact expected stacked quartic data for known reduced coordinates.
    pub fn expected_data(&self, x: &ReducedFourPoint) -> Result<Array1<f64>> {
        if x.sites() != self.n {
            return Err(Error::InvalidArgument("site count mismatch".into()));
        }
        let per = self.rows_per_member();
        let mut z = Array1::zeros(self.rows());
        for (s, block) in self.blocks.iter().enumerate() {
            z.slice_mut(s![s * per..(s + 1) * per])
                .assign(&block.dot(x.coeffs()));
        }
        Ok(z)
    }

    /// Reconstruct reduced coordinates from stacked quartic data
    /// (projection onto the retained subspace).
    pub fn reconstruct(&self, z: &Array1<f64>) -> Result<ReducedFourPoint> {
        if z.len() != self.rows() {
            return Err(Error::InvalidArgument(format!(
                "expected {} stacked values, got {}",
                self.rows(),
                z.len()
            )));
        }
        ReducedFourPoint::from_coeffs(self.n, self.g.dot(z))
    }

    /// Projection of a coordinate vector onto the retained subspace.
    pub fn project_retained(&self, x: &Array1<f64>) -> Array1<f64> {
        self.basis.dot(&self.basis.t().dot(x))
    }

    fn per_shot_values(&self, dataset: &ShotDataset, y: &Array1<f64>) -> Result<Vec<f64>> {
        if dataset.ensemble_hash != self.ensemble_hash {
            return Err(Error::InvalidArgument(
                "dataset and quartic bundle come from different ensembles".into(),
            ));
        }
        if y.len() != self.dim() {
            return Err(Error::InvalidArgument("functional dimension mismatch".into()));
        }
        let b = self.g.t().dot(y);
        let per = self.rows_per_member();
        Ok(dataset
            .records
            .iter()
            .map(|rec| {
                let n4 = quartic_measurement_vector(&rec.occupations);
                let base = (rec.s as usize - 1) * per;
                let mut acc = 0.0;
                for (k, &v) in n4.iter().enumerate() {
                    if v != 0.0 {
                        acc += v * b[base + k];
                    }
                }
                acc
            })
            .collect())
    }

    /// Estimate a real linear functional of the reduced coordinates.
    pub fn estimate(&self, dataset: &ShotDataset, y: &Array1<f64>) -> Result<EstimateResult> {
        let values = self.per_shot_values(dataset, y)?;
        let r = values.len();
        let mean = values.iter().sum::<f64>() / r as f64;
        let stderr = if r < 2 {
            0.0
        } else {
            let var =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
            (var / r as f64).sqrt()
        };
        Ok(EstimateResult {
            value: mean,
            stderr,
            r_used: r,
        })
    }

    /// Estimate a complex four-point element from its Hermitian parts.
    pub fn estimate_d_element(
        &self,
        dataset: &ShotDataset,
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    ) -> Result<crate::simulator::ComplexEstimate> {
        let (re_f, im_f) = d_element_functionals(self.n, i, j, k, l);
        let re = self.estimate(dataset, &re_f)?;
        let im = self.estimate(dataset, &im_f)?;
        Ok(crate::simulator::ComplexEstimate {
            value: Complex64::new(re.value, im.value),
            stderr_re: re.stderr,
            stderr_im: im.stderr,
            r_used: re.r_used,
        })
    }
}
