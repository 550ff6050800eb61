//! The measurement map `F`, the occupation noise matrix `W`, and the left
//! inverses used for reconstruction.
//!
//! Row `(s, j)` of `F` evaluates `vec(C0) -> p_s [U_s^* (C0 (+) C_anc) U_s^T]_jj`,
//! i.e. the weighted expectation of the site-`j` occupation after quench `s`.
//! In the orthonormal Hermitian basis that row is the vectorization of the
//! rank-one matrix `w w^dagger`, where `w` is row `j` of `U_s` restricted to
//! the system columns. Ancilla contributions enter only through the constant
//! offset `d_anc`.
//!
//! `F` is kept as per-quench blocks and only concatenated when a factorization
//! needs the stacked matrix; a configurable cap rejects assemblies that would
//! not fit in memory and points at the localized path instead.

use ndarray::{s, Array1, Array2, Axis};
use ndarray_linalg::cholesky::{CholeskyFactorized, FactorizeC, InverseC, SolveC};
use ndarray_linalg::{EigValsh, InverseInto, JobSvd, SVDDC, UPLO};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::ensemble::QuenchEnsemble;
use crate::gaussian::{embed, evolve_correlations, CorrelationMatrix, HermitianBasis};
use crate::{Error, Result};

/// Default cap on the stacked map, 4 GiB.
pub const DEFAULT_MEMORY_CAP: usize = 4 << 30;

/// Cholesky factorization that also rejects matrices which are singular at
/// working precision. LAPACK happily factorizes a structurally singular
/// Gram matrix whose zero pivots round off to tiny positive numbers, so the
/// pivot spread is checked explicitly.
fn factorize_pd(l: &Array2<f64>) -> Result<CholeskyFactorized<ndarray::OwnedRepr<f64>>> {
    let chol = l
        .factorizec(UPLO::Lower)
        .map_err(|e| Error::RankDeficient(format!("not positive definite: {e}")))?;
    let n = l.nrows();
    let mut p_min = f64::INFINITY;
    let mut p_max = 0.0f64;
    for i in 0..n {
        let p = chol.factor[[i, i]].abs();
        p_min = p_min.min(p);
        p_max = p_max.max(p);
    }
    // Pivots are square roots of Schur complements; a spread beyond
    // sqrt(eps) means L has no inverse at working precision.
    if p_min <= f64::EPSILON.sqrt() * p_max {
        return Err(Error::RankDeficient(format!(
            "pivot spread {:.3e} relative to {:.3e} is below sqrt(machine eps)",
            p_min, p_max
        )));
    }
    Ok(chol)
}

fn deficiency_report(l: &Array2<f64>) -> Error {
    let detail = l
        .eigvalsh(UPLO::Lower)
        .map(|e| {
            let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let near_null = e.iter().filter(|&&x| x < 1e-12 * hi.max(1.0)).count();
            format!(
                "lambda_min = {lo:.3e}, lambda_max = {hi:.3e}, \
                 {near_null} directions below 1e-12 relative"
            )
        })
        .unwrap_or_else(|_| "eigenvalue probe failed".into());
    Error::RankDeficient(format!(
        "Gram matrix L is singular at working precision ({detail}); \
         the ensemble does not resolve all requested slots"
    ))
}

/// How a Hermitian slot reads off a rank-one row `w w^dagger`.
#[derive(Debug, Clone, Copy)]
enum SlotKind {
    Diag(usize),
    Sym(usize, usize),
    Asym(usize, usize),
}

fn slot_table(basis: &HermitianBasis, slots: &[usize]) -> Vec<SlotKind> {
    slots
        .iter()
        .map(|&slot| {
            let (a, b) = basis.slot_sites(slot);
            if a == b {
                SlotKind::Diag(a)
            } else if slot == basis.sym_slot(a, b) {
                SlotKind::Sym(a, b)
            } else {
                SlotKind::Asym(a, b)
            }
        })
        .collect()
}

/// Unweighted single-quench map `F_s` over the given rows and system slots.
fn forward_rows(
    u: &Array2<Complex64>,
    system_sites: &[usize],
    row_sites: &[usize],
    kinds: &[SlotKind],
) -> Array2<f64> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut f = Array2::zeros((row_sites.len(), kinds.len()));
    let mut w: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); system_sites.len()];
    for (r, &site) in row_sites.iter().enumerate() {
        for (a, &col) in system_sites.iter().enumerate() {
            w[a] = u[[site, col]];
        }
        for (c, kind) in kinds.iter().enumerate() {
            f[[r, c]] = match *kind {
                SlotKind::Diag(a) => w[a].norm_sqr(),
                SlotKind::Sym(a, b) => sqrt2 * (w[a] * w[b].conj()).re,
                SlotKind::Asym(a, b) => sqrt2 * (w[a] * w[b].conj()).im,
            };
        }
    }
    f
}

/// Unweighted `F_s`: all lattice rows against all system slots.
pub fn forward_map_single(u: &Array2<Complex64>, system_sites: &[usize]) -> Array2<f64> {
    let basis = HermitianBasis::new(system_sites.len());
    let slots: Vec<usize> = (0..basis.dim()).collect();
    let kinds = slot_table(&basis, &slots);
    let row_sites: Vec<usize> = (0..u.nrows()).collect();
    forward_rows(u, system_sites, &row_sites, &kinds)
}

/// Unweighted analogue of [`forward_map_single`] over the ancilla columns.
pub fn ancilla_map_single(u: &Array2<Complex64>, ancilla_sites: &[usize]) -> Array2<f64> {
    forward_map_single(u, ancilla_sites)
}

/// Per-site ancilla offsets `[U^* (0 (+) C_anc) U^T]_jj` for the given rows.
fn ancilla_offset_rows(
    u: &Array2<Complex64>,
    ancilla_sites: &[usize],
    c_anc: &CorrelationMatrix,
    row_sites: &[usize],
) -> Array1<f64> {
    let n_anc = ancilla_sites.len();
    let mut d = Array1::zeros(row_sites.len());
    if n_anc == 0 {
        return d;
    }
    let mut w: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n_anc];
    for (r, &site) in row_sites.iter().enumerate() {
        for (a, &col) in ancilla_sites.iter().enumerate() {
            w[a] = u[[site, col]];
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..n_anc {
            let mut row_dot = Complex64::new(0.0, 0.0);
            for b in 0..n_anc {
                row_dot += c_anc.data()[[a, b]] * w[b];
            }
            acc += w[a].conj() * row_dot;
        }
        d[r] = acc.re;
    }
    d
}

/// The stacked measurement map together with its ancilla offset.
#[derive(Debug, Clone)]
pub struct MeasurementMap {
    blocks: Vec<Array2<f64>>,
    d_anc_blocks: Vec<Array1<f64>>,
    probs: Vec<f64>,
    row_sites: Vec<usize>,
    slots: Vec<usize>,
    n_sys: usize,
    n_tot: usize,
    ensemble_hash: String,
}

impl MeasurementMap {
    /// Assemble `F = (p_1 F_1; ...; p_S F_S)` and `d_anc` for an ensemble.
    ///
    /// `memory_cap` bounds the stacked size in bytes (default
    /// [`DEFAULT_MEMORY_CAP`]); oversized requests error and point to
    /// [`truncated_local_map`].
    pub fn stack_forward(
        ensemble: &QuenchEnsemble,
        c_anc: &CorrelationMatrix,
        memory_cap: Option<usize>,
    ) -> Result<Self> {
        let n_sys = ensemble.n_system();
        let row_sites: Vec<usize> = (0..ensemble.n_total()).collect();
        let slots: Vec<usize> = (0..n_sys * n_sys).collect();
        Self::build(ensemble, c_anc, row_sites, slots, memory_cap)
    }

    fn build(
        ensemble: &QuenchEnsemble,
        c_anc: &CorrelationMatrix,
        row_sites: Vec<usize>,
        slots: Vec<usize>,
        memory_cap: Option<usize>,
    ) -> Result<Self> {
        if c_anc.dim() != ensemble.n_ancilla() {
            return Err(Error::InvalidArgument(format!(
                "ancilla state has {} sites but the ensemble reserves {}",
                c_anc.dim(),
                ensemble.n_ancilla()
            )));
        }
        let cap = memory_cap.unwrap_or(DEFAULT_MEMORY_CAP);
        let estimate = ensemble.len() * row_sites.len() * slots.len() * std::mem::size_of::<f64>();
        if estimate > cap {
            return Err(Error::Resource(format!(
                "stacked map needs about {} MiB which exceeds the cap of {} MiB; \
                 use truncated_local_map for a size-independent localized inverse",
                estimate >> 20,
                cap >> 20
            )));
        }
        let basis = HermitianBasis::new(ensemble.n_system());
        let kinds = slot_table(&basis, &slots);
        let ancilla_sites: Vec<usize> = {
            let mut in_sys = vec![false; ensemble.n_total()];
            for &s in ensemble.system_sites() {
                in_sys[s] = true;
            }
            (0..ensemble.n_total()).filter(|&i| !in_sys[i]).collect()
        };
        let per_member: Result<Vec<(Array2<f64>, Array1<f64>)>> = (0..ensemble.len())
            .into_par_iter()
            .map(|s| {
                let u = ensemble.propagator(s)?;
                let p = ensemble.probability(s);
                let mut f = forward_rows(&u, ensemble.system_sites(), &row_sites, &kinds);
                f *= p;
                let mut d = ancilla_offset_rows(&u, &ancilla_sites, c_anc, &row_sites);
                d *= p;
                Ok((f, d))
            })
            .collect();
        let per_member = per_member?;
        let mut blocks = Vec::with_capacity(per_member.len());
        let mut d_anc_blocks = Vec::with_capacity(per_member.len());
        for (f, d) in per_member {
            blocks.push(f);
            d_anc_blocks.push(d);
        }
        Ok(MeasurementMap {
            blocks,
            d_anc_blocks,
            probs: ensemble.members().iter().map(|(p, _)| *p).collect(),
            row_sites,
            slots,
            n_sys: ensemble.n_system(),
            n_tot: ensemble.n_total(),
            ensemble_hash: ensemble.content_hash(),
        })
    }

    pub fn n_members(&self) -> usize {
        self.blocks.len()
    }

    /// Rows of the stacked map.
    pub fn rows(&self) -> usize {
        self.blocks.len() * self.row_sites.len()
    }

    pub fn rows_per_member(&self) -> usize {
        self.row_sites.len()
    }

    /// Columns of the stacked map (retained Hermitian slots).
    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// Global Hermitian-basis slot indices of the columns.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    /// Lattice sites measured in each block, in row order.
    pub fn row_sites(&self) -> &[usize] {
        &self.row_sites
    }

    pub fn n_system(&self) -> usize {
        self.n_sys
    }

    pub fn n_total(&self) -> usize {
        self.n_tot
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ensemble_hash(&self) -> &str {
        &self.ensemble_hash
    }

    /// The weighted block `p_s F_s`.
    pub fn block(&self, s: usize) -> &Array2<f64> {
        &self.blocks[s]
    }

    /// `(member, site)` labelling of a stacked row.
    pub fn row_meta(&self, row: usize) -> (usize, usize) {
        let per = self.row_sites.len();
        (row / per, self.row_sites[row % per])
    }

    /// Concatenate the blocks into the full stacked matrix.
    pub fn stacked(&self) -> Array2<f64> {
        let mut f = Array2::zeros((self.rows(), self.n_slots()));
        let per = self.row_sites.len();
        for (s, block) in self.blocks.iter().enumerate() {
            f.slice_mut(s![s * per..(s + 1) * per, ..]).assign(block);
        }
        f
    }

    /// The stacked ancilla offset `d_anc`.
    pub fn d_anc(&self) -> Array1<f64> {
        let mut d = Array1::zeros(self.rows());
        let per = self.row_sites.len();
        for (s, block) in self.d_anc_blocks.iter().enumerate() {
            d.slice_mut(s![s * per..(s + 1) * per]).assign(block);
        }
        d
    }

    /// `F x`, block-wise.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.rows());
        let per = self.row_sites.len();
        for (s, block) in self.blocks.iter().enumerate() {
            out.slice_mut(s![s * per..(s + 1) * per]).assign(&block.dot(x));
        }
        out
    }

    /// `F X` for a matrix of column vectors.
    pub fn apply_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows(), x.ncols()));
        let per = self.row_sites.len();
        for (s, block) in self.blocks.iter().enumerate() {
            out.slice_mut(s![s * per..(s + 1) * per, ..]).assign(&block.dot(x));
        }
        out
    }

    /// Expected stacked data `E[z] = F vec(C0) + d_anc` for a known state.
    pub fn expected_data(&self, c0: &CorrelationMatrix) -> Result<Array1<f64>> {
        let basis = HermitianBasis::new(self.n_sys);
        let x_full = basis.to_vec(c0.data())?;
        let x: Array1<f64> = self.slots.iter().map(|&slot| x_full[slot]).collect();
        Ok(self.apply(&x) + self.d_anc())
    }

    /// Column position of a global Hermitian slot, if retained.
    pub fn slot_position(&self, global_slot: usize) -> Option<usize> {
        self.slots.iter().position(|&s| s == global_slot)
    }
}

/// Exact stacked expectations computed by full correlation-matrix transport,
/// independent of the row-wise map assembly. This is the oracle route in
/// tests and the input for noiseless reconstruction checks.
pub fn exact_stacked_expectations(
    ensemble: &QuenchEnsemble,
    c0: &CorrelationMatrix,
    c_anc: &CorrelationMatrix,
    row_sites: &[usize],
) -> Result<Array1<f64>> {
    let c_tot = embed(c0, ensemble.system_sites(), c_anc, ensemble.n_total())?;
    let per = row_sites.len();
    let mut z = Array1::zeros(ensemble.len() * per);
    let values: Result<Vec<Array1<f64>>> = (0..ensemble.len())
        .into_par_iter()
        .map(|s| {
            let u = ensemble.propagator(s)?;
            let c_s = evolve_correlations(&c_tot, &u)?;
            let p = ensemble.probability(s);
            Ok(Array1::from_iter(
                row_sites.iter().map(|&j| p * c_s.data()[[j, j]].re),
            ))
        })
        .collect();
    for (s, block) in values?.into_iter().enumerate() {
        z.slice_mut(s![s * per..(s + 1) * per]).assign(&block);
    }
    Ok(z)
}

/// Block-diagonal occupation noise `W = (+)_s p_s W_s`.
///
/// `W_s` is the exact occupation covariance of the Gaussian state
/// `U_s^* ((I/2) (+) C_anc) U_s^T`, the plug-in state with a maximally mixed
/// system.
#[derive(Debug, Clone)]
pub struct NoiseMatrix {
    blocks: Vec<Array2<f64>>,
    probs: Vec<f64>,
}

/// Occupation covariance of a Gaussian state: `delta_jj' C_jj - |C_jj'|^2`.
pub fn occupation_covariance(c: &CorrelationMatrix) -> Array2<f64> {
    let n = c.dim();
    let mut w = Array2::zeros((n, n));
    for j in 0..n {
        for k in 0..n {
            let mut v = -c.data()[[j, k]].norm_sqr();
            if j == k {
                v += c.data()[[j, j]].re;
            }
            w[[j, k]] = v;
        }
    }
    w
}

impl NoiseMatrix {
    /// Build the noise blocks for an ensemble and a known ancilla state.
    pub fn build(ensemble: &QuenchEnsemble, c_anc: &CorrelationMatrix) -> Result<Self> {
        if c_anc.dim() != ensemble.n_ancilla() {
            return Err(Error::InvalidArgument(format!(
                "ancilla state has {} sites but the ensemble reserves {}",
                c_anc.dim(),
                ensemble.n_ancilla()
            )));
        }
        let plug_in = embed(
            &CorrelationMatrix::maximally_mixed(ensemble.n_system()),
            ensemble.system_sites(),
            c_anc,
            ensemble.n_total(),
        )?;
        let blocks: Result<Vec<Array2<f64>>> = (0..ensemble.len())
            .into_par_iter()
            .map(|s| {
                let u = ensemble.propagator(s)?;
                let c_bar = evolve_correlations(&plug_in, &u)?;
                Ok(occupation_covariance(&c_bar))
            })
            .collect();
        Ok(NoiseMatrix {
            blocks: blocks?,
            probs: ensemble.members().iter().map(|(p, _)| *p).collect(),
        })
    }

    /// Wrap raw covariance blocks; intended for synthetic tests.
    pub fn from_blocks(blocks: Vec<Array2<f64>>, probs: Vec<f64>) -> Self {
        NoiseMatrix { blocks, probs }
    }

    pub fn n_members(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    /// The unweighted covariance block `W_s`.
    pub fn block(&self, s: usize) -> &Array2<f64> {
        &self.blocks[s]
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.probs[s]
    }

    /// `b^T W b` over the stacked vector, without any floor.
    pub fn quadratic_form(&self, b: &Array1<f64>) -> f64 {
        let per = self.block_dim();
        let mut acc = 0.0;
        for (s, block) in self.blocks.iter().enumerate() {
            let seg = b.slice(s![s * per..(s + 1) * per]);
            acc += self.probs[s] * seg.dot(&block.dot(&seg));
        }
        acc
    }

    /// Inverses of the floored weighted blocks `(p_s W_s + floor I)^{-1}`.
    fn floored_inverses(&self, w_floor: f64) -> Result<Vec<Array2<f64>>> {
        self.blocks
            .par_iter()
            .zip(self.probs.par_iter())
            .map(|(block, &p)| {
                let n = block.nrows();
                let mut a = block * p;
                for j in 0..n {
                    a[[j, j]] += w_floor;
                }
                let f = a.factorizec(UPLO::Lower).map_err(|e| {
                    Error::Numerical(format!(
                        "noise block is not positive definite even with floor {w_floor:.1e}: {e}"
                    ))
                })?;
                Ok(f.invc()?)
            })
            .collect()
    }
}

/// A left inverse of the measurement map, with the Gram data needed for
/// variance queries.
pub struct InverseBundle {
    g: Array2<f64>,
    basis: Option<Array2<f64>>,
    l: Array2<f64>,
    chol: CholeskyFactorized<ndarray::OwnedRepr<f64>>,
    sing_vals: Option<Array1<f64>>,
    delta: Option<f64>,
    w_floor: f64,
    n_slots: usize,
    rows_per_member: usize,
    ensemble_hash: String,
}

impl std::fmt::Debug for InverseBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InverseBundle")
            .field("n_slots", &self.n_slots)
            .field("retained", &self.retained_rank())
            .field("delta", &self.delta)
            .field("w_floor", &self.w_floor)
            .finish()
    }
}

impl InverseBundle {
    /// Retained subspace dimension.
    pub fn retained_rank(&self) -> usize {
        self.basis.as_ref().map_or(self.n_slots, |b| b.ncols())
    }

    /// The left inverse `G`, full slot space by stacked rows.
    pub fn g(&self) -> &Array2<f64> {
        &self.g
    }

    /// Orthonormal basis of the retained subspace; `None` means full space.
    pub fn basis(&self) -> Option<&Array2<f64>> {
        self.basis.as_ref()
    }

    /// The Gram matrix `F^T (W + floor)^{-1} F` on the retained subspace.
    pub fn gram(&self) -> &Array2<f64> {
        &self.l
    }

    /// Retained singular values of the stacked weighted map, when the bundle
    /// came from an SVD truncation.
    pub fn singular_values(&self) -> Option<&Array1<f64>> {
        self.sing_vals.as_ref()
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn w_floor(&self) -> f64 {
        self.w_floor
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn rows(&self) -> usize {
        self.g.ncols()
    }

    pub fn rows_per_member(&self) -> usize {
        self.rows_per_member
    }

    pub fn ensemble_hash(&self) -> &str {
        &self.ensemble_hash
    }

    /// Retained coordinates of a slot vector, plus the norm of the component
    /// the inverse cannot recover.
    pub fn project(&self, o: &Array1<f64>) -> (Array1<f64>, f64) {
        match &self.basis {
            None => (o.clone(), 0.0),
            Some(v) => {
                let coords = v.t().dot(o);
                let back = v.dot(&coords);
                let mut lost = 0.0;
                for (a, b) in o.iter().zip(back.iter()) {
                    lost += (a - b) * (a - b);
                }
                (coords, lost.sqrt())
            }
        }
    }

    /// Solve `L y = rhs` on the retained subspace.
    pub fn solve_gram(&self, rhs: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.chol.solvec(rhs)?)
    }

    /// Inverse of the retained Gram matrix.
    pub fn gram_inverse(&self) -> Result<Array2<f64>> {
        Ok(self.chol.invc()?)
    }

    /// `G z` on the full slot space.
    pub fn apply_g(&self, z: &Array1<f64>) -> Array1<f64> {
        self.g.dot(z)
    }

    /// `G^T o`: the per-row estimator coefficients of an observable.
    pub fn apply_g_transpose(&self, o: &Array1<f64>) -> Array1<f64> {
        self.g.t().dot(o)
    }

    /// Variance-optimal inverse `G = L^{-1} F^T W~^{-1}` with
    /// `L = F^T W~^{-1} F` and `W~ = W + w_floor I`.
    ///
    /// Errors with a deficiency report when `L` is singular at working
    /// precision.
    pub fn optimal_inverse(
        map: &MeasurementMap,
        noise: &NoiseMatrix,
        w_floor: f64,
    ) -> Result<Self> {
        if noise.n_members() != map.n_members() || noise.block_dim() != map.rows_per_member() {
            return Err(Error::InvalidArgument(
                "noise matrix does not match the measurement map".into(),
            ));
        }
        let n = map.n_slots();
        let winv = noise.floored_inverses(w_floor)?;
        // M_s = (p_s W_s + floor)^{-1} (p_s F_s); L = sum_s (p_s F_s)^T M_s.
        let partials: Vec<(Array2<f64>, Array2<f64>)> = (0..map.n_members())
            .into_par_iter()
            .map(|s| {
                let m_s = winv[s].dot(map.block(s));
                let l_s = map.block(s).t().dot(&m_s);
                (m_s, l_s)
            })
            .collect();
        let mut l = Array2::zeros((n, n));
        for (_, l_s) in &partials {
            l += l_s;
        }
        // Symmetrize away accumulation round-off.
        l = (&l + &l.t()) * 0.5;
        let chol = factorize_pd(&l).map_err(|_| deficiency_report(&l))?;
        let l_inv = chol.invc()?;
        // G = L^{-1} M^T assembled block by block.
        let rows = map.rows();
        let per = map.rows_per_member();
        let mut g = Array2::zeros((n, rows));
        for (s, (m_s, _)) in partials.iter().enumerate() {
            g.slice_mut(s![.., s * per..(s + 1) * per])
                .assign(&l_inv.dot(&m_s.t()));
        }
        Ok(InverseBundle {
            g,
            basis: None,
            l,
            chol,
            sing_vals: None,
            delta: None,
            w_floor,
            n_slots: n,
            rows_per_member: per,
            ensemble_hash: map.ensemble_hash().to_string(),
        })
    }

    /// Moore-Penrose pseudoinverse with relative singular-value truncation.
    ///
    /// Singular values below `delta * sigma_max` are discarded (values
    /// exactly at the threshold are retained). Without a noise matrix the
    /// Gram data corresponds to `W = I`;
    /// [`InverseBundle::pseudo_inverse_weighted`] attaches the physical noise
    /// so variance queries match the truncated estimator.
    pub fn pseudo_inverse(map: &MeasurementMap, delta: f64) -> Result<Self> {
        Self::pseudo_impl(map, None, delta, 0.0)
    }

    /// Truncated pseudoinverse with the Gram matrix `F^T (W + floor)^{-1} F`
    /// restricted to the retained subspace.
    pub fn pseudo_inverse_weighted(
        map: &MeasurementMap,
        noise: &NoiseMatrix,
        delta: f64,
        w_floor: f64,
    ) -> Result<Self> {
        Self::pseudo_impl(map, Some(noise), delta, w_floor)
    }

    fn pseudo_impl(
        map: &MeasurementMap,
        noise: Option<&NoiseMatrix>,
        delta: f64,
        w_floor: f64,
    ) -> Result<Self> {
        let f = map.stacked();
        let (g, v_r, s_r) = truncated_pinv(&f, delta)?;
        let retained = s_r.len();
        let n = map.n_slots();
        // Gram matrix on the retained subspace.
        let l = match noise {
            None => Array2::from_diag(&s_r.mapv(|x| x * x)),
            Some(w) => {
                let winv = w.floored_inverses(w_floor)?;
                let mut l = Array2::zeros((retained, retained));
                for s_idx in 0..map.n_members() {
                    let y = map.block(s_idx).dot(&v_r);
                    l += &y.t().dot(&winv[s_idx].dot(&y));
                }
                (&l + &l.t()) * 0.5
            }
        };
        let chol = l.factorizec(UPLO::Lower).map_err(|e| {
            Error::Numerical(format!("retained Gram matrix failed to factorize: {e}"))
        })?;
        Ok(InverseBundle {
            g,
            basis: Some(v_r),
            l,
            chol,
            sing_vals: Some(s_r),
            delta: Some(delta),
            w_floor,
            n_slots: n,
            rows_per_member: map.rows_per_member(),
            ensemble_hash: map.ensemble_hash().to_string(),
        })
    }

    #[cfg(test)]
    pub(crate) fn replace_g_for_test(&mut self, g: Array2<f64>) {
        self.g = g;
    }

    /// Synthetic bundle with a prescribed Gram matrix; crate-internal test
    /// helper for exercising the variance queries on known spectra.
    #[cfg(test)]
    pub(crate) fn from_gram_for_test(l: Array2<f64>) -> Self {
        let n = l.nrows();
        let chol = l.factorizec(UPLO::Lower).expect("test Gram must be PD");
        InverseBundle {
            g: Array2::zeros((n, n)),
            basis: None,
            l,
            chol,
            sing_vals: None,
            delta: None,
            w_floor: 0.0,
            n_slots: n,
            rows_per_member: n,
            ensemble_hash: "synthetic".into(),
        }
    }
}

/// Truncated pseudoinverse of a stacked matrix: singular values below
/// `delta * sigma_max` are discarded, values exactly at the threshold are
/// retained. Returns `(G, V_r, sigma_r)`.
pub(crate) fn truncated_pinv(
    f: &Array2<f64>,
    delta: f64,
) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    let (u_opt, sv, vt_opt) = f.svddc(JobSvd::Some)?;
    let u = u_opt.expect("left singular vectors requested");
    let vt = vt_opt.expect("right singular vectors requested");
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return Err(Error::RankDeficient(
            "measurement map is identically zero".into(),
        ));
    }
    let retained = sv.iter().take_while(|&&s| s >= delta * sigma_max).count();
    if retained == 0 {
        return Err(Error::RankDeficient(
            "no singular values survive the truncation".into(),
        ));
    }
    let v_r = vt.slice(s![..retained, ..]).t().to_owned();
    let u_r = u.slice(s![.., ..retained]);
    let s_r = sv.slice(s![..retained]).to_owned();
    // G = V_r Sigma_r^{-1} U_r^T.
    let mut scaled_ut = u_r.t().to_owned();
    for (k, mut row) in scaled_ut.axis_iter_mut(Axis(0)).enumerate() {
        row /= s_r[k];
    }
    Ok((v_r.dot(&scaled_ut), v_r, s_r))
}

/// Numerical rank report of the stacked map.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub rank: usize,
    pub n_slots: usize,
    pub rows: usize,
    pub sigma_max: f64,
    pub threshold: f64,
    pub singular_values: Array1<f64>,
}

impl RankReport {
    /// Whether the map can resolve `n_obs` independent observables.
    pub fn resolves(&self, n_obs: usize) -> bool {
        self.rank >= n_obs
    }

    pub fn full_rank(&self) -> bool {
        self.rank == self.n_slots
    }
}

/// Numerical rank of `F` at a relative singular-value threshold.
pub fn rank_check(map: &MeasurementMap, threshold: f64) -> Result<RankReport> {
    let f = map.stacked();
    let (_, sv, _) = f.svddc(JobSvd::None)?;
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    let rank = if sigma_max == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s >= threshold * sigma_max).count()
    };
    Ok(RankReport {
        rank,
        n_slots: map.n_slots(),
        rows: map.rows(),
        sigma_max,
        threshold,
        singular_values: sv,
    })
}

/// A localized inverse around one target site (size-independent memory).
#[derive(Debug)]
pub struct LocalizedInverse {
    map: MeasurementMap,
    bundle: InverseBundle,
    target: usize,
    ell_in: usize,
    ell_out: usize,
}

/// Restrict each `F_s` to measurement rows in the Chebyshev patch
/// `K_target^{ell_out}` and to Hermitian slots supported on
/// `K_target^{ell_in}`, then invert by truncated SVD.
///
/// Useful accuracy requires the column patch to cover the backward light
/// cone of the kept rows, so `ell_in` should be at least roughly
/// `ell_out + 2 t_max`. The returned inverse estimates only correlations
/// inside the column patch.
pub fn truncated_local_map(
    ensemble: &QuenchEnsemble,
    c_anc: &CorrelationMatrix,
    target: usize,
    ell_in: usize,
    ell_out: usize,
    delta: f64,
) -> Result<LocalizedInverse> {
    let sys_index_of: std::collections::HashMap<usize, usize> = ensemble
        .system_sites()
        .iter()
        .enumerate()
        .map(|(idx, &site)| (site, idx))
        .collect();
    if !sys_index_of.contains_key(&target) {
        return Err(Error::InvalidArgument(format!(
            "target site {target} is not a system site"
        )));
    }
    let row_sites = ensemble.lattice().chebyshev_patch(target, ell_out);
    let in_patch = ensemble.lattice().chebyshev_patch(target, ell_in);
    let in_sys: Vec<usize> = in_patch
        .iter()
        .filter_map(|site| sys_index_of.get(site).copied())
        .collect();
    if in_sys.is_empty() {
        return Err(Error::RankDeficient(
            "inner patch contains no system sites".into(),
        ));
    }
    let basis = HermitianBasis::new(ensemble.n_system());
    let slots = basis.slots_supported_on(&in_sys);
    let map = MeasurementMap::build(ensemble, c_anc, row_sites, slots, None)?;
    if map.rows() < map.n_slots() {
        return Err(Error::RankDeficient(format!(
            "patch provides {} rows for {} slots; enlarge ell_out or the ensemble",
            map.rows(),
            map.n_slots()
        )));
    }
    let bundle = InverseBundle::pseudo_inverse(&map, delta)?;
    Ok(LocalizedInverse {
        map,
        bundle,
        target,
        ell_in,
        ell_out,
    })
}

impl LocalizedInverse {
    pub fn map(&self) -> &MeasurementMap {
        &self.map
    }

    pub fn bundle(&self) -> &InverseBundle {
        &self.bundle
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn ell_in(&self) -> usize {
        self.ell_in
    }

    pub fn ell_out(&self) -> usize {
        self.ell_out
    }

    /// Estimate the retained slot coefficients from stacked patch data.
    pub fn estimate_from_data(&self, z_patch: &Array1<f64>) -> Result<Array1<f64>> {
        if z_patch.len() != self.map.rows() {
            return Err(Error::InvalidArgument(format!(
                "expected {} stacked patch values, got {}",
                self.map.rows(),
                z_patch.len()
            )));
        }
        Ok(self.bundle.apply_g(&(z_patch - &self.map.d_anc())))
    }

    /// Read a complex correlation element out of estimated coefficients.
    pub fn element(&self, coeffs: &Array1<f64>, a: usize, b: usize) -> Result<Complex64> {
        let basis = HermitianBasis::new(self.map.n_system());
        if a == b {
            let pos = self.map.slot_position(basis.diag_slot(a)).ok_or_else(|| {
                Error::RankDeficient(format!("density slot of site {a} is outside the patch"))
            })?;
            return Ok(Complex64::new(coeffs[pos], 0.0));
        }
        let (lo, hi, conjugate) = if a < b { (a, b, false) } else { (b, a, true) };
        let sym = self.map.slot_position(basis.sym_slot(lo, hi));
        let asym = self.map.slot_position(basis.asym_slot(lo, hi));
        match (sym, asym) {
            (Some(ps), Some(pa)) => {
                let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
                let z = Complex64::new(inv_sqrt2 * coeffs[ps], inv_sqrt2 * coeffs[pa]);
                Ok(if conjugate { z.conj() } else { z })
            }
            _ => Err(Error::RankDeficient(format!(
                "pair ({a}, {b}) is outside the localized patch"
            ))),
        }
    }
}

/// Reconstruction-bias metrics of `G F_err - I` on the retained subspace.
#[derive(Debug, Clone, Copy)]
pub struct BiasMetrics {
    /// Largest singular value; bounds the worst-case reconstruction error.
    pub spectral_norm: f64,
    /// Largest absolute eigenvalue of the (generally non-normal) deviation.
    pub spectral_radius: f64,
}

/// Deviation of a perturbed forward map from the identity under a fixed
/// inverse: `||G F_err - I||` restricted to the retained subspace.
pub fn bias_metric(bundle: &InverseBundle, f_err: &MeasurementMap) -> Result<BiasMetrics> {
    if f_err.rows() != bundle.rows() || f_err.n_slots() != bundle.n_slots() {
        return Err(Error::InvalidArgument(
            "perturbed map shape does not match the inverse".into(),
        ));
    }
    let gf = match bundle.basis() {
        None => {
            let full = f_err.stacked();
            bundle.g().dot(&full)
        }
        Some(v) => {
            let fv = f_err.apply_matrix(v);
            v.t().dot(&bundle.g().dot(&fv))
        }
    };
    let r = gf.nrows();
    let mut dev = gf;
    for i in 0..r {
        dev[[i, i]] -= 1.0;
    }
    let (_, sv, _) = dev.svddc(JobSvd::None)?;
    let spectral_norm = sv.iter().cloned().fold(0.0f64, f64::max);
    let eigvals = {
        use ndarray_linalg::EigVals;
        dev.eigvals()?
    };
    let spectral_radius = eigvals.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    Ok(BiasMetrics {
        spectral_norm,
        spectral_radius,
    })
}

/// Plain Moore-Penrose pseudoinverse via SVD, used as an independent
/// reference in tests and for the unweighted-regression comparison.
pub fn moore_penrose(f: &Array2<f64>, rel_tol: f64) -> Result<Array2<f64>> {
    let (u_opt, sv, vt_opt) = f.svddc(JobSvd::Some)?;
    let u = u_opt.expect("U requested");
    let vt = vt_opt.expect("VT requested");
    let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
    let k = sv.iter().filter(|&&s| s > rel_tol * sigma_max).count();
    let mut scaled_ut = u.slice(s![.., ..k]).t().to_owned();
    for (i, mut row) in scaled_ut.axis_iter_mut(Axis(0)).enumerate() {
        row /= sv[i];
    }
    Ok(vt.slice(s![..k, ..]).t().dot(&scaled_ut))
}

/// Invert a square matrix; thin wrapper kept for the square-`F` special case.
pub fn dense_inverse(f: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(f.to_owned().inv_into()?)
}
