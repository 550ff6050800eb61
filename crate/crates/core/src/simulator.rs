//! Exact simulation of the experiment: determinantal occupation sampling,
//! dataset generation, and the linear estimators.
//!
//! Occupation snapshots of a Gaussian state are drawn site by site: the
//! occupation probability of the next site is the current kernel diagonal,
//! and conditioning on the outcome is a rank-one Schur-complement update of
//! the kernel on the remaining sites. The chain is exact, so the full joint
//! distribution can be cross-checked against void probabilities
//! `det(I - C_A)`.

use ndarray::{Array1, Array2};
use ndarray_linalg::Determinant;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::QuenchEnsemble;
use crate::gaussian::{
    embed, evolve_correlations, vec_to_hermitian, CorrelationMatrix, ObservableVec,
};
use crate::tomo::{InverseBundle, LocalizedInverse};
use crate::{Error, Result};

/// Probabilities may stray this far outside `[0, 1]` before the kernel is
/// declared invalid.
const PROBABILITY_SLACK: f64 = 1e-8;

/// Walk the conditional chain once. Returns the visited outcomes and the
/// product of conditional probabilities along the walk. With a `pattern`
/// the outcomes are forced; otherwise they are sampled from `rng`.
fn conditional_chain<R: Rng + ?Sized>(
    c: &CorrelationMatrix,
    pattern: Option<&[u8]>,
    mut rng: Option<&mut R>,
) -> Result<(Vec<u8>, f64)> {
    let n = c.dim();
    let mut kernel = c.data().clone();
    let mut outcome = vec![0u8; n];
    let mut probability = 1.0f64;
    for k in 0..n {
        let raw = kernel[[k, k]].re;
        if !(-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&raw) {
            return Err(Error::Numerical(format!(
                "conditional occupation probability {raw:.3e} at site {k} is outside [0, 1]; \
                 the kernel is invalid or unstable"
            )));
        }
        let p = raw.clamp(0.0, 1.0);
        let n_k = match pattern {
            Some(bits) => bits[k],
            None => {
                let rng = rng.as_deref_mut().expect("sampling requires an rng");
                u8::from(rng.random::<f64>() < p)
            }
        };
        outcome[k] = n_k;
        probability *= if n_k == 1 { p } else { 1.0 - p };
        if probability == 0.0 {
            // Impossible branch of a forced pattern; no need to condition.
            return Ok((outcome, 0.0));
        }
        if k + 1 == n {
            break;
        }
        // Schur-complement conditioning of the remaining sites.
        let denom = if n_k == 1 {
            kernel[[k, k]]
        } else {
            kernel[[k, k]] - Complex64::new(1.0, 0.0)
        };
        let col: Vec<Complex64> = (k + 1..n).map(|i| kernel[[i, k]]).collect();
        let row: Vec<Complex64> = (k + 1..n).map(|j| kernel[[k, j]]).collect();
        for (di, i) in (k + 1..n).enumerate() {
            for (dj, j) in (k + 1..n).enumerate() {
                kernel[[i, j]] -= col[di] * row[dj] / denom;
            }
        }
    }
    Ok((outcome, probability))
}

/// Draw one occupation snapshot from the Gaussian state with kernel `c`.
pub fn sample_occupations<R: Rng + ?Sized>(
    c: &CorrelationMatrix,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let (outcome, _) = conditional_chain(c, None, Some(rng))?;
    Ok(outcome)
}

/// Exact probability of a full occupation pattern under the kernel `c`.
pub fn pattern_probability(c: &CorrelationMatrix, pattern: &[u8]) -> Result<f64> {
    if pattern.len() != c.dim() {
        return Err(Error::InvalidArgument(format!(
            "pattern has {} bits for a {}-site kernel",
            pattern.len(),
            c.dim()
        )));
    }
    let (_, p) = conditional_chain::<ChaCha8Rng>(c, Some(pattern), None)?;
    Ok(p)
}

/// Probability that every site in `sites` is empty: `det(I - C_A)`.
pub fn void_probability(c: &CorrelationMatrix, sites: &[usize]) -> Result<f64> {
    if sites.is_empty() {
        return Ok(1.0);
    }
    let k = sites.len();
    let mut sub = Array2::zeros((k, k));
    for (i, &a) in sites.iter().enumerate() {
        for (j, &b) in sites.iter().enumerate() {
            sub[[i, j]] = -c.data()[[a, b]];
        }
        sub[[i, i]] += Complex64::new(1.0, 0.0);
    }
    let det = sub.det()?;
    Ok(det.re)
}

/// Pattern probability by inclusion-exclusion over void probabilities.
///
/// Exponential in the number of occupied sites; this is the independent
/// oracle used to certify the conditional chain.
pub fn pattern_probability_by_voids(c: &CorrelationMatrix, pattern: &[u8]) -> Result<f64> {
    let occupied: Vec<usize> = pattern
        .iter()
        .enumerate()
        .filter_map(|(j, &b)| (b == 1).then_some(j))
        .collect();
    let empty: Vec<usize> = pattern
        .iter()
        .enumerate()
        .filter_map(|(j, &b)| (b == 0).then_some(j))
        .collect();
    let t = occupied.len();
    let mut total = 0.0;
    for mask in 0..(1u64 << t) {
        let mut sites = empty.clone();
        let mut bits = 0;
        for (idx, &site) in occupied.iter().enumerate() {
            if mask >> idx & 1 == 1 {
                sites.push(site);
                bits += 1;
            }
        }
        let sign = if bits % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * void_probability(c, &sites)?;
    }
    Ok(total)
}

/// One experimental record: which quench ran and what the microscope saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotRecord {
    /// 1-based ensemble member label.
    pub s: u32,
    /// Binary occupations over all lattice sites.
    pub occupations: Vec<u8>,
}

/// The raw simulated (or ingested) experimental data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotDataset {
    pub records: Vec<ShotRecord>,
    pub seed: u64,
    pub ensemble_hash: String,
    pub n_total: usize,
}

impl ShotDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Run the experiment `r` times: draw a quench, evolve, snapshot.
///
/// Per-record RNG streams are derived from `(seed, record index)`, so the
/// dataset is bit-identical for any thread count.
pub fn run_experiment(
    c0: &CorrelationMatrix,
    c_anc: &CorrelationMatrix,
    ensemble: &QuenchEnsemble,
    r: usize,
    seed: u64,
) -> Result<ShotDataset> {
    if r == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }
    let c_tot = embed(c0, ensemble.system_sites(), c_anc, ensemble.n_total())?;
    // Kernels per member are reused across all shots.
    let kernels: Result<Vec<CorrelationMatrix>> = (0..ensemble.len())
        .into_par_iter()
        .map(|s| {
            let u = ensemble.propagator(s)?;
            evolve_correlations(&c_tot, &u)
        })
        .collect();
    let kernels = kernels?;
    let records: Result<Vec<ShotRecord>> = (0..r)
        .into_par_iter()
        .map(|rec| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rec as u64 + 1);
            let s = ensemble.draw_member(&mut rng);
            let occupations = sample_occupations(&kernels[s], &mut rng)?;
            Ok(ShotRecord {
                s: (s + 1) as u32,
                occupations,
            })
        })
        .collect();
    Ok(ShotDataset {
        records: records?,
        seed,
        ensemble_hash: ensemble.content_hash(),
        n_total: ensemble.n_total(),
    })
}

/// A scalar estimate with its sampling error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub value: f64,
    pub stderr: f64,
    pub r_used: usize,
}

/// A complex correlation-element estimate combined from its Hermitian parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub r_used: usize,
}

impl ComplexEstimate {
    /// Quadrature-combined standard error of the complex value.
    pub fn stderr(&self) -> f64 {
        (self.stderr_re * self.stderr_re + self.stderr_im * self.stderr_im).sqrt()
    }
}

fn check_compatible(dataset: &ShotDataset, bundle: &InverseBundle) -> Result<()> {
    if dataset.ensemble_hash != bundle.ensemble_hash() {
        return Err(Error::InvalidArgument(format!(
            "dataset was generated for ensemble {} but the inverse was built for {}",
            dataset.ensemble_hash,
            bundle.ensemble_hash()
        )));
    }
    if bundle.rows_per_member() != dataset.n_total {
        return Err(Error::InvalidArgument(
            "inverse bundle does not act on full-lattice snapshots".into(),
        ));
    }
    Ok(())
}

/// Per-shot estimator values for an observable: `b . z_r - mu` with
/// `b = G^T o` and `mu = b . d_anc`.
fn per_shot_values(
    dataset: &ShotDataset,
    bundle: &InverseBundle,
    d_anc: &Array1<f64>,
    obs: &ObservableVec,
) -> Result<Vec<f64>> {
    check_compatible(dataset, bundle)?;
    if obs.dim() != bundle.n_slots() {
        return Err(Error::InvalidArgument(format!(
            "observable has {} slots, inverse acts on {}",
            obs.dim(),
            bundle.n_slots()
        )));
    }
    let b = bundle.apply_g_transpose(obs.coeffs());
    if d_anc.len() != b.len() {
        return Err(Error::InvalidArgument("d_anc length mismatch".into()));
    }
    let mu = b.dot(d_anc);
    let per = dataset.n_total;
    Ok(dataset
        .records
        .iter()
        .map(|rec| {
            let base = (rec.s as usize - 1) * per;
            let mut acc = 0.0;
            for (j, &bit) in rec.occupations.iter().enumerate() {
                if bit == 1 {
                    acc += b[base + j];
                }
            }
            acc - mu
        })
        .collect())
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    (mean, (var / r as f64).sqrt())
}

/// Estimate a Hermitian observable from the dataset.
pub fn estimate_observable(
    dataset: &ShotDataset,
    bundle: &InverseBundle,
    d_anc: &Array1<f64>,
    obs: &ObservableVec,
) -> Result<EstimateResult> {
    let values = per_shot_values(dataset, bundle, d_anc, obs)?;
    let (value, stderr) = mean_and_stderr(&values);
    Ok(EstimateResult {
        value,
        stderr,
        r_used: values.len(),
    })
}

/// Estimate the complex correlation element `C_ab` (with `a < b`) by
/// combining its two Hermitian parts.
pub fn estimate_matrix_element(
    dataset: &ShotDataset,
    bundle: &InverseBundle,
    d_anc: &Array1<f64>,
    a: usize,
    b: usize,
) -> Result<ComplexEstimate> {
    let n = (bundle.n_slots() as f64).sqrt().round() as usize;
    let (re_obs, im_obs) = ObservableVec::matrix_element_parts(n, a, b);
    let re = estimate_observable(dataset, bundle, d_anc, &re_obs)?;
    let im = estimate_observable(dataset, bundle, d_anc, &im_obs)?;
    Ok(ComplexEstimate {
        value: Complex64::new(re.value, im.value),
        stderr_re: re.stderr,
        stderr_im: im.stderr,
        r_used: re.r_used,
    })
}

/// Reconstruct the full correlation matrix: `Y_mean = G (z_bar - d_anc)`.
///
/// The output is Hermitian by construction of the real-basis representation.
pub fn estimate_correlation_matrix(
    dataset: &ShotDataset,
    bundle: &InverseBundle,
    d_anc: &Array1<f64>,
) -> Result<CorrelationMatrix> {
    check_compatible(dataset, bundle)?;
    let z_bar = empirical_mean_data(dataset, bundle.rows());
    let x = bundle.apply_g(&(&z_bar - d_anc));
    let m = vec_to_hermitian(&x)?;
    CorrelationMatrix::from_matrix(m)
}

/// Empirical mean of the stacked data vector `z = n (x) e_s`.
pub fn empirical_mean_data(dataset: &ShotDataset, rows: usize) -> Array1<f64> {
    let per = dataset.n_total;
    let mut z = Array1::zeros(rows);
    for rec in &dataset.records {
        let base = (rec.s as usize - 1) * per;
        for (j, &bit) in rec.occupations.iter().enumerate() {
            if bit == 1 {
                z[base + j] += 1.0;
            }
        }
    }
    z / dataset.len() as f64
}

/// Estimate the localized patch coefficients from a dataset by restricting
/// each snapshot to the patch rows.
pub fn estimate_localized(
    dataset: &ShotDataset,
    localized: &LocalizedInverse,
) -> Result<Array1<f64>> {
    if dataset.ensemble_hash != localized.bundle().ensemble_hash() {
        return Err(Error::InvalidArgument(
            "dataset and localized inverse come from different ensembles".into(),
        ));
    }
    let row_sites = localized.map().row_sites();
    let per = row_sites.len();
    let mut z = Array1::zeros(localized.map().rows());
    for rec in &dataset.records {
        let base = (rec.s as usize - 1) * per;
        for (k, &site) in row_sites.iter().enumerate() {
            if rec.occupations[site] == 1 {
                z[base + k] += 1.0;
            }
        }
    }
    z /= dataset.len() as f64;
    localized.estimate_from_data(&z)
}
