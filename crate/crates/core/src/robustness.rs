//! Bias under miscalibrated quench Hamiltonians.
//!
//! The inverse `G` is built for the nominal ensemble; the experiment runs
//! with on-site disorder `H + diag(xi)`, `xi ~ N(0, nu)`. The worst-case
//! reconstruction bias is the spectral norm of `G F_err - I` restricted to
//! the retained subspace. One disorder draw perturbs every ensemble member
//! within a trial (a systematic miscalibration, not fresh noise per quench).

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::QuenchEnsemble;
use crate::gaussian::{CorrelationMatrix, SingleParticleHamiltonian};
use crate::tomo::{bias_metric, BiasMetrics, InverseBundle, MeasurementMap, NoiseMatrix};
use crate::{Error, Result};

/// Add i.i.d. Gaussian on-site disorder of variance `nu` to the diagonal.
pub fn perturb_hamiltonian<R: rand::Rng + ?Sized>(
    h: &SingleParticleHamiltonian,
    nu: f64,
    rng: &mut R,
) -> Result<SingleParticleHamiltonian> {
    let shift = diagonal_disorder(h.dim(), nu, rng)?;
    Ok(h.with_diagonal_shift(&shift))
}

/// One disorder realization, shared by every member of an ensemble.
pub fn diagonal_disorder<R: rand::Rng + ?Sized>(
    n: usize,
    nu: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if nu < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "disorder variance must be non-negative, got {nu}"
        )));
    }
    if nu == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, nu.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("bad disorder parameters: {e}")))?;
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

/// The perturbed stacked map: every member evolves under its nominal
/// parameters plus the shared diagonal disorder.
pub fn perturbed_forward_map(
    ensemble: &QuenchEnsemble,
    c_anc: &CorrelationMatrix,
    shift: &[f64],
) -> Result<MeasurementMap> {
    if shift.len() != ensemble.n_total() {
        return Err(Error::InvalidArgument(
            "disorder vector does not match the lattice".into(),
        ));
    }
    let mut disordered = ensemble.clone();
    disordered.set_diagonal_disorder(shift.to_vec());
    MeasurementMap::stack_forward(&disordered, c_anc, None)
}

/// One sweep point: the bias metrics of a single disorder realization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub nu: f64,
    pub trial: usize,
    pub spectral_norm: f64,
    pub spectral_radius: f64,
}

/// Results of a robustness sweep at fixed scheme and system size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessSweep {
    pub points: Vec<SweepPoint>,
    pub nu_values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl RobustnessSweep {
    /// Maximum spectral-norm metric across trials at one disorder strength.
    pub fn max_metric(&self, nu: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.nu == nu)
            .map(|p| p.spectral_norm)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        }
    }

    /// Mean spectral-norm metric across trials at one disorder strength.
    pub fn mean_metric(&self, nu: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.nu == nu)
            .map(|p| p.spectral_norm)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Sweep disorder strengths for a fixed ensemble and inverse.
///
/// For each `(nu, trial)` one disorder draw perturbs every member, the
/// forward map is rebuilt, and `||G F_err - I||` is recorded. Trials use
/// seed-derived independent RNG streams and are reproducible regardless of
/// parallel scheduling.
pub fn robustness_sweep(
    ensemble: &QuenchEnsemble,
    c_anc: &CorrelationMatrix,
    bundle: &InverseBundle,
    nu_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RobustnessSweep> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut points = Vec::with_capacity(nu_values.len() * trials);
    for (iv, &nu) in nu_values.iter().enumerate() {
        // Trials are sequential: each rebuild already parallelizes over
        // ensemble members internally.
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((iv * trials + trial) as u64 + 1);
            let shift = diagonal_disorder(ensemble.n_total(), nu, &mut rng)?;
            let f_err = perturbed_forward_map(ensemble, c_anc, &shift)?;
            let metrics = bias_metric(bundle, &f_err)?;
            points.push(SweepPoint {
                nu,
                trial,
                spectral_norm: metrics.spectral_norm,
                spectral_radius: metrics.spectral_radius,
            });
        }
    }
    Ok(RobustnessSweep {
        points,
        nu_values: nu_values.to_vec(),
        trials,
        seed,
    })
}

/// A `(strength, phase)` scan entry for the global scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanChoice {
    pub strength: f64,
    pub phase: f64,
    pub max_metric_by_nu: Vec<(f64, f64)>,
}

/// Global-scheme sweep that scans quench parameters and keeps, per disorder
/// strength, the best-performing `(h, phi)` combination.
///
/// Returns the per-combination results plus the index of the combination
/// that is best overall (smallest worst-case metric across the sweep).
pub fn global_scan_sweep(
    n: usize,
    system_row: usize,
    h_values: &[f64],
    phi_values: &[f64],
    nu_values: &[f64],
    trials: usize,
    seed: u64,
    w_floor: f64,
) -> Result<(Vec<ScanChoice>, usize)> {
    let mut choices = Vec::new();
    for &h in h_values {
        for &phi in phi_values {
            let ens = QuenchEnsemble::global_scheme_with_potential(n, system_row, h, phi)?;
            let c_anc = CorrelationMatrix::vacuum(ens.n_ancilla());
            let map = MeasurementMap::stack_forward(&ens, &c_anc, None)?;
            let noise = NoiseMatrix::build(&ens, &c_anc)?;
            let bundle = match InverseBundle::optimal_inverse(&map, &noise, w_floor) {
                Ok(b) => b,
                // Some (h, phi) combinations are too symmetric to invert;
                // they simply drop out of the scan.
                Err(Error::RankDeficient(_)) => continue,
                Err(e) => return Err(e),
            };
            let sweep = robustness_sweep(&ens, &c_anc, &bundle, nu_values, trials, seed)?;
            let max_metric_by_nu = nu_values
                .iter()
                .map(|&nu| (nu, sweep.max_metric(nu).unwrap_or(f64::INFINITY)))
                .collect();
            choices.push(ScanChoice {
                strength: h,
                phase: phi,
                max_metric_by_nu,
            });
        }
    }
    if choices.is_empty() {
        return Err(Error::RankDeficient(
            "every scanned (h, phi) combination was rank deficient".into(),
        ));
    }
    let best_overall = (0..choices.len())
        .min_by(|&a, &b| {
            let worst_a = worst_over_nu(&choices[a]);
            let worst_b = worst_over_nu(&choices[b]);
            worst_a.partial_cmp(&worst_b).unwrap()
        })
        .unwrap();
    Ok((choices, best_overall))
}

fn worst_over_nu(choice: &ScanChoice) -> f64 {
    choice
        .max_metric_by_nu
        .iter()
        .map(|&(_, m)| m)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best metric per disorder strength across a scan (re-optimized per nu).
pub fn best_per_nu(choices: &[ScanChoice]) -> Vec<(f64, f64, usize)> {
    if choices.is_empty() {
        return Vec::new();
    }
    let n_nu = choices[0].max_metric_by_nu.len();
    (0..n_nu)
        .map(|k| {
            let nu = choices[0].max_metric_by_nu[k].0;
            let (idx, metric) = choices
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.max_metric_by_nu[k].1))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            (nu, metric, idx)
        })
        .collect()
}

/// Empirical upper-bound check: the metric bounds the reconstruction error
/// of any unit-norm state under the perturbed map.
pub fn bias_bound_defect(
    bundle: &InverseBundle,
    f_err: &MeasurementMap,
    metrics: &BiasMetrics,
    x: &Array1<f64>,
) -> f64 {
    let z = f_err.apply(x);
    let recovered = bundle.apply_g(&z);
    let (x_r, _) = bundle.project(x);
    let (rec_r, _) = bundle.project(&recovered);
    let mut err = 0.0;
    for (a, b) in rec_r.iter().zip(x_r.iter()) {
        err += (a - b) * (a - b);
    }
    let norm = x_r.dot(&x_r).sqrt();
    err.sqrt() - metrics.spectral_norm * norm
}
