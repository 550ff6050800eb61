//! Sample-complexity analytics: single-shot variances and repetition counts.
//!
//! For the variance-optimal inverse the single-shot variance of an
//! observable is `(o| L^{-1} |o)` with `L = F^T W^{-1} F`. Worst-case and
//! average-case figures are the extreme and mean eigenvalues of `L^{-1}`.
//! Truncated inverses restrict every query to the retained subspace.

use ndarray::{Array1, Array2};
use ndarray_linalg::{EigValsh, UPLO};
use serde::{Deserialize, Serialize};

use crate::gaussian::ObservableVec;
use crate::tomo::{InverseBundle, NoiseMatrix};
use crate::{Error, Result};

/// Which variance figure a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Observable,
    Worst,
    Average,
}

/// A single-shot variance together with the repetitions it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub kind: MetricKind,
    pub sigma2: f64,
    pub epsilon: f64,
    pub r_required: u64,
}

impl ComplexityReport {
    pub fn new(kind: MetricKind, sigma2: f64, epsilon: f64) -> Self {
        ComplexityReport {
            kind,
            sigma2,
            epsilon,
            r_required: samples_required(sigma2, epsilon, None),
        }
    }
}

/// Result of a per-observable variance query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaObservable {
    /// `(o| L^{-1} |o)` on the retained subspace.
    pub sigma2: f64,
    /// Norm of the observable component outside the retained subspace; the
    /// estimator cannot recover this part.
    pub unrecoverable: f64,
}

/// Single-shot variance of one observable via a Gram solve.
pub fn sigma_observable(bundle: &InverseBundle, obs: &ObservableVec) -> Result<SigmaObservable> {
    if obs.dim() != bundle.n_slots() {
        return Err(Error::InvalidArgument(format!(
            "observable has {} slots, bundle acts on {}",
            obs.dim(),
            bundle.n_slots()
        )));
    }
    let (coords, unrecoverable) = bundle.project(obs.coeffs());
    let solved = bundle.solve_gram(&coords)?;
    Ok(SigmaObservable {
        sigma2: coords.dot(&solved),
        unrecoverable,
    })
}

/// Worst-case single-shot variance over unit-norm observables:
/// `1 / lambda_min(L)` on the retained subspace.
pub fn sigma_worst(bundle: &InverseBundle) -> Result<f64> {
    let lambda = smallest_eigenvalue(bundle)?;
    if lambda <= f64::EPSILON * gram_scale(bundle) {
        return Err(Error::RankDeficient(format!(
            "smallest Gram eigenvalue {lambda:.3e} is at machine tolerance; \
             the worst-case variance is effectively infinite"
        )));
    }
    Ok(1.0 / lambda)
}

/// Worst-case variance over unit-norm observables supported on a slot
/// subset, e.g. nearest-neighbor observables only.
pub fn sigma_worst_subspace(bundle: &InverseBundle, slots: &[usize]) -> Result<f64> {
    if slots.is_empty() {
        return Err(Error::InvalidArgument("empty slot subset".into()));
    }
    let k = slots.len();
    let mut m = Array2::zeros((k, k));
    let mut projected = Vec::with_capacity(k);
    for &slot in slots {
        if slot >= bundle.n_slots() {
            return Err(Error::InvalidArgument(format!("slot {slot} out of range")));
        }
        let mut e = Array1::zeros(bundle.n_slots());
        e[slot] = 1.0;
        let (coords, _) = bundle.project(&e);
        projected.push(coords);
    }
    for (i, pi) in projected.iter().enumerate() {
        let solved = bundle.solve_gram(pi)?;
        for (j, pj) in projected.iter().enumerate() {
            m[[i, j]] = pj.dot(&solved);
        }
    }
    let m = (&m + &m.t()) * 0.5;
    let evals = m.eigvalsh(UPLO::Lower)?;
    Ok(evals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Average-case single-shot variance: `tr(L^{-1}) / n_slots`.
pub fn sigma_avg(bundle: &InverseBundle) -> Result<f64> {
    let l_inv = bundle.gram_inverse()?;
    let trace: f64 = l_inv.diag().sum();
    Ok(trace / bundle.n_slots() as f64)
}

/// Per-shot variance of an estimator `G` under noise `W`: `(o| G W G^T |o)`.
///
/// This is the independent route used to cross-check the Gram-solve values;
/// the floor regularizer is deliberately excluded here.
pub fn predicted_variance(
    bundle: &InverseBundle,
    noise: &NoiseMatrix,
    obs: &ObservableVec,
) -> Result<f64> {
    if obs.dim() != bundle.n_slots() {
        return Err(Error::InvalidArgument(format!(
            "observable has {} slots, bundle acts on {}",
            obs.dim(),
            bundle.n_slots()
        )));
    }
    let b = bundle.apply_g_transpose(obs.coeffs());
    if b.len() != noise.n_members() * noise.block_dim() {
        return Err(Error::InvalidArgument(
            "noise matrix does not match the bundle dimensions".into(),
        ));
    }
    Ok(noise.quadratic_form(&b))
}

/// Repetitions needed for accuracy `epsilon`.
///
/// Default is the standard-error convention `R = ceil(sigma^2 / eps^2)`.
/// With a failure probability the Chebyshev guarantee
/// `R = ceil(sigma^2 / (eps^2 p_fail))` bounds
/// `Pr[|error| > eps] <= p_fail`.
pub fn samples_required(sigma2: f64, epsilon: f64, p_fail: Option<f64>) -> u64 {
    assert!(epsilon > 0.0, "target accuracy must be positive");
    let scale = match p_fail {
        None => 1.0,
        Some(p) => {
            assert!((0.0..1.0).contains(&p) && p > 0.0, "p_fail must lie in (0, 1)");
            p
        }
    };
    (sigma2 / (epsilon * epsilon * scale)).ceil().max(1.0) as u64
}

fn gram_scale(bundle: &InverseBundle) -> f64 {
    bundle
        .gram()
        .diag()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1.0)
}

/// Smallest eigenvalue of the retained Gram matrix by inverse iteration on
/// the Cholesky factorization, with a dense fallback when convergence
/// stalls.
fn smallest_eigenvalue(bundle: &InverseBundle) -> Result<f64> {
    let r = bundle.gram().nrows();
    if r == 1 {
        return Ok(bundle.gram()[[0, 0]]);
    }
    let mut x = Array1::from_elem(r, 1.0 / (r as f64).sqrt());
    // Deterministic perturbation so we do not start orthogonal to the
    // bottom eigenvector.
    for (i, v) in x.iter_mut().enumerate() {
        *v += 1e-3 * ((i as f64 * 0.7368).sin());
    }
    let mut lambda_prev = f64::INFINITY;
    for _ in 0..200 {
        let y = bundle.solve_gram(&x)?;
        let norm = y.dot(&y).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        let x_next = &y / norm;
        let lx = bundle.gram().dot(&x_next);
        let lambda = x_next.dot(&lx);
        let converged = (lambda_prev - lambda).abs() <= 1e-12 * lambda.abs().max(1e-300);
        x = x_next;
        lambda_prev = lambda;
        if converged {
            return Ok(lambda);
        }
    }
    // Slow convergence (near-degenerate bottom of the spectrum): fall back
    // to the dense symmetric eigensolver.
    let evals = bundle.gram().eigvalsh(UPLO::Lower)?;
    Ok(evals.iter().cloned().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::QuenchEnsemble;
    use crate::gaussian::{random_gaussian_state, CorrelationMatrix, HermitianBasis};
    use crate::tomo::MeasurementMap;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_examples_on_prescribed_gram() {
        let bundle = InverseBundle::from_gram_for_test(Array2::eye(4));
        let o = ObservableVec::basis_slot(2, 0);
        assert_abs_diff_eq!(sigma_observable(&bundle, &o).unwrap().sigma2, 1.0);
        assert_abs_diff_eq!(sigma_worst(&bundle).unwrap(), 1.0);
        assert_abs_diff_eq!(sigma_avg(&bundle).unwrap(), 1.0);

        let bundle = InverseBundle::from_gram_for_test(Array2::from_diag(&array![2.0, 3.0, 5.0, 7.0]));
        assert_abs_diff_eq!(sigma_observable(&bundle, &o).unwrap().sigma2, 0.5);

        let bundle = InverseBundle::from_gram_for_test(Array2::from_diag(&array![4.0, 0.25]));
        assert_abs_diff_eq!(sigma_worst(&bundle).unwrap(), 4.0, epsilon = 1e-10);
    }

    #[test]
    fn smallest_eigenvalue_matches_dense_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = Array2::from_shape_fn((12, 12), |_| rng.random::<f64>() - 0.5);
            let mut l = a.dot(&a.t());
            for i in 0..12 {
                l[[i, i]] += 0.5;
            }
            let evals = l.eigvalsh(UPLO::Lower).unwrap();
            let expect = evals.iter().cloned().fold(f64::INFINITY, f64::min);
            let bundle = InverseBundle::from_gram_for_test(l);
            let got = 1.0 / sigma_worst(&bundle).unwrap();
            assert_abs_diff_eq!(got, expect, epsilon = 1e-8 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn average_is_mean_over_orthonormal_basis_and_below_worst() {
        let ens = QuenchEnsemble::local_chain(4, 30, 23).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        let noise = crate::tomo::NoiseMatrix::build(&ens, &vac).unwrap();
        let bundle = InverseBundle::optimal_inverse(&map, &noise, 1e-8).unwrap();
        let n2 = bundle.n_slots();
        let mut acc = 0.0;
        for slot in 0..n2 {
            let o = ObservableVec::basis_slot(4, slot);
            acc += sigma_observable(&bundle, &o).unwrap().sigma2;
        }
        let avg = sigma_avg(&bundle).unwrap();
        assert_abs_diff_eq!(avg, acc / n2 as f64, epsilon = 1e-8 * avg);
        let worst = sigma_worst(&bundle).unwrap();
        assert!(avg <= worst + 1e-12);
        // sigma_O <= sigma_worst * |o|^2 for random observables.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let coeffs = Array1::from_shape_fn(n2, |_| rng.random::<f64>() - 0.5);
            let o = ObservableVec::from_coeffs(coeffs.clone());
            let s = sigma_observable(&bundle, &o).unwrap().sigma2;
            assert!(s <= worst * coeffs.dot(&coeffs) + 1e-9);
        }
    }

    #[test]
    fn gram_solve_agrees_with_estimator_route() {
        // (o| L^{-1} |o) = (o| G W G^T |o) for the optimal inverse with an
        // invertible noise matrix and no floor.
        let ens = QuenchEnsemble::local_chain(4, 30, 29).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        let noise = crate::tomo::NoiseMatrix::build(&ens, &vac).unwrap();
        let bundle = InverseBundle::optimal_inverse(&map, &noise, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let coeffs = Array1::from_shape_fn(16, |_| rng.random::<f64>() - 0.5);
            let o = ObservableVec::from_coeffs(coeffs);
            let via_gram = sigma_observable(&bundle, &o).unwrap().sigma2;
            let via_estimator = predicted_variance(&bundle, &noise, &o).unwrap();
            let rel = (via_gram - via_estimator).abs() / via_gram.abs().max(1e-300);
            assert!(rel < 1e-6, "relative gap {rel:.2e}");
        }
    }

    #[test]
    fn plain_pseudoinverse_never_beats_optimal_weighting() {
        // With ancillas the noise is genuinely non-uniform, so the
        // Moore-Penrose estimator pays a variance penalty.
        use crate::ensemble::QuenchParams;
        use crate::lattice::Lattice;
        let lat = Lattice::chain(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let members: Vec<(f64, QuenchParams)> = (0..14)
            .map(|_| {
                (
                    1.0 / 14.0,
                    QuenchParams {
                        time: 0.3 + 2.0 * rng.random::<f64>(),
                        strength: 5.0 * rng.random::<f64>() + 0.5,
                        phase: 6.0 * rng.random::<f64>(),
                        laser_angle: 0.67,
                    },
                )
            })
            .collect();
        let ens = QuenchEnsemble::new(lat, vec![0, 1], members).unwrap();
        let c_anc = CorrelationMatrix::vacuum(3);
        let map = MeasurementMap::stack_forward(&ens, &c_anc, None).unwrap();
        let noise = crate::tomo::NoiseMatrix::build(&ens, &c_anc).unwrap();
        let optimal = InverseBundle::optimal_inverse(&map, &noise, 1e-8).unwrap();
        let plain = InverseBundle::pseudo_inverse(&map, 1e-10).unwrap();
        assert_eq!(plain.retained_rank(), 4);
        let mut worse = 0;
        for slot in 0..4 {
            let o = ObservableVec::basis_slot(2, slot);
            let v_opt = predicted_variance(&optimal, &noise, &o).unwrap();
            let v_mp = predicted_variance(&plain, &noise, &o).unwrap();
            assert!(v_mp >= v_opt - 1e-10, "slot {slot}: {v_mp} < {v_opt}");
            if v_mp > v_opt + 1e-10 {
                worse += 1;
            }
        }
        assert!(worse > 0, "expected a strict penalty somewhere");
    }

    #[test]
    fn subspace_worst_case_bounds() {
        let ens = QuenchEnsemble::local_chain(5, 40, 31).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        let noise = crate::tomo::NoiseMatrix::build(&ens, &vac).unwrap();
        let bundle = InverseBundle::optimal_inverse(&map, &noise, 1e-8).unwrap();
        let basis = HermitianBasis::new(5);
        let mut local_slots: Vec<usize> = (0..5).map(|j| basis.diag_slot(j)).collect();
        for j in 0..4 {
            local_slots.push(basis.sym_slot(j, j + 1));
            local_slots.push(basis.asym_slot(j, j + 1));
        }
        let local = sigma_worst_subspace(&bundle, &local_slots).unwrap();
        let global = sigma_worst(&bundle).unwrap();
        assert!(local <= global + 1e-9);
        // Every slot variance is below the subspace worst case.
        for &slot in &local_slots {
            let o = ObservableVec::basis_slot(5, slot);
            let s = sigma_observable(&bundle, &o).unwrap().sigma2;
            assert!(s <= local + 1e-9);
        }
    }

    #[test]
    fn repetition_counts() {
        assert_eq!(samples_required(7.5, 0.05, None), 3000);
        assert_eq!(samples_required(1.0, 1.0, None), 1);
        assert_eq!(samples_required(18.75, 0.05, None), 7500);
        // Chebyshev guarantee inflates by 1/p_fail.
        assert_eq!(samples_required(7.5, 0.05, Some(0.1)), 30_000);
        // Reports carry the same convention.
        let report = ComplexityReport::new(MetricKind::Worst, 7.5, 0.05);
        assert_eq!(report.r_required, 3000);
    }

    #[test]
    fn unrecoverable_component_is_reported() {
        let ens = QuenchEnsemble::local_chain(4, 40, 5).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        // Keep only the dominant direction.
        let bundle = InverseBundle::pseudo_inverse(&map, 1.0).unwrap();
        let o = ObservableVec::basis_slot(4, 3);
        let res = sigma_observable(&bundle, &o).unwrap();
        assert!(res.unrecoverable > 0.5, "lost norm {}", res.unrecoverable);
        let c0 = random_gaussian_state(4, 0.5, 77).unwrap();
        drop(c0);
    }
}
