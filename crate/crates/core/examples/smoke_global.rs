use gtomo::complexity::{sigma_avg, sigma_worst};
use gtomo::ensemble::QuenchEnsemble;
use gtomo::gaussian::CorrelationMatrix;
use gtomo::tomo::{InverseBundle, MeasurementMap, NoiseMatrix};
use ndarray_linalg::{EigValsh, UPLO};

fn main() {
    for row in ["edge", "middle"] {
        println!("--- {row} ---");
        let mut prev: Option<(f64, f64, f64)> = None;
        for n in [4usize, 6, 8, 10, 12, 14, 18, 22, 26] {
            let t0 = std::time::Instant::now();
            let r = if row == "edge" { 0 } else { (n + 11) / 2 };
            let ens = QuenchEnsemble::global_scheme(n, r).unwrap();
            let c_anc = CorrelationMatrix::vacuum(ens.n_ancilla());
            let map = MeasurementMap::stack_forward(&ens, &c_anc, None).unwrap();
            let noise = NoiseMatrix::build(&ens, &c_anc).unwrap();
            let bundle = InverseBundle::optimal_inverse(&map, &noise, 1e-8).unwrap();
            let worst = sigma_worst(&bundle).unwrap();
            let avg = sigma_avg(&bundle).unwrap();
            if n <= 10 {
                let evals = bundle.gram().eigvalsh(UPLO::Lower).unwrap();
                let lam_min = evals.iter().cloned().fold(f64::INFINITY, f64::min);
                let dense_worst = 1.0 / lam_min;
                assert!((dense_worst - worst).abs() < 1e-6 * worst, "lambda_min mismatch");
            }
            let slopes = prev
                .map(|(pn, pw, pa)| {
                    let dn = (n as f64 / pn).ln();
                    ((worst / pw).ln() / dn, (avg / pa).ln() / dn)
                })
                .unwrap_or((f64::NAN, f64::NAN));
            println!(
                "  n={n}: worst={worst:.3e} avg={avg:.3e} local slopes: worst {:.2} avg {:.2} ({:.1?})",
                slopes.0, slopes.1, t0.elapsed()
            );
            prev = Some((n as f64, worst, avg));
        }
    }
}
