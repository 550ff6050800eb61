use gtomo::complexity::{samples_required, sigma_worst_subspace, sigma_observable};
use gtomo::ensemble::QuenchEnsemble;
use gtomo::gaussian::{CorrelationMatrix, HermitianBasis, ObservableVec};
use gtomo::tomo::{InverseBundle, MeasurementMap, NoiseMatrix};

fn main() {
    for n in [10usize, 20, 30, 40] {
        let t0 = std::time::Instant::now();
        let ens = QuenchEnsemble::local_chain(n, 400, 424242).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        let noise = NoiseMatrix::build(&ens, &vac).unwrap();
        let bundle = InverseBundle::pseudo_inverse_weighted(&map, &noise, 1e-3, 1e-8).unwrap();
        let basis = HermitianBasis::new(n);
        let mut nn_slots: Vec<usize> = (0..n).map(|j| basis.diag_slot(j)).collect();
        for j in 0..n - 1 {
            nn_slots.push(basis.sym_slot(j, j + 1));
            nn_slots.push(basis.asym_slot(j, j + 1));
        }
        let sw = sigma_worst_subspace(&bundle, &nn_slots).unwrap();
        let m = (n - 1) / 2;
        let (re_m, im_m) = ObservableVec::matrix_element_parts(n, m, m + 1);
        let mid = sigma_observable(&bundle, &re_m.normalized()).unwrap().sigma2
            + sigma_observable(&bundle, &im_m.normalized()).unwrap().sigma2;
        println!(
            "n={n}: retained={}/{} sigma_worst_nn={sw:.3} R={} sigma_mid_sum={mid:.3} ({:.1?})",
            bundle.retained_rank(),
            n * n,
            samples_required(sw, 0.05, None),
            t0.elapsed()
        );
    }
}
