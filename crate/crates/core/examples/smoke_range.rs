use gtomo::complexity::{samples_required, sigma_worst_subspace};
use gtomo::ensemble::QuenchEnsemble;
use gtomo::gaussian::{CorrelationMatrix, HermitianBasis};
use gtomo::tomo::{InverseBundle, MeasurementMap, NoiseMatrix};

fn main() {
    for n in [20usize, 30] {
        let ens = QuenchEnsemble::local_chain(n, 400, 424242).unwrap();
        let vac = CorrelationMatrix::vacuum(0);
        let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
        let noise = NoiseMatrix::build(&ens, &vac).unwrap();
        let bundle = InverseBundle::pseudo_inverse_weighted(&map, &noise, 1e-3, 1e-8).unwrap();
        let basis = HermitianBasis::new(n);
        for dist in [1usize, 2, 3, 4, 5] {
            let mut slots: Vec<usize> = (0..n).map(|j| basis.diag_slot(j)).collect();
            for a in 0..n {
                for b in (a + 1)..(a + 1 + dist).min(n) {
                    slots.push(basis.sym_slot(a, b));
                    slots.push(basis.asym_slot(a, b));
                }
            }
            let sw = sigma_worst_subspace(&bundle, &slots).unwrap();
            println!(
                "n={n} dist<={dist}: sigma_worst={sw:.3} R={}",
                samples_required(sw, 0.05, None)
            );
        }
    }
}
