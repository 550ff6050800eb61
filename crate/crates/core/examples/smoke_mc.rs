use gtomo::complexity::{predicted_variance, sigma_observable};
use gtomo::ensemble::QuenchEnsemble;
use gtomo::gaussian::{CorrelationMatrix, HermitianBasis, ObservableVec};
use gtomo::simulator::run_experiment;
use gtomo::tomo::{InverseBundle, MeasurementMap, NoiseMatrix};

fn main() {
    // Delta sensitivity of the worst nearest-neighbor variance at n=20.
    let n = 20;
    let ens = QuenchEnsemble::local_chain(n, 400, 424242).unwrap();
    let vac = CorrelationMatrix::vacuum(0);
    let map = MeasurementMap::stack_forward(&ens, &vac, None).unwrap();
    let noise = NoiseMatrix::build(&ens, &vac).unwrap();
    let basis = HermitianBasis::new(n);
    let mut nn_slots: Vec<usize> = (0..n).map(|j| basis.diag_slot(j)).collect();
    for j in 0..n - 1 {
        nn_slots.push(basis.sym_slot(j, j + 1));
        nn_slots.push(basis.asym_slot(j, j + 1));
    }
    for delta in [1e-2, 1e-3, 1e-4, 1e-6] {
        let bundle = InverseBundle::pseudo_inverse_weighted(&map, &noise, delta, 1e-8).unwrap();
        let sw = gtomo::complexity::sigma_worst_subspace(&bundle, &nn_slots).unwrap();
        println!(
            "delta={delta:.0e}: retained={} sigma_worst_nn={sw:.3}",
            bundle.retained_rank()
        );
    }

    // Monte Carlo check of the predicted variance for the hardest NN slot.
    let bundle = InverseBundle::pseudo_inverse_weighted(&map, &noise, 1e-3, 1e-8).unwrap();
    let mut worst_slot = nn_slots[0];
    let mut worst_sigma = 0.0;
    for &slot in &nn_slots {
        let o = ObservableVec::basis_slot(n, slot);
        let s = sigma_observable(&bundle, &o).unwrap().sigma2;
        if s > worst_sigma {
            worst_sigma = s;
            worst_slot = slot;
        }
    }
    let (a, b) = basis.slot_sites(worst_slot);
    println!("worst NN slot {worst_slot} sites ({a},{b}) sigma2={worst_sigma:.3}");
    let o = ObservableVec::basis_slot(n, worst_slot);
    let pred = predicted_variance(&bundle, &noise, &o).unwrap();
    println!("predicted via GWG^T: {pred:.3}");
    let c0 = CorrelationMatrix::maximally_mixed(n);
    let r = 100_000;
    let ds = run_experiment(&c0, &vac, &ens, r, 777).unwrap();
    let est = gtomo::simulator::estimate_observable(&ds, &bundle, &map.d_anc(), &o).unwrap();
    let empirical = est.stderr * est.stderr * r as f64;
    println!("empirical Var*R = {empirical:.3} (ratio to gram {:.3})", empirical / worst_sigma);
}
