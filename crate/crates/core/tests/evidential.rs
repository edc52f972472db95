mod common;

use common::monte_carlo;
use openset_al::evidential::{data_uncertainty, distribution_uncertainty};
use openset_al::DirichletParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn sampled_uncertainties_match_closed_forms_for_four_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let alpha: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..15.0)).collect();
        let d = DirichletParams::new(alpha.clone()).unwrap();
        let mc = monte_carlo(&alpha, 100_000, &mut rng);
        let du = (mc.expected_entropy - data_uncertainty(&d)).abs();
        let mi = (mc.mutual_information - distribution_uncertainty(&d)).abs();
        assert!(du < 3.0 * mc.expected_entropy_se, "alpha {alpha:?}: U^data off by {du}");
        assert!(mi < 3.0 * mc.mutual_information_se, "alpha {alpha:?}: U^dist off by {mi}");
    }
}
