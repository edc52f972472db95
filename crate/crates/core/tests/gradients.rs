use openset_al::gradcheck::check_gradients;
use openset_al::model::HEAD_INIT_SCALE;
use openset_al::training::{
    close_loss_weighted, discrepancy_weights, dis_loss_weighted, edl_loss, DiscrepancyPhase,
};
use openset_al::{Example, ModelParams, ParamGroup, TrainingObjective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn batch(seed: u64, n: usize, dim: usize, classes: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|id| Example {
            id,
            features: (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            label: rng.random_range(0..classes),
        })
        .collect()
}

fn check_all(seed: u64, dim: usize, hidden: &[usize], classes: usize, n: usize) {
    let mut m = ModelParams::new(dim, hidden, classes, seed).unwrap();
    // Undo the small head init so head and backbone gradients are both well above roundoff.
    for head in m.network.heads.iter_mut() {
        head.weights.iter_mut().for_each(|w| *w /= HEAD_INIT_SCALE);
    }
    let net = &m.network;
    let exs = batch(seed + 100, n, dim, classes);
    let refs: Vec<&Example> = exs.iter().collect();

    for objective in [TrainingObjective::Evidential, TrainingObjective::CrossEntropy] {
        let (_, grads) = edl_loss(net, &refs, objective).unwrap();
        let report = check_gradients(net, &grads, ParamGroup::All, H, |p| edl_loss(p, &refs, objective).unwrap().0);
        assert!(report.passes(TOL), "edl {objective:?} seed {seed}: {report:?}");
    }

    let w = discrepancy_weights(net, &refs, DiscrepancyPhase::Close, 7.0, -5.0).unwrap();
    let (_, grads) = close_loss_weighted(net, &refs, &w).unwrap();
    let report = check_gradients(net, &grads, ParamGroup::Backbone, H, |p| close_loss_weighted(p, &refs, &w).unwrap().0);
    assert!(report.passes(TOL), "close seed {seed}: {report:?}");

    let w = discrepancy_weights(net, &refs, DiscrepancyPhase::Dis, 7.0, -5.0).unwrap();
    let (_, grads) = dis_loss_weighted(net, &refs, &w).unwrap();
    let report = check_gradients(net, &grads, ParamGroup::Heads, H, |p| dis_loss_weighted(p, &refs, &w).unwrap().0);
    assert!(report.passes(TOL), "dis seed {seed}: {report:?}");
}

#[test]
fn reference_network_gradients() {
    check_all(7, 5, &[8, 8], 3, 4);
}

#[test]
fn random_small_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..12 {
        let dim = rng.random_range(1..6);
        let depth = rng.random_range(1..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=16)).collect();
        let classes = rng.random_range(2..=4);
        let n = rng.random_range(1..6);
        check_all(seed, dim, &hidden, classes, n);
    }
}
