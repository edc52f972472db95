//! Fast invariant suite: closed-form identities and gradient spot-checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Example;
use crate::evidential::{
    data_uncertainty, distribution_uncertainty, entropy, expected_probs, jsd, kl_dirichlet_to_uniform,
    CategoricalProbs, DirichletParams,
};
use crate::gradcheck::check_gradients;
use crate::model::{ModelParams, ParamGroup, HEAD_INIT_SCALE};
use crate::special::{digamma, log_gamma};
use crate::training::{
    close_loss_weighted, discrepancy_weights, dis_loss_weighted, edl_loss, DiscrepancyPhase, TrainingObjective,
};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tau1: 7.0,
            tau2: -5.0,
        }
    }
}

/// Signature of the expected-entropy function under test.
pub type DataUncertaintyFn = fn(&DirichletParams) -> f64;

pub fn run_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    run_checks_with(opts, data_uncertainty)
}

/// Runs the suite against a substitute `u_data`, so that a broken
/// implementation can be shown to fail it.
pub fn run_checks_with(opts: &CheckOptions, u_data: DataUncertaintyFn) -> Vec<CheckResult> {
    vec![
        decomposition_identity(opts.seed, u_data),
        digamma_recurrence(),
        log_gamma_recurrence(),
        jsd_properties(opts.seed),
        kl_reference_value(),
        gradient_spot_check(opts),
    ]
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Random evidence vectors with components log-uniform in [e^-10, e^10].
pub fn random_dirichlet<R: Rng>(classes: usize, rng: &mut R) -> DirichletParams {
    let alpha = (0..classes).map(|_| rng.random_range(-10.0f64..10.0).exp()).collect();
    DirichletParams::new(alpha).expect("positive finite evidence")
}

fn decomposition_identity(seed: u64, u_data: DataUncertaintyFn) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = random_dirichlet([2, 3, 10, 100][i % 4], &mut rng);
        let gap = (u_data(&d) + distribution_uncertainty(&d) - entropy(&expected_probs(&d))).abs();
        worst = worst.max(gap);
    }
    result(
        "decomposition identity",
        worst < 1e-9,
        format!("max |U^data + U^dist - H| = {worst:.3e} over 1000 draws"),
    )
}

fn log_grid() -> impl Iterator<Item = f64> {
    (0..=120).map(|k| 10f64.powf(-2.0 + 6.0 * k as f64 / 120.0))
}

fn digamma_recurrence() -> CheckResult {
    let mut worst = (digamma(1.0).unwrap() + EULER_GAMMA).abs();
    for x in log_grid() {
        let gap = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
        worst = worst.max(gap.abs() / (1.0 / x).max(1.0));
    }
    result("digamma recurrence", worst < 1e-10, format!("max error {worst:.3e}"))
}

fn log_gamma_recurrence() -> CheckResult {
    let mut worst = (log_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs();
    for x in log_grid() {
        let gap = log_gamma(x + 1.0).unwrap() - log_gamma(x).unwrap() - x.ln();
        worst = worst.max(gap.abs() / x.ln().abs().max(1.0));
    }
    result("log-gamma recurrence", worst < 1e-10, format!("max error {worst:.3e}"))
}

fn jsd_properties(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x15D);
    let probs = |d: DirichletParams| expected_probs(&d);
    let mut failures = Vec::new();
    for i in 0..500 {
        let c = 2 + i % 6;
        let p = probs(random_dirichlet(c, &mut rng));
        let q = probs(random_dirichlet(c, &mut rng));
        let pq = jsd(&p, &q).unwrap();
        let qp = jsd(&q, &p).unwrap();
        if !(0.0..=1.0).contains(&pq) || (pq - qp).abs() > 1e-12 || jsd(&p, &p).unwrap().abs() > 1e-12 {
            failures.push(format!("p {:?} q {:?}: {pq} / {qp}", p.probs(), q.probs()));
        }
    }
    let a = CategoricalProbs::new(vec![1.0, 0.0]).unwrap();
    let b = CategoricalProbs::new(vec![0.0, 1.0]).unwrap();
    let disjoint = jsd(&a, &b).unwrap();
    if (disjoint - 1.0).abs() > 1e-12 {
        failures.push(format!("disjoint supports gave {disjoint}"));
    }
    let detail = match failures.first() {
        None => "symmetric, bounded, zero on identical inputs, one on disjoint supports".to_string(),
        Some(f) => format!("{} violations, first: {f}", failures.len()),
    };
    result("JSD properties", failures.is_empty(), detail)
}

fn kl_reference_value() -> CheckResult {
    let d = DirichletParams::new(vec![2.0, 1.0]).unwrap();
    let got = kl_dirichlet_to_uniform(&d);
    let expected = std::f64::consts::LN_2 - 0.5;
    let ones = kl_dirichlet_to_uniform(&DirichletParams::symmetric(5, 1.0).unwrap());
    result(
        "KL to uniform Dirichlet",
        (got - expected).abs() < 1e-12 && ones.abs() < 1e-12,
        format!("KL((2,1)) = {got:.15}, KL(ones) = {ones:.1e}"),
    )
}

fn gradient_spot_check(opts: &CheckOptions) -> CheckResult {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut m = ModelParams::new(5, &[8, 8], 3, opts.seed).expect("valid architecture");
    for head in m.network.heads.iter_mut() {
        head.weights.iter_mut().for_each(|w| *w /= HEAD_INIT_SCALE);
    }
    let net = &m.network;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let examples: Vec<Example> = (0..4)
        .map(|id| Example {
            id,
            features: (0..5).map(|_| rng.random_range(-1.5..1.5)).collect(),
            label: rng.random_range(0..3),
        })
        .collect();
    let batch: Vec<&Example> = examples.iter().collect();

    let mut reports = Vec::new();
    for (name, objective) in [("edl", TrainingObjective::Evidential), ("nll", TrainingObjective::CrossEntropy)] {
        let (_, grads) = edl_loss(net, &batch, objective).expect("finite loss");
        let r = check_gradients(net, &grads, ParamGroup::All, H, |p| edl_loss(p, &batch, objective).unwrap().0);
        reports.push((name, r));
    }
    let w = discrepancy_weights(net, &batch, DiscrepancyPhase::Close, opts.tau1, opts.tau2).expect("weights");
    let (_, grads) = close_loss_weighted(net, &batch, &w).expect("finite loss");
    let r = check_gradients(net, &grads, ParamGroup::Backbone, H, |p| close_loss_weighted(p, &batch, &w).unwrap().0);
    reports.push(("close", r));
    let w = discrepancy_weights(net, &batch, DiscrepancyPhase::Dis, opts.tau1, opts.tau2).expect("weights");
    let (_, grads) = dis_loss_weighted(net, &batch, &w).expect("finite loss");
    let r = check_gradients(net, &grads, ParamGroup::Heads, H, |p| dis_loss_weighted(p, &batch, &w).unwrap().0);
    reports.push(("dis", r));

    let passed = reports.iter().all(|(_, r)| r.passes(TOL));
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {:.1e}", r.max_relative_error))
        .collect::<Vec<_>>()
        .join(", ");
    result("gradient spot-check", passed, format!("max relative error: {detail}"))
}
