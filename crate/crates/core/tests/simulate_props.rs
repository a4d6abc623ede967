use mfgraph_core::analysis::mean_and_se;
use mfgraph_core::graph::{gen_erdos_renyi, gen_regular, InteractionGraph};
use mfgraph_core::models::{BuiltinModel, Drift, Interaction, ModelSpec};
use mfgraph_core::simulate::{
    cutoffs, from_initial_states, init_coupled, CouplingMode, InitLaw, StepPlan,
};
use mfgraph_core::transport::w1_sorted_1d;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cutoffs_partition_unity(r in 0.0f64..2.0, delta in 1e-4f64..1.0) {
        let (s, q) = cutoffs(r, delta);
        prop_assert!((s * s + q * q - 1.0).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&q));
        let (_, q2) = cutoffs(r + 1e-6, delta);
        prop_assert!(q2 >= q);
        prop_assert!((q2 - q) <= std::f64::consts::PI / delta * 1e-6 + 1e-15);
    }

    #[test]
    fn initial_matching_costs_sorted_distance(xs in prop::collection::vec(-3.0f64..3.0, 1..40), seed in any::<u64>()) {
        let n = xs.len();
        let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
        let g = gen_regular(n, 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let ens = from_initial_states(&m, &g, xs.clone(), ys.clone(), vec![], 0.1).unwrap();
        let want = w1_sorted_1d(&xs, &ys).unwrap();
        prop_assert!((ens.mean_pair_distance() - want).abs() < 1e-12);
    }
}

#[test]
fn householder_preserves_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10_000 {
        let d = rng.random_range(1..6);
        let mut e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter_mut().for_each(|v| *v /= norm);
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let dot: f64 = e.iter().zip(&v).map(|(a, b)| a * b).sum();
        let h: Vec<f64> = v.iter().zip(&e).map(|(vk, ek)| vk - 2.0 * ek * dot).collect();
        let n1 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let n2 = h.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((n1 - n2).abs() < 1e-12);
    }
}

#[test]
fn identical_starts_stay_together_with_huge_delta() {
    let m = BuiltinModel::DoubleWell.spec(1.0, 0.0).unwrap();
    let g = gen_regular(64, 0, 0).unwrap();
    let law = InitLaw::Normal { mean: 0.0, sd: 1.0 };
    let mut ens = init_coupled(&m, &g, &law, &law, 8, 1e9, true).unwrap();
    assert_eq!(ens.mean_pair_distance(), 0.0);
    let plan = StepPlan::new(0.01, 3);
    for _ in 0..200 {
        ens.step_coupled(&m, &plan).unwrap();
        assert_eq!(ens.x, ens.x_bar);
    }
}

#[test]
fn coupling_keeps_marginals_equal() {
    // Γ ≡ 0 and F = −x: both marginals are OU processes with the same law.
    let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
    let g = gen_regular(2000, 0, 0).unwrap();
    let law = InitLaw::Normal { mean: 0.0, sd: 2.0 };
    let mut ens = init_coupled(&m, &g, &law, &law, 4, 0.05, false).unwrap();
    let plan = StepPlan::new(0.01, 21);
    for k in 1..=200 {
        ens.step_coupled(&m, &plan).unwrap();
        if k % 50 == 0 {
            let sq = |v: &[f64]| v.iter().map(|a| a * a).collect::<Vec<_>>();
            let (mx, sx) = mean_and_se(&sq(&ens.x));
            let (mb, sb) = mean_and_se(&sq(&ens.x_bar));
            assert!((mx - mb).abs() <= 3.0 * (sx * sx + sb * sb).sqrt(), "step {k}: {mx} vs {mb}");
        }
    }
}

#[test]
fn synchronous_ou_difference_decays_exactly() {
    let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
    let g = gen_regular(256, 0, 0).unwrap();
    let mut ens = init_coupled(
        &m,
        &g,
        &InitLaw::Normal { mean: 1.0, sd: 1.0 },
        &InitLaw::Normal { mean: -1.0, sd: 1.0 },
        2,
        0.01,
        false,
    )
    .unwrap();
    let z0 = ens.mean_pair_distance();
    let dt = 1e-3;
    let plan = StepPlan::new(dt, 6).with_coupling(CouplingMode::Synchronous);
    for _ in 0..1000 {
        ens.step_coupled(&m, &plan).unwrap();
    }
    let exact = z0 * (-1.0f64).exp();
    assert!((ens.mean_pair_distance() - exact).abs() <= 2.0 * dt * z0);
}

#[test]
fn ou_stationary_variance() {
    let m = BuiltinModel::Ou.spec(1.0, 0.0).unwrap();
    let g = gen_regular(4000, 0, 0).unwrap();
    let law = InitLaw::Point(vec![0.0]);
    let mut ens = init_coupled(&m, &g, &law, &law, 1, 0.01, false).unwrap();
    let plan = StepPlan::new(0.01, 2);
    for _ in 0..800 {
        ens.step_nonlinear_ensemble(&m, &plan).unwrap();
    }
    let (m2, _) = ens.moment_tracker();
    // Euler's stationary variance is 1/(1 − dt/2).
    assert!((m2 - 1.0).abs() < 0.05, "{m2}");
}

#[test]
fn empty_graph_drops_interaction() {
    let m = BuiltinModel::LinearAttraction.spec(1e-300, 5.0).unwrap();
    let free = BuiltinModel::Ou.spec(1e-300, 0.0).unwrap();
    let g = gen_regular(10, 0, 0).unwrap();
    let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let mut a = from_initial_states(&m, &g, xs.clone(), xs.clone(), vec![], 0.1).unwrap();
    let mut b = from_initial_states(&free, &g, xs.clone(), xs, vec![], 0.1).unwrap();
    a.step_ips(&m, &StepPlan::new(0.01, 0)).unwrap();
    b.step_ips(&free, &StepPlan::new(0.01, 0)).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn complete_graph_equal_particles_feel_no_interaction() {
    let m = ModelSpec::builder(Drift::Linear { slope: 0.0 })
        .interaction(Interaction::LinearAttraction { k: 3.0 })
        .sigma(1e-300)
        .kappa(mfgraph_core::models::Kappa::Constant(0.0))
        .build()
        .unwrap();
    let g = gen_regular(12, 11, 0).unwrap();
    let mut ens = from_initial_states(&m, &g, vec![0.7; 12], vec![0.7; 12], vec![], 0.1).unwrap();
    ens.step_ips(&m, &StepPlan::new(0.1, 0)).unwrap();
    assert!(ens.x.iter().all(|&v| v == 0.7));
}

#[test]
fn nonlinear_linear_kernel_uses_ensemble_mean() {
    let k = 2.0;
    let m = ModelSpec::builder(Drift::Linear { slope: 0.0 })
        .interaction(Interaction::LinearAttraction { k })
        .sigma(1e-300)
        .kappa(mfgraph_core::models::Kappa::Constant(0.0))
        .build()
        .unwrap();
    let g = gen_regular(4, 0, 0).unwrap();
    let xs = vec![0.0, 1.0, 2.0, 5.0];
    let mut ens = from_initial_states(&m, &g, xs.clone(), xs.clone(), vec![], 0.1).unwrap();
    let dt = 0.01;
    ens.step_nonlinear_ensemble(&m, &StepPlan::new(dt, 0)).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let want = x + k * (2.0 - x) * dt;
        assert!((ens.x_bar[i] - want).abs() < 1e-15);
    }
}

fn run_cells(g: &InteractionGraph, m: &ModelSpec) -> Vec<f64> {
    let law = InitLaw::Normal { mean: 0.0, sd: 1.0 };
    let mut ens = init_coupled(m, g, &law, &law, 77, 0.05, false).unwrap();
    let plan = StepPlan::new(0.01, 77);
    for _ in 0..30 {
        ens.step_coupled(m, &plan).unwrap();
    }
    [ens.x, ens.x_bar].concat()
}

#[test]
fn stepping_is_deterministic() {
    let m = BuiltinModel::KuramotoLike.spec(1.0, 0.5).unwrap();
    let g = gen_erdos_renyi(100, 0.2, 1).unwrap();
    assert_eq!(run_cells(&g, &m), run_cells(&g, &m));
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let m = BuiltinModel::KuramotoLike.spec(1.0, 0.5).unwrap();
    let g = gen_erdos_renyi(100, 0.2, 1).unwrap();
    let pool = |k| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let one = pool(1).install(|| run_cells(&g, &m));
    let four = pool(4).install(|| run_cells(&g, &m));
    assert_eq!(one, four);
}
