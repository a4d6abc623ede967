use mfgraph_core::models::{
    check_one_sided, disorder_second_moment, lipschitz_ratio, BuiltinModel, Drift, Kappa, ModelSpec,
};
use mfgraph_core::semimetric::{build_semimetric, SemimetricOptions};

#[test]
fn builtins_satisfy_one_sided_condition() {
    for (k, model) in BuiltinModel::ALL.into_iter().enumerate() {
        let m = model.spec(1.0, 0.5).unwrap();
        let report = check_one_sided(&m, 100_000, 10.0, k as u64).unwrap();
        assert!(report.passed, "{}: {:?}", model.as_str(), report);
    }
}

#[test]
fn unstable_drift_is_flagged() {
    let m = ModelSpec::builder(Drift::Linear { slope: 1.0 })
        .kappa(Kappa::Constant(1.0))
        .build()
        .unwrap();
    let report = check_one_sided(&m, 1000, 2.0, 0).unwrap();
    assert!(!report.passed);
    assert!(report.max_violation > 0.0);
}

#[test]
fn interaction_audit_respects_declared_constant() {
    for model in [BuiltinModel::LinearAttraction, BuiltinModel::KuramotoLike] {
        let m = model.spec(1.0, 0.8).unwrap();
        let kappa = |r: f64| m.kappa_at(r);
        let table = build_semimetric(&kappa, m.sigma, SemimetricOptions::default()).unwrap();
        let declared = m.lipschitz.semimetric_constant(table.c_f);
        let ratio = lipschitz_ratio(&m, &table, 20_000, 5.0, 3);
        assert!(ratio <= declared * (1.0 + 1e-6), "{}: {ratio} > {declared}", model.as_str());
    }
}

#[test]
fn disorder_moment_stable() {
    let m = BuiltinModel::DisorderedCubic.spec(1.0, 0.0).unwrap();
    let small = disorder_second_moment(&m, 100_000, 1);
    let large = disorder_second_moment(&m, 1_000_000, 2);
    assert!(small.is_finite());
    // Uniform on [-1/2, 1/2] has second moment 1/12.
    assert!((large - 1.0 / 12.0).abs() < 0.01 / 12.0);
    assert!((small - large).abs() <= 0.05 * large);
}
