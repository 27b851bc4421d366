use std::collections::HashSet;

use bandit_router::bandit::PilotRouter;
use bandit_router::baselines::PolicySpec;
use bandit_router::cost_policy::CostPolicyConfig;
use bandit_router::data::{
    load_manifest, load_routing_dataset, sidecar_manifest_path, split_buckets, write_dataset,
    write_manifest, ArmId, DataFormat,
};
use bandit_router::replay::{run_deployment, run_learning, RewardMode};
use bandit_router::synthetic::{Scenario, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Option<DVector<f64>> {
    let v = DVector::from_vec(v);
    let n = v.norm();
    (n > 1e-3).then(|| v / n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_tracks_design_matrix(
        d in 1usize..6,
        lambda in 0.5f64..20.0,
        steps in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 6), 0.0f64..=1.0), 0..120),
    ) {
        let prior = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let mut r = PilotRouter::from_priors(vec![prior], vec![lambda], 1.0).unwrap();
        for (x, reward) in steps {
            if let Some(psi) = unit(x[..d].to_vec()) {
                r.update(ArmId(0), &psi, reward).unwrap();
            }
        }
        let s = &r.arms[0];
        let err = (&s.a * &s.a_inv - DMatrix::identity(d, d)).amax();
        prop_assert!(err < 1e-9, "{err}");
        // A stays symmetric positive definite with eigenvalues >= lambda
        prop_assert!(s.a.clone().symmetric_eigenvalues().min() >= lambda - 1e-9);
    }

    #[test]
    fn split_is_a_partition(n in 20usize..200, tuning in 1usize..19, seed in any::<u64>()) {
        let mut sc = Scenario::new(ScenarioConfig::four_cluster(0)).unwrap();
        let ds = sc.sample(n).unwrap().dataset;
        let b = split_buckets(&ds, tuning, 10, 1, seed).unwrap();
        prop_assert_eq!(b.tuning.len(), tuning);
        prop_assert_eq!(b.tuning.len() + b.learning.len() + b.deployment.len(), n);
        let ids: HashSet<&str> = [&b.tuning, &b.learning, &b.deployment]
            .iter()
            .flat_map(|d| d.records.iter().map(|r| r.query_id.as_str()))
            .collect();
        prop_assert_eq!(ids.len(), n);
    }

    #[test]
    fn deployment_respects_budget(frac in 0.05f64..2.0, seed in 0u64..50) {
        let mut sc = Scenario::new(ScenarioConfig::four_cluster(seed)).unwrap();
        let ds = sc.sample(300).unwrap().dataset;
        let ctx: Vec<DVector<f64>> = ds.records.iter().map(|r| DVector::from_vec(r.embedding.clone())).collect();
        let mut p = PolicySpec::Linucb { alpha: 1.0 }.build(4, ds.d_e, None, seed).unwrap();
        run_learning(&mut p, &ctx[..200], &ds.prefix(200), RewardMode::Raw).unwrap();
        let deploy = ds.with_records(ds.records[200..].to_vec());
        let budget = frac * deploy.oracle_spend();
        let cfg = CostPolicyConfig::new(budget, deploy.len(), 25, 5.0, 0.05);
        let rep = run_deployment(&mut p, &ctx[200..], &deploy, Some(&cfg)).unwrap();
        prop_assert!(rep.budget_used <= budget + 1e-9);
        let served: usize = rep.arm_counts.iter().sum();
        prop_assert_eq!(served, rep.terminated_at.unwrap_or(deploy.len()));
        prop_assert!(rep.regret_curve.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::four_cluster(7);
    let ds = Scenario::new(cfg.clone())
        .unwrap()
        .sample(50)
        .unwrap()
        .dataset;
    let path = dir.path().join("routes.jsonl");
    write_dataset(&ds, &path).unwrap();
    write_manifest(&cfg.manifest(), &sidecar_manifest_path(&path)).unwrap();
    let manifest = load_manifest(&dir.path().join("routes.manifest.json")).unwrap();
    let back = load_routing_dataset(&path, &manifest, DataFormat::from_path(&path)).unwrap();
    assert_eq!(back, ds);
}
