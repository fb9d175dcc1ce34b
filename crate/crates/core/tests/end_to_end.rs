use imprint_core::defense::DefenseConfig;
use imprint_core::imprint::Activation;
use imprint_core::measurement::{DataModel, MeasurementKind};
use imprint_core::model::Batch;
use imprint_core::numerics::rand_gaussian;
use imprint_core::pipeline::{
    run_attack, AttackSpec, BinSpec, BridgeSpec, EvalSpec, FederationSpec, HeadSpec, Protocol, Scenario,
};
use imprint_core::theory::{iid_expectation, iid_monte_carlo, prop1_closed_form};
use imprint_core::{RngStream, Tensor};

fn scenario(k: usize, users: usize, protocol: Protocol) -> Scenario {
    Scenario {
        attack: AttackSpec {
            activation: Activation::Relu,
            bins: BinSpec::Layout { k, p_min: 1e-6 },
            decoys: 5,
            measurement: MeasurementKind::Mean,
            data_model: DataModel::Normal { mean: 0.0, sd: 1.0 },
            c0: 4.0,
            front: vec![],
            bridge: BridgeSpec::IdenticalRow { out_dim: 6 },
            head: HeadSpec::Sink { gain: 10.0, bias: 30.0 },
            labels: 4,
        },
        federation: FederationSpec { users, protocol },
        defense: DefenseConfig::default(),
        eval: EvalSpec::default(),
    }
}

fn batch(seed: u64, n: usize, m: usize) -> Batch<f64> {
    let x = rand_gaussian(RngStream::new(seed, 0), &[n, m]);
    Batch::new(x, Some((0..n).map(|t| t % 4).collect())).unwrap()
}

#[test]
fn secure_aggregation_over_users_keeps_singletons_exact() {
    let m = 16;
    for seed in 0..5 {
        let out = run_attack(&scenario(64, 4, Protocol::FedSgd), &batch(seed, 32, m), None, &Tensor::zeros(&[0, m]), seed)
            .unwrap();
        assert_eq!(out.exact_bins, out.singleton_bins, "seed {seed} {:?}", out.score.per_sample.iter().map(|s| s.rel_err).collect::<Vec<_>>());
        assert_eq!(out.occupancy.iter().sum::<usize>(), 32);
    }
}

#[test]
fn measured_singletons_follow_iid_model() {
    let (n, k, m) = (32, 64, 16);
    let total: usize = (0..40u64)
        .map(|seed| {
            run_attack(&scenario(k, 1, Protocol::FedSgd), &batch(100 + seed, n, m), None, &Tensor::zeros(&[0, m]), seed)
                .unwrap()
                .singleton_bins
                .len()
        })
        .sum();
    let measured = total as f64 / 40.0;
    let iid = iid_expectation(n, k);
    let mc = iid_monte_carlo(n, k, 4000, RngStream::new(1, 1)).unwrap();
    assert!((mc.mean - iid).abs() < 4.0 * mc.stderr);
    // Forty batches give a standard error near 0.45 singletons.
    assert!((measured - iid).abs() < 2.0, "{measured} vs {iid}");
    // The composition model is more pessimistic than the iid model in this regime.
    assert!(prop1_closed_form(n, k).unwrap() < iid);
}

#[test]
fn one_local_step_fedavg_matches_fedsgd_bins() {
    let m = 16;
    let data = batch(9, 16, m);
    let pool = Tensor::zeros(&[0, m]);
    let sgd = run_attack(&scenario(64, 1, Protocol::FedSgd), &data, None, &pool, 9).unwrap();
    let avg = run_attack(&scenario(64, 1, Protocol::FedAvg { steps: 1, lr: 1e-3 }), &data, None, &pool, 9).unwrap();
    assert_eq!(sgd.exact_bins, avg.exact_bins);
}
