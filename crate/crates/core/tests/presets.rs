use fedawe_core::algorithms::Algorithm;
use fedawe_core::availability::DynamicsFamily;
use fedawe_core::harness::output::write_csv;
use fedawe_core::harness::presets::{self, NonstationaryParams, SpeedupParams};
use fedawe_core::harness::{run_experiment, BaseProbConfig};

fn loss_at(rows: &[presets::NonstationaryRow], gamma: f64, p: f64, alg: &str) -> f64 {
    rows.iter()
        .find(|r| r.gamma == gamma && r.p == p && r.algorithm == alg)
        .map(|r| r.loss_mean)
        .unwrap()
}

#[test]
fn nonstationarity_hurts_fedavg_more() {
    let params = NonstationaryParams {
        gammas: vec![0.1, 0.5],
        ps: vec![0.1],
        ..Default::default()
    };
    let rows = presets::example2_nonstationary(&params).unwrap();
    assert_eq!(rows.len(), 4);
    let low = loss_at(&rows, 0.1, 0.1, "fedavg-active");
    let high = loss_at(&rows, 0.5, 0.1, "fedavg-active");
    assert!(high >= low, "fedavg loss {low} at gamma 0.1, {high} at gamma 0.5");

    let params = NonstationaryParams {
        gammas: vec![0.3],
        ps: vec![0.3],
        ..Default::default()
    };
    let rows = presets::example2_nonstationary(&params).unwrap();
    let awe = loss_at(&rows, 0.3, 0.3, "fedawe");
    let avg = loss_at(&rows, 0.3, 0.3, "fedavg-active");
    assert!(awe <= avg, "fedawe {awe} vs fedavg-active {avg}");
}

#[test]
fn zero_gamma_sine_is_stationary() {
    let mut cfg = presets::ordering_config(vec![2]);
    cfg.clients = 10;
    cfg.hyper.rounds = 30;
    cfg.dynamics.base = BaseProbConfig::Uniform { p: 0.4 };
    cfg.dynamics.gamma = 0.0;
    let mut a = Vec::new();
    write_csv(&run_experiment(&cfg).unwrap().rows(false), &mut a).unwrap();
    cfg.dynamics.family = DynamicsFamily::Stationary;
    let mut b = Vec::new();
    write_csv(&run_experiment(&cfg).unwrap().rows(false), &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn speedup_examples() {
    let base = SpeedupParams {
        clients: vec![1, 32],
        ..Default::default()
    };
    let rows = presets::speedup(&base).unwrap();
    assert!(rows[0].avg_grad_norm_sq_mean > rows[1].avg_grad_norm_sq_mean);

    let short = SpeedupParams {
        clients: vec![16],
        rounds: 250,
        ..Default::default()
    };
    let long = SpeedupParams { rounds: 500, ..short.clone() };
    let a = presets::speedup(&short).unwrap()[0].avg_grad_norm_sq_mean;
    let b = presets::speedup(&long).unwrap()[0].avg_grad_norm_sq_mean;
    assert!(b <= a, "T=250: {a}, T=500: {b}");
}

#[test]
fn full_participation_single_step_matches_fedavg() {
    let params = SpeedupParams {
        delta: 1.0,
        rounds: 50,
        ..Default::default()
    };
    let mut cfg = presets::speedup_config(&params, 8);
    cfg.algorithms = vec![Algorithm::FedAwe, Algorithm::FedAvgActive];
    let out = run_experiment(&cfg).unwrap();
    let awe = &out.runs.iter().find(|r| r.algorithm == Algorithm::FedAwe).unwrap().trajectory;
    let avg = &out.runs.iter().find(|r| r.algorithm == Algorithm::FedAvgActive).unwrap().trajectory;
    for (x, y) in awe.records.iter().zip(&avg.records) {
        assert_eq!(x.active_count, 8);
        assert!((x.loss - y.loss).abs() <= 1e-10 * (1.0 + y.loss.abs()), "round {}", x.round);
    }
}
