use fedawe_core::algorithms::{run_training, Algorithm, HyperParams, RunOptions};
use fedawe_core::availability::DynamicsSpec;
use fedawe_core::diagnostics::{grad_norm_trajectory, verify_inactive_identity, young_relation_holds};
use fedawe_core::objectives::{NoiseSpec, Objective};

fn example1_average(rounds: usize, seed: u64) -> f64 {
    let objs = vec![Objective::quadratic(vec![0.0]), Objective::quadratic(vec![100.0])];
    let dynamics = DynamicsSpec::stationary(vec![0.9, 0.2]);
    let hp = HyperParams::constant(0.05, 1.0, 1, rounds);
    let run = run_training(
        Algorithm::FedAwe,
        &objs,
        &dynamics,
        &hp,
        &NoiseSpec::gaussian(0.1),
        &[0.0],
        seed,
        RunOptions {
            metrics: false,
            record_trace: true,
            track_auxiliary: false,
        },
    )
    .unwrap();
    let trace = run.trace.unwrap();
    assert!(verify_inactive_identity(&trace, &objs).unwrap().passed());
    for t in 0..=rounds {
        let z = trace.auxiliary_at(t, &objs).unwrap();
        assert!(young_relation_holds(&trace.models[t], &z, 1e-9));
    }
    let g = grad_norm_trajectory(&trace, &objs).unwrap();
    assert_eq!(g.per_round.len(), rounds);
    g.time_average()
}

#[test]
fn time_average_shrinks_with_horizon() {
    for seed in 0..3 {
        let short = example1_average(200, seed);
        let long = example1_average(800, seed);
        assert!(long < short, "seed {seed}: T=200 {short}, T=800 {long}");
    }
}
