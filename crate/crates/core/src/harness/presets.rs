//! Named desk-scale studies.
//!
//! - `example1_bias`: two clients with `F_1 = x^2/2`, `F_2 = (x - 100)^2/2`
//!   and fixed participation probabilities on a grid. FedAvg over active
//!   clients settles at a probability-weighted point instead of 50.
//! - `example2_nonstationary`: logistic task under sine-modulated uniform
//!   availability for a grid of `(gamma, p)`.
//! - `speedup`: FedAWE under uniform participation for growing `m`.
//! - `ordering`: FedAWE against both FedAvg variants under sine dynamics with
//!   class-dependent availability.

use serde::{Deserialize, Serialize};

use crate::algorithms::{step, Algorithm, HyperParams, LrSchedule, RoundEnv, ServerState};
use crate::availability::{DynamicsFamily, DynamicsSpec, CLASS_CAPS_10, DEFAULT_P_MIN};
use crate::error::{Result, SimError};
use crate::objectives::{ClassBlobs, NoiseSpec, Objective};
use crate::par;
use crate::rng::{self, SimRng, StreamKind};
use crate::stats::Summary;

use super::config::{BaseProbConfig, DynamicsConfig, ExperimentConfig, HyperConfig, ObjectiveConfig};
use super::run_experiment;

pub const NAMES: [&str; 4] = ["example1_bias", "example2_nonstationary", "speedup", "ordering"];

/// `E[x]` at the fixed point of FedAvg over active clients with two
/// one-dimensional quadratics: weight each availability pattern by its
/// probability and the pull it exerts, conditioned on someone being active.
pub fn closed_form_fixed_point(p1: f64, p2: f64, u1: f64, u2: f64) -> f64 {
    let both = p1 * p2;
    (both * 0.5 * (u1 + u2) + p1 * (1.0 - p2) * u1 + (1.0 - p1) * p2 * u2) / (p1 + p2 - both)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    pub grid: Vec<f64>,
    pub replications: usize,
    pub rounds: usize,
    pub eta_l: f64,
    /// Share of final rounds averaged into `x_output`.
    pub tail_fraction: f64,
    pub minimizers: [f64; 2],
    pub seed: u64,
}

impl Default for BiasParams {
    fn default() -> Self {
        Self {
            grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            replications: 10,
            rounds: 20_000,
            eta_l: 0.05,
            tail_fraction: 0.2,
            minimizers: [0.0, 100.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub p1: f64,
    pub p2: f64,
    pub fedavg: f64,
    pub fedavg_se: f64,
    pub fedawe: f64,
    pub fedawe_se: f64,
    pub closed_form: f64,
}

/// Mean of the reported model over the final rounds of one noiseless run.
fn tail_output(
    algorithm: Algorithm,
    objectives: &[Objective],
    dynamics: &DynamicsSpec,
    hp: &HyperParams,
    tail_start: usize,
    seed: u64,
) -> Result<f64> {
    let m = objectives.len();
    let mut availability = rng::stream(seed, StreamKind::Availability, 0);
    let mut rngs: Vec<SimRng> = (0..m).map(|i| rng::stream(seed, StreamKind::GradientNoise, i as u64)).collect();
    let mut state = ServerState::new(vec![0.0], m, algorithm);
    let noise = NoiseSpec::none();
    let env = RoundEnv {
        objectives,
        noise: &noise,
        hp,
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for t in 0..hp.rounds {
        let active = dynamics.sample_active(t, &mut availability);
        step(algorithm, &mut state, &active, &[], &env, &mut rngs)?;
        if t >= tail_start {
            sum += state.output_model(algorithm)[0];
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

pub fn example1_bias(params: &BiasParams) -> Result<Vec<BiasPoint>> {
    if let Some(p) = params.grid.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(SimError::invalid(format!("grid value {p} is outside (0, 1]")));
    }
    if params.replications == 0 || params.rounds == 0 {
        return Err(SimError::invalid("need at least one replication and one round"));
    }
    if !(params.tail_fraction > 0.0 && params.tail_fraction <= 1.0) {
        return Err(SimError::invalid("tail_fraction must lie in (0, 1]"));
    }
    let hp = HyperParams::constant(params.eta_l, 1.0, 1, params.rounds);
    hp.validate()?;
    let tail_len = ((params.rounds as f64 * params.tail_fraction).round() as usize).max(1);
    let tail_start = params.rounds - tail_len.min(params.rounds);
    let [u1, u2] = params.minimizers;
    let objectives = vec![Objective::quadratic(vec![u1]), Objective::quadratic(vec![u2])];

    let mut jobs = Vec::new();
    for &p1 in &params.grid {
        for &p2 in &params.grid {
            for r in 0..params.replications {
                jobs.push((p1, p2, r));
            }
        }
    }
    let outputs = par::map_vec(jobs, |(p1, p2, r)| -> Result<(f64, f64)> {
        let dynamics = DynamicsSpec::stationary(vec![p1, p2]);
        let seed = rng::split_seed(params.seed, StreamKind::Replication, r as u64);
        Ok((
            tail_output(Algorithm::FedAvgActive, &objectives, &dynamics, &hp, tail_start, seed)?,
            tail_output(Algorithm::FedAwe, &objectives, &dynamics, &hp, tail_start, seed)?,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let reps = params.replications;
    let mut points = Vec::with_capacity(outputs.len() / reps);
    for (k, chunk) in outputs.chunks(reps).enumerate() {
        let p1 = params.grid[k / params.grid.len()];
        let p2 = params.grid[k % params.grid.len()];
        let avg = Summary::of(chunk.iter().map(|c| c.0));
        let awe = Summary::of(chunk.iter().map(|c| c.1));
        points.push(BiasPoint {
            p1,
            p2,
            fedavg: avg.mean,
            fedavg_se: avg.std_err(),
            fedawe: awe.mean,
            fedawe_se: awe.std_err(),
            closed_form: closed_form_fixed_point(p1, p2, u1, u2),
        });
    }
    Ok(points)
}

fn logistic_config(name: &str, clients: usize, alpha: f64, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        preset: Some(name.into()),
        clients,
        algorithms: vec![Algorithm::FedAwe],
        seeds,
        objective: ObjectiveConfig::Logistic {
            alpha,
            samples_per_client: 200,
            blobs: ClassBlobs::default(),
        },
        dynamics: DynamicsConfig {
            family: DynamicsFamily::Stationary,
            base: BaseProbConfig::Uniform { p: 0.5 },
            gamma: 0.3,
            period: 20,
            delta0: 0.1,
            staircase_low: 0.4,
        },
        hyper: HyperConfig {
            rounds: 300,
            local_steps: 5,
            eta_g: 1.0,
            schedule: LrSchedule::InvSqrt { eta0: 0.1 },
            overrides: Default::default(),
        },
        noise: NoiseSpec::minibatch(16),
        init: 0.0,
        summary_window: 50,
    }
}

/// FedAWE, FedAvg-active and FedAvg-all on the class-skewed logistic task
/// under sine dynamics with class-contribution base probabilities.
pub fn ordering_config(seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = logistic_config("ordering", 100, 0.1, seeds);
    cfg.algorithms = vec![Algorithm::FedAwe, Algorithm::FedAvgActive, Algorithm::FedAvgAll];
    cfg.dynamics.family = DynamicsFamily::Sine;
    cfg.dynamics.base = BaseProbConfig::ClassContribution {
        caps: CLASS_CAPS_10.to_vec(),
        p_min: DEFAULT_P_MIN,
    };
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryParams {
    pub gammas: Vec<f64>,
    pub ps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub clients: usize,
    pub rounds: usize,
}

impl Default for NonstationaryParams {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 0.1, 0.3, 0.5],
            ps: vec![0.1, 0.3],
            seeds: vec![0, 1, 2],
            clients: 100,
            rounds: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryRow {
    pub gamma: f64,
    pub p: f64,
    pub algorithm: String,
    pub loss_mean: f64,
    pub loss_sd: f64,
    pub accuracy_mean: Option<f64>,
    pub accuracy_sd: Option<f64>,
}

pub fn example2_nonstationary(params: &NonstationaryParams) -> Result<Vec<NonstationaryRow>> {
    let mut rows = Vec::new();
    for &gamma in &params.gammas {
        for &p in &params.ps {
            let mut cfg = logistic_config("example2_nonstationary", params.clients, 0.1, params.seeds.clone());
            cfg.algorithms = vec![Algorithm::FedAwe, Algorithm::FedAvgActive];
            cfg.dynamics.family = DynamicsFamily::Sine;
            cfg.dynamics.gamma = gamma;
            cfg.dynamics.base = BaseProbConfig::Uniform { p };
            cfg.hyper.rounds = params.rounds;
            let out = run_experiment(&cfg)?;
            for s in out.summaries {
                rows.push(NonstationaryRow {
                    gamma,
                    p,
                    algorithm: s.algorithm,
                    loss_mean: s.final_loss_mean,
                    loss_sd: s.final_loss_sd,
                    accuracy_mean: s.final_accuracy_mean,
                    accuracy_sd: s.final_accuracy_sd,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupParams {
    pub clients: Vec<usize>,
    pub delta: f64,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub eta0: f64,
    pub alpha: f64,
    pub batch_size: usize,
}

impl Default for SpeedupParams {
    fn default() -> Self {
        Self {
            clients: vec![1, 8, 16, 32],
            delta: 0.5,
            rounds: 500,
            seeds: vec![0, 1, 2],
            eta0: 1.0,
            alpha: 1e6,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub clients: usize,
    pub expected_active: f64,
    pub avg_grad_norm_sq_mean: f64,
    pub avg_grad_norm_sq_sd: f64,
}

pub fn speedup_config(params: &SpeedupParams, clients: usize) -> ExperimentConfig {
    let mut cfg = logistic_config("speedup", clients, params.alpha, params.seeds.clone());
    cfg.dynamics.base = BaseProbConfig::Uniform { p: params.delta };
    cfg.hyper.rounds = params.rounds;
    cfg.hyper.local_steps = 1;
    cfg.hyper.schedule = LrSchedule::InvSqrt { eta0: params.eta0 };
    cfg.noise = NoiseSpec::minibatch(params.batch_size);
    cfg
}

/// Time-averaged `||grad F(xbar)||^2` of FedAWE for each client count.
pub fn speedup(params: &SpeedupParams) -> Result<Vec<SpeedupRow>> {
    params
        .clients
        .iter()
        .map(|&m| {
            let out = run_experiment(&speedup_config(params, m))?;
            let s = &out.summaries[0];
            Ok(SpeedupRow {
                clients: m,
                expected_active: m as f64 * params.delta,
                avg_grad_norm_sq_mean: s.avg_grad_norm_sq_mean,
                avg_grad_norm_sq_sd: s.avg_grad_norm_sq_sd,
            })
        })
        .collect()
}

/// Whether the averaged gradient norm never grows with the client count.
pub fn is_non_increasing(rows: &[SpeedupRow]) -> bool {
    rows.windows(2).all(|w| w[1].avg_grad_norm_sq_mean <= w[0].avg_grad_norm_sq_mean)
}
