//! Experiment plumbing: configs, presets, replication and result files.
//!
//! Every run is a pure function of `(config, seed)`. Objective data is drawn
//! from the `(seed, Data, 0)` stream; class-contribution probabilities are
//! drawn from the same stream right after the data.

pub mod config;
pub mod output;
pub mod presets;
pub mod verify;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algorithms::{run_training, Algorithm, RunOptions, Trajectory};
use crate::availability::{base_probs, ClassContribution, DynamicsSpec};
use crate::error::{Result, SimError};
use crate::objectives::{generate_dirichlet_partition, LogisticObjective, Objective};
use crate::par;
use crate::rng::{self, StreamKind};
use crate::stats::Summary;

pub use config::{BaseProbConfig, DynamicsConfig, ExperimentConfig, HyperConfig, ObjectiveConfig};
pub use output::{Manifest, ResultRow};

/// Objectives and availability for one seed.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objectives: Vec<Objective>,
    pub dynamics: DynamicsSpec,
    pub x0: Vec<f64>,
}

/// Materialises the problem a config describes for `seed`.
pub fn build_problem(cfg: &ExperimentConfig, seed: u64) -> Result<Problem> {
    let mut data_rng = rng::stream(seed, StreamKind::Data, 0);
    let m = cfg.clients;
    let (objectives, nus) = match &cfg.objective {
        ObjectiveConfig::Quadratic { minimizers } => (minimizers.iter().cloned().map(Objective::quadratic).collect::<Vec<_>>(), None),
        ObjectiveConfig::Logistic {
            alpha,
            samples_per_client,
            blobs,
        } => {
            let parts = generate_dirichlet_partition(*alpha, m, blobs, *samples_per_client, &mut data_rng)?;
            let nus: Vec<Vec<f64>> = parts.iter().map(|p: &LogisticObjective| p.class_dist().to_vec()).collect();
            (parts.into_iter().map(Objective::Logistic).collect(), Some(nus))
        }
    };
    let d = &cfg.dynamics;
    let base_p = match &d.base {
        BaseProbConfig::Uniform { p } => vec![*p; m],
        BaseProbConfig::Explicit { p } => p.clone(),
        BaseProbConfig::ClassContribution { caps, p_min } => {
            let nus = nus.ok_or_else(|| SimError::config("dynamics.base.mode", "class_contribution needs a logistic objective"))?;
            let phi = ClassContribution::sample(caps, &mut data_rng)?;
            base_probs(&nus, &phi, *p_min)?
        }
    };
    let dynamics = DynamicsSpec {
        family: d.family,
        base_p,
        gamma: d.gamma,
        period: d.period,
        delta0: d.delta0,
        staircase_low: d.staircase_low,
    };
    let dim = objectives[0].dim();
    Ok(Problem {
        objectives,
        dynamics,
        x0: vec![cfg.init; dim],
    })
}

/// One `(algorithm, seed)` run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub elapsed_secs: f64,
}

impl RunResult {
    pub fn rows(&self, timing: bool) -> Vec<ResultRow> {
        let per_round = self.elapsed_secs / self.trajectory.records.len().max(1) as f64;
        self.trajectory
            .records
            .iter()
            .map(|r| ResultRow {
                algorithm: self.algorithm.name().to_string(),
                seed: self.seed,
                round: r.round,
                loss: r.loss,
                grad_norm_sq: r.grad_norm_sq,
                consensus_error: r.consensus_error,
                approx_error: r.approx_error,
                accuracy: r.accuracy,
                active_count: r.active_count,
                wallclock: timing.then(|| per_round * (r.round + 1) as f64),
            })
            .collect()
    }

    /// Mean loss over the last `window` rounds.
    pub fn final_loss(&self, window: usize) -> f64 {
        tail_mean(self.trajectory.records.iter().map(|r| r.loss), window)
    }

    pub fn final_accuracy(&self, window: usize) -> Option<f64> {
        let acc: Vec<f64> = self.trajectory.records.iter().filter_map(|r| r.accuracy).collect();
        (!acc.is_empty()).then(|| tail_mean(acc.into_iter(), window))
    }

    /// Time-averaged squared gradient norm over every recorded round.
    pub fn avg_grad_norm_sq(&self) -> f64 {
        let r = &self.trajectory.records;
        r.iter().map(|x| x.grad_norm_sq).sum::<f64>() / r.len().max(1) as f64
    }
}

fn tail_mean(values: impl Iterator<Item = f64>, window: usize) -> f64 {
    let v: Vec<f64> = values.collect();
    let tail = &v[v.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Per-algorithm aggregate over seeds; spreads use the `n - 1` convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub algorithm: String,
    pub seeds: usize,
    pub final_loss_mean: f64,
    pub final_loss_sd: f64,
    pub final_accuracy_mean: Option<f64>,
    pub final_accuracy_sd: Option<f64>,
    pub avg_grad_norm_sq_mean: f64,
    pub avg_grad_norm_sq_sd: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Sorted by algorithm (config order), then seed (config order).
    pub runs: Vec<RunResult>,
    pub summaries: Vec<ReplicationSummary>,
}

impl ExperimentOutput {
    pub fn rows(&self, timing: bool) -> Vec<ResultRow> {
        self.runs.iter().flat_map(|r| r.rows(timing)).collect()
    }

    pub fn summary(&self, algorithm: Algorithm) -> Option<&ReplicationSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm.name())
    }
}

/// Runs every `(algorithm, seed)` pair of `cfg`. Pairs run in parallel; the
/// output order is fixed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let problems: Vec<Problem> = cfg.seeds.iter().map(|&s| build_problem(cfg, s)).collect::<Result<_>>()?;
    let jobs: Vec<(Algorithm, usize)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.seeds.len()).map(move |k| (a, k)))
        .collect();
    let runs = par::map_vec(jobs, |(algorithm, k)| {
        let p = &problems[k];
        let seed = cfg.seeds[k];
        let hp = cfg.hyper.for_algorithm(algorithm);
        let start = Instant::now();
        let trajectory = run_training(algorithm, &p.objectives, &p.dynamics, &hp, &cfg.noise, &p.x0, seed, RunOptions::default())?;
        Ok(RunResult {
            algorithm,
            seed,
            trajectory,
            elapsed_secs: start.elapsed().as_secs_f64(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summaries = cfg
        .algorithms
        .iter()
        .map(|&a| summarize(a, runs.iter().filter(|r| r.algorithm == a), cfg.summary_window))
        .collect();
    Ok(ExperimentOutput { runs, summaries })
}

fn summarize<'a>(algorithm: Algorithm, runs: impl Iterator<Item = &'a RunResult>, window: usize) -> ReplicationSummary {
    let runs: Vec<&RunResult> = runs.collect();
    let loss = Summary::of(runs.iter().map(|r| r.final_loss(window)));
    let grad = Summary::of(runs.iter().map(|r| r.avg_grad_norm_sq()));
    let acc: Option<Vec<f64>> = runs.iter().map(|r| r.final_accuracy(window)).collect();
    let acc = acc.filter(|a| !a.is_empty()).map(Summary::of);
    ReplicationSummary {
        algorithm: algorithm.name().to_string(),
        seeds: runs.len(),
        final_loss_mean: loss.mean,
        final_loss_sd: loss.std_dev,
        final_accuracy_mean: acc.map(|a| a.mean),
        final_accuracy_sd: acc.map(|a| a.std_dev),
        avg_grad_norm_sq_mean: grad.mean,
        avg_grad_norm_sq_sd: grad.std_dev,
    }
}

/// One axis of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `dynamics.gamma`.
    Gamma,
    /// Uniform base probability.
    P,
    /// Base local rate of the shared schedule.
    Eta,
    LocalSteps,
    Clients,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::P => "p",
            SweepAxis::Eta => "eta",
            SweepAxis::LocalSteps => "local_steps",
            SweepAxis::Clients => "clients",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, v: f64) -> Result<()> {
        let whole = || -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(SimError::config(format!("sweep.{}", self.name()), format!("{v} is not a positive integer")))
            }
        };
        match self {
            SweepAxis::Gamma => cfg.dynamics.gamma = v,
            SweepAxis::P => cfg.dynamics.base = BaseProbConfig::Uniform { p: v },
            SweepAxis::Eta => {
                cfg.hyper.schedule = match cfg.hyper.schedule {
                    crate::algorithms::LrSchedule::Constant { .. } => crate::algorithms::LrSchedule::Constant { eta: v },
                    crate::algorithms::LrSchedule::InvSqrt { .. } => crate::algorithms::LrSchedule::InvSqrt { eta0: v },
                }
            }
            SweepAxis::LocalSteps => cfg.hyper.local_steps = whole()?,
            SweepAxis::Clients => {
                if matches!(cfg.objective, ObjectiveConfig::Quadratic { .. }) {
                    return Err(SimError::config("sweep.clients", "client count sweeps need a logistic objective"));
                }
                if matches!(cfg.dynamics.base, BaseProbConfig::Explicit { .. }) {
                    return Err(SimError::config("sweep.clients", "explicit probabilities fix the client count"));
                }
                cfg.clients = whole()?;
            }
        }
        Ok(())
    }
}

/// A grid point of a sweep and its summaries.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub coords: Vec<(SweepAxis, f64)>,
    pub output: ExperimentOutput,
}

/// Axis values of one grid point and the config they produce.
pub type GridPoint = (Vec<(SweepAxis, f64)>, ExperimentConfig);

/// Cartesian grid over `axes` (first axis varies slowest). Points are
/// independent; output is in grid order.
pub fn expand_grid(base: &ExperimentConfig, axes: &[(SweepAxis, Vec<f64>)]) -> Result<Vec<GridPoint>> {
    let mut points = vec![(Vec::new(), base.clone())];
    for (axis, values) in axes {
        if values.is_empty() {
            return Err(SimError::config(format!("sweep.{}", axis.name()), "needs at least one value"));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for (coords, cfg) in &points {
            for &v in values {
                let mut c = cfg.clone();
                axis.apply(&mut c, v)?;
                c.validate().map_err(|e| config::in_field(&format!("sweep.{}", axis.name()), e))?;
                let mut k = coords.clone();
                k.push((*axis, v));
                next.push((k, c));
            }
        }
        points = next;
    }
    Ok(points)
}

/// One line of the sweep summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    /// `axis=value` pairs joined by `;`.
    pub coords: String,
    pub algorithm: String,
    pub final_loss_mean: f64,
    pub final_loss_sd: f64,
    pub avg_grad_norm_sq_mean: f64,
}

pub fn sweep_table(points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut table = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let coords = p.coords.iter().map(|(a, v)| format!("{}={v}", a.name())).collect::<Vec<_>>().join(";");
        for s in &p.output.summaries {
            table.push(SweepRow {
                point: k,
                coords: coords.clone(),
                algorithm: s.algorithm.clone(),
                final_loss_mean: s.final_loss_mean,
                final_loss_sd: s.final_loss_sd,
                avg_grad_norm_sq_mean: s.avg_grad_norm_sq_mean,
            });
        }
    }
    table
}

pub fn run_sweep(base: &ExperimentConfig, axes: &[(SweepAxis, Vec<f64>)]) -> Result<Vec<SweepPoint>> {
    let grid = expand_grid(base, axes)?;
    par::map_vec(grid, |(coords, cfg)| run_experiment(&cfg).map(|output| SweepPoint { coords, output }))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_config() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
clients = 3
algorithms = ["fedawe", "fedavg-active", "mifa"]
seeds = [4, 5]
[objective]
kind = "quadratic"
minimizers = [[0.0, 1.0], [2.0, 3.0], [10.0, -1.0]]
[dynamics]
family = "sine"
base = { mode = "explicit", p = [0.9, 0.5, 0.2] }
[hyper]
rounds = 60
local_steps = 2
schedule = { kind = "constant", eta = 0.05 }
[noise]
sigma = 0.5
"#,
        )
        .unwrap()
    }

    #[test]
    fn experiment_layout_and_determinism() {
        let cfg = quad_config();
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.runs.len(), 6);
        let order: Vec<(Algorithm, u64)> = a.runs.iter().map(|r| (r.algorithm, r.seed)).collect();
        assert_eq!(order[0], (Algorithm::FedAwe, 4));
        assert_eq!(order[1], (Algorithm::FedAwe, 5));
        assert_eq!(order[5], (Algorithm::Mifa, 5));
        let rows = a.rows(false);
        assert_eq!(rows.len(), 360);
        assert!(rows.iter().all(|r| r.wallclock.is_none()));
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(rows, b.rows(false));
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.summary(Algorithm::Mifa).unwrap().seeds, 2);
    }

    #[test]
    fn class_contribution_problem() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
clients = 6
algorithms = ["fedawe"]
seeds = [1]
[objective]
kind = "logistic"
alpha = 0.1
samples_per_client = 20
[dynamics]
family = "sine"
base = { mode = "class_contribution" }
[hyper]
rounds = 3
schedule = { kind = "inv-sqrt", eta0 = 0.1 }
"#,
        )
        .unwrap();
        let p = build_problem(&cfg, 1).unwrap();
        assert_eq!(p.objectives.len(), 6);
        assert_eq!(p.x0.len(), 210);
        assert!(p.dynamics.base_p.iter().all(|&q| (0.02..=1.0).contains(&q)));
        assert_eq!(build_problem(&cfg, 1).unwrap().dynamics, p.dynamics);
        assert_ne!(build_problem(&cfg, 2).unwrap().dynamics, p.dynamics);
    }

    #[test]
    fn grid_expansion() {
        let cfg = quad_config();
        let grid = expand_grid(&cfg, &[(SweepAxis::Gamma, vec![0.0, 0.5]), (SweepAxis::LocalSteps, vec![1.0, 2.0, 4.0])]).unwrap();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[1].0, vec![(SweepAxis::Gamma, 0.0), (SweepAxis::LocalSteps, 2.0)]);
        assert_eq!(grid[5].1.hyper.local_steps, 4);
        assert_eq!(grid[5].1.dynamics.gamma, 0.5);
        let err = expand_grid(&cfg, &[(SweepAxis::Gamma, vec![2.0])]).unwrap_err();
        assert!(matches!(err, SimError::Config { ref field, .. } if field == "dynamics.gamma"), "{err}");
        assert!(expand_grid(&cfg, &[(SweepAxis::LocalSteps, vec![1.5])]).is_err());
        assert!(expand_grid(&cfg, &[(SweepAxis::Clients, vec![4.0])]).is_err());
    }
}
