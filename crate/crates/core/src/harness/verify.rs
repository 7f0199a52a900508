//! Invariant suites run by `fedawe-sim verify`.

use rand::Rng;
use serde::Serialize;

use crate::algorithms::{run_training, Algorithm, HyperParams, RunOptions};
use crate::availability::{unavailability_moments, ActiveSet, AvailabilityState, DynamicsFamily, DynamicsSpec, GapMoments};
use crate::diagnostics::{verify_inactive_identity, IdentityReport};
use crate::error::Result;
use crate::mixing::{empirical_rho, rho_bound, MixingMatrix, RhoEstimate};
use crate::objectives::{NoiseSpec, Objective};
use crate::par;
use crate::rng::{self, StreamKind};

use super::config::ExperimentConfig;
use super::output::write_csv;
use super::run_experiment;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReequalizationReport {
    pub traces: usize,
    /// `(client, R)` pairs at which the identity was checked.
    pub checks: u64,
    pub violations: u64,
}

/// Random base probabilities in `[0.05, 1)` for trace `index`.
fn random_spec(family: DynamicsFamily, m: usize, seed: u64, index: usize) -> DynamicsSpec {
    let mut r = rng::stream(seed, StreamKind::Replication, index as u64);
    DynamicsSpec::new(family, (0..m).map(|_| 0.05 + 0.95 * r.random::<f64>()).collect())
}

/// Echo weights re-equalise participation: for every client active in round
/// `R - 1`, `sum_{t < R, i in A^t} (t - tau_i(t)) = R` in integer arithmetic.
pub fn reequalization(family: DynamicsFamily, m: usize, rounds: usize, traces: usize, seed: u64) -> ReequalizationReport {
    let per_trace = par::map_range(traces, |k| {
        let spec = random_spec(family, m, seed, k);
        let mut r = rng::stream(seed, StreamKind::Availability, k as u64);
        let mut state = AvailabilityState::new(m);
        let mut weight = vec![0u64; m];
        let (mut checks, mut violations) = (0u64, 0u64);
        for t in 0..rounds {
            let active = spec.sample_active(t, &mut r);
            for &i in active.members() {
                weight[i] += state.gap(i);
            }
            state.advance(&active);
            for &i in active.members() {
                checks += 1;
                if weight[i] != t as u64 + 1 {
                    violations += 1;
                }
            }
        }
        (checks, violations)
    });
    per_trace.into_iter().fold(
        ReequalizationReport {
            traces,
            ..Default::default()
        },
        |mut acc, (c, v)| {
            acc.checks += c;
            acc.violations += v;
            acc
        },
    )
}

/// Largest row/column-sum error of `W` over `samples` random active sets with
/// `m` drawn from `1..=max_m`. Sample 0 is the empty set.
pub fn mixing_stochasticity(samples: usize, max_m: usize, seed: u64) -> (f64, bool) {
    let errs = par::map_range(samples, |k| {
        let mut r = rng::stream(seed, StreamKind::Estimator, k as u64);
        let m = 1 + r.random_range(0..max_m.max(1));
        let q: f64 = r.random();
        let mask: Vec<bool> = (0..m).map(|_| k != 0 && r.random::<f64>() < q).collect();
        let w = MixingMatrix::build(&ActiveSet::from_mask(&mask));
        (w.stochasticity_error(), w.is_symmetric())
    });
    errs.into_iter().fold((0.0, true), |(e, s), (e2, s2)| (f64::max(e, e2), s && s2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoCheck {
    pub delta: f64,
    pub m: usize,
    pub estimate: RhoEstimate,
    pub bound: f64,
}

impl RhoCheck {
    pub fn passed(&self) -> bool {
        self.estimate.lambda2 <= self.bound + 3.0 * self.estimate.std_err
    }
}

pub fn rho_check(delta: f64, m: usize, samples: usize, seed: u64) -> Result<RhoCheck> {
    Ok(RhoCheck {
        delta,
        m,
        estimate: empirical_rho(delta, m, samples, seed)?,
        bound: rho_bound(delta, m)?,
    })
}

/// Gap moments for `spec`; passes when every client is within the bounds up
/// to 3 standard errors.
pub fn gap_moments_check(spec: &DynamicsSpec, horizon: usize, replications: usize, seed: u64) -> Result<(Vec<GapMoments>, bool)> {
    let g = unavailability_moments(spec, horizon, replications, seed)?;
    let ok = g.iter().all(|x| x.within_bounds(3.0));
    Ok((g, ok))
}

/// Merges identity reports from `traces` random FedAWE runs on quadratics
/// with heterogeneous availability.
pub fn auxiliary_identities(traces: usize, sigma: f64, m: usize, rounds: usize, seed: u64) -> Result<IdentityReport> {
    let reports = par::map_range(traces, |k| -> Result<IdentityReport> {
        let mut r = rng::stream(seed, StreamKind::Data, k as u64);
        let objs: Vec<Objective> = (0..m)
            .map(|_| Objective::quadratic((0..3).map(|_| r.random_range(-10.0..10.0)).collect()))
            .collect();
        let family = DynamicsFamily::ALL[k % 3];
        let spec = random_spec(family, m, seed, k);
        let hp = HyperParams::constant(0.02, 1.0, 1 + k % 3, rounds);
        let run = run_training(
            Algorithm::FedAwe,
            &objs,
            &spec,
            &hp,
            &NoiseSpec::gaussian(sigma),
            &[0.0; 3],
            rng::split_seed(seed, StreamKind::Replication, k as u64),
            RunOptions {
                metrics: false,
                record_trace: true,
                track_auxiliary: false,
            },
        )?;
        verify_inactive_identity(run.trace.as_ref().expect("trace requested"), &objs)
    });
    let mut total = IdentityReport {
        tolerance: crate::diagnostics::IDENTITY_TOL,
        ..Default::default()
    };
    for rep in reports {
        let rep = rep?;
        total.active_checks += rep.active_checks;
        total.inactive_checks += rep.inactive_checks;
        total.max_active_dev = total.max_active_dev.max(rep.max_active_dev);
        total.max_inactive_dev = total.max_inactive_dev.max(rep.max_inactive_dev);
        total.max_tracking_dev = total.max_tracking_dev.max(rep.max_tracking_dev);
    }
    Ok(total)
}

/// Largest approximation error seen along full-participation FedAWE runs.
pub fn full_participation_approx_error(traces: usize, sigma: f64, seed: u64) -> Result<f64> {
    let worst = par::map_range(traces, |k| -> Result<f64> {
        let objs: Vec<Objective> = (0..5).map(|i| Objective::quadratic(vec![i as f64, -(k as f64)])).collect();
        let spec = DynamicsSpec::stationary(vec![1.0; 5]);
        let hp = HyperParams::constant(0.05, 1.0, 2, 50);
        let run = run_training(Algorithm::FedAwe, &objs, &spec, &hp, &NoiseSpec::gaussian(sigma), &[1.0, 1.0], seed + k as u64, RunOptions::default())?;
        Ok(run.records.iter().filter_map(|r| r.approx_error).fold(0.0, f64::max))
    });
    worst.into_iter().try_fold(0.0, |a, w| Ok(f64::max(a, w?)))
}

/// Runs `cfg` twice and compares the CSV bytes.
pub fn csv_determinism(cfg: &ExperimentConfig) -> Result<bool> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_csv(&run_experiment(cfg)?.rows(false), &mut a)?;
    write_csv(&run_experiment(cfg)?.rows(false), &mut b)?;
    Ok(a == b)
}

fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = super::presets::ordering_config(vec![seed]);
    cfg.clients = 8;
    cfg.hyper.rounds = 20;
    cfg.algorithms = Algorithm::ALL.to_vec();
    cfg
}

/// Reduced-size versions of the invariant checks, seconds in total.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for family in DynamicsFamily::ALL {
        let r = reequalization(family, 10, 200, 100, seed);
        out.push(CheckResult::new(
            &format!("reequalization/{}", family.name()),
            r.violations == 0 && r.checks > 0,
            format!("{} checks, {} violations", r.checks, r.violations),
        ));
    }
    let (err, sym) = mixing_stochasticity(2000, 12, seed);
    out.push(CheckResult::new(
        "mixing/doubly_stochastic",
        err <= 1e-12 && sym,
        format!("max error {err:.3e}, symmetric {sym}"),
    ));
    for &(delta, m) in &[(0.3, 5), (0.9, 10)] {
        let c = rho_check(delta, m, 5000, seed)?;
        out.push(CheckResult::new(
            &format!("mixing/rho_bound/delta={delta}/m={m}"),
            c.passed(),
            format!("lambda2 {:.5} +- {:.5}, bound {:.5}", c.estimate.lambda2, c.estimate.std_err, c.bound),
        ));
    }
    for spec in [
        DynamicsSpec::uniform(DynamicsFamily::Stationary, 3, 0.5),
        DynamicsSpec::new(DynamicsFamily::Sine, vec![0.3, 0.6, 0.9]),
    ] {
        let (g, ok) = gap_moments_check(&spec, 2000, 40, seed)?;
        let worst = g.iter().map(|x| x.mean / x.mean_bound()).fold(0.0, f64::max);
        out.push(CheckResult::new(
            &format!("gaps/{}", spec.family.name()),
            ok,
            format!("largest mean / bound {worst:.3}"),
        ));
    }
    for sigma in [0.0, 1.0] {
        let rep = auxiliary_identities(10, sigma, 6, 60, seed)?;
        out.push(CheckResult::new(
            &format!("auxiliary/sigma={sigma}"),
            rep.passed(),
            format!(
                "active dev {:.2e}, inactive dev {:.2e}, tracking dev {:.2e}",
                rep.max_active_dev, rep.max_inactive_dev, rep.max_tracking_dev
            ),
        ));
    }
    let approx = full_participation_approx_error(5, 1.0, seed)?;
    out.push(CheckResult::new("auxiliary/full_participation", approx == 0.0, format!("max {approx:e}")));
    let same = csv_determinism(&tiny_config(seed))?;
    out.push(CheckResult::new("determinism/csv", same, format!("identical bytes {same}")));
    Ok(out)
}
