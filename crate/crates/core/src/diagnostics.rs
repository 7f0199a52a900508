//! Analysis-side observers of a FedAWE run.
//!
//! The auxiliary sequence
//!
//! ```text
//! z_i^t = x_i^t - eta_l eta_g s (t - tau_i(t) - 1) grad F_i(x_i^{tau_i(t)+1})
//! ```
//!
//! tracks where client `i` would be had it kept descending while idle. It
//! coincides with `x_i^t` right after an active round and drifts by
//! `eta_l eta_g s grad F_i(.)` per idle round. Nothing here feeds back into the
//! algorithm; everything can be recomputed from a recorded [`Trace`].

use rand::Rng;

use crate::algorithms::{HyperParams, ServerState};
use crate::availability::ActiveSet;
use crate::error::{Result, SimError};
use crate::mixing;
use crate::objectives::{self, NoiseSpec, Objective};
use crate::stats::Summary;
use crate::vector::{self, ModelVector};

/// Absolute per-coordinate tolerance for the exact identities.
pub const IDENTITY_TOL: f64 = 1e-9;

/// From-scratch value of `z_i^t`.
///
/// `snapshot` is `x_i^{tau_i(t)+1}`, the model the client has held since its
/// last active round (the initial model if it was never active).
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_value(
    objective: &Objective,
    x: &[f64],
    snapshot: &[f64],
    tau: i64,
    t: usize,
    eta_l: f64,
    eta_g: f64,
    local_steps: usize,
) -> Result<ModelVector> {
    let idle = t as i64 - tau - 1;
    if idle < 0 {
        return Err(SimError::invalid(format!("tau = {tau} is not behind round {t}")));
    }
    let grad = objective.true_grad(snapshot)?;
    let mut z = x.to_vec();
    vector::axpy(-(eta_l * eta_g * local_steps as f64 * idle as f64), &grad, &mut z);
    Ok(z)
}

/// `(1/m) sum_i ||x_i - z_i||^2`.
pub fn approximation_error(models: &[ModelVector], aux: &[ModelVector]) -> f64 {
    if models.is_empty() {
        return 0.0;
    }
    models.iter().zip(aux).map(|(x, z)| vector::sq_dist(x, z)).sum::<f64>() / models.len() as f64
}

/// Incrementally maintained auxiliary sequence.
///
/// After an active round `z_i` is reset to the new model and the gradient at
/// that model is cached; after an idle round `z_i` moves by `-coeff * grad`.
#[derive(Debug, Clone)]
pub struct AuxiliaryTracker {
    coeff: f64,
    z: Vec<ModelVector>,
    snapshot_grad: Vec<ModelVector>,
}

impl AuxiliaryTracker {
    /// `coeff = eta_l * eta_g * s`; `initial` are the round-0 client models.
    pub fn new(coeff: f64, objectives: &[Objective], initial: &[ModelVector]) -> Result<Self> {
        let snapshot_grad = objectives
            .iter()
            .zip(initial)
            .map(|(o, x)| o.true_grad(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coeff,
            z: initial.to_vec(),
            snapshot_grad,
        })
    }

    pub fn z(&self) -> &[ModelVector] {
        &self.z
    }

    /// Advances from `z^t` to `z^{t+1}` given `A^t` and the models `x^{t+1}`.
    pub fn observe(&mut self, active: &ActiveSet, models_after: &[ModelVector], objectives: &[Objective]) -> Result<()> {
        let mask = active.mask();
        for (i, &was_active) in mask.iter().enumerate() {
            if was_active {
                self.z[i].copy_from_slice(&models_after[i]);
                self.snapshot_grad[i] = objectives[i].true_grad(&models_after[i])?;
            } else {
                vector::axpy(-self.coeff, &self.snapshot_grad[i], &mut self.z[i]);
            }
        }
        Ok(())
    }

    pub fn approximation_error(&self, models: &[ModelVector]) -> f64 {
        approximation_error(models, &self.z)
    }
}

/// Full record of a run: client models and `tau` at every round boundary and
/// the realised active sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub eta_g: f64,
    pub local_steps: usize,
    /// Local rate used in round `t`.
    pub eta_l: Vec<f64>,
    /// `models[t][i] = x_i^t` for `t = 0..=T`.
    pub models: Vec<Vec<ModelVector>>,
    /// `tau[t][i] = tau_i(t)` for `t = 0..=T`.
    pub tau: Vec<Vec<i64>>,
    /// `active[t] = A^t` for `t = 0..T`.
    pub active: Vec<ActiveSet>,
}

impl Trace {
    pub fn start(state: &ServerState, hp: &HyperParams) -> Self {
        Self {
            eta_g: hp.eta_g,
            local_steps: hp.local_steps,
            eta_l: Vec::new(),
            models: vec![state.clients().to_vec()],
            tau: vec![state.availability().tau().to_vec()],
            active: Vec::new(),
        }
    }

    pub fn push(&mut self, active: &ActiveSet, after: &ServerState, eta_l: f64) {
        self.eta_l.push(eta_l);
        self.models.push(after.clients().to_vec());
        self.tau.push(after.availability().tau().to_vec());
        self.active.push(active.clone());
    }

    pub fn rounds(&self) -> usize {
        self.active.len()
    }

    pub fn clients(&self) -> usize {
        self.models.first().map_or(0, Vec::len)
    }

    /// The single local rate of a constant-schedule trace.
    pub fn constant_eta_l(&self) -> Result<f64> {
        let Some(&first) = self.eta_l.first() else {
            return Ok(0.0);
        };
        if self.eta_l.iter().any(|&e| e != first) {
            return Err(SimError::invalid("auxiliary sequence needs a constant local learning rate"));
        }
        Ok(first)
    }

    /// `x_i^{tau_i(t)+1}` looked up from the recorded history.
    pub fn snapshot(&self, i: usize, t: usize) -> &[f64] {
        let start = (self.tau[t][i] + 1) as usize;
        &self.models[start][i]
    }

    /// `z^t` recomputed from scratch for every client.
    pub fn auxiliary_at(&self, t: usize, objectives: &[Objective]) -> Result<Vec<ModelVector>> {
        let eta_l = self.constant_eta_l()?;
        (0..self.clients())
            .map(|i| {
                auxiliary_value(
                    &objectives[i],
                    &self.models[t][i],
                    self.snapshot(i, t),
                    self.tau[t][i],
                    t,
                    eta_l,
                    self.eta_g,
                    self.local_steps,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdentityReport {
    pub active_checks: usize,
    pub inactive_checks: usize,
    /// Largest `|z_i^{t+1} - x_i^{t+1}|` over clients in `A^t`.
    pub max_active_dev: f64,
    /// Largest deviation of `x_i^{t+1} - z_i^{t+1}` from
    /// `c (t - tau_i(t+1)) grad F_i(x_i^{tau_i(t+1)+1})` over clients outside `A^t`.
    pub max_inactive_dev: f64,
    /// Largest gap between the incremental `z` and the from-scratch value.
    pub max_tracking_dev: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.max_active_dev <= self.tolerance && self.max_inactive_dev <= self.tolerance && self.max_tracking_dev <= self.tolerance
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Replays a FedAWE trace with an incremental [`AuxiliaryTracker`] and checks,
/// round by round:
///
/// - active clients: `z_i^{t+1} = x_i^{t+1}`;
/// - idle clients: `x_i^{t+1} - z_i^{t+1} = c (t - tau_i(t+1)) grad F_i(x_i^{tau_i(t+1)+1})`,
///   with the snapshot model taken from the recorded history;
/// - the incremental `z` agrees with [`auxiliary_value`] recomputed from scratch.
pub fn verify_inactive_identity(trace: &Trace, objectives: &[Objective]) -> Result<IdentityReport> {
    let eta_l = trace.constant_eta_l()?;
    let coeff = eta_l * trace.eta_g * trace.local_steps as f64;
    let mut tracker = AuxiliaryTracker::new(coeff, objectives, &trace.models[0])?;
    let mut report = IdentityReport {
        tolerance: IDENTITY_TOL,
        ..Default::default()
    };
    for t in 0..trace.rounds() {
        let active = &trace.active[t];
        let after = &trace.models[t + 1];
        tracker.observe(active, after, objectives)?;
        let scratch = trace.auxiliary_at(t + 1, objectives)?;
        for i in 0..trace.clients() {
            let z = &tracker.z()[i];
            report.max_tracking_dev = report.max_tracking_dev.max(max_abs_diff(z, &scratch[i]));
            if active.contains(i) {
                report.active_checks += 1;
                report.max_active_dev = report.max_active_dev.max(max_abs_diff(z, &after[i]));
            } else {
                report.inactive_checks += 1;
                let tau = trace.tau[t + 1][i];
                let grad = objectives[i].true_grad(trace.snapshot(i, t + 1))?;
                let expected = vector::scale(&grad, coeff * (t as i64 - tau) as f64);
                let lhs = vector::sub(&after[i], z);
                report.max_inactive_dev = report.max_inactive_dev.max(max_abs_diff(&lhs, &expected));
            }
        }
    }
    Ok(report)
}

/// `||grad F(xbar^t)||^2` along a trace and its running time average.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormSeries {
    pub per_round: Vec<f64>,
    pub running_mean: Vec<f64>,
}

impl GradNormSeries {
    pub fn time_average(&self) -> f64 {
        self.running_mean.last().copied().unwrap_or(0.0)
    }
}

/// Evaluates `||grad F(xbar^t)||^2` for `t = 0..T` where `xbar^t` is the mean
/// of client models.
pub fn grad_norm_trajectory(trace: &Trace, objectives: &[Objective]) -> Result<GradNormSeries> {
    let rounds = trace.rounds();
    let mut per_round = Vec::with_capacity(rounds);
    let mut running_mean = Vec::with_capacity(rounds);
    let mut total = 0.0;
    for (t, models) in trace.models.iter().take(rounds.max(1)).enumerate() {
        let xbar = vector::mean(models.iter().map(|v| v.as_slice()), models[0].len());
        let g = vector::sq_norm(&objectives::global_grad(objectives, &xbar)?);
        total += g;
        per_round.push(g);
        running_mean.push(total / (t + 1) as f64);
    }
    Ok(GradNormSeries { per_round, running_mean })
}

/// Both directions of `cons(A) <= 2 approx + 2 cons(B)` between the real
/// models `x` and the auxiliary models `z`, up to `slack` for rounding.
pub fn young_relation_holds(models: &[ModelVector], aux: &[ModelVector], slack: f64) -> bool {
    let cx = mixing::consensus_error(models);
    let cz = mixing::consensus_error(aux);
    let approx = approximation_error(models, aux);
    cz <= 2.0 * approx + 2.0 * cx + slack && cx <= 2.0 * approx + 2.0 * cz + slack
}

/// Monte Carlo `E||g - grad F_i(x)||^2` for the stochastic oracle at `x`.
pub fn estimate_noise_variance<R: Rng + ?Sized>(
    objective: &Objective,
    x: &[f64],
    noise: &NoiseSpec,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if draws == 0 {
        return Err(SimError::invalid("need at least one draw"));
    }
    let truth = objective.true_grad(x)?;
    let mut acc = 0.0;
    for _ in 0..draws {
        acc += vector::sq_dist(&objective.stochastic_grad(x, noise, rng)?, &truth);
    }
    Ok(acc / draws as f64)
}

/// Gradient dissimilarity constants fitted at sample points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissimilarity {
    /// Least-squares slope of the dissimilarity against `||grad F||^2`.
    pub beta_sq: f64,
    /// Intercept.
    pub zeta_sq: f64,
    /// Largest observed dissimilarity.
    pub max_observed: f64,
}

/// Fits `(1/m) sum_i ||grad F_i(x) - grad F(x)||^2 ~ beta^2 ||grad F(x)||^2 + zeta^2`
/// by ordinary least squares over `points`. Reported metadata only.
pub fn gradient_dissimilarity(objectives: &[Objective], points: &[ModelVector]) -> Result<Dissimilarity> {
    if points.len() < 2 {
        return Err(SimError::invalid("need at least two sample points"));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for x in points {
        let full = objectives::global_grad(objectives, x)?;
        let mut spread = 0.0;
        for o in objectives {
            spread += vector::sq_dist(&o.true_grad(x)?, &full);
        }
        xs.push(vector::sq_norm(&full));
        ys.push(spread / objectives.len() as f64);
    }
    let sx = Summary::of(xs.iter().copied());
    let sy = Summary::of(ys.iter().copied());
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - sx.mean) * (y - sy.mean)).sum();
    let var: f64 = xs.iter().map(|x| (x - sx.mean).powi(2)).sum();
    let beta_sq = if var > 0.0 { (cov / var).max(0.0) } else { 0.0 };
    Ok(Dissimilarity {
        beta_sq,
        zeta_sq: (sy.mean - beta_sq * sx.mean).max(0.0),
        max_observed: ys.iter().cloned().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{run_training, Algorithm, RunOptions};
    use crate::availability::{DynamicsFamily, DynamicsSpec};
    use crate::rng::{stream, StreamKind};

    fn traced(objs: &[Objective], dynamics: &DynamicsSpec, hp: &HyperParams, noise: NoiseSpec, seed: u64) -> Trace {
        run_training(
            Algorithm::FedAwe,
            objs,
            dynamics,
            hp,
            &noise,
            &vec![0.0; objs[0].dim()],
            seed,
            RunOptions {
                metrics: true,
                record_trace: true,
                track_auxiliary: true,
            },
        )
        .unwrap()
        .trace
        .unwrap()
    }

    #[test]
    fn auxiliary_value_examples() {
        let q = Objective::quadratic(vec![0.0]);
        // just active: tau = t - 1
        assert_eq!(auxiliary_value(&q, &[10.0], &[10.0], 4, 5, 0.1, 1.0, 1).unwrap(), vec![10.0]);
        // idle two extra rounds: 10 - 0.1 * 2 * 10
        let z = auxiliary_value(&q, &[10.0], &[10.0], 2, 5, 0.1, 1.0, 1).unwrap();
        assert!((z[0] - 8.0).abs() < 1e-12);
        assert_eq!(auxiliary_value(&q, &[3.0], &[3.0], -1, 0, 0.5, 2.0, 4).unwrap(), vec![3.0]);
        assert!(auxiliary_value(&q, &[3.0], &[3.0], 5, 5, 0.5, 2.0, 4).is_err());
    }

    #[test]
    fn approximation_error_examples() {
        let x = vec![vec![1.0], vec![10.0]];
        assert_eq!(approximation_error(&x, &x), 0.0);
        let z = vec![vec![1.0], vec![8.0]];
        assert_eq!(approximation_error(&x, &z), 4.0 / 2.0);
    }

    #[test]
    fn two_client_trace_with_one_idle_client() {
        // client 1 is never available for the first rounds
        let objs = vec![Objective::quadratic(vec![4.0]), Objective::quadratic(vec![-6.0])];
        let dynamics = DynamicsSpec::stationary(vec![1.0, 0.02]);
        let hp = HyperParams::constant(0.1, 1.0, 2, 30);
        let trace = traced(&objs, &dynamics, &hp, NoiseSpec::none(), 5);
        let report = verify_inactive_identity(&trace, &objs).unwrap();
        assert!(report.inactive_checks > 0);
        assert!(report.max_inactive_dev <= 1e-12, "{report:?}");
        assert!(report.max_active_dev <= 1e-12);
        assert!(report.passed());

        // direct recomputation of the first idle rounds for client 1:
        // x_1 stays 0 and z_1^t = -0.2 * t * grad F_1(0) = -0.2 * t * 6
        let mut tracker = AuxiliaryTracker::new(0.2, &objs, &trace.models[0]).unwrap();
        for t in 0..5 {
            tracker.observe(&trace.active[t], &trace.models[t + 1], &objs).unwrap();
            if !trace.active[..=t].iter().any(|a| a.contains(1)) {
                assert!((tracker.z()[1][0] - (-1.2 * (t + 1) as f64)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reactivation_resets_z() {
        let objs: Vec<Objective> = (0..4).map(|i| Objective::quadratic(vec![i as f64 * 3.0, 1.0])).collect();
        let dynamics = DynamicsSpec::new(DynamicsFamily::Sine, vec![0.2, 0.5, 0.7, 0.9]);
        let hp = HyperParams::constant(0.05, 1.0, 3, 100);
        let trace = traced(&objs, &dynamics, &hp, NoiseSpec::gaussian(1.0), 8);
        let report = verify_inactive_identity(&trace, &objs).unwrap();
        assert!(report.active_checks > 0 && report.inactive_checks > 0);
        assert!(report.passed(), "{report:?}");
        for t in 1..=trace.rounds() {
            let z = trace.auxiliary_at(t, &objs).unwrap();
            for i in trace.active[t - 1].members() {
                assert_eq!(z[*i], trace.models[t][*i]);
            }
            assert!(young_relation_holds(&trace.models[t], &z, 1e-9));
        }
    }

    #[test]
    fn full_participation_has_zero_approximation_error() {
        let objs: Vec<Objective> = (0..3).map(|i| Objective::quadratic(vec![i as f64])).collect();
        let dynamics = DynamicsSpec::stationary(vec![1.0; 3]);
        let hp = HyperParams::constant(0.1, 1.0, 2, 40);
        let run = run_training(Algorithm::FedAwe, &objs, &dynamics, &hp, &NoiseSpec::gaussian(0.3), &[5.0], 1, RunOptions::default()).unwrap();
        assert!(run.records.iter().all(|r| r.approx_error == Some(0.0)));
        let trace = traced(&objs, &dynamics, &hp, NoiseSpec::none(), 1);
        assert_eq!(verify_inactive_identity(&trace, &objs).unwrap().inactive_checks, 0);
    }

    #[test]
    fn grad_norm_examples() {
        let objs = vec![Objective::quadratic(vec![0.0]), Objective::quadratic(vec![100.0])];
        let dynamics = DynamicsSpec::stationary(vec![0.0001, 0.0001]);
        let hp = HyperParams::constant(0.1, 1.0, 1, 1);
        let mut trace = traced(&objs, &dynamics, &hp, NoiseSpec::none(), 0);
        // x0 = 0: grad F(0) = 0 - 50
        let g = grad_norm_trajectory(&trace, &objs).unwrap();
        assert_eq!(g.per_round[0], 2500.0);
        trace.models[0] = vec![vec![50.0], vec![50.0]];
        assert_eq!(grad_norm_trajectory(&trace, &objs).unwrap().per_round[0], 0.0);
    }

    #[test]
    fn noise_and_dissimilarity_estimates() {
        let mut r = stream(2, StreamKind::Estimator, 0);
        let q = Objective::quadratic(vec![1.0, 2.0, 3.0]);
        let v = estimate_noise_variance(&q, &[0.0; 3], &NoiseSpec::gaussian(2.0), 20_000, &mut r).unwrap();
        assert!((v - 4.0).abs() < 0.2);

        // quadratics with distinct minimizers: grads differ by constants,
        // so beta^2 = 0 and zeta^2 = spread of minimizers
        let objs = vec![Objective::quadratic(vec![0.0]), Objective::quadratic(vec![4.0])];
        let pts: Vec<ModelVector> = (0..10).map(|k| vec![k as f64]).collect();
        let d = gradient_dissimilarity(&objs, &pts).unwrap();
        assert!(d.beta_sq.abs() < 1e-12);
        assert!((d.zeta_sq - 4.0).abs() < 1e-12);
    }
}
