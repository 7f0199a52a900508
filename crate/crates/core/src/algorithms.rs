//! One-round transitions for FedAWE and the baselines, and the multi-round
//! trainer.
//!
//! Every round function takes the state at round `t` and the realised active
//! set `A^t`, and leaves the state at round `t + 1`. Client-side local SGD for
//! the active set may run in parallel; each client draws from its own noise
//! stream and the server reduction always sums in client-index order, so the
//! result does not depend on scheduling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::availability::{ActiveSet, AvailabilityState, DynamicsSpec};
use crate::diagnostics::{AuxiliaryTracker, Trace};
use crate::error::{Result, SimError};
use crate::mixing;
use crate::objectives::{NoiseSpec, Objective};
use crate::par;
use crate::rng::{self, SimRng, StreamKind};
use crate::vector::{self, ModelVector};

/// Runs abort once any coordinate of the global model exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Below this amount of local work per round (active clients x dim x steps),
/// client updates run sequentially.
const PAR_MIN_WORK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[serde(rename = "fedawe")]
    FedAwe,
    #[serde(rename = "fedavg-active")]
    FedAvgActive,
    #[serde(rename = "fedavg-all")]
    FedAvgAll,
    #[serde(rename = "fedavg-known-p")]
    FedAvgKnownP,
    Mifa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::FedAwe,
        Algorithm::FedAvgActive,
        Algorithm::FedAvgAll,
        Algorithm::FedAvgKnownP,
        Algorithm::Mifa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAwe => "fedawe",
            Algorithm::FedAvgActive => "fedavg-active",
            Algorithm::FedAvgAll => "fedavg-all",
            Algorithm::FedAvgKnownP => "fedavg-known-p",
            Algorithm::Mifa => "mifa",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SimError::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Local learning-rate schedule indexed by global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { eta: f64 },
    /// `eta0 / sqrt(t / 10 + 1)`.
    InvSqrt { eta0: f64 },
}

impl LrSchedule {
    pub fn rate(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::InvSqrt { eta0 } => eta0 / (t as f64 / 10.0 + 1.0).sqrt(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, LrSchedule::Constant { .. })
    }

    fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant { eta } => eta,
            LrSchedule::InvSqrt { eta0 } => eta0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub schedule: LrSchedule,
    pub eta_g: f64,
    pub local_steps: usize,
    pub rounds: usize,
}

impl HyperParams {
    pub fn constant(eta_l: f64, eta_g: f64, local_steps: usize, rounds: usize) -> Self {
        Self {
            schedule: LrSchedule::Constant { eta: eta_l },
            eta_g,
            local_steps,
            rounds,
        }
    }

    pub fn inv_sqrt(eta0: f64, eta_g: f64, local_steps: usize, rounds: usize) -> Self {
        Self {
            schedule: LrSchedule::InvSqrt { eta0 },
            eta_g,
            local_steps,
            rounds,
        }
    }

    /// A zero local rate is accepted as a degenerate no-op run.
    pub fn validate(&self) -> Result<()> {
        let base = self.schedule.base();
        if !(base >= 0.0 && base.is_finite()) {
            return Err(SimError::config("hyper.schedule", format!("learning rate {base} must be finite and >= 0")));
        }
        if !(self.eta_g >= 1.0 && self.eta_g.is_finite()) {
            return Err(SimError::config("hyper.eta_g", format!("{} must be finite and >= 1", self.eta_g)));
        }
        if self.local_steps == 0 {
            return Err(SimError::config("hyper.local_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Server-side view of a run.
///
/// `clients[i]` is the model client `i` holds at the start of the round. Under
/// FedAWE it only changes when `i` is active; the FedAvg-style baselines
/// broadcast the global model to everyone, so there all entries equal
/// `global`. `memory` is the MIFA update table (`m x d`, zero initialised) and
/// is empty for the other algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    global: ModelVector,
    clients: Vec<ModelVector>,
    availability: AvailabilityState,
    memory: Vec<ModelVector>,
}

impl ServerState {
    pub fn new(x0: ModelVector, m: usize, algorithm: Algorithm) -> Self {
        let memory = if algorithm == Algorithm::Mifa {
            vec![vec![0.0; x0.len()]; m]
        } else {
            Vec::new()
        };
        Self {
            clients: vec![x0.clone(); m],
            global: x0,
            availability: AvailabilityState::new(m),
            memory,
        }
    }

    pub fn round(&self) -> usize {
        self.availability.round()
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn clients(&self) -> &[ModelVector] {
        &self.clients
    }

    pub fn availability(&self) -> &AvailabilityState {
        &self.availability
    }

    pub fn memory(&self) -> &[ModelVector] {
        &self.memory
    }

    pub fn dim(&self) -> usize {
        self.global.len()
    }

    /// Number of reals held by the MIFA table.
    pub fn memory_len(&self) -> usize {
        self.memory.iter().map(Vec::len).sum()
    }

    /// `xbar^t`, the average of client models.
    pub fn mean_client_model(&self) -> ModelVector {
        vector::mean(self.clients.iter().map(|v| v.as_slice()), self.dim())
    }

    /// The model an algorithm reports: the client average for FedAWE, the
    /// broadcast global model otherwise.
    pub fn output_model(&self, algorithm: Algorithm) -> ModelVector {
        match algorithm {
            Algorithm::FedAwe => self.mean_client_model(),
            _ => self.global.clone(),
        }
    }

    fn finish_round(&mut self, active: &ActiveSet) -> Result<()> {
        let t = self.round();
        if !vector::all_finite(&self.global) || vector::inf_norm(&self.global) > DIVERGENCE_LIMIT {
            return Err(SimError::Divergence {
                round: t,
                detail: format!("global model left the box |x| <= {DIVERGENCE_LIMIT:e}"),
            });
        }
        self.availability.advance(active);
        Ok(())
    }

    fn broadcast(&mut self) {
        for c in self.clients.iter_mut() {
            c.copy_from_slice(&self.global);
        }
    }
}

/// Outcome of `s` local steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub end: ModelVector,
    /// `G = x_start - x_end`, accumulated step by step.
    pub innovation: ModelVector,
}

/// Runs `steps` stochastic gradient steps `x <- x - eta * g(x)` from `start`.
///
/// The innovation is accumulated alongside the iterate rather than recovered
/// as a difference of iterates, so for one step it is exactly `eta * g`.
pub fn local_sgd<R: rand::Rng + ?Sized>(
    objective: &Objective,
    start: &[f64],
    steps: usize,
    eta: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if steps == 0 {
        return Err(SimError::invalid("local_sgd needs at least one step"));
    }
    let mut x = start.to_vec();
    let mut innovation = vec![0.0; x.len()];
    for _ in 0..steps {
        let g = objective.stochastic_grad(&x, noise, rng)?;
        for ((xj, gj), ij) in x.iter_mut().zip(&g).zip(innovation.iter_mut()) {
            let step = eta * gj;
            *xj -= step;
            *ij += step;
        }
        if !vector::all_finite(&x) {
            return Err(SimError::Divergence {
                round: 0,
                detail: "non-finite iterate during local SGD".into(),
            });
        }
    }
    Ok(LocalUpdate { end: x, innovation })
}

/// Shared inputs of one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundEnv<'a> {
    pub objectives: &'a [Objective],
    pub noise: &'a NoiseSpec,
    pub hp: &'a HyperParams,
}

/// Local SGD for every active client, starting from `start(i)`. Results come
/// back in the order of `active.members()`.
fn active_updates<'s, F>(active: &ActiveSet, start: F, env: &RoundEnv<'_>, rngs: &mut [SimRng], t: usize) -> Result<Vec<LocalUpdate>>
where
    F: Fn(usize) -> &'s [f64] + Sync,
{
    let eta = env.hp.schedule.rate(t);
    let steps = env.hp.local_steps;
    let mask = active.mask();
    let work: Vec<(usize, &mut SimRng)> = rngs.iter_mut().enumerate().filter(|(i, _)| mask[*i]).collect();
    let run = |(i, rng): (usize, &mut SimRng)| local_sgd(&env.objectives[i], start(i), steps, eta, env.noise, rng);
    let dim = env.objectives.first().map_or(0, Objective::dim);
    let results: Vec<Result<LocalUpdate>> = if work.len() * dim * steps >= PAR_MIN_WORK {
        par::map_vec(work, run)
    } else {
        work.into_iter().map(run).collect()
    };
    results.into_iter().map(|r| r.map_err(|e| e.at_round(t))).collect()
}

fn check_env(state: &ServerState, env: &RoundEnv<'_>, rngs: &[SimRng]) -> Result<()> {
    let m = state.clients.len();
    if env.objectives.len() != m || rngs.len() != m {
        return Err(SimError::invalid(format!(
            "state has {m} clients but got {} objectives and {} rng streams",
            env.objectives.len(),
            rngs.len()
        )));
    }
    Ok(())
}

/// FedAWE: active clients train from their own (possibly stale) model, echo
/// the innovation by `t - tau_i(t)`, and the server averages the echoed
/// models and sends the result back to the active clients only.
pub fn fedawe_round(state: &mut ServerState, active: &ActiveSet, env: &RoundEnv<'_>, rngs: &mut [SimRng]) -> Result<()> {
    check_env(state, env, rngs)?;
    let t = state.round();
    if active.is_empty() {
        return state.finish_round(active);
    }
    let updates = active_updates(active, |i| state.clients[i].as_slice(), env, rngs, t)?;
    let echoed: Vec<ModelVector> = active
        .members()
        .iter()
        .zip(&updates)
        .map(|(&i, u)| {
            let factor = env.hp.eta_g * state.availability.gap(i) as f64;
            let mut x = state.clients[i].clone();
            vector::axpy(-factor, &u.innovation, &mut x);
            x
        })
        .collect();
    let next = vector::mean(echoed.iter().map(|v| v.as_slice()), state.dim());
    for &i in active.members() {
        state.clients[i].copy_from_slice(&next);
    }
    state.global = next;
    state.finish_round(active)
}

fn broadcast_updates(state: &ServerState, active: &ActiveSet, env: &RoundEnv<'_>, rngs: &mut [SimRng]) -> Result<Vec<LocalUpdate>> {
    let t = state.round();
    active_updates(active, |_| state.global.as_slice(), env, rngs, t)
}

/// FedAvg over active clients: `x <- x - eta_g * mean_{i in A} G_i`.
pub fn fedavg_active_round(state: &mut ServerState, active: &ActiveSet, env: &RoundEnv<'_>, rngs: &mut [SimRng]) -> Result<()> {
    check_env(state, env, rngs)?;
    if !active.is_empty() {
        let updates = broadcast_updates(state, active, env, rngs)?;
        let avg = vector::mean(updates.iter().map(|u| u.innovation.as_slice()), state.dim());
        vector::axpy(-env.hp.eta_g, &avg, &mut state.global);
        state.broadcast();
    }
    state.finish_round(active)
}

/// FedAvg over all clients: absent clients count as zero updates,
/// `x <- x - eta_g * (1/m) sum_{i in A} G_i`.
pub fn fedavg_all_round(state: &mut ServerState, active: &ActiveSet, env: &RoundEnv<'_>, rngs: &mut [SimRng]) -> Result<()> {
    check_env(state, env, rngs)?;
    if !active.is_empty() {
        let updates = broadcast_updates(state, active, env, rngs)?;
        let m = state.clients.len() as f64;
        let mut sum = vec![0.0; state.dim()];
        for u in &updates {
            vector::axpy(1.0, &u.innovation, &mut sum);
        }
        vector::axpy(-env.hp.eta_g / m, &sum, &mut state.global);
        state.broadcast();
    }
    state.finish_round(active)
}

/// FedAvg with known participation probabilities, inverse-probability
/// weighted: `x <- x - eta_g * (1/m) sum_{i in A} G_i / p_i^t`.
pub fn fedavg_knownp_round(
    state: &mut ServerState,
    active: &ActiveSet,
    probs: &[f64],
    env: &RoundEnv<'_>,
    rngs: &mut [SimRng],
) -> Result<()> {
    check_env(state, env, rngs)?;
    if probs.len() != state.clients.len() {
        return Err(SimError::DimensionMismatch {
            expected: state.clients.len(),
            actual: probs.len(),
        });
    }
    if let Some(&i) = active.members().iter().find(|&&i| probs[i].is_nan() || probs[i] <= 0.0) {
        return Err(SimError::invalid(format!(
            "client {i} is active but has participation probability {}",
            probs[i]
        )));
    }
    if !active.is_empty() {
        let updates = broadcast_updates(state, active, env, rngs)?;
        let m = state.clients.len() as f64;
        let mut sum = vec![0.0; state.dim()];
        for (&i, u) in active.members().iter().zip(&updates) {
            vector::axpy(1.0 / probs[i], &u.innovation, &mut sum);
        }
        vector::axpy(-env.hp.eta_g / m, &sum, &mut state.global);
        state.broadcast();
    }
    state.finish_round(active)
}

/// MIFA: active clients refresh their slot of the update table and the server
/// steps along the table average, `x <- x - eta_g * (1/m) sum_i table_i`.
pub fn mifa_round(state: &mut ServerState, active: &ActiveSet, env: &RoundEnv<'_>, rngs: &mut [SimRng]) -> Result<()> {
    check_env(state, env, rngs)?;
    if state.memory.len() != state.clients.len() {
        return Err(SimError::invalid("state was not initialised for MIFA"));
    }
    if !active.is_empty() {
        let updates = broadcast_updates(state, active, env, rngs)?;
        for (&i, u) in active.members().iter().zip(updates) {
            state.memory[i] = u.innovation;
        }
        let avg = vector::mean(state.memory.iter().map(|v| v.as_slice()), state.dim());
        vector::axpy(-env.hp.eta_g, &avg, &mut state.global);
        state.broadcast();
    }
    state.finish_round(active)
}

/// Dispatches one round of `algorithm`. `probs` is `p^t`, needed only by the
/// known-probability baseline.
pub fn step(
    algorithm: Algorithm,
    state: &mut ServerState,
    active: &ActiveSet,
    probs: &[f64],
    env: &RoundEnv<'_>,
    rngs: &mut [SimRng],
) -> Result<()> {
    match algorithm {
        Algorithm::FedAwe => fedawe_round(state, active, env, rngs),
        Algorithm::FedAvgActive => fedavg_active_round(state, active, env, rngs),
        Algorithm::FedAvgAll => fedavg_all_round(state, active, env, rngs),
        Algorithm::FedAvgKnownP => fedavg_knownp_round(state, active, probs, env, rngs),
        Algorithm::Mifa => mifa_round(state, active, env, rngs),
    }
}

/// Metrics after round `round` (i.e. evaluated at the round-`round + 1` state).
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub active_count: usize,
    /// `F` at the reported model.
    pub loss: f64,
    /// `||grad F||^2` at the reported model.
    pub grad_norm_sq: f64,
    pub consensus_error: f64,
    /// Only when the auxiliary sequence is tracked.
    pub approx_error: Option<f64>,
    /// Mean local train accuracy for classification objectives.
    pub accuracy: Option<f64>,
}

/// Global loss, squared gradient norm and mean accuracy at `x`. Per-client
/// evaluations run in parallel and are reduced in client order.
pub fn evaluate(objectives: &[Objective], x: &[f64]) -> Result<(f64, f64, Option<f64>)> {
    if objectives.is_empty() {
        return Err(SimError::invalid("objective list is empty"));
    }
    let per_client = par::map_slice(objectives, |o| o.value_and_grad(x).map(|(v, g)| (v, g, o.accuracy(x))));
    let m = objectives.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    let mut acc_sum = 0.0;
    let mut has_acc = false;
    for r in per_client {
        let (v, g, a) = r?;
        loss += v;
        vector::axpy(1.0, &g, &mut grad);
        if let Some(a) = a {
            acc_sum += a;
            has_acc = true;
        }
    }
    grad.iter_mut().for_each(|g| *g /= m);
    Ok((loss / m, vector::sq_norm(&grad), has_acc.then(|| acc_sum / m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Compute a `RoundRecord` every round.
    pub metrics: bool,
    /// Keep every round's client models, tau vectors and active sets.
    pub record_trace: bool,
    /// Maintain the auxiliary sequence (FedAWE with exact gradients available
    /// and a constant local rate only).
    pub track_auxiliary: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            metrics: true,
            record_trace: false,
            track_auxiliary: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub records: Vec<RoundRecord>,
    pub final_state: ServerState,
    pub trace: Option<Trace>,
}

impl Trajectory {
    pub fn output_model(&self) -> ModelVector {
        self.final_state.output_model(self.algorithm)
    }
}

/// Whether the auxiliary sequence can be maintained for this configuration:
/// it needs the exact local gradient and a fixed local rate.
pub fn auxiliary_supported(algorithm: Algorithm, noise: &NoiseSpec, hp: &HyperParams) -> bool {
    algorithm == Algorithm::FedAwe && noise.batch_size.is_none() && hp.schedule.is_constant()
}

/// Runs `hp.rounds` rounds of `algorithm` from `x0`.
///
/// Streams: availability draws use `(seed, Availability, 0)`, client `i`'s
/// gradient noise uses `(seed, GradientNoise, i)`.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    algorithm: Algorithm,
    objectives: &[Objective],
    dynamics: &DynamicsSpec,
    hp: &HyperParams,
    noise: &NoiseSpec,
    x0: &[f64],
    seed: u64,
    options: RunOptions,
) -> Result<Trajectory> {
    hp.validate()?;
    noise.validate()?;
    dynamics.validate()?;
    let m = objectives.len();
    if m == 0 || dynamics.clients() != m {
        return Err(SimError::invalid(format!(
            "{} objectives but dynamics describe {} clients",
            m,
            dynamics.clients()
        )));
    }
    if let Some(o) = objectives.iter().find(|o| o.dim() != x0.len()) {
        return Err(SimError::DimensionMismatch {
            expected: x0.len(),
            actual: o.dim(),
        });
    }

    let mut availability_rng = rng::stream(seed, StreamKind::Availability, 0);
    let mut client_rngs: Vec<SimRng> = (0..m).map(|i| rng::stream(seed, StreamKind::GradientNoise, i as u64)).collect();
    let mut state = ServerState::new(x0.to_vec(), m, algorithm);
    let env = RoundEnv { objectives, noise, hp };

    let mut tracker = if options.track_auxiliary && auxiliary_supported(algorithm, noise, hp) {
        let coeff = hp.schedule.rate(0) * hp.eta_g * hp.local_steps as f64;
        Some(AuxiliaryTracker::new(coeff, objectives, state.clients())?)
    } else {
        None
    };
    let mut trace = options.record_trace.then(|| Trace::start(&state, hp));
    let mut records = Vec::with_capacity(if options.metrics { hp.rounds } else { 0 });

    for t in 0..hp.rounds {
        let active = dynamics.sample_active(t, &mut availability_rng);
        let probs = if algorithm == Algorithm::FedAvgKnownP {
            dynamics.probs_at(t)
        } else {
            Vec::new()
        };
        step(algorithm, &mut state, &active, &probs, &env, &mut client_rngs)?;
        if let Some(tr) = tracker.as_mut() {
            tr.observe(&active, state.clients(), objectives)?;
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(&active, &state, hp.schedule.rate(t));
        }
        if options.metrics {
            let model = state.output_model(algorithm);
            let (loss, grad_norm_sq, accuracy) = evaluate(objectives, &model).map_err(|e| e.at_round(t))?;
            let consensus_error = match algorithm {
                Algorithm::FedAwe => mixing::consensus_error(state.clients()),
                _ => 0.0,
            };
            records.push(RoundRecord {
                round: t,
                active_count: active.len(),
                loss,
                grad_norm_sq,
                consensus_error,
                approx_error: tracker.as_ref().map(|tr| tr.approximation_error(state.clients())),
                accuracy,
            });
        }
    }
    Ok(Trajectory {
        algorithm,
        records,
        final_state: state,
        trace,
    })
}
