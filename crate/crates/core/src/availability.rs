//! Client availability: probability trajectories `p_i^t = p_i * f_i(t)`,
//! active-set sampling and last-active-round bookkeeping.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::par;
use crate::rng::{self, StreamKind};
use crate::stats::Summary;

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const DEFAULT_PERIOD: usize = 20;
pub const DEFAULT_DELTA0: f64 = 0.1;
pub const DEFAULT_STAIRCASE_LOW: f64 = 0.4;
pub const DEFAULT_P_MIN: f64 = 0.02;

/// Upper bounds of the per-class contribution draws: 1 for the first five
/// classes, 0.5 for the remaining five.
pub const CLASS_CAPS_10: [f64; 10] = [1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsFamily {
    Stationary,
    Staircase,
    Sine,
    InterleavedSine,
}

impl DynamicsFamily {
    pub const ALL: [DynamicsFamily; 4] = [
        DynamicsFamily::Stationary,
        DynamicsFamily::Staircase,
        DynamicsFamily::Sine,
        DynamicsFamily::InterleavedSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DynamicsFamily::Stationary => "stationary",
            DynamicsFamily::Staircase => "staircase",
            DynamicsFamily::Sine => "sine",
            DynamicsFamily::InterleavedSine => "interleaved_sine",
        }
    }
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_period() -> usize {
    DEFAULT_PERIOD
}
fn default_delta0() -> f64 {
    DEFAULT_DELTA0
}
fn default_low() -> f64 {
    DEFAULT_STAIRCASE_LOW
}

/// Base probabilities plus the trajectory family that modulates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub family: DynamicsFamily,
    pub base_p: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    #[serde(default = "default_low")]
    pub staircase_low: f64,
}

impl DynamicsSpec {
    pub fn new(family: DynamicsFamily, base_p: Vec<f64>) -> Self {
        Self {
            family,
            base_p,
            gamma: DEFAULT_GAMMA,
            period: DEFAULT_PERIOD,
            delta0: DEFAULT_DELTA0,
            staircase_low: DEFAULT_STAIRCASE_LOW,
        }
    }

    pub fn stationary(base_p: Vec<f64>) -> Self {
        Self::new(DynamicsFamily::Stationary, base_p)
    }

    pub fn uniform(family: DynamicsFamily, m: usize, p: f64) -> Self {
        Self::new(family, vec![p; m])
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_period(mut self, period: usize) -> Self {
        self.period = period;
        self
    }

    pub fn clients(&self) -> usize {
        self.base_p.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_p.is_empty() {
            return Err(SimError::config("dynamics.base_p", "needs at least one client"));
        }
        if let Some((i, p)) = self.base_p.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
            return Err(SimError::config("dynamics.base_p", format!("entry {i} = {p} is outside (0, 1]")));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SimError::config("dynamics.gamma", format!("{} is outside [0, 1)", self.gamma)));
        }
        if self.period == 0 {
            return Err(SimError::config("dynamics.period", "must be a positive integer"));
        }
        if !(0.0..1.0).contains(&self.delta0) {
            return Err(SimError::config("dynamics.delta0", format!("{} is outside [0, 1)", self.delta0)));
        }
        if !(self.staircase_low > 0.0 && self.staircase_low <= 1.0) {
            return Err(SimError::config(
                "dynamics.staircase_low",
                format!("{} is outside (0, 1]", self.staircase_low),
            ));
        }
        Ok(())
    }

    fn sine(&self, t: usize) -> f64 {
        self.gamma * (2.0 * PI * t as f64 / self.period as f64).sin() + (1.0 - self.gamma)
    }

    /// Trajectory multiplier `f_i(t)`.
    pub fn multiplier(&self, i: usize, t: usize) -> f64 {
        match self.family {
            DynamicsFamily::Stationary => 1.0,
            DynamicsFamily::Staircase => {
                // first half of each period at full level, second half lowered
                if 2 * (t % self.period) < self.period {
                    1.0
                } else {
                    self.staircase_low
                }
            }
            DynamicsFamily::Sine => self.sine(t),
            DynamicsFamily::InterleavedSine => {
                let g = self.sine(t);
                if self.base_p[i] * g >= self.delta0 {
                    g
                } else {
                    0.0
                }
            }
        }
    }

    pub fn prob_at(&self, i: usize, t: usize) -> f64 {
        (self.base_p[i] * self.multiplier(i, t)).clamp(0.0, 1.0)
    }

    pub fn probs_at(&self, t: usize) -> Vec<f64> {
        (0..self.clients()).map(|i| self.prob_at(i, t)).collect()
    }

    /// `min_t p_i^t` over one full period (all families are periodic in `t`).
    pub fn min_prob(&self, i: usize) -> f64 {
        let horizon = match self.family {
            DynamicsFamily::Stationary => 1,
            _ => self.period,
        };
        (0..horizon).map(|t| self.prob_at(i, t)).fold(f64::INFINITY, f64::min)
    }

    /// The lower bound `delta` over all clients and rounds; zero when some
    /// client is ever cut off.
    pub fn delta(&self) -> f64 {
        (0..self.clients()).map(|i| self.min_prob(i)).fold(f64::INFINITY, f64::min)
    }

    /// Draws `A^t`: client `i` is included independently with probability
    /// `p_i^t`. One uniform is consumed per client regardless of outcome.
    pub fn sample_active<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> ActiveSet {
        let m = self.clients();
        let members = (0..m)
            .filter(|&i| {
                let u: f64 = rng.random();
                u < self.prob_at(i, t)
            })
            .collect();
        ActiveSet { members, m }
    }
}

/// Sorted set of active client indices out of `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    members: Vec<usize>,
    m: usize,
}

impl ActiveSet {
    pub fn new(mut members: Vec<usize>, m: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&i| i >= m) {
            return Err(SimError::invalid(format!("client {bad} outside 0..{m}")));
        }
        Ok(Self { members, m })
    }

    pub fn empty(m: usize) -> Self {
        Self { members: Vec::new(), m }
    }

    pub fn full(m: usize) -> Self {
        Self {
            members: (0..m).collect(),
            m,
        }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self {
            members: mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
            m: mask.len(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn clients(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.m];
        for &i in &self.members {
            mask[i] = true;
        }
        mask
    }
}

/// Per-class contribution vector `phi` with `phi_c ~ Uniform(0, caps_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContribution {
    pub phi: Vec<f64>,
    pub caps: Vec<f64>,
}

impl ClassContribution {
    pub fn sample<R: Rng + ?Sized>(caps: &[f64], rng: &mut R) -> Result<Self> {
        if let Some(c) = caps.iter().find(|&&c| !(c >= 0.0 && c.is_finite())) {
            return Err(SimError::invalid(format!("class cap {c} must be finite and >= 0")));
        }
        let phi = caps.iter().map(|&c| c * rng.random::<f64>()).collect();
        Ok(Self {
            phi,
            caps: caps.to_vec(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi.len() != self.caps.len() {
            return Err(SimError::DimensionMismatch {
                expected: self.caps.len(),
                actual: self.phi.len(),
            });
        }
        if self.phi.iter().zip(&self.caps).any(|(&p, &c)| !(0.0..=c).contains(&p)) {
            return Err(SimError::invalid("class contribution outside [0, cap]"));
        }
        Ok(())
    }
}

/// `p_i = <nu_i, phi>` clamped to `[p_min, 1]`. Pass `p_min = 0` for the
/// interleaved family, which is allowed to reach zero.
pub fn base_probs(nus: &[Vec<f64>], phi: &ClassContribution, p_min: f64) -> Result<Vec<f64>> {
    phi.validate()?;
    nus.iter()
        .map(|nu| {
            if nu.len() != phi.phi.len() {
                return Err(SimError::DimensionMismatch {
                    expected: phi.phi.len(),
                    actual: nu.len(),
                });
            }
            let p: f64 = nu.iter().zip(&phi.phi).map(|(a, b)| a * b).sum();
            Ok(p.clamp(p_min, 1.0))
        })
        .collect()
}

/// Last-active-round bookkeeping. `tau[i] = -1` until client `i` is first
/// active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityState {
    tau: Vec<i64>,
    round: usize,
}

impl AvailabilityState {
    pub fn new(m: usize) -> Self {
        Self {
            tau: vec![-1; m],
            round: 0,
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn tau(&self) -> &[i64] {
        &self.tau
    }

    /// `t - tau_i(t)`, always >= 1.
    pub fn gap(&self, i: usize) -> u64 {
        (self.round as i64 - self.tau[i]) as u64
    }

    /// Moves from round `t` to `t + 1` after observing `A^t`.
    pub fn advance(&mut self, active: &ActiveSet) {
        for &i in active.members() {
            self.tau[i] = self.round as i64;
        }
        self.round += 1;
    }
}

/// Monte Carlo estimate of the unavailable-duration moments for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct GapMoments {
    pub client: usize,
    pub mean: f64,
    pub mean_sq: f64,
    /// Standard errors across replications.
    pub mean_se: f64,
    pub mean_sq_se: f64,
    /// `min_t p_i^t` for this client.
    pub delta: f64,
}

impl GapMoments {
    pub fn mean_bound(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn mean_sq_bound(&self) -> f64 {
        2.0 / (self.delta * self.delta)
    }

    /// Both bounds hold up to `k` standard errors of Monte Carlo slack.
    pub fn within_bounds(&self, k: f64) -> bool {
        self.mean - k * self.mean_se <= self.mean_bound() && self.mean_sq - k * self.mean_sq_se <= self.mean_sq_bound()
    }
}

/// Estimates `E[t - tau_i(t)]` and `E[(t - tau_i(t))^2]` for every client,
/// averaging over rounds `0..horizon` within a replication and then across
/// `replications` independent traces.
pub fn unavailability_moments(
    spec: &DynamicsSpec,
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<GapMoments>> {
    spec.validate()?;
    if spec.family == DynamicsFamily::InterleavedSine {
        return Err(SimError::UnsupportedDynamics(
            "interleaved_sine can reach zero probability, so the gap moments are unbounded".into(),
        ));
    }
    if horizon == 0 || replications < 2 {
        return Err(SimError::invalid("need horizon >= 1 and replications >= 2"));
    }
    let m = spec.clients();
    let per_rep: Vec<Vec<(f64, f64)>> = par::map_range(replications, |r| {
        let mut rng = rng::stream(seed, StreamKind::Replication, r as u64);
        let mut state = AvailabilityState::new(m);
        let mut sums = vec![(0.0, 0.0); m];
        for t in 0..horizon {
            for (i, s) in sums.iter_mut().enumerate() {
                let g = state.gap(i) as f64;
                s.0 += g;
                s.1 += g * g;
            }
            let active = spec.sample_active(t, &mut rng);
            state.advance(&active);
        }
        sums.into_iter()
            .map(|(a, b)| (a / horizon as f64, b / horizon as f64))
            .collect()
    });
    Ok((0..m)
        .map(|i| {
            let first = Summary::of(per_rep.iter().map(|v| v[i].0));
            let second = Summary::of(per_rep.iter().map(|v| v[i].1));
            GapMoments {
                client: i,
                mean: first.mean,
                mean_sq: second.mean,
                mean_se: first.std_err(),
                mean_sq_se: second.std_err(),
                delta: spec.min_prob(i),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use proptest::prelude::*;

    fn family_strategy() -> impl Strategy<Value = DynamicsFamily> {
        prop::sample::select(DynamicsFamily::ALL.to_vec())
    }

    #[test]
    fn prob_at_examples() {
        let spec = DynamicsSpec::uniform(DynamicsFamily::Sine, 1, 0.5);
        assert!((spec.prob_at(0, 5) - 0.5).abs() < 1e-15);

        let stair = DynamicsSpec::uniform(DynamicsFamily::Staircase, 1, 0.5);
        assert_eq!(stair.multiplier(0, 0), 1.0);
        assert_eq!(stair.multiplier(0, 9), 1.0);
        assert_eq!(stair.multiplier(0, 10), 0.4);
        assert_eq!(stair.multiplier(0, 19), 0.4);
        assert_eq!(stair.multiplier(0, 20), 1.0);
        assert_eq!(stair.multiplier(0, 35), 0.4);

        // p * g(t) at the sine trough: 0.2 * 0.4 = 0.08 < 0.1
        let inter = DynamicsSpec::uniform(DynamicsFamily::InterleavedSine, 1, 0.2);
        assert_eq!(inter.prob_at(0, 15), 0.0);
        assert!(inter.prob_at(0, 5) > 0.0);
        assert_eq!(inter.delta(), 0.0);
    }

    #[test]
    fn gamma_zero_sine_is_stationary() {
        let sine = DynamicsSpec::new(DynamicsFamily::Sine, vec![0.3, 0.7]).with_gamma(0.0);
        let stat = DynamicsSpec::stationary(vec![0.3, 0.7]);
        for t in 0..50 {
            assert_eq!(sine.probs_at(t), stat.probs_at(t));
        }
    }

    #[test]
    fn base_prob_examples() {
        let caps = vec![1.0; 3];
        let phi = ClassContribution {
            phi: vec![0.2, 0.6, 0.9],
            caps: caps.clone(),
        };
        let p = base_probs(&[vec![0.0, 1.0, 0.0]], &phi, 0.0).unwrap();
        assert_eq!(p, vec![0.6]);
        let flat = ClassContribution {
            phi: vec![0.4; 10],
            caps: CLASS_CAPS_10.to_vec(),
        };
        let p = base_probs(&[vec![0.1; 10]], &flat, DEFAULT_P_MIN).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15);
        let tiny = ClassContribution {
            phi: vec![0.0, 0.0, 0.0],
            caps,
        };
        assert_eq!(base_probs(&[vec![1.0, 0.0, 0.0]], &tiny, 0.02).unwrap(), vec![0.02]);
        assert!(base_probs(&[vec![1.0, 0.0]], &tiny, 0.02).is_err());
    }

    #[test]
    fn sampled_contribution_respects_caps() {
        let mut r = stream(1, StreamKind::Data, 0);
        for _ in 0..100 {
            let c = ClassContribution::sample(&CLASS_CAPS_10, &mut r).unwrap();
            c.validate().unwrap();
        }
    }

    #[test]
    fn certain_inclusion_and_exclusion() {
        let mut r = stream(1, StreamKind::Availability, 0);
        let all = DynamicsSpec::uniform(DynamicsFamily::Stationary, 7, 1.0);
        assert_eq!(all.sample_active(0, &mut r), ActiveSet::full(7));
        let none = DynamicsSpec::uniform(DynamicsFamily::InterleavedSine, 7, 0.05);
        for t in 0..40 {
            assert!(none.sample_active(t, &mut r).is_empty());
        }
    }

    #[test]
    fn inclusion_frequency_tracks_time_averaged_probability() {
        let spec = DynamicsSpec::new(DynamicsFamily::Sine, vec![0.2, 0.5, 0.9]);
        let mut r = stream(3, StreamKind::Availability, 0);
        let rounds = 20_000;
        let mut hits = [0usize; 3];
        for t in 0..rounds {
            for &i in spec.sample_active(t, &mut r).members() {
                hits[i] += 1;
            }
        }
        for i in 0..3 {
            let avg_p: f64 = (0..rounds).map(|t| spec.prob_at(i, t)).sum::<f64>() / rounds as f64;
            let freq = hits[i] as f64 / rounds as f64;
            assert!((freq - avg_p).abs() <= 0.01, "client {i}: {freq} vs {avg_p}");
        }
    }

    #[test]
    fn tau_examples() {
        let mut st = AvailabilityState::new(2);
        st.advance(&ActiveSet::new(vec![0], 2).unwrap());
        assert_eq!(st.gap(0), 1);
        assert_eq!(st.tau()[1], -1);
        assert_eq!(st.gap(1), 2);
        st.advance(&ActiveSet::empty(2));
        st.advance(&ActiveSet::new(vec![0], 2).unwrap());
        assert_eq!(st.tau()[0], 2);
        assert_eq!(st.tau()[1], -1);
    }

    #[test]
    fn moments_always_active() {
        let spec = DynamicsSpec::uniform(DynamicsFamily::Stationary, 2, 1.0);
        let mom = unavailability_moments(&spec, 50, 4, 9).unwrap();
        for g in mom {
            assert_eq!(g.mean, 1.0);
            assert_eq!(g.mean_sq, 1.0);
        }
    }

    #[test]
    fn moments_half_probability_match_geometric() {
        let spec = DynamicsSpec::uniform(DynamicsFamily::Stationary, 3, 0.5);
        let mom = unavailability_moments(&spec, 2000, 40, 5).unwrap();
        for g in mom {
            assert!((g.mean - 2.0).abs() <= 0.05 * 2.0, "mean {}", g.mean);
            assert!((g.mean_sq - 6.0).abs() <= 0.05 * 6.0, "second {}", g.mean_sq);
            assert!(g.within_bounds(3.0));
        }
    }

    #[test]
    fn moments_reject_interleaved() {
        let spec = DynamicsSpec::uniform(DynamicsFamily::InterleavedSine, 2, 0.5);
        assert!(matches!(
            unavailability_moments(&spec, 10, 2, 0),
            Err(SimError::UnsupportedDynamics(_))
        ));
    }

    #[test]
    fn validate_flags_field() {
        let mut spec = DynamicsSpec::uniform(DynamicsFamily::Sine, 2, 0.5);
        spec.gamma = 1.5;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("dynamics.gamma"), "{err}");
        let spec = DynamicsSpec::new(DynamicsFamily::Sine, vec![0.5, 0.0]);
        assert!(spec.validate().unwrap_err().to_string().contains("dynamics.base_p"));
    }

    proptest! {
        #[test]
        fn prob_in_unit_interval(
            family in family_strategy(),
            p in 0.001f64..=1.0,
            gamma in 0.0f64..0.999,
            period in 1usize..50,
            t in 0usize..10_000,
        ) {
            let spec = DynamicsSpec::uniform(family, 1, p).with_gamma(gamma).with_period(period);
            let q = spec.prob_at(0, t);
            prop_assert!((0.0..=1.0).contains(&q));
        }

        #[test]
        fn tau_is_monotone_and_behind_round(seed in any::<u64>(), family in family_strategy()) {
            let spec = DynamicsSpec::new(family, vec![0.1, 0.4, 0.8, 1.0]);
            let mut r = stream(seed, StreamKind::Availability, 0);
            let mut st = AvailabilityState::new(4);
            for t in 0..100 {
                let before = st.tau().to_vec();
                let a = spec.sample_active(t, &mut r);
                st.advance(&a);
                for i in 0..4 {
                    prop_assert!(st.tau()[i] >= before[i]);
                    prop_assert!(st.tau()[i] < st.round() as i64);
                    prop_assert_eq!(st.tau()[i] == t as i64, a.contains(i));
                }
            }
        }

        #[test]
        fn sampling_is_reproducible(seed in any::<u64>()) {
            let spec = DynamicsSpec::new(DynamicsFamily::Staircase, vec![0.3, 0.6]);
            let trace = |s| {
                let mut r = stream(s, StreamKind::Availability, 0);
                (0..50).map(|t| spec.sample_active(t, &mut r)).collect::<Vec<_>>()
            };
            prop_assert_eq!(trace(seed), trace(seed));
        }
    }
}
