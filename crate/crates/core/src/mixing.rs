//! The averaging matrix induced by one round of implicit gossip, consensus
//! error, and the spectral contraction bound.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::availability::{ActiveSet, DynamicsSpec};
use crate::error::{Result, SimError};
use crate::par;
use crate::rng::{self, StreamKind};
use crate::stats::Summary;
use crate::vector;

/// Below this many samples the `E[W^2]` estimate is flagged as unreliable.
pub const MIN_RELIABLE_SAMPLES: usize = 1000;

const CHUNK: usize = 1000;

/// `W_ij = 1/|A|` for `i, j` in `A`, `W_ii = 1` for `i` outside `A`, zero
/// elsewhere. The empty set gives the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    pub fn build(active: &ActiveSet) -> Self {
        let m = active.clients();
        let mut w = DMatrix::<f64>::identity(m, m);
        let k = active.len();
        if k > 0 {
            let share = 1.0 / k as f64;
            for &i in active.members() {
                for &j in active.members() {
                    w[(i, j)] = share;
                }
            }
        }
        MixingMatrix(w)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochasticity_error(&self) -> f64 {
        let rows = self.0.row_iter().map(|r| (r.sum() - 1.0).abs());
        let cols = self.0.column_iter().map(|c| (c.sum() - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.0 == self.0.transpose()
    }
}

/// `(1/m) sum_i ||x_i - xbar||^2`, i.e. `(1/m) ||X (I - 11^T/m)||_F^2` with the
/// models as columns of `X`.
pub fn consensus_error(models: &[Vec<f64>]) -> f64 {
    let Some(first) = models.first() else {
        return 0.0;
    };
    let xbar = vector::mean(models.iter().map(|v| v.as_slice()), first.len());
    models.iter().map(|x| vector::sq_dist(x, &xbar)).sum::<f64>() / models.len() as f64
}

/// `1 - delta^4 (1 - (1 - delta)^m)^2 / 8`.
pub fn rho_bound(delta: f64, m: usize) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SimError::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if m == 0 {
        return Err(SimError::invalid("need at least one client"));
    }
    let cover = 1.0 - (1.0 - delta).powi(m as i32);
    Ok(1.0 - delta.powi(4) * cover * cover / 8.0)
}

/// Second-largest eigenvalue of a symmetric matrix together with its
/// eigenvector. `None` for 1x1 input.
fn second_eigen(mat: &DMatrix<f64>) -> Option<(f64, DVector<f64>)> {
    if mat.nrows() < 2 {
        return None;
    }
    let eig = SymmetricEigen::new(mat.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let k = order[1];
    Some((eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoEstimate {
    /// `lambda_2` of the sample mean of `W^2`.
    pub lambda2: f64,
    /// First-order standard error: the sample standard deviation of
    /// `v^T W_n^2 v = ||W_n v||^2` over samples, divided by `sqrt(N)`, where `v`
    /// is the estimated second eigenvector.
    pub std_err: f64,
    pub samples: usize,
    pub reliable: bool,
}

fn sample_mixing(dynamics: &DynamicsSpec, t: usize, rng: &mut rng::SimRng) -> DMatrix<f64> {
    let active = dynamics.sample_active(t, rng);
    MixingMatrix::build(&active).into_matrix()
}

/// Estimates `rho = lambda_2(E[W^2])` under uniform stationary availability
/// with probability `delta`.
pub fn empirical_rho(delta: f64, m: usize, samples: usize, seed: u64) -> Result<RhoEstimate> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SimError::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    if m == 0 || samples == 0 {
        return Err(SimError::invalid("need m >= 1 and samples >= 1"));
    }
    let reliable = samples >= MIN_RELIABLE_SAMPLES;
    if !reliable {
        warn!("empirical_rho with {samples} samples (< {MIN_RELIABLE_SAMPLES}); estimate is unreliable");
    }
    if m == 1 {
        return Ok(RhoEstimate {
            lambda2: 0.0,
            std_err: 0.0,
            samples,
            reliable,
        });
    }
    let dynamics = DynamicsSpec::uniform(crate::availability::DynamicsFamily::Stationary, m, delta);
    let chunks = samples.div_ceil(CHUNK);
    let chunk_len = |c: usize| CHUNK.min(samples - c * CHUNK);

    // Each chunk owns an estimator stream, so the second pass can replay the
    // exact same samples.
    let partial = par::map_range(chunks, |c| {
        let mut rng = rng::stream(seed, StreamKind::Estimator, c as u64);
        let mut acc = DMatrix::<f64>::zeros(m, m);
        for _ in 0..chunk_len(c) {
            let w = sample_mixing(&dynamics, 0, &mut rng);
            acc += &w * &w;
        }
        acc
    });
    let mut mean = DMatrix::<f64>::zeros(m, m);
    for p in &partial {
        mean += p;
    }
    mean /= samples as f64;
    // symmetrise away rounding before the eigensolve
    let mean = (&mean + mean.transpose()) * 0.5;
    let (lambda2, v) = second_eigen(&mean).expect("m >= 2");

    let quad = par::map_range(chunks, |c| {
        let mut rng = rng::stream(seed, StreamKind::Estimator, c as u64);
        (0..chunk_len(c))
            .map(|_| {
                let w = sample_mixing(&dynamics, 0, &mut rng);
                (&w * &v).norm_squared()
            })
            .collect::<Vec<_>>()
    });
    let summary = Summary::of(quad.into_iter().flatten());
    Ok(RhoEstimate {
        lambda2,
        std_err: summary.std_err(),
        samples,
        reliable,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub steps: usize,
    /// Monte Carlo mean of `||B (prod W - J)||_F^2`.
    pub estimate: f64,
    pub std_err: f64,
    /// `rho_bound(delta, m)^t * ||B||_F^2`.
    pub bound: f64,
    /// `||B (I - J)||_F^2`, the `t = 0` value.
    pub initial: f64,
    pub passed: bool,
}

impl ContractionReport {
    /// Per-step decay `(estimate / initial)^(1/t)`; `None` when undefined.
    pub fn decay_factor(&self) -> Option<f64> {
        (self.steps > 0 && self.initial > 0.0).then(|| (self.estimate / self.initial).powf(1.0 / self.steps as f64))
    }
}

/// Checks `E ||B (W^(t) ... W^(1) - J)||_F^2 <= rho^t ||B||_F^2` by sampling
/// chains of mixing matrices under uniform availability `delta`. `b` is given
/// as its `m` columns. Passes when `estimate - 3 SE <= bound`.
pub fn contraction_check(
    b: &[Vec<f64>],
    delta: f64,
    steps: usize,
    replications: usize,
    seed: u64,
) -> Result<ContractionReport> {
    let m = b.len();
    let bound_rate = rho_bound(delta, m)?;
    if replications < 2 {
        return Err(SimError::invalid("need at least 2 replications"));
    }
    let d = b[0].len();
    if let Some(col) = b.iter().find(|c| c.len() != d) {
        return Err(SimError::DimensionMismatch {
            expected: d,
            actual: col.len(),
        });
    }
    let bmat = DMatrix::from_fn(d, m, |r, c| b[c][r]);
    let j = DMatrix::<f64>::from_element(m, m, 1.0 / m as f64);
    let dynamics = DynamicsSpec::uniform(crate::availability::DynamicsFamily::Stationary, m, delta);

    let values = par::map_range(replications, |r| {
        let mut rng = rng::stream(seed, StreamKind::Replication, r as u64);
        let mut prod = DMatrix::<f64>::identity(m, m);
        for t in 0..steps {
            let w = sample_mixing(&dynamics, t, &mut rng);
            prod = w * prod;
        }
        (&bmat * (prod - &j)).norm_squared()
    });
    let summary = Summary::of(values);
    let initial = (&bmat * (DMatrix::<f64>::identity(m, m) - &j)).norm_squared();
    let bound = bound_rate.powi(steps as i32) * bmat.norm_squared();
    Ok(ContractionReport {
        steps,
        estimate: summary.mean,
        std_err: summary.std_err(),
        bound,
        initial,
        passed: summary.mean - 3.0 * summary.std_err() <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(members: &[usize], m: usize) -> ActiveSet {
        ActiveSet::new(members.to_vec(), m).unwrap()
    }

    /// `lambda_2(E[W])` under uniform availability, from the exchangeable
    /// structure of `E[W]`: diagonal `a`, off-diagonal `b`, so `lambda_2 = a - b`.
    /// Uses `W^2 = W` for this family of matrices.
    fn exact_lambda2(delta: f64, m: usize) -> f64 {
        let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
        let pmf = |n: usize, k: usize| binom(n, k) * delta.powi(k as i32) * (1.0 - delta).powi((n - k) as i32);
        let diag = (1.0 - delta) + delta * (0..m).map(|k| pmf(m - 1, k) / (1 + k) as f64).sum::<f64>();
        let off = delta * delta * (0..=m - 2).map(|k| pmf(m - 2, k) / (2 + k) as f64).sum::<f64>();
        diag - off
    }

    #[test]
    fn build_examples() {
        let w = MixingMatrix::build(&set(&[0, 1], 3));
        let expected = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(w.matrix(), &expected);
        assert_eq!(MixingMatrix::build(&ActiveSet::empty(4)).matrix(), &DMatrix::identity(4, 4));
        let full = MixingMatrix::build(&ActiveSet::full(5));
        assert!(full.matrix().iter().all(|&x| x == 0.2));
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(consensus_error(&[vec![3.0, 1.0], vec![3.0, 1.0]]), 0.0);
        assert_eq!(consensus_error(&[vec![0.0], vec![2.0]]), 1.0);
        let mut rng = stream(2, StreamKind::Data, 0);
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let xm = DMatrix::from_fn(3, 6, |r, c| x[c][r]);
        let mixed = xm * MixingMatrix::build(&ActiveSet::full(6)).into_matrix();
        let cols: Vec<Vec<f64>> = mixed.column_iter().map(|c| c.iter().cloned().collect()).collect();
        assert!(consensus_error(&cols) < 1e-12);
    }

    #[test]
    fn rho_bound_examples() {
        assert_eq!(rho_bound(1.0, 1).unwrap(), 0.875);
        assert_eq!(rho_bound(1.0, 17).unwrap(), 0.875);
        // 1 - 0.5^4 * (1 - 0.25)^2 / 8, evaluated by hand
        let expected = 1.0 - 0.0625 * 0.5625 / 8.0;
        assert!((rho_bound(0.5, 2).unwrap() - expected).abs() < 1e-15);
        assert!((rho_bound(0.5, 2).unwrap() - 0.995605).abs() < 1e-6);
        let tiny = rho_bound(1e-6, 10).unwrap();
        assert!(tiny <= 1.0 && tiny > 1.0 - 1e-12);
        assert!(rho_bound(0.0, 3).is_err());
        assert!(rho_bound(1.1, 3).is_err());
    }

    #[test]
    fn exact_lambda2_oracle_matches_direct_enumeration() {
        // enumerate all 2^m patterns for small m
        for &(delta, m) in &[(0.3f64, 3usize), (0.5, 4), (0.9, 5)] {
            let mut ew = DMatrix::<f64>::zeros(m, m);
            for mask in 0u32..(1 << m) {
                let bits: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
                let k = bits.iter().filter(|&&b| b).count() as i32;
                let prob = delta.powi(k) * (1.0 - delta).powi(m as i32 - k);
                let w = MixingMatrix::build(&ActiveSet::from_mask(&bits)).into_matrix();
                ew += (&w * &w) * prob;
            }
            let (l2, _) = second_eigen(&ew).unwrap();
            assert!((l2 - exact_lambda2(delta, m)).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_rho_cases() {
        let full = empirical_rho(1.0, 6, 2000, 1).unwrap();
        assert!(full.lambda2.abs() < 1e-12);
        assert_eq!(empirical_rho(0.5, 1, 2000, 1).unwrap().lambda2, 0.0);
        let small = empirical_rho(0.5, 3, 10, 1).unwrap();
        assert!(!small.reliable);

        let est = empirical_rho(0.5, 5, 50_000, 4).unwrap();
        let exact = exact_lambda2(0.5, 5);
        assert!((est.lambda2 - exact).abs() <= 4.0 * est.std_err, "{} vs {exact}", est.lambda2);
        assert!(est.lambda2 <= rho_bound(0.5, 5).unwrap() + 3.0 * est.std_err);
        assert!((0.0..=1.0).contains(&est.lambda2));
    }

    #[test]
    fn contraction_cases() {
        let b = vec![vec![1.0, -2.0], vec![0.5, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![0.0, 0.0]];
        let r0 = contraction_check(&b, 0.5, 0, 50, 3).unwrap();
        let bnorm: f64 = b.iter().map(|c| vector::sq_norm(c)).sum();
        assert!(r0.estimate <= bnorm + 1e-12);
        assert!((r0.estimate - r0.initial).abs() < 1e-12);

        let same = vec![vec![4.0, -1.0]; 5];
        for t in [0, 1, 7] {
            let r = contraction_check(&same, 0.5, t, 20, 5).unwrap();
            assert!(r.estimate < 1e-24);
        }

        let r = contraction_check(&b, 0.5, 10, 4000, 8).unwrap();
        assert!(r.passed);
        assert!(r.decay_factor().unwrap() <= rho_bound(0.5, 5).unwrap());
    }

    proptest! {
        #[test]
        fn mixing_is_symmetric_doubly_stochastic(mask in prop::collection::vec(any::<bool>(), 1..40)) {
            let w = MixingMatrix::build(&ActiveSet::from_mask(&mask));
            prop_assert!(w.is_symmetric());
            prop_assert!(w.stochasticity_error() <= 1e-12);
            prop_assert!(w.matrix().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn consensus_shift_invariant(
            cols in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..8),
            shift in prop::collection::vec(-1e3f64..1e3, 3),
        ) {
            let shifted: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let a = consensus_error(&cols);
            let b = consensus_error(&shifted);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
