//! Local objectives `F_i`, gradient oracles and the synthetic classification
//! task used in place of image data.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::vector::{self, ModelVector};

/// `F(x) = ||x - u||^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    minimizer: ModelVector,
}

impl QuadraticObjective {
    pub fn new(minimizer: ModelVector) -> Self {
        Self { minimizer }
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }
}

/// Multinomial logistic regression on a client's local samples.
///
/// Parameters are laid out as a row-major `classes x features` weight matrix
/// followed by `classes` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticObjective {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    class_dist: Vec<f64>,
}

impl LogisticObjective {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
        class_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_features == 0 || n_classes < 2 {
            return Err(SimError::invalid("logistic objective needs features >= 1 and classes >= 2"));
        }
        if features.len() != labels.len() * n_features {
            return Err(SimError::DimensionMismatch {
                expected: labels.len() * n_features,
                actual: features.len(),
            });
        }
        if labels.is_empty() {
            return Err(SimError::invalid("logistic objective needs at least one sample"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(SimError::invalid(format!("label {bad} outside 0..{n_classes}")));
        }
        if class_dist.len() != n_classes {
            return Err(SimError::DimensionMismatch {
                expected: n_classes,
                actual: class_dist.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
            class_dist,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn class_dist(&self) -> &[f64] {
        &self.class_dist
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn param_dim(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn sample(&self, k: usize) -> &[f64] {
        &self.features[k * self.n_features..(k + 1) * self.n_features]
    }

    /// Softmax probabilities for sample `k`, written into `out`. Returns the
    /// log-sum-exp of the logits.
    fn probs_into(&self, x: &[f64], k: usize, out: &mut [f64]) -> f64 {
        let d = self.n_features;
        let bias = &x[self.n_classes * d..];
        let feat = self.sample(k);
        let mut max = f64::NEG_INFINITY;
        for c in 0..self.n_classes {
            let z = vector::dot(&x[c * d..(c + 1) * d], feat) + bias[c];
            out[c] = z;
            max = max.max(z);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
        max + total.ln()
    }

    fn loss_at(&self, x: &[f64], k: usize, scratch: &mut [f64]) -> f64 {
        let d = self.n_features;
        let y = self.labels[k];
        let lse = self.probs_into(x, k, scratch);
        let z_y = vector::dot(&x[y * d..(y + 1) * d], self.sample(k)) + x[self.n_classes * d + y];
        lse - z_y
    }

    /// Adds `weight * grad loss_k(x)` to `acc`.
    fn accumulate_grad(&self, x: &[f64], k: usize, weight: f64, acc: &mut [f64], scratch: &mut [f64]) {
        let d = self.n_features;
        self.probs_into(x, k, scratch);
        scratch[self.labels[k]] -= 1.0;
        let feat = self.sample(k);
        for c in 0..self.n_classes {
            let r = weight * scratch[c];
            vector::axpy(r, feat, &mut acc[c * d..(c + 1) * d]);
            acc[self.n_classes * d + c] += r;
        }
    }

    pub fn loss(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.n_classes];
        let n = self.n_samples();
        (0..n).map(|k| self.loss_at(x, k, &mut scratch)).sum::<f64>() / n as f64
    }

    pub fn grad(&self, x: &[f64]) -> ModelVector {
        let mut acc = vec![0.0; self.param_dim()];
        let mut scratch = vec![0.0; self.n_classes];
        let w = 1.0 / self.n_samples() as f64;
        for k in 0..self.n_samples() {
            self.accumulate_grad(x, k, w, &mut acc, &mut scratch);
        }
        acc
    }

    /// Full-batch loss and gradient in one pass.
    pub fn loss_and_grad(&self, x: &[f64]) -> (f64, ModelVector) {
        let d = self.n_features;
        let n = self.n_samples();
        let w = 1.0 / n as f64;
        let mut acc = vec![0.0; self.param_dim()];
        let mut p = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for k in 0..n {
            let y = self.labels[k];
            let lse = self.probs_into(x, k, &mut p);
            let feat = self.sample(k);
            loss += lse - (vector::dot(&x[y * d..(y + 1) * d], feat) + x[self.n_classes * d + y]);
            p[y] -= 1.0;
            for c in 0..self.n_classes {
                let r = w * p[c];
                vector::axpy(r, feat, &mut acc[c * d..(c + 1) * d]);
                acc[self.n_classes * d + c] += r;
            }
        }
        (loss * w, acc)
    }

    /// Mean gradient over the given sample indices (repeats allowed).
    pub fn minibatch_grad(&self, x: &[f64], indices: &[usize]) -> ModelVector {
        let mut acc = vec![0.0; self.param_dim()];
        let mut scratch = vec![0.0; self.n_classes];
        let w = 1.0 / indices.len() as f64;
        for &k in indices {
            self.accumulate_grad(x, k, w, &mut acc, &mut scratch);
        }
        acc
    }

    /// Fraction of local samples whose arg-max prediction matches the label.
    pub fn accuracy(&self, x: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.n_classes];
        let n = self.n_samples();
        let hits = (0..n)
            .filter(|&k| {
                self.probs_into(x, k, &mut scratch);
                let pred = scratch
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
                    .0;
                pred == self.labels[k]
            })
            .count();
        hits as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Quadratic(QuadraticObjective),
    Logistic(LogisticObjective),
}

/// Stochastic-gradient noise.
///
/// `sigma` adds zero-mean isotropic Gaussian noise with total variance
/// `sigma^2` (per coordinate `sigma^2 / d`). `batch_size`, for logistic
/// objectives, replaces the full-batch gradient by a uniform minibatch drawn
/// with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self { sigma, batch_size: None }
    }

    pub fn minibatch(batch_size: usize) -> Self {
        Self {
            sigma: 0.0,
            batch_size: Some(batch_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SimError::invalid(format!("noise sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.batch_size == Some(0) {
            return Err(SimError::invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    /// True when the oracle returns the exact gradient.
    pub fn is_exact(&self) -> bool {
        self.sigma == 0.0 && self.batch_size.is_none()
    }
}

impl Objective {
    pub fn quadratic(minimizer: ModelVector) -> Self {
        Objective::Quadratic(QuadraticObjective::new(minimizer))
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.minimizer.len(),
            Objective::Logistic(l) => l.param_dim(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(SimError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self {
            Objective::Quadratic(q) => 0.5 * vector::sq_dist(x, &q.minimizer),
            Objective::Logistic(l) => l.loss(x),
        })
    }

    pub fn true_grad(&self, x: &[f64]) -> Result<ModelVector> {
        self.check_dim(x)?;
        Ok(match self {
            Objective::Quadratic(q) => vector::sub(x, &q.minimizer),
            Objective::Logistic(l) => l.grad(x),
        })
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, ModelVector)> {
        self.check_dim(x)?;
        Ok(match self {
            Objective::Quadratic(q) => (0.5 * vector::sq_dist(x, &q.minimizer), vector::sub(x, &q.minimizer)),
            Objective::Logistic(l) => l.loss_and_grad(x),
        })
    }

    pub fn stochastic_grad<R: Rng + ?Sized>(&self, x: &[f64], noise: &NoiseSpec, rng: &mut R) -> Result<ModelVector> {
        self.check_dim(x)?;
        let mut g = match (self, noise.batch_size) {
            (Objective::Logistic(l), Some(b)) => {
                let n = l.n_samples();
                let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
                l.minibatch_grad(x, &idx)
            }
            _ => self.true_grad(x)?,
        };
        if noise.sigma > 0.0 {
            let sd = noise.sigma / (g.len() as f64).sqrt();
            for gi in g.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *gi += sd * z;
            }
        }
        Ok(g)
    }

    pub fn accuracy(&self, x: &[f64]) -> Option<f64> {
        match self {
            Objective::Logistic(l) => Some(l.accuracy(x)),
            Objective::Quadratic(_) => None,
        }
    }
}

fn check_same_dim(objectives: &[Objective]) -> Result<usize> {
    let first = objectives
        .first()
        .ok_or_else(|| SimError::invalid("objective list is empty"))?;
    let d = first.dim();
    if let Some(o) = objectives.iter().find(|o| o.dim() != d) {
        return Err(SimError::DimensionMismatch {
            expected: d,
            actual: o.dim(),
        });
    }
    Ok(d)
}

/// `F(x) = (1/m) sum_i F_i(x)`.
pub fn global_eval(objectives: &[Objective], x: &[f64]) -> Result<f64> {
    check_same_dim(objectives)?;
    let mut total = 0.0;
    for o in objectives {
        total += o.value(x)?;
    }
    Ok(total / objectives.len() as f64)
}

/// `grad F(x) = (1/m) sum_i grad F_i(x)`.
pub fn global_grad(objectives: &[Objective], x: &[f64]) -> Result<ModelVector> {
    let d = check_same_dim(objectives)?;
    let mut acc = vec![0.0; d];
    for o in objectives {
        let g = o.true_grad(x)?;
        vector::axpy(1.0, &g, &mut acc);
    }
    let m = objectives.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

/// Gaussian class blobs: class `c` has mean `scale * e_c` in `R^features` and
/// unit covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBlobs {
    pub classes: usize,
    pub features: usize,
    pub scale: f64,
}

impl Default for ClassBlobs {
    fn default() -> Self {
        Self {
            classes: 10,
            features: 20,
            scale: 3.0,
        }
    }
}

impl ClassBlobs {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(SimError::invalid("need at least 2 classes"));
        }
        if self.features < self.classes {
            return Err(SimError::invalid(format!(
                "class means live on coordinate axes, so features ({}) must be >= classes ({})",
                self.features, self.classes
            )));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(SimError::invalid("blob scale must be finite and >= 0"));
        }
        Ok(())
    }

    fn draw_into<R: Rng + ?Sized>(&self, class: usize, rng: &mut R, out: &mut Vec<f64>) {
        for j in 0..self.features {
            let z: f64 = rng.sample(StandardNormal);
            out.push(if j == class { z + self.scale } else { z });
        }
    }
}

/// Draws one point from `Dirichlet(alpha * 1_k)` via normalised Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SimError::invalid(format!("Dirichlet concentration must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| SimError::invalid(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // all-zero only happens through underflow at tiny alpha; redraw
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

/// Builds one logistic objective per client with Dirichlet class skew.
///
/// Each client draws `nu_i ~ Dirichlet(alpha)`, then `samples_per_client`
/// labels from `nu_i`, then features from the matching class blob.
pub fn generate_dirichlet_partition<R: Rng + ?Sized>(
    alpha: f64,
    clients: usize,
    blobs: &ClassBlobs,
    samples_per_client: usize,
    rng: &mut R,
) -> Result<Vec<LogisticObjective>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(SimError::invalid(format!("Dirichlet alpha must be > 0, got {alpha}")));
    }
    if samples_per_client == 0 {
        return Err(SimError::invalid("samples_per_client must be >= 1"));
    }
    blobs.validate()?;
    let mut out = Vec::with_capacity(clients);
    for _ in 0..clients {
        let nu = sample_dirichlet(alpha, blobs.classes, rng)?;
        let mut features = Vec::with_capacity(samples_per_client * blobs.features);
        let mut labels = Vec::with_capacity(samples_per_client);
        for _ in 0..samples_per_client {
            let y = sample_categorical(&nu, rng);
            blobs.draw_into(y, rng, &mut features);
            labels.push(y);
        }
        out.push(LogisticObjective::new(features, labels, blobs.features, blobs.classes, nu)?);
    }
    Ok(out)
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn rng() -> crate::rng::SimRng {
        stream(11, StreamKind::Data, 0)
    }

    /// Central finite differences of `value`, step `h`.
    fn fd_grad(obj: &Objective, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                (obj.value(&xp).unwrap() - obj.value(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn small_logistic(samples: usize, rng: &mut crate::rng::SimRng) -> Objective {
        let blobs = ClassBlobs {
            classes: 3,
            features: 4,
            scale: 2.0,
        };
        let mut objs = generate_dirichlet_partition(1.0, 1, &blobs, samples, rng).unwrap();
        Objective::Logistic(objs.remove(0))
    }

    #[test]
    fn quadratic_grad_values() {
        let q = Objective::quadratic(vec![100.0]);
        assert_eq!(q.true_grad(&[0.0]).unwrap(), vec![-100.0]);
        let u = vec![1.5, -2.0, 3.25];
        let q = Objective::quadratic(u.clone());
        assert_eq!(q.true_grad(&u).unwrap(), vec![0.0; 3]);
        assert_eq!(q.value(&u).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = Objective::quadratic(vec![0.0, 0.0]);
        assert!(matches!(q.true_grad(&[1.0]), Err(SimError::DimensionMismatch { .. })));
    }

    #[test]
    fn logistic_single_sample_matches_finite_differences() {
        let mut r = rng();
        let obj = small_logistic(1, &mut r);
        let x: Vec<f64> = (0..obj.dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let g = obj.true_grad(&x).unwrap();
        let fd = fd_grad(&obj, &x, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel < 1e-5 || (a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_at_random_points() {
        let mut r = rng();
        let quad = Objective::quadratic(vec![0.3, -4.0, 7.0]);
        let logi = small_logistic(30, &mut r);
        for obj in [&quad, &logi] {
            for _ in 0..20 {
                let x: Vec<f64> = (0..obj.dim()).map(|_| r.random_range(-2.0..2.0)).collect();
                let g = obj.true_grad(&x).unwrap();
                let fd = fd_grad(obj, &x, 1e-5);
                let err = vector::sq_dist(&g, &fd).sqrt();
                assert!(err <= 1e-4 * vector::sq_norm(&g).sqrt().max(1e-3), "fd error {err}");
            }
        }
    }

    #[test]
    fn full_batch_grad_is_mean_of_sample_grads() {
        let mut r = rng();
        let obj = small_logistic(17, &mut r);
        let Objective::Logistic(l) = &obj else { unreachable!() };
        let x: Vec<f64> = (0..obj.dim()).map(|_| r.random_range(-1.0..1.0)).collect();
        let full = l.grad(&x);
        let mut acc = vec![0.0; obj.dim()];
        for k in 0..l.n_samples() {
            vector::axpy(1.0 / l.n_samples() as f64, &l.minibatch_grad(&x, &[k]), &mut acc);
        }
        assert!(vector::sq_dist(&full, &acc).sqrt() < 1e-12);
        let (loss, g) = l.loss_and_grad(&x);
        assert!((loss - l.loss(&x)).abs() < 1e-12);
        assert!(vector::sq_dist(&g, &full).sqrt() < 1e-12);
    }

    #[test]
    fn zero_noise_is_exact() {
        let mut r = rng();
        let q = Objective::quadratic(vec![1.0, 2.0]);
        let g = q.stochastic_grad(&[0.0, 0.0], &NoiseSpec::none(), &mut r).unwrap();
        assert_eq!(g, q.true_grad(&[0.0, 0.0]).unwrap());
    }

    #[test]
    fn gaussian_noise_is_unbiased_with_total_variance_sigma_sq() {
        let mut r = rng();
        let sigma = 2.0;
        let noise = NoiseSpec::gaussian(sigma);
        let q = Objective::quadratic(vec![1.0, -1.0, 0.5, 3.0]);
        let d = q.dim();
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
            let truth = q.true_grad(&x).unwrap();
            let n = 10_000;
            let mut mean = vec![0.0; d];
            let mut var = 0.0;
            for _ in 0..n {
                let g = q.stochastic_grad(&x, &noise, &mut r).unwrap();
                var += vector::sq_dist(&g, &truth);
                vector::axpy(1.0 / n as f64, &g, &mut mean);
            }
            var /= n as f64;
            let per_coord_sd = sigma / (d as f64).sqrt();
            for (m, t) in mean.iter().zip(&truth) {
                assert!((m - t).abs() <= 3.0 * per_coord_sd / (n as f64).sqrt() * 1.5, "{m} vs {t}");
            }
            assert!((var - sigma * sigma).abs() <= 0.1 * sigma * sigma, "variance {var}");
        }
    }

    #[test]
    fn minibatch_noise_is_unbiased() {
        let mut r = rng();
        let obj = small_logistic(40, &mut r);
        let noise = NoiseSpec::minibatch(4);
        let x: Vec<f64> = (0..obj.dim()).map(|_| r.random_range(-0.5..0.5)).collect();
        let truth = obj.true_grad(&x).unwrap();
        let n = 10_000;
        let mut mean = vec![0.0; obj.dim()];
        let mut per_coord_sq = vec![0.0; obj.dim()];
        for _ in 0..n {
            let g = obj.stochastic_grad(&x, &noise, &mut r).unwrap();
            for j in 0..g.len() {
                mean[j] += g[j] / n as f64;
                per_coord_sq[j] += (g[j] - truth[j]).powi(2) / n as f64;
            }
        }
        for j in 0..mean.len() {
            let se = (per_coord_sq[j] / n as f64).sqrt();
            assert!((mean[j] - truth[j]).abs() <= 4.0 * se + 1e-12, "coord {j}");
        }
    }

    #[test]
    fn global_eval_cases() {
        let objs = vec![Objective::quadratic(vec![0.0]), Objective::quadratic(vec![100.0])];
        assert_eq!(global_eval(&objs, &[50.0]).unwrap(), 1250.0);
        assert_eq!(global_grad(&objs, &[50.0]).unwrap(), vec![0.0]);
        assert_eq!(global_eval(&objs[..1], &[3.0]).unwrap(), 4.5);
        assert!(global_eval(&[], &[0.0]).is_err());
        let swapped = vec![objs[1].clone(), objs[0].clone()];
        assert_eq!(global_eval(&swapped, &[17.0]).unwrap(), global_eval(&objs, &[17.0]).unwrap());
    }

    #[test]
    fn two_quadratics_minimizer_is_midpoint() {
        let objs = vec![Objective::quadratic(vec![0.0]), Objective::quadratic(vec![100.0])];
        let at = |x: f64| global_eval(&objs, &[x]).unwrap();
        assert!(at(50.0) < at(49.9) && at(50.0) < at(50.1));
    }

    #[test]
    fn dirichlet_partition_properties() {
        let mut r = rng();
        let blobs = ClassBlobs::default();
        let near_uniform = generate_dirichlet_partition(1e6, 20, &blobs, 10, &mut r).unwrap();
        for obj in &near_uniform {
            let s: f64 = obj.class_dist().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(obj.class_dist().iter().all(|&v| (v - 0.1).abs() < 1e-2));
        }
        let skewed = generate_dirichlet_partition(0.1, 100, &blobs, 10, &mut r).unwrap();
        let avg_max: f64 = skewed
            .iter()
            .map(|o| o.class_dist().iter().cloned().fold(0.0, f64::max))
            .sum::<f64>()
            / 100.0;
        assert!(avg_max > 0.5, "avg max coordinate {avg_max}");
        for obj in &skewed {
            assert!(obj.class_dist().iter().all(|&v| v >= 0.0));
            assert!((obj.class_dist().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(generate_dirichlet_partition(0.0, 2, &blobs, 10, &mut r).is_err());
        assert!(generate_dirichlet_partition(-1.0, 2, &blobs, 10, &mut r).is_err());
    }
}
