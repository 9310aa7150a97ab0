//! Random SEM generation and sampling of normal datasets plus anomalous
//! observations, matching the simulation setup used for benchmarking:
//! Erdos-Renyi style edges calibrated to a target expected degree, weights
//! bounded away from zero, and four centered noise families with comparable
//! standard deviations.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::data::{AnomalousSample, Dataset};
use crate::error::{Error, Result};
use crate::sem::{LinearSem, NoiseDist, NoiseFamily, PerturbationSpec};

/// Configuration for random graph/SEM generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphGenConfig {
    /// Observed node count.
    pub p: usize,
    /// Latent node count; latents take part in edge sampling like any other
    /// node and occupy the trailing indices.
    pub n_latent: usize,
    /// Target expected total degree (in + out) per node.
    pub expected_degree: f64,
    /// Sample edges over all ordered pairs (cyclic) or only forward pairs of
    /// a random topological order (acyclic).
    pub cyclic: bool,
    /// Negative weight interval `[low, high]`, `high < 0`.
    pub neg_weights: (f64, f64),
    /// Positive weight interval `[low, high]`, `low > 0`.
    pub pos_weights: (f64, f64),
    /// Noise family shared by all nodes; per-node scales are drawn so the
    /// noise standard deviation is uniform on [0.5, 2].
    pub noise: NoiseFamily,
    pub seed: u64,
}

impl GraphGenConfig {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            n_latent: 0,
            expected_degree: 3.0,
            cyclic: false,
            neg_weights: (-2.0, -0.5),
            pos_weights: (0.5, 2.0),
            noise: NoiseFamily::Gaussian,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("need p >= 2, got {}", self.p)));
        }
        if !(self.expected_degree > 0.0) {
            return Err(Error::InvalidConfig("expected_degree must be positive".into()));
        }
        let (nl, nh) = self.neg_weights;
        let (pl, ph) = self.pos_weights;
        if !(nl <= nh && nh < 0.0 && 0.0 < pl && pl <= ph) {
            return Err(Error::InvalidConfig(
                "weight intervals must exclude a neighborhood of zero".into(),
            ));
        }
        Ok(())
    }
}

/// Spectral radius of `A` (largest eigenvalue modulus).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Generate a SEM from the config's own seed. Identical config (including
/// seed) yields an identical SEM.
pub fn generate_graph(config: &GraphGenConfig) -> Result<LinearSem> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    generate_graph_with(config, &mut rng)
}

/// Generate a SEM drawing randomness from the caller's RNG.
pub fn generate_graph_with(config: &GraphGenConfig, rng: &mut impl Rng) -> Result<LinearSem> {
    config.validate()?;
    let n = config.p + config.n_latent;
    // Rare numerically degenerate draws (an eigenvalue of A very close to 1)
    // are resampled; the attempt loop keeps generation deterministic per seed.
    for _ in 0..64 {
        let mut a = DMatrix::zeros(n, n);
        if config.cyclic {
            let prob = (config.expected_degree / (2.0 * (n as f64 - 1.0))).min(1.0);
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(prob) {
                        a[(i, j)] = sample_weight(config, rng);
                    }
                }
            }
            let rho = spectral_radius(&a);
            if rho > 0.95 {
                let factor = 0.9 / rho;
                log::debug!("rescaling cyclic SEM by {factor:.4} (spectral radius {rho:.4})");
                a *= factor;
            }
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let prob = (config.expected_degree / (n as f64 - 1.0)).min(1.0);
            for u in 0..n {
                for v in (u + 1)..n {
                    if rng.random_bool(prob) {
                        // Edge from earlier to later in the topological order.
                        a[(order[v], order[u])] = sample_weight(config, rng);
                    }
                }
            }
        }
        let noise: Vec<NoiseDist> =
            (0..n).map(|_| noise_with_sd(config.noise, rng.random_range(0.5..2.0))).collect();
        let latent: Vec<usize> = (config.p..n).collect();
        match LinearSem::new(a, latent, noise) {
            Ok(sem) => return Ok(sem),
            Err(Error::NonInvertibleSem { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidConfig("could not generate an invertible SEM in 64 attempts".into()))
}

/// Uniform draw over the union of the two weight intervals.
fn sample_weight(config: &GraphGenConfig, rng: &mut impl Rng) -> f64 {
    let (nl, nh) = config.neg_weights;
    let (pl, ph) = config.pos_weights;
    let neg_len = nh - nl;
    let total = neg_len + (ph - pl);
    let u = rng.random_range(0.0..total);
    if u < neg_len {
        nl + u
    } else {
        pl + (u - neg_len)
    }
}

/// Noise term of the given family with standard deviation `sd`.
pub fn noise_with_sd(family: NoiseFamily, sd: f64) -> NoiseDist {
    match family {
        NoiseFamily::Gaussian => NoiseDist::gaussian(sd),
        NoiseFamily::Uniform => NoiseDist::uniform(sd * 3f64.sqrt()),
        NoiseFamily::Exponential => NoiseDist::exponential(sd),
        NoiseFamily::Lognormal => {
            // Fixed shape; location chosen so the variance equals sd^2.
            let shape: f64 = 0.5;
            let s2 = shape * shape;
            let location = sd.ln() - s2 / 2.0 - (s2.exp_m1()).ln() / 2.0;
            NoiseDist::lognormal(location, shape)
        }
    }
}

/// One centered draw from a node's noise distribution.
pub fn sample_noise(dist: &NoiseDist, rng: &mut impl Rng) -> f64 {
    match dist.family {
        NoiseFamily::Gaussian => {
            Normal::new(0.0, dist.scale).expect("positive scale").sample(rng)
        }
        NoiseFamily::Uniform => rng.random_range(-dist.scale..dist.scale),
        NoiseFamily::Exponential => {
            // Inverse CDF keeps a single RNG call per draw.
            let u: f64 = rng.random_range(0.0..1.0);
            -dist.scale * (1.0 - u).ln() - dist.scale
        }
        NoiseFamily::Lognormal => {
            let mean = (dist.location + dist.scale * dist.scale / 2.0).exp();
            LogNormal::new(dist.location, dist.scale).expect("positive scale").sample(rng) - mean
        }
    }
}

fn noise_vector(sem: &LinearSem, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        sem.node_count(),
        sem.noise().iter().map(|d| sample_noise(d, rng)),
    )
}

fn observed_labels(sem: &LinearSem) -> Vec<String> {
    match sem.labels() {
        Some(labels) => sem.observed().iter().map(|&i| labels[i].clone()).collect(),
        None => sem.observed().iter().map(|&i| format!("X{}", i + 1)).collect(),
    }
}

/// Draw `m` i.i.d. samples from the normal regime, restricted to the
/// observed columns.
pub fn sample_normal(sem: &LinearSem, m: usize, rng: &mut impl Rng) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::InvalidData("need at least 2 samples".into()));
    }
    let path = sem.path_matrix()?;
    let obs = sem.observed();
    let mut values = DMatrix::zeros(m, obs.len());
    for r in 0..m {
        let x = &path * noise_vector(sem, rng);
        for (c, &i) in obs.iter().enumerate() {
            values[(r, c)] = x[i];
        }
    }
    Dataset::new(values, observed_labels(sem))
}

/// Draw one anomalous sample `x~ = (I - A)^{-1} (n + delta)`, observed
/// columns only, with ground truth mapped to observable root causes.
pub fn sample_anomalous(
    sem: &LinearSem,
    perturbation: &PerturbationSpec,
    rng: &mut impl Rng,
) -> Result<AnomalousSample> {
    let path = sem.path_matrix()?;
    let delta = perturbation.to_vector(sem.node_count())?;
    let x = path * (noise_vector(sem, rng) + delta);
    let obs = sem.observed();
    let values = DVector::from_iterator(obs.len(), obs.iter().map(|&i| x[i]));

    let observable = sem.observable_root_causes(perturbation)?;
    let mut positions = Vec::new();
    let mut deltas = Vec::new();
    for pos in observable {
        // Keep the strength of the first generating root cause that maps here.
        let node = sem.observed()[pos];
        let latent = sem.latent_set();
        let graph = sem.graph();
        let delta_for = perturbation
            .root_causes()
            .iter()
            .zip(perturbation.deltas())
            .find(|(&r, _)| {
                r == node || (latent.contains(&r) && graph.latent_reach(r, &latent).contains(&node))
            })
            .map(|(_, &d)| d)
            .unwrap_or(perturbation.deltas()[0]);
        positions.push(pos);
        deltas.push(delta_for);
    }
    let ground_truth = PerturbationSpec::new(positions, deltas)?;
    Ok(AnomalousSample { values, ground_truth: Some(ground_truth) })
}
