//! Linear structural equation models `X = A X + N`, possibly cyclic and
//! possibly containing latent nodes, together with their population-level
//! quantities: path matrix, covariance, precision, and the latent-free
//! projection obtained by marginalizing latent nodes into the noise.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

/// Relative singular-value threshold below which `I - A` counts as singular.
pub const SV_TOL: f64 = 1e-10;

/// Noise distribution family. Every family is centered to mean zero when
/// sampled; only uncorrelatedness across nodes is assumed, not independence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Exponential,
    Lognormal,
}

/// Per-node noise term. The meaning of `scale` and `location` depends on the
/// family:
///
/// * `Gaussian`: standard deviation `scale`, `location` unused.
/// * `Uniform`: uniform on `[-scale, scale]`, `location` unused.
/// * `Exponential`: mean `scale` before centering, `location` unused.
/// * `Lognormal`: underlying normal has mean `location` and standard
///   deviation `scale`; the analytic mean is subtracted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDist {
    pub family: NoiseFamily,
    #[serde(default)]
    pub location: f64,
    pub scale: f64,
}

impl NoiseDist {
    pub fn gaussian(sd: f64) -> Self {
        Self { family: NoiseFamily::Gaussian, location: 0.0, scale: sd }
    }

    pub fn uniform(half_width: f64) -> Self {
        Self { family: NoiseFamily::Uniform, location: 0.0, scale: half_width }
    }

    pub fn exponential(mean: f64) -> Self {
        Self { family: NoiseFamily::Exponential, location: 0.0, scale: mean }
    }

    pub fn lognormal(location: f64, shape: f64) -> Self {
        Self { family: NoiseFamily::Lognormal, location, scale: shape }
    }

    /// Variance of the centered draw.
    pub fn variance(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => self.scale * self.scale,
            NoiseFamily::Uniform => self.scale * self.scale / 3.0,
            NoiseFamily::Exponential => self.scale * self.scale,
            NoiseFamily::Lognormal => {
                let s2 = self.scale * self.scale;
                (s2.exp() - 1.0) * (2.0 * self.location + s2).exp()
            }
        }
    }
}

/// Sparse additive perturbation: the anomalous regime follows
/// `x~ = A x~ + n + delta` with `delta` supported on the root causes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    root_causes: Vec<usize>,
    deltas: Vec<f64>,
}

impl PerturbationSpec {
    pub fn new(root_causes: Vec<usize>, deltas: Vec<f64>) -> Result<Self> {
        if root_causes.is_empty() {
            return Err(Error::InvalidPerturbation("no root causes".into()));
        }
        if root_causes.len() != deltas.len() {
            return Err(Error::InvalidPerturbation("index/strength length mismatch".into()));
        }
        if deltas.iter().any(|d| *d == 0.0 || !d.is_finite()) {
            return Err(Error::InvalidPerturbation("zero or non-finite strength".into()));
        }
        let distinct: BTreeSet<usize> = root_causes.iter().copied().collect();
        if distinct.len() != root_causes.len() {
            return Err(Error::InvalidPerturbation("duplicate root cause index".into()));
        }
        Ok(Self { root_causes, deltas })
    }

    /// Single root cause at `node` with strength `delta`.
    pub fn single(node: usize, delta: f64) -> Result<Self> {
        Self::new(vec![node], vec![delta])
    }

    pub fn root_causes(&self) -> &[usize] {
        &self.root_causes
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Dense perturbation vector over `n` nodes.
    pub fn to_vector(&self, n: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(n);
        for (&r, &d) in self.root_causes.iter().zip(&self.deltas) {
            if r >= n {
                return Err(Error::InvalidPerturbation(format!("root cause {r} out of range")));
            }
            v[r] = d;
        }
        Ok(v)
    }
}

/// A linear SEM over `p_total` nodes, split into observed and latent index
/// sets. Entry `a[(i, j)]` is the direct effect of node `j` on node `i`; the
/// diagonal is zero and `I - A` must be numerically invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSem {
    a: DMatrix<f64>,
    observed: Vec<usize>,
    latent: Vec<usize>,
    noise: Vec<NoiseDist>,
    labels: Option<Vec<String>>,
}

impl LinearSem {
    /// Build and validate a SEM. `latent` lists the latent node indices; all
    /// remaining nodes are observed.
    pub fn new(a: DMatrix<f64>, latent: Vec<usize>, noise: Vec<NoiseDist>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if noise.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: noise.len() });
        }
        if (0..n).any(|i| a[(i, i)] != 0.0) {
            return Err(Error::InvalidConfig("non-zero diagonal in coefficient matrix".into()));
        }
        if noise.iter().any(|d| !(d.variance() > 0.0) || !d.variance().is_finite()) {
            return Err(Error::InvalidConfig("noise variance must be strictly positive".into()));
        }
        let latent_set: BTreeSet<usize> = latent.iter().copied().collect();
        if latent_set.len() != latent.len() || latent.iter().any(|&l| l >= n) {
            return Err(Error::InvalidConfig("latent indices must be distinct and in range".into()));
        }
        let observed: Vec<usize> = (0..n).filter(|i| !latent_set.contains(i)).collect();
        let mut latent = latent;
        latent.sort_unstable();
        let sem = Self { a, observed, latent, noise, labels: None };
        sem.check_invertible()?;
        Ok(sem)
    }

    /// Fully observed SEM (no latent nodes).
    pub fn fully_observed(a: DMatrix<f64>, noise: Vec<NoiseDist>) -> Result<Self> {
        Self::new(a, Vec::new(), noise)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.node_count() {
            return Err(Error::DimensionMismatch { expected: self.node_count(), got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.a.nrows()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn latent(&self) -> &[usize] {
        &self.latent
    }

    pub fn latent_set(&self) -> BTreeSet<usize> {
        self.latent.iter().copied().collect()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn noise(&self) -> &[NoiseDist] {
        &self.noise
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Diagonal noise covariance over all nodes.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.noise.len(),
            self.noise.iter().map(|d| d.variance()),
        ))
    }

    /// The graph induced by the non-zero pattern of `A`.
    pub fn graph(&self) -> DirectedGraph {
        let n = self.node_count();
        let edges = (0..n)
            .flat_map(|i| (0..n).map(move |j| (j, i)))
            .filter(|&(j, i)| self.a[(i, j)] != 0.0);
        let g = DirectedGraph::new(n, edges).expect("validated coefficients");
        match &self.labels {
            Some(l) => g.with_labels(l.clone()).expect("validated labels"),
            None => g,
        }
    }

    fn check_invertible(&self) -> Result<(f64, f64)> {
        let i_minus_a = DMatrix::identity(self.node_count(), self.node_count()) - &self.a;
        let sv = i_minus_a.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > SV_TOL * max) || !min.is_finite() {
            return Err(Error::NonInvertibleSem { min_singular: min });
        }
        Ok((min, max))
    }

    /// Path matrix `(I - A)^{-1}`: entry `(i, j)` is the total causal effect
    /// of node `j` on node `i`, accumulated over all paths.
    pub fn path_matrix(&self) -> Result<DMatrix<f64>> {
        self.check_invertible()?;
        let n = self.node_count();
        let i_minus_a = DMatrix::identity(n, n) - &self.a;
        i_minus_a
            .try_inverse()
            .ok_or(Error::NonInvertibleSem { min_singular: 0.0 })
    }

    /// Population covariance over all nodes:
    /// `(I - A)^{-1} Sigma_NN (I - A)^{-T}`.
    pub fn population_covariance(&self) -> Result<DMatrix<f64>> {
        let p = self.path_matrix()?;
        let sigma_nn = self.noise_covariance();
        Ok(&p * sigma_nn * p.transpose())
    }

    /// Population precision over all nodes, in product form:
    /// `(I - A)^T Theta_NN (I - A)`.
    pub fn population_precision(&self) -> Result<DMatrix<f64>> {
        self.check_invertible()?;
        let n = self.node_count();
        let i_minus_a = DMatrix::identity(n, n) - &self.a;
        let theta_nn = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            self.noise.iter().map(|d| 1.0 / d.variance()),
        ));
        Ok(i_minus_a.transpose() * theta_nn * i_minus_a)
    }

    /// Covariance restricted to the observed block, in observed order.
    pub fn observed_covariance(&self) -> Result<DMatrix<f64>> {
        let full = self.population_covariance()?;
        Ok(full.select_rows(self.observed.iter()).select_columns(self.observed.iter()))
    }

    /// Marginalize latent nodes into the noise, yielding an observed-only
    /// SEM with correlated noise. The optional perturbation is projected
    /// alongside; without one the projected shift is zero.
    pub fn marginalize_latents(&self, pert: Option<&PerturbationSpec>) -> Result<ProjectedSem> {
        let p = self.observed.len();
        let q = self.latent.len();
        let obs = &self.observed;
        let lat = &self.latent;

        let a_xx = self.a.select_rows(obs.iter()).select_columns(obs.iter());
        let delta_full = match pert {
            Some(pt) => pt.to_vector(self.node_count())?,
            None => DVector::zeros(self.node_count()),
        };
        let delta_x = DVector::from_iterator(p, obs.iter().map(|&i| delta_full[i]));

        let (s, cov_m, delta_m) = if q == 0 {
            let cov = DMatrix::from_diagonal(&DVector::from_iterator(
                p,
                obs.iter().map(|&i| self.noise[i].variance()),
            ));
            (a_xx, cov, delta_x)
        } else {
            let a_xl = self.a.select_rows(obs.iter()).select_columns(lat.iter());
            let a_lx = self.a.select_rows(lat.iter()).select_columns(obs.iter());
            let a_ll = self.a.select_rows(lat.iter()).select_columns(lat.iter());
            let i_minus_ll = DMatrix::identity(q, q) - a_ll;
            let sv = i_minus_ll.singular_values();
            if !(sv.min() > SV_TOL * sv.max()) {
                return Err(Error::LatentProjectionDegenerate(format!(
                    "I - A_LL singular (smallest singular value {:.3e})",
                    sv.min()
                )));
            }
            let inv_ll = i_minus_ll
                .try_inverse()
                .ok_or_else(|| Error::LatentProjectionDegenerate("I - A_LL singular".into()))?;
            let b = &a_xl * inv_ll;
            let s = a_xx + &b * a_lx;
            let sigma_l = DMatrix::from_diagonal(&DVector::from_iterator(
                q,
                lat.iter().map(|&i| self.noise[i].variance()),
            ));
            let mut cov = &b * sigma_l * b.transpose();
            for (row, &i) in obs.iter().enumerate() {
                cov[(row, row)] += self.noise[i].variance();
            }
            let delta_l = DVector::from_iterator(q, lat.iter().map(|&i| delta_full[i]));
            let delta_m = delta_x + &b * delta_l;
            (s, cov, delta_m)
        };

        // Self-loop removal: rescale row i by 1 / (1 - s_ii).
        let mut d = DVector::zeros(p);
        for i in 0..p {
            let denom = 1.0 - s[(i, i)];
            if denom.abs() < 1e-12 * (1.0 + s[(i, i)].abs()) {
                return Err(Error::LatentProjectionDegenerate(format!(
                    "unit self-effect at observed node {} (s_ii = {})",
                    obs[i],
                    s[(i, i)]
                )));
            }
            d[i] = 1.0 / denom;
        }
        let mut a_bar = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    a_bar[(i, j)] = d[i] * s[(i, j)];
                }
            }
        }
        let mut noise_cov_bar = cov_m;
        for i in 0..p {
            for j in 0..p {
                noise_cov_bar[(i, j)] *= d[i] * d[j];
            }
        }
        // Enforce exact symmetry against round-off.
        let sym = (&noise_cov_bar + noise_cov_bar.transpose()) * 0.5;
        let delta_bar = DVector::from_iterator(p, (0..p).map(|i| d[i] * delta_m[i]));
        Ok(ProjectedSem { a_bar, noise_cov_bar: sym, delta_bar, observed: obs.clone() })
    }

    /// Map root causes to the observed nodes where they first become
    /// visible: an observed root cause maps to itself, a latent one to every
    /// observed node reachable through latent-interior paths. Indices are
    /// positions in the observed-column order.
    pub fn observable_root_causes(&self, pert: &PerturbationSpec) -> Result<BTreeSet<usize>> {
        let graph = self.graph();
        let latent_set = self.latent_set();
        let mut out = BTreeSet::new();
        for &r in pert.root_causes() {
            if r >= self.node_count() {
                return Err(Error::InvalidPerturbation(format!("root cause {r} out of range")));
            }
            if latent_set.contains(&r) {
                for hit in graph.latent_reach(r, &latent_set) {
                    out.insert(self.observed_position(hit)?);
                }
            } else {
                out.insert(self.observed_position(r)?);
            }
        }
        Ok(out)
    }

    /// Position of observed node `node` in the observed-column order.
    pub fn observed_position(&self, node: usize) -> Result<usize> {
        self.observed
            .binary_search(&node)
            .map_err(|_| Error::InvalidConfig(format!("node {node} is not observed")))
    }
}

/// Observed-only SEM produced by [`LinearSem::marginalize_latents`]:
/// `X = A_bar X + N_bar` with (generally correlated) noise covariance
/// `noise_cov_bar` and projected perturbation `delta_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSem {
    pub a_bar: DMatrix<f64>,
    pub noise_cov_bar: DMatrix<f64>,
    pub delta_bar: DVector<f64>,
    /// Original indices of the observed nodes, in column order.
    pub observed: Vec<usize>,
}

impl ProjectedSem {
    /// Covariance implied by the projected SEM:
    /// `(I - A_bar)^{-1} Cov(N_bar) (I - A_bar)^{-T}`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let p = self.a_bar.nrows();
        let i_minus = DMatrix::identity(p, p) - &self.a_bar;
        let sv = i_minus.singular_values();
        if !(sv.min() > SV_TOL * sv.max()) {
            return Err(Error::NonInvertibleSem { min_singular: sv.min() });
        }
        let inv = i_minus
            .try_inverse()
            .ok_or(Error::NonInvertibleSem { min_singular: 0.0 })?;
        Ok(&inv * &self.noise_cov_bar * inv.transpose())
    }

    /// Precision of the projected noise, `Cov(N_bar)^{-1}`.
    pub fn noise_precision(&self) -> Result<DMatrix<f64>> {
        self.noise_cov_bar
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::LatentProjectionDegenerate("projected noise covariance singular".into()))
    }
}

// --- JSON schema -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    from: usize,
    to: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct SemJson {
    p: usize,
    latent: Vec<usize>,
    edges: Vec<EdgeJson>,
    noise: Vec<NoiseDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl LinearSem {
    /// Serialize to the interchange schema:
    /// `{ "p", "latent", "edges": [{"from","to","w"}], "noise", "labels"? }`.
    pub fn to_json(&self) -> Result<String> {
        let n = self.node_count();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.a[(i, j)] != 0.0 {
                    edges.push(EdgeJson { from: j, to: i, w: self.a[(i, j)] });
                }
            }
        }
        let doc = SemJson {
            p: n,
            latent: self.latent.clone(),
            edges,
            noise: self.noise.clone(),
            labels: self.labels.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SemJson = serde_json::from_str(text)?;
        let mut a = DMatrix::zeros(doc.p, doc.p);
        for e in &doc.edges {
            if e.from >= doc.p || e.to >= doc.p {
                return Err(Error::InvalidConfig(format!(
                    "edge ({}, {}) out of range for p = {}",
                    e.from, e.to, doc.p
                )));
            }
            a[(e.to, e.from)] = e.w;
        }
        let sem = Self::new(a, doc.latent, doc.noise)?;
        match doc.labels {
            Some(l) => sem.with_labels(l),
            None => Ok(sem),
        }
    }
}

// --- shared test fixtures ---------------------------------------------------

/// Two-node chain `X1 -> X2` with weight `rho`, unit variance at both nodes
/// (noise variances `1` and `1 - rho^2`). Used across tests and docs.
pub fn chain_sem(rho: f64) -> LinearSem {
    let mut a = DMatrix::zeros(2, 2);
    a[(1, 0)] = rho;
    LinearSem::fully_observed(
        a,
        vec![NoiseDist::gaussian(1.0), NoiseDist::gaussian((1.0 - rho * rho).sqrt())],
    )
    .expect("valid chain SEM")
}
