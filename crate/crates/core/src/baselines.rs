//! Competitor methods for the benchmark: the marginal Z-score ranking, the
//! Cholesky permutation search, and the direct lasso/ridge solves of the
//! covariance system.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnomalousSample, Dataset};
use crate::error::{Error, Result};
use crate::precision::{lasso_cd, sample_covariance};
use crate::rca::{rank_descending, z_score_sq};

/// Default squared-Z threshold for "extreme" transformed entries (3 sigma).
pub const DEFAULT_EXTREME_TAU: f64 = 9.0;

/// Cap on the permutation budget regardless of `p!`.
pub const MAX_PERMUTATION_BUDGET: usize = 1_000_000;

/// Seed for pseudo-random permutation sampling beyond full enumeration.
const PERMUTATION_SAMPLING_SEED: u64 = 0x5eed_cafe;

/// Outcome of one baseline run, in the same report shape as the main method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: String,
    pub scores: Vec<f64>,
    /// 1-based rank per node, descending score, ties by index.
    pub ranks: Vec<usize>,
    /// The successful ordering for the Cholesky search, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation_found: Option<Vec<usize>>,
    /// Seconds spent inside the method.
    pub wall_time: f64,
}

impl BaselineResult {
    fn new(method: &str, scores: Vec<f64>, started: Instant) -> Self {
        let ranks = rank_descending(&scores);
        Self {
            method: method.to_string(),
            scores,
            ranks,
            permutation_found: None,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// Rank nodes by their marginal squared Z-score alone. Cheap, but scores
/// every strongly infected descendant above a mildly shifted root cause.
pub fn zscore_baseline(data: &Dataset, x_tilde: &AnomalousSample) -> Result<BaselineResult> {
    let started = Instant::now();
    let p = data.p();
    if x_tilde.values.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_tilde.values.len() });
    }
    let scores: Vec<f64> =
        (0..p).map(|i| z_score_sq(x_tilde.values[i], &data.column(i))).collect();
    Ok(BaselineResult::new("zscore", scores, started))
}

/// `p!` capped at [`MAX_PERMUTATION_BUDGET`].
pub fn default_permutation_budget(p: usize) -> usize {
    let mut fact = 1usize;
    for k in 2..=p {
        fact = match fact.checked_mul(k) {
            Some(f) if f <= MAX_PERMUTATION_BUDGET => f,
            _ => return MAX_PERMUTATION_BUDGET,
        };
    }
    fact
}

/// Advance `perm` to the next lexicographic permutation; false at the last.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Permutation search over Cholesky factors: for each candidate ordering,
/// factor the permuted covariance, whiten the anomalous sample with the
/// factor, and accept the ordering if exactly one whitened entry is extreme
/// (squared Z-score above `extreme_tau` against the whitened normal data).
/// On success that entry is the root cause. If the budget is exhausted the
/// closest-to-success transform is returned as a ranking, flagged by
/// `permutation_found = None`.
pub fn cholesky_rca(
    data: &Dataset,
    x_tilde: &AnomalousSample,
    extreme_tau: f64,
    max_permutations: usize,
) -> Result<BaselineResult> {
    let started = Instant::now();
    let p = data.p();
    if x_tilde.values.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_tilde.values.len() });
    }
    let mut sigma = sample_covariance(data)?;
    if Cholesky::new(sigma.clone()).is_none() {
        let ridge = 1e-8 * sigma.trace() / p as f64;
        for i in 0..p {
            sigma[(i, i)] += ridge;
        }
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::IllConditionedCovariance(
                "Cholesky failed even with ridge".into(),
            ));
        }
    }

    let full = default_permutation_budget(p);
    let exhaustive = full <= max_permutations && full < MAX_PERMUTATION_BUDGET;
    let budget = max_permutations.min(MAX_PERMUTATION_BUDGET).max(1);
    let mut sampler = ChaCha8Rng::seed_from_u64(PERMUTATION_SAMPLING_SEED);
    let mut perm: Vec<usize> = (0..p).collect();

    // Best fallback: fewest |extreme count - 1|, earliest seen wins ties.
    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut tried = 0usize;
    loop {
        tried += 1;
        if let Some(z) = whiten_scores(&sigma, data, &x_tilde.values, &perm) {
            let extremes = z.iter().filter(|&&s| s > extreme_tau).count();
            let badness = extremes.abs_diff(1);
            if extremes == 1 {
                let mut scores = vec![0.0; p];
                for (k, &orig) in perm.iter().enumerate() {
                    scores[orig] = z[k];
                }
                let mut result = BaselineResult::new("cholesky", scores, started);
                result.permutation_found = Some(perm.clone());
                return Ok(result);
            }
            let better = match &best {
                Some((b, _)) => badness < *b,
                None => true,
            };
            if better {
                let mut scores = vec![0.0; p];
                for (k, &orig) in perm.iter().enumerate() {
                    scores[orig] = z[k];
                }
                best = Some((badness, scores));
            }
        }
        if tried >= budget {
            break;
        }
        if exhaustive {
            if !next_permutation(&mut perm) {
                break;
            }
        } else {
            perm.shuffle(&mut sampler);
        }
    }
    let scores = best.map(|(_, s)| s).unwrap_or_else(|| vec![0.0; p]);
    Ok(BaselineResult::new("cholesky", scores, started))
}

/// Whitened squared Z-scores of the anomalous sample under one ordering, or
/// `None` when that permuted covariance fails to factor.
fn whiten_scores(
    sigma: &DMatrix<f64>,
    data: &Dataset,
    x_tilde: &DVector<f64>,
    perm: &[usize],
) -> Option<Vec<f64>> {
    let p = perm.len();
    let permuted =
        DMatrix::from_fn(p, p, |r, c| sigma[(perm[r], perm[c])]);
    let chol = Cholesky::new(permuted)?;
    let l = chol.l();
    let xp = DVector::from_iterator(p, perm.iter().map(|&i| x_tilde[i]));
    let v = l.solve_lower_triangular(&xp)?;
    // Whiten the normal rows with the same factor to get per-entry baselines.
    let m = data.m();
    let mut baseline = DMatrix::zeros(m, p);
    for r in 0..m {
        let row = DVector::from_iterator(p, perm.iter().map(|&i| data.values()[(r, i)]));
        let t = l.solve_lower_triangular(&row)?;
        baseline.set_row(r, &t.transpose());
    }
    Some(
        (0..p)
            .map(|k| {
                let col: Vec<f64> = baseline.column(k).iter().copied().collect();
                z_score_sq(v[k], &col)
            })
            .collect(),
    )
}

/// Which regularized solve to use for the direct baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectVariant {
    Lasso,
    Ridge,
}

/// Solve `Sigma xi = x~` by lasso or ridge regression with the sample
/// covariance as design matrix, and score nodes by `|xi_i|` without any
/// baseline standardization.
pub fn direct_solve_baseline(
    data: &Dataset,
    x_tilde: &AnomalousSample,
    variant: DirectVariant,
    reg: f64,
) -> Result<BaselineResult> {
    let started = Instant::now();
    let p = data.p();
    if x_tilde.values.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_tilde.values.len() });
    }
    let sigma = sample_covariance(data)?;
    let gram = sigma.transpose() * &sigma;
    let rhs = sigma.transpose() * &x_tilde.values;
    let xi = match variant {
        DirectVariant::Ridge => {
            let mut m = gram;
            for i in 0..p {
                m[(i, i)] += reg;
            }
            Cholesky::new(m)
                .ok_or_else(|| Error::IllConditionedCovariance("ridge system not PD".into()))?
                .solve(&rhs)
        }
        DirectVariant::Lasso => {
            let mut beta = DVector::zeros(p);
            let mut u = DVector::zeros(p);
            let scale = gram.diagonal().iter().map(|d| d.abs()).sum::<f64>() / p as f64;
            let tol = 1e-10 * (1.0 + scale);
            lasso_cd(&gram, &(-rhs), reg, &mut beta, &mut u, tol, 10_000).ok_or_else(|| {
                Error::GlassoFailed {
                    alpha: reg,
                    reason: "direct lasso did not converge".into(),
                    gap: f64::NAN,
                }
            })?;
            beta
        }
    };
    let scores: Vec<f64> = xi.iter().map(|v| v.abs()).collect();
    let tag = match variant {
        DirectVariant::Lasso => "direct-lasso",
        DirectVariant::Ridge => "direct-ridge",
    };
    Ok(BaselineResult::new(tag, scores, started))
}
