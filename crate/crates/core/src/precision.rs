//! Precision matrix estimation from the normal-regime dataset: stabilized
//! inversion of the sample covariance, and an L1-penalized maximum
//! likelihood solver (graphical lasso) written as block coordinate descent
//! over columns, with the alpha-escalation fallback policy.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// How a precision estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMethod {
    InverseCovariance,
    GraphicalLasso,
    /// Inverse covariance used after the glasso escalation ladder failed.
    Fallback,
}

/// One rung of the escalation ladder, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationAttempt {
    pub alpha: f64,
    /// `None` means success at this alpha.
    pub failure: Option<String>,
}

/// An estimated precision matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    /// Symmetric positive-definite estimate of the precision.
    pub theta: DMatrix<f64>,
    pub method: EstimationMethod,
    /// Regularization actually used (0 for plain inversion).
    pub alpha_used: f64,
    /// Eigenvalue ratio of `theta`.
    pub condition_number: f64,
    /// Outer sweeps used by the solver (0 for plain inversion).
    pub iterations: usize,
    /// Penalized log-likelihood after each sweep (glasso only).
    pub objective_path: Vec<f64>,
    /// Escalation ladder walked to produce this estimate.
    pub attempts: Vec<EscalationAttempt>,
}

/// Which estimator the pipeline should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    GraphicalLasso,
    InverseCovariance,
}

/// Estimator settings. Tolerances are relative: the convergence threshold is
/// `rel_tol * mean(|diag(sigma)|)` and the stabilization ridge is
/// `rel_ridge * trace(sigma) / p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: EstimatorMethod,
    pub alpha: f64,
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub rel_ridge: f64,
    pub escalation: bool,
}

impl EstimatorConfig {
    pub fn glasso() -> Self {
        Self {
            method: EstimatorMethod::GraphicalLasso,
            alpha: 0.1,
            max_sweeps: 100,
            rel_tol: 1e-4,
            rel_ridge: 1e-8,
            escalation: true,
        }
    }

    pub fn inverse() -> Self {
        Self { method: EstimatorMethod::InverseCovariance, ..Self::glasso() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be >= 0".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::glasso()
    }
}

/// Unbiased sample covariance over columns ((m - 1) denominator).
pub fn sample_covariance(data: &Dataset) -> Result<DMatrix<f64>> {
    let m = data.m();
    if m < 2 {
        return Err(Error::InvalidData(format!("need m >= 2 samples, got {m}")));
    }
    let x = data.values();
    let p = x.ncols();
    let mut centered = x.clone();
    for c in 0..p {
        let mean = x.column(c).sum() / m as f64;
        for r in 0..m {
            centered[(r, c)] -= mean;
        }
    }
    let s = centered.transpose() * centered / (m as f64 - 1.0);
    Ok((&s + s.transpose()) * 0.5)
}

fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min.abs() == 0.0 {
        f64::INFINITY
    } else {
        (max / min).abs()
    }
}

/// Invert `sigma + ridge_eps * I` through its symmetric positive-definite
/// factorization.
pub fn invert_covariance(sigma: &DMatrix<f64>, ridge_eps: f64) -> Result<PrecisionEstimate> {
    let p = sigma.nrows();
    let mut m = (sigma + sigma.transpose()) * 0.5;
    for i in 0..p {
        m[(i, i)] += ridge_eps;
    }
    let chol = Cholesky::new(m.clone()).ok_or_else(|| {
        Error::IllConditionedCovariance(format!(
            "not positive definite even with ridge {ridge_eps:.3e}"
        ))
    })?;
    let theta = chol.inverse();
    let theta = (&theta + theta.transpose()) * 0.5;
    Ok(PrecisionEstimate {
        condition_number: condition_number(&theta),
        theta,
        method: EstimationMethod::InverseCovariance,
        alpha_used: 0.0,
        iterations: 0,
        objective_path: Vec::new(),
        attempts: Vec::new(),
    })
}

/// Cyclic coordinate descent for `min 0.5 b'Qb + c'b + lambda |b|_1`.
/// `u` must hold `Q b` on entry and is kept in sync. Returns the number of
/// passes used, or `None` on non-convergence.
pub(crate) fn lasso_cd(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    beta: &mut DVector<f64>,
    u: &mut DVector<f64>,
    tol: f64,
    max_passes: usize,
) -> Option<usize> {
    let n = beta.len();
    for pass in 1..=max_passes {
        let mut max_step = 0.0f64;
        for k in 0..n {
            let qkk = q[(k, k)];
            if qkk <= 0.0 {
                continue;
            }
            let r = c[k] + u[k] - qkk * beta[k];
            let target = -r;
            let new = if target.abs() <= lambda {
                0.0
            } else {
                (target - lambda * target.signum()) / qkk
            };
            let step = new - beta[k];
            if step != 0.0 {
                let col = q.column(k);
                for l in 0..n {
                    u[l] += col[l] * step;
                }
                beta[k] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < tol {
            return Some(pass);
        }
    }
    None
}

/// Off-diagonal L1 norm.
fn off_diag_l1(theta: &DMatrix<f64>) -> f64 {
    let p = theta.nrows();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                total += theta[(i, j)].abs();
            }
        }
    }
    total
}

/// Penalized Gaussian log-likelihood
/// `log det(theta) - tr(sigma theta) - alpha ||theta||_{1,off}`.
/// `None` when `theta` is not positive definite.
pub fn glasso_objective(sigma: &DMatrix<f64>, theta: &DMatrix<f64>, alpha: f64) -> Option<f64> {
    let chol = Cholesky::new(theta.clone())?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(logdet - (sigma * theta).trace() - alpha * off_diag_l1(theta))
}

/// Duality-gap estimate `tr(sigma theta) - p + alpha ||theta||_{1,off}`,
/// zero at the optimum.
fn duality_gap(sigma: &DMatrix<f64>, theta: &DMatrix<f64>, alpha: f64) -> f64 {
    (sigma * theta).trace() - sigma.nrows() as f64 + alpha * off_diag_l1(theta)
}

struct GlassoOutput {
    theta: DMatrix<f64>,
    sweeps: usize,
    objective_path: Vec<f64>,
}

fn glasso_at_alpha(
    sigma: &DMatrix<f64>,
    alpha: f64,
    config: &EstimatorConfig,
) -> std::result::Result<GlassoOutput, (String, f64)> {
    let p = sigma.nrows();
    let fail = |reason: String, theta: &DMatrix<f64>| {
        (reason, duality_gap(sigma, theta, alpha))
    };

    let mean_diag = sigma.diagonal().iter().map(|d| d.abs()).sum::<f64>() / p as f64;
    let tol = config.rel_tol * mean_diag;
    let inner_tol = tol * 1e-2;

    let mut theta = DMatrix::zeros(p, p);
    let mut w = DMatrix::zeros(p, p);
    for j in 0..p {
        let sjj = sigma[(j, j)];
        if !(sjj > 0.0) {
            return Err((format!("non-positive covariance diagonal at {j}"), f64::NAN));
        }
        theta[(j, j)] = 1.0 / sjj;
        w[(j, j)] = sjj;
    }

    let mut objective_path = Vec::new();
    let mut last_objective = f64::NEG_INFINITY;
    for sweep in 1..=config.max_sweeps {
        let theta_prev = theta.clone();
        for j in 0..p {
            let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let w22 = w[(j, j)];
            if !(w22 > 0.0) || !w22.is_finite() {
                return Err(fail(format!("working inverse degenerate at column {j}"), &theta));
            }
            let w12 = DVector::from_iterator(p - 1, rest.iter().map(|&k| w[(k, j)]));
            // V = Theta_11^{-1} via a rank-1 downdate of W.
            let mut v = w.select_rows(rest.iter()).select_columns(rest.iter());
            for a in 0..p - 1 {
                for b in 0..p - 1 {
                    v[(a, b)] -= w12[a] * w12[b] / w22;
                }
            }
            let s12 = DVector::from_iterator(p - 1, rest.iter().map(|&k| sigma[(k, j)]));
            let s22 = sigma[(j, j)];
            let q = &v * s22;
            let mut beta = DVector::from_iterator(p - 1, rest.iter().map(|&k| theta[(k, j)]));
            let mut u = &q * &beta;
            if lasso_cd(&q, &s12, alpha, &mut beta, &mut u, inner_tol, 500).is_none() {
                return Err(fail(format!("column {j} lasso did not converge"), &theta));
            }
            let vb = &v * &beta;
            let theta22 = 1.0 / s22 + beta.dot(&vb);
            if !theta22.is_finite() || beta.iter().any(|b| !b.is_finite()) {
                return Err(fail(format!("non-finite update at column {j}"), &theta));
            }
            for (k, &row) in rest.iter().enumerate() {
                theta[(row, j)] = beta[k];
                theta[(j, row)] = beta[k];
            }
            theta[(j, j)] = theta22;
            // Refresh W = Theta^{-1} for the changed row/column.
            w[(j, j)] = s22;
            for (k, &row) in rest.iter().enumerate() {
                let val = -s22 * vb[k];
                w[(row, j)] = val;
                w[(j, row)] = val;
            }
            for (a, &ra) in rest.iter().enumerate() {
                for (b, &rb) in rest.iter().enumerate() {
                    w[(ra, rb)] = v[(a, b)] + s22 * vb[a] * vb[b];
                }
            }
        }

        let objective = match glasso_objective(sigma, &theta, alpha) {
            Some(o) if o.is_finite() => o,
            _ => return Err(fail("positive-definiteness lost".into(), &theta)),
        };
        debug_assert!(
            objective >= last_objective - 1e-7 * (1.0 + last_objective.abs()),
            "objective decreased: {last_objective} -> {objective}"
        );
        last_objective = objective;
        objective_path.push(objective);

        let delta = (&theta - &theta_prev).abs().max();
        if delta < tol {
            return Ok(GlassoOutput { theta, sweeps: sweep, objective_path });
        }
    }
    Err(fail(format!("no convergence within {} sweeps", config.max_sweeps), &theta))
}

/// Solve the off-diagonal L1-penalized Gaussian maximum-likelihood precision
/// problem at `config.alpha`. No escalation here; see
/// [`estimate_with_escalation`] for the full policy.
pub fn graphical_lasso(sigma: &DMatrix<f64>, config: &EstimatorConfig) -> Result<PrecisionEstimate> {
    config.validate()?;
    if !(config.alpha > 0.0) {
        return Err(Error::InvalidConfig("graphical lasso needs alpha > 0".into()));
    }
    let sigma = (sigma + sigma.transpose()) * 0.5;
    match glasso_at_alpha(&sigma, config.alpha, config) {
        Ok(out) => Ok(PrecisionEstimate {
            condition_number: condition_number(&out.theta),
            theta: out.theta,
            method: EstimationMethod::GraphicalLasso,
            alpha_used: config.alpha,
            iterations: out.sweeps,
            objective_path: out.objective_path,
            attempts: vec![EscalationAttempt { alpha: config.alpha, failure: None }],
        }),
        Err((reason, gap)) => Err(Error::GlassoFailed { alpha: config.alpha, reason, gap }),
    }
}

/// Estimate the precision of `data` under the configured policy: graphical
/// lasso at `alpha`, then `10 alpha`, then `100 alpha`; if all three fail,
/// fall back to ridge-stabilized inversion of the sample covariance. With
/// `method = InverseCovariance` the solver ladder is skipped entirely.
pub fn estimate_with_escalation(
    data: &Dataset,
    config: &EstimatorConfig,
) -> Result<PrecisionEstimate> {
    config.validate()?;
    let sigma = sample_covariance(data)?;
    let p = sigma.nrows();
    let ridge = config.rel_ridge * sigma.trace() / p as f64;

    if config.method == EstimatorMethod::InverseCovariance {
        return invert_covariance(&sigma, ridge);
    }

    let mut attempts = Vec::new();
    for step in 0..3 {
        let alpha = config.alpha * 10f64.powi(step);
        match glasso_at_alpha(&sigma, alpha, config) {
            Ok(out) => {
                attempts.push(EscalationAttempt { alpha, failure: None });
                return Ok(PrecisionEstimate {
                    condition_number: condition_number(&out.theta),
                    theta: out.theta,
                    method: EstimationMethod::GraphicalLasso,
                    alpha_used: alpha,
                    iterations: out.sweeps,
                    objective_path: out.objective_path,
                    attempts,
                });
            }
            Err((reason, gap)) => {
                log::debug!("glasso failed at alpha={alpha}: {reason}");
                if !config.escalation {
                    return Err(Error::GlassoFailed { alpha, reason, gap });
                }
                attempts.push(EscalationAttempt { alpha, failure: Some(reason) });
            }
        }
    }

    let mut est = invert_covariance(&sigma, ridge)?;
    est.method = EstimationMethod::Fallback;
    est.attempts = attempts;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::chain_sem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[&[f64]]) -> Dataset {
        let m = rows.len();
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::new(
            DMatrix::from_row_slice(m, p, &flat),
            (0..p).map(|i| format!("X{}", i + 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn covariance_of_identical_rows_is_zero() {
        let d = dataset(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let s = sample_covariance(&d).unwrap();
        assert_eq!(s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_constant_column_zero_row() {
        let d = dataset(&[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]]);
        let s = sample_covariance(&d).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
        assert_eq!(s[(0, 1)], 0.0);
        assert!((s[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_converges_on_chain() {
        let sem = chain_sem(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = crate::datagen::sample_normal(&sem, 1_000_000, &mut rng).unwrap();
        let s = sample_covariance(&data).unwrap();
        assert!((s[(0, 1)] - 0.5).abs() < 0.01);
    }

    #[test]
    fn invert_identity() {
        let est = invert_covariance(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert!((est.theta.clone() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!((est.condition_number - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invert_chain_covariance() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let est = invert_covariance(&s, 0.0).unwrap();
        let f = 1.0 / 0.75;
        let expected = DMatrix::from_row_slice(2, 2, &[f, -0.5 * f, -0.5 * f, f]);
        assert!((est.theta - expected).abs().max() < 1e-12);
    }

    #[test]
    fn invert_rank_one_with_ridge() {
        let v = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let s = &v * v.transpose();
        assert!(invert_covariance(&s, 0.0).is_err());
        let est = invert_covariance(&s, 1e-6).unwrap();
        assert!(est.theta.iter().all(|x| x.is_finite()));
        assert!(est.condition_number > 1e5);
    }

    #[test]
    fn glasso_identity_stays_identity() {
        let cfg = EstimatorConfig::glasso();
        let est = graphical_lasso(&DMatrix::identity(4, 4), &cfg).unwrap();
        assert!((est.theta.clone() - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn glasso_diagonal_inverts_elementwise() {
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5, 4.0]));
        let cfg = EstimatorConfig::glasso();
        let est = graphical_lasso(&s, &cfg).unwrap();
        for (i, expect) in [0.5, 2.0, 0.25].into_iter().enumerate() {
            assert!((est.theta[(i, i)] - expect).abs() < 1e-10);
        }
        assert!(off_diag_l1(&est.theta) < 1e-12);
    }

    #[test]
    fn glasso_objective_monotone_and_converges_to_inverse() {
        // Small alpha: glasso must approach the plain inverse.
        let mut cfg = EstimatorConfig::glasso();
        cfg.alpha = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut gen_cfg = crate::datagen::GraphGenConfig::new(8);
        gen_cfg.cyclic = true;
        let sem = crate::datagen::generate_graph_with(&gen_cfg, &mut rng).unwrap();
        let data = crate::datagen::sample_normal(&sem, 4000, &mut rng).unwrap();
        let s = sample_covariance(&data).unwrap();

        let est = graphical_lasso(&s, &cfg).unwrap();
        for w in est.objective_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-7 * (1.0 + w[0].abs()), "objective not monotone: {w:?}");
        }
        let inv = invert_covariance(&s, 0.0).unwrap();
        let dist = (est.theta - inv.theta).norm();
        assert!(dist < 1e-3, "Frobenius distance {dist}");
    }

    #[test]
    fn glasso_kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut gen_cfg = crate::datagen::GraphGenConfig::new(6);
        gen_cfg.cyclic = false;
        let sem = crate::datagen::generate_graph_with(&gen_cfg, &mut rng).unwrap();
        let data = crate::datagen::sample_normal(&sem, 500, &mut rng).unwrap();
        let s = sample_covariance(&data).unwrap();
        let cfg = EstimatorConfig::glasso();
        let est = graphical_lasso(&s, &cfg).unwrap();

        // Positive definite output.
        assert!(Cholesky::new(est.theta.clone()).is_some());
        // Zero off-diagonals satisfy the subgradient bound |s_ij - w_ij| <= alpha + tol.
        let w = Cholesky::new(est.theta.clone()).unwrap().inverse();
        let slack = 1e-2 * cfg.alpha;
        for i in 0..6 {
            for j in 0..6 {
                if i != j && est.theta[(i, j)].abs() < 1e-12 {
                    assert!(
                        (s[(i, j)] - w[(i, j)]).abs() <= cfg.alpha + slack,
                        "KKT violated at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn glasso_support_matches_population_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut gen_cfg = crate::datagen::GraphGenConfig::new(10);
        gen_cfg.cyclic = false;
        let sem = crate::datagen::generate_graph_with(&gen_cfg, &mut rng).unwrap();
        let data = crate::datagen::sample_normal(&sem, 10_000, &mut rng).unwrap();
        let s = sample_covariance(&data).unwrap();
        let cfg = EstimatorConfig::glasso();
        let est = graphical_lasso(&s, &cfg).unwrap();

        let theta_pop = sem.population_precision().unwrap();
        // Every estimated off-diagonal is either truly non-zero or small.
        for i in 0..10 {
            for j in 0..10 {
                if i != j && theta_pop[(i, j)].abs() < 1e-10 {
                    assert!(
                        est.theta[(i, j)].abs() < 0.05,
                        "spurious entry ({i},{j}) = {}",
                        est.theta[(i, j)]
                    );
                }
            }
        }

        // After debiasing on the estimated support, glasso agrees with the
        // direct inverse.
        let debiased = debias_on_support(&s, &est.theta, &cfg);
        let inv = invert_covariance(&s, 0.0).unwrap();
        let dist = (debiased - inv.theta).norm();
        assert!(dist < 0.1, "debiased Frobenius distance {dist}");
    }

    /// Unpenalized refit restricted to the support of `theta0`: the same
    /// block solver with the penalty removed and inactive coordinates frozen.
    fn debias_on_support(
        sigma: &DMatrix<f64>,
        theta0: &DMatrix<f64>,
        cfg: &EstimatorConfig,
    ) -> DMatrix<f64> {
        let p = sigma.nrows();
        let mut theta = theta0.clone();
        let mut w = Cholesky::new(theta.clone()).unwrap().inverse();
        let mean_diag = sigma.diagonal().iter().map(|d| d.abs()).sum::<f64>() / p as f64;
        let tol = cfg.rel_tol * mean_diag * 1e-2;
        for _ in 0..200 {
            let theta_prev = theta.clone();
            for j in 0..p {
                let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
                let w22 = w[(j, j)];
                let w12 = DVector::from_iterator(p - 1, rest.iter().map(|&k| w[(k, j)]));
                let mut v = w.select_rows(rest.iter()).select_columns(rest.iter());
                for a in 0..p - 1 {
                    for b in 0..p - 1 {
                        v[(a, b)] -= w12[a] * w12[b] / w22;
                    }
                }
                let s22 = sigma[(j, j)];
                let q = &v * s22;
                let s12 = DVector::from_iterator(p - 1, rest.iter().map(|&k| sigma[(k, j)]));
                let mut beta =
                    DVector::from_iterator(p - 1, rest.iter().map(|&k| theta[(k, j)]));
                let active: Vec<bool> =
                    rest.iter().map(|&k| theta0[(k, j)].abs() > 1e-12).collect();
                // Coordinate descent with lambda = 0, support frozen.
                let mut u = &q * &beta;
                for _ in 0..500 {
                    let mut max_step = 0.0f64;
                    for k in 0..p - 1 {
                        if !active[k] || q[(k, k)] <= 0.0 {
                            continue;
                        }
                        let r = s12[k] + u[k] - q[(k, k)] * beta[k];
                        let new = -r / q[(k, k)];
                        let step = new - beta[k];
                        if step != 0.0 {
                            let col = q.column(k);
                            for l in 0..p - 1 {
                                u[l] += col[l] * step;
                            }
                            beta[k] = new;
                            max_step = max_step.max(step.abs());
                        }
                    }
                    if max_step < tol {
                        break;
                    }
                }
                let vb = &v * &beta;
                for (k, &row) in rest.iter().enumerate() {
                    theta[(row, j)] = beta[k];
                    theta[(j, row)] = beta[k];
                }
                theta[(j, j)] = 1.0 / s22 + beta.dot(&vb);
                w[(j, j)] = s22;
                for (k, &row) in rest.iter().enumerate() {
                    let val = -s22 * vb[k];
                    w[(row, j)] = val;
                    w[(j, row)] = val;
                }
                for (a, &ra) in rest.iter().enumerate() {
                    for (b, &rb) in rest.iter().enumerate() {
                        w[(ra, rb)] = v[(a, b)] + s22 * vb[a] * vb[b];
                    }
                }
            }
            if (&theta - &theta_prev).abs().max() < tol {
                break;
            }
        }
        theta
    }

    #[test]
    fn escalation_success_records_first_alpha() {
        let sem = chain_sem(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let data = crate::datagen::sample_normal(&sem, 500, &mut rng).unwrap();
        let est = estimate_with_escalation(&data, &EstimatorConfig::glasso()).unwrap();
        assert_eq!(est.method, EstimationMethod::GraphicalLasso);
        assert_eq!(est.alpha_used, 0.1);
        assert_eq!(est.attempts.len(), 1);
        assert!(est.attempts[0].failure.is_none());
    }

    #[test]
    fn escalation_falls_back_on_degenerate_data() {
        // A constant column gives a zero covariance diagonal: glasso fails at
        // every alpha, the policy falls back to ridge inversion.
        let d = dataset(&[
            &[1.0, 0.0, 2.0],
            &[2.0, 0.0, 1.0],
            &[3.0, 0.0, 2.5],
            &[0.5, 0.0, 0.5],
        ]);
        let est = estimate_with_escalation(&d, &EstimatorConfig::glasso()).unwrap();
        assert_eq!(est.method, EstimationMethod::Fallback);
        let alphas: Vec<f64> = est.attempts.iter().map(|a| a.alpha).collect();
        assert_eq!(alphas, vec![0.1, 1.0, 10.0]);
        assert!(est.attempts.iter().all(|a| a.failure.is_some()));
    }

    #[test]
    fn escalation_disabled_propagates_error() {
        let d = dataset(&[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]]);
        let mut cfg = EstimatorConfig::glasso();
        cfg.escalation = false;
        let err = estimate_with_escalation(&d, &cfg).unwrap_err();
        assert!(matches!(err, Error::GlassoFailed { .. }));
    }

    #[test]
    fn inverse_method_skips_glasso() {
        let sem = chain_sem(0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let data = crate::datagen::sample_normal(&sem, 200, &mut rng).unwrap();
        let est = estimate_with_escalation(&data, &EstimatorConfig::inverse()).unwrap();
        assert_eq!(est.method, EstimationMethod::InverseCovariance);
        assert!(est.attempts.is_empty());
    }
}
