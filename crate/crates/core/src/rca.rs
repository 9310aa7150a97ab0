//! The root-cause scoring pipeline: transform the anomalous sample by the
//! estimated precision matrix, score each coordinate against the transformed
//! normal baseline, gate by marginal anomalousness, convert to e-values and
//! select candidates under false-discovery-rate control.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{AnomalousSample, Dataset};
use crate::error::{Error, Result};
use crate::precision::{
    estimate_with_escalation, EstimationMethod, EstimatorConfig, PrecisionEstimate,
};

/// Default marginal-outlier gate: a node stays a candidate only if its
/// squared Z-score against its own normal column is at least this.
pub const DEFAULT_TAU: f64 = 0.25;

/// Default FDR budget for candidate selection.
pub const DEFAULT_FDR_ALPHA: f64 = 0.1;

/// Intermediate quantities of one scoring run.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    /// Transformed anomalous sample `xi = Theta x~`.
    pub xi: DVector<f64>,
    /// Transformed normal samples, one row per sample.
    pub baseline: DMatrix<f64>,
    /// Squared Z-scores of `xi` against the baseline columns, before gating.
    pub z_sq: DVector<f64>,
    /// Per-node gate: `true` when the node's marginal squared Z-score
    /// reaches the threshold.
    pub gate: Vec<bool>,
}

/// Estimator provenance carried inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDiagnostics {
    pub method: String,
    pub alpha_used: f64,
    pub condition_number: f64,
    pub iterations: usize,
}

impl From<&PrecisionEstimate> for EstimatorDiagnostics {
    fn from(est: &PrecisionEstimate) -> Self {
        let method = match est.method {
            EstimationMethod::InverseCovariance => "inverse_covariance",
            EstimationMethod::GraphicalLasso => "graphical_lasso",
            EstimationMethod::Fallback => "fallback",
        };
        Self {
            method: method.to_string(),
            alpha_used: est.alpha_used,
            condition_number: est.condition_number,
            iterations: est.iterations,
        }
    }
}

/// Result of one analysis: per-node scores, e-values, ranks and the
/// FDR-selected candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    /// Gated squared Z-scores of the transformed sample.
    pub scores: Vec<f64>,
    /// Gated e-values (`xi_i^2 / theta_ii`, zeroed where the gate closed).
    pub e_values: Vec<f64>,
    /// `ranks[i]` is the 1-based rank of node `i` by descending score, ties
    /// broken by ascending index.
    pub ranks: Vec<usize>,
    /// Candidate root causes selected by the e-value rule, ascending.
    pub selected: Vec<usize>,
    pub tau: f64,
    #[serde(rename = "alpha")]
    pub alpha_fdr: f64,
    pub estimator: EstimatorDiagnostics,
}

impl RcaReport {
    /// Rank of a given node (1-based).
    pub fn rank_of(&self, node: usize) -> usize {
        self.ranks[node]
    }
}

/// Apply the estimated precision to a sample vector.
pub fn transform(est: &PrecisionEstimate, x: &DVector<f64>) -> Result<DVector<f64>> {
    if est.theta.ncols() != x.len() {
        return Err(Error::DimensionMismatch { expected: est.theta.ncols(), got: x.len() });
    }
    Ok(&est.theta * x)
}

/// Squared Z-score of `value` against a reference sample, with the unbiased
/// (m - 1) standard deviation. A zero-variance reference maps to 0 when the
/// value equals the reference mean and +inf otherwise.
pub fn z_score_sq(value: f64, reference: &[f64]) -> f64 {
    let m = reference.len();
    let mean = reference.iter().sum::<f64>() / m as f64;
    let var = if m < 2 {
        0.0
    } else {
        reference.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    };
    if var <= 0.0 {
        return if value == mean { 0.0 } else { f64::INFINITY };
    }
    (value - mean).powi(2) / var
}

/// Per-node e-values `e_i = xi_i^2 / theta_ii`. Valid e-values because under
/// the null `xi_i` is centered with variance `theta_ii` (the population
/// covariance of the transformed sample equals the precision itself).
pub fn e_values(xi: &DVector<f64>, est: &PrecisionEstimate) -> Result<Vec<f64>> {
    if est.theta.ncols() != xi.len() {
        return Err(Error::DimensionMismatch { expected: est.theta.ncols(), got: xi.len() });
    }
    let mut out = Vec::with_capacity(xi.len());
    for i in 0..xi.len() {
        let d = est.theta[(i, i)];
        if !(d > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: d });
        }
        out.push(xi[i] * xi[i] / d);
    }
    Ok(out)
}

/// e-value Benjamini-Hochberg selection: order e-values decreasingly, take
/// the largest `k` with `k * e_[k] >= 1 / alpha`, and return those node
/// indices (ascending). Controls FDR at level `alpha`.
pub fn bh_evalue_select(e: &[f64], alpha: f64) -> Vec<usize> {
    if !(alpha > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e[b].total_cmp(&e[a]).then(a.cmp(&b)));
    let mut k_star = 0;
    for (k, &idx) in order.iter().enumerate() {
        if (k + 1) as f64 * e[idx] >= 1.0 / alpha {
            k_star = k + 1;
        }
    }
    let mut selected: Vec<usize> = order[..k_star].to_vec();
    selected.sort_unstable();
    selected
}

/// 1-based ranks by descending score; ties broken by ascending index.
pub(crate) fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0usize; scores.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

/// Compute the score vector for a given precision estimate: transform,
/// baseline, raw squared Z-scores and the marginal gate at `tau`.
pub fn score_with_estimate(
    data: &Dataset,
    x_tilde: &AnomalousSample,
    tau: f64,
    est: &PrecisionEstimate,
) -> Result<ScoreVector> {
    let p = data.p();
    if x_tilde.values.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_tilde.values.len() });
    }
    let xi = transform(est, &x_tilde.values)?;
    let baseline = data.values() * est.theta.transpose();
    let mut z_sq = DVector::zeros(p);
    let mut gate = Vec::with_capacity(p);
    for i in 0..p {
        let ref_col: Vec<f64> = baseline.column(i).iter().copied().collect();
        z_sq[i] = z_score_sq(xi[i], &ref_col);
        let marginal = z_score_sq(x_tilde.values[i], &data.column(i));
        gate.push(marginal >= tau);
    }
    Ok(ScoreVector { xi, baseline, z_sq, gate })
}

/// Run the full scoring pipeline: estimate the precision from the normal
/// data, score and gate each node, attach e-values and the FDR-selected
/// candidate set. `tau` gates on the marginal squared Z-score of each node's
/// raw value, and both scores and e-values are zeroed for gated-out nodes.
pub fn run_algorithm1(
    data: &Dataset,
    x_tilde: &AnomalousSample,
    tau: f64,
    alpha_fdr: f64,
    estimator: &EstimatorConfig,
) -> Result<RcaReport> {
    if data.m() < data.p() {
        log::warn!("m = {} samples below p = {}; estimates will be rough", data.m(), data.p());
    }
    let est = estimate_with_escalation(data, estimator)?;
    let sv = score_with_estimate(data, x_tilde, tau, &est)?;
    let raw_e = e_values(&sv.xi, &est)?;

    let p = data.p();
    let mut scores = vec![0.0; p];
    let mut gated_e = vec![0.0; p];
    for i in 0..p {
        if sv.gate[i] {
            scores[i] = sv.z_sq[i];
            gated_e[i] = raw_e[i];
        }
    }
    let selected = bh_evalue_select(&gated_e, alpha_fdr);
    let ranks = rank_descending(&scores);
    Ok(RcaReport {
        scores,
        e_values: gated_e,
        ranks,
        selected,
        tau,
        alpha_fdr,
        estimator: EstimatorDiagnostics::from(&est),
    })
}

/// Trace candidate propagation hops: repeatedly remove the already-explained
/// columns, re-run the pipeline on the remaining ones, and record each new
/// FDR-selected set (in original column indices) as the candidates infected
/// next. Stops when nothing is selected or after `depth_cap` hops
/// (default: one per node).
pub fn propagation_route(
    data: &Dataset,
    x_tilde: &AnomalousSample,
    root: usize,
    tau: f64,
    alpha_fdr: f64,
    estimator: &EstimatorConfig,
    depth_cap: Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    let p = data.p();
    if root >= p {
        return Err(Error::InvalidConfig(format!("root {root} out of range for p = {p}")));
    }
    if x_tilde.values.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: x_tilde.values.len() });
    }
    let cap = depth_cap.unwrap_or(p);
    let mut removed = vec![root];
    let mut hops = Vec::new();
    for _ in 0..cap {
        let remaining: Vec<usize> = (0..p).filter(|i| !removed.contains(i)).collect();
        if remaining.len() < 2 {
            break;
        }
        let sub_data = data.select_columns(&remaining)?;
        let sub_sample = AnomalousSample::new(DVector::from_iterator(
            remaining.len(),
            remaining.iter().map(|&i| x_tilde.values[i]),
        ));
        let report = run_algorithm1(&sub_data, &sub_sample, tau, alpha_fdr, estimator)?;
        let candidates: Vec<usize> = report.selected.iter().map(|&i| remaining[i]).collect();
        if candidates.is_empty() {
            break;
        }
        removed.extend(&candidates);
        hops.push(candidates);
    }
    Ok(hops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_anomalous, sample_normal};
    use crate::precision::invert_covariance;
    use crate::sem::{chain_sem, PerturbationSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn population_estimate(theta: DMatrix<f64>) -> PrecisionEstimate {
        PrecisionEstimate {
            theta,
            method: EstimationMethod::InverseCovariance,
            alpha_used: 0.0,
            condition_number: 1.0,
            iterations: 0,
            objective_path: Vec::new(),
            attempts: Vec::new(),
        }
    }

    #[test]
    fn transform_identity() {
        let est = population_estimate(DMatrix::identity(3, 3));
        let x = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        assert_eq!(transform(&est, &x).unwrap(), x);
    }

    #[test]
    fn transform_chain_localizes_upstream_root() {
        // Root cause at X1 of the chain: the transform collapses the shifted
        // pair back to a shift at X1 alone.
        let rho = 0.5;
        let delta = 7.0;
        let sem = chain_sem(rho);
        let est = population_estimate(sem.population_precision().unwrap());
        let x = DVector::from_row_slice(&[delta, rho * delta]);
        let xi = transform(&est, &x).unwrap();
        assert!((xi[0] - delta).abs() < 1e-12);
        assert!(xi[1].abs() < 1e-12);
    }

    #[test]
    fn transform_chain_downstream_root_spreads() {
        let rho = 0.5;
        let delta = 7.0;
        let sem = chain_sem(rho);
        let est = population_estimate(sem.population_precision().unwrap());
        let x = DVector::from_row_slice(&[0.0, delta]);
        let xi = transform(&est, &x).unwrap();
        let f = delta / (1.0 - rho * rho);
        assert!((xi[0] + rho * f).abs() < 1e-12);
        assert!((xi[1] - f).abs() < 1e-12);
    }

    #[test]
    fn z_score_sq_conventions() {
        assert_eq!(z_score_sq(3.0, &[3.0, 3.0, 3.0]), 0.0);
        assert_eq!(z_score_sq(4.0, &[3.0, 3.0, 3.0]), f64::INFINITY);
        // Reference with mean 0, sd 2 -> value 4 scores (4/2)^2 = 4.
        let reference = [-2.0, 0.0, 2.0, -2.0, 0.0, 2.0, -2.0, 2.0];
        let m = reference.len() as f64;
        let sd = (reference.iter().map(|x| x * x).sum::<f64>() / (m - 1.0)).sqrt();
        let expect = (4.0 / sd).powi(2);
        assert!((z_score_sq(4.0, &reference) - expect).abs() < 1e-12);
    }

    #[test]
    fn z_score_sq_monte_carlo_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let reference: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let z = z_score_sq(3.0, &reference);
        assert!((z - 9.0).abs() < 0.45, "z^2 = {z}");
    }

    #[test]
    fn e_value_arithmetic() {
        let est = population_estimate(DMatrix::from_diagonal(&DVector::from_row_slice(&[
            4.0, 1.0,
        ])));
        let e = e_values(&DVector::from_row_slice(&[6.0, 0.0]), &est).unwrap();
        assert_eq!(e, vec![9.0, 0.0]);
    }

    #[test]
    fn e_value_rejects_bad_diagonal() {
        let mut theta = DMatrix::identity(2, 2);
        theta[(1, 1)] = 0.0;
        let est = population_estimate(theta);
        let err = e_values(&DVector::zeros(2), &est).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDiagonal { index: 1, .. }));
    }

    #[test]
    fn e_values_mean_one_under_null() {
        // Population-level check of E[e] = 1 when the sample is normal.
        let rho = 0.6;
        let sem = chain_sem(rho);
        let est = population_estimate(sem.population_precision().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let draws = 20_000;
        let mut mean = [0.0f64; 2];
        for _ in 0..draws {
            let x = sample_normal(&sem, 2, &mut rng).unwrap().row(0);
            let e = e_values(&transform(&est, &x).unwrap(), &est).unwrap();
            mean[0] += e[0];
            mean[1] += e[1];
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        assert!((0.9..=1.1).contains(&mean[0]), "mean e_0 = {}", mean[0]);
        assert!((0.9..=1.1).contains(&mean[1]), "mean e_1 = {}", mean[1]);
    }

    #[test]
    fn bh_selection_hand_cases() {
        assert_eq!(bh_evalue_select(&[20.0, 3.0, 0.2], 0.1), vec![0]);
        assert_eq!(bh_evalue_select(&[0.0, 0.0, 0.0], 0.1), Vec::<usize>::new());
        assert_eq!(bh_evalue_select(&[2.0, 2.0], 1.0), vec![0, 1]);
    }

    #[test]
    fn rank_ties_break_by_index() {
        assert_eq!(rank_descending(&[1.0, 3.0, 1.0, 0.0]), vec![2, 1, 3, 4]);
    }

    fn chain_setup(delta_at: usize, delta: f64) -> (Dataset, AnomalousSample) {
        let sem = chain_sem(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = sample_normal(&sem, 5000, &mut rng).unwrap();
        let pert = PerturbationSpec::single(delta_at, delta).unwrap();
        let sample = sample_anomalous(&sem, &pert, &mut rng).unwrap();
        (data, sample)
    }

    #[test]
    fn algorithm_ranks_chain_root_first() {
        let (data, sample) = chain_setup(0, 20.0);
        let report =
            run_algorithm1(&data, &sample, DEFAULT_TAU, DEFAULT_FDR_ALPHA, &EstimatorConfig::inverse())
                .unwrap();
        assert_eq!(report.rank_of(0), 1);
        assert_eq!(report.selected, vec![0]);
        assert_eq!(report.estimator.method, "inverse_covariance");
    }

    #[test]
    fn infinite_tau_gates_everything() {
        let (data, sample) = chain_setup(0, 20.0);
        let report = run_algorithm1(
            &data,
            &sample,
            f64::INFINITY,
            DEFAULT_FDR_ALPHA,
            &EstimatorConfig::inverse(),
        )
        .unwrap();
        assert!(report.scores.iter().all(|&s| s == 0.0));
        assert!(report.e_values.iter().all(|&e| e == 0.0));
        assert!(report.selected.is_empty());
    }

    #[test]
    fn normal_sample_yields_no_selection() {
        let sem = chain_sem(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = sample_normal(&sem, 5000, &mut rng).unwrap();
        let x = AnomalousSample::new(sample_normal(&sem, 2, &mut rng).unwrap().row(0));
        let report =
            run_algorithm1(&data, &x, DEFAULT_TAU, 0.05, &EstimatorConfig::inverse()).unwrap();
        assert!(
            report.selected.is_empty() || report.scores.iter().all(|&s| s == 0.0),
            "false alarm: {:?}",
            report.selected
        );
    }

    #[test]
    fn gating_monotonicity() {
        let (data, sample) = chain_setup(1, 5.0);
        let est = invert_covariance(&crate::precision::sample_covariance(&data).unwrap(), 0.0)
            .unwrap();
        let mut last_open = usize::MAX;
        for tau in [0.0, 0.25, 1.0, 4.0, 16.0, 64.0] {
            let sv = score_with_estimate(&data, &sample, tau, &est).unwrap();
            let open = sv.gate.iter().filter(|g| **g).count();
            assert!(open <= last_open, "gate grew when tau increased");
            last_open = open;
        }
    }

    #[test]
    fn report_serializes_with_spec_field_names() {
        let (data, sample) = chain_setup(0, 10.0);
        let report =
            run_algorithm1(&data, &sample, DEFAULT_TAU, DEFAULT_FDR_ALPHA, &EstimatorConfig::inverse())
                .unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["scores", "e_values", "ranks", "selected", "tau", "alpha", "estimator"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert!(json["estimator"].get("condition_number").is_some());
    }

    #[test]
    fn propagation_route_on_chain() {
        // Chain X1 -> X2 -> X3, strong root cause at X1. After removing X1
        // the anomaly re-localizes at X2, never directly at X3.
        let mut a = DMatrix::zeros(3, 3);
        a[(1, 0)] = 0.9;
        a[(2, 1)] = 0.8;
        let sem = crate::sem::LinearSem::fully_observed(
            a,
            vec![crate::sem::NoiseDist::gaussian(1.0); 3],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = sample_normal(&sem, 8000, &mut rng).unwrap();
        let pert = PerturbationSpec::single(0, 25.0).unwrap();
        let sample = sample_anomalous(&sem, &pert, &mut rng).unwrap();

        let hops = propagation_route(
            &data,
            &sample,
            0,
            DEFAULT_TAU,
            DEFAULT_FDR_ALPHA,
            &EstimatorConfig::inverse(),
            None,
        )
        .unwrap();
        assert!(!hops.is_empty());
        assert_eq!(hops[0], vec![1], "first hop should re-localize at X2: {hops:?}");
    }

    #[test]
    fn propagation_route_empty_when_nothing_anomalous() {
        let sem = chain_sem(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = sample_normal(&sem, 3000, &mut rng).unwrap();
        let x = AnomalousSample::new(DVector::zeros(2));
        let hops = propagation_route(
            &data,
            &x,
            0,
            DEFAULT_TAU,
            DEFAULT_FDR_ALPHA,
            &EstimatorConfig::inverse(),
            None,
        )
        .unwrap();
        assert!(hops.is_empty());
    }

    #[test]
    fn scale_invariance_of_ranks() {
        let (data, sample) = chain_setup(1, 8.0);
        let report1 =
            run_algorithm1(&data, &sample, DEFAULT_TAU, DEFAULT_FDR_ALPHA, &EstimatorConfig::inverse())
                .unwrap();
        let c = 37.5;
        let scaled_data = Dataset::new(data.values() * c, data.labels().to_vec()).unwrap();
        let scaled_sample = AnomalousSample::new(&sample.values * c);
        let report2 = run_algorithm1(
            &scaled_data,
            &scaled_sample,
            DEFAULT_TAU,
            DEFAULT_FDR_ALPHA,
            &EstimatorConfig::inverse(),
        )
        .unwrap();
        assert_eq!(report1.ranks, report2.ranks);
        assert_eq!(report1.selected, report2.selected);
    }
}
