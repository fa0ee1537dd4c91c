//! Statistics used by the trial analyses: Gini coefficient, one- and
//! two-sample proportion tests, logistic regression by IRLS with optional
//! cluster-robust covariance, quartile binning and Pearson correlation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Largest trial count for which one-sample tests enumerate the binomial
/// distribution exactly.
pub const EXACT_TRIAL_LIMIT: u64 = 200;

const IRLS_TOLERANCE: f64 = 1e-10;
const IRLS_MAX_ITER: usize = 100;
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Gini coefficient `Σ_i Σ_j |x_i − x_j| / (2 n² mean)`, zeros included.
///
/// Evaluated on sorted values as `Σ_i (2i − n − 1) x_(i) / (n Σ x)`.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::OutOfRange { name: "value", value: bad });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Err(Error::AllZero);
    }
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    ExactBinomial,
    NormalApprox,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::ExactBinomial => "exact-binomial",
            TestMethod::NormalApprox => "normal-approx",
        }
    }
}

/// Outcome of a one- or two-sample proportion test. Two-sided throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionTestResult {
    pub successes: u64,
    pub trials: u64,
    pub proportion: f64,
    /// Null proportion (one-sample) or the comparison group's proportion.
    pub reference: f64,
    /// Comparison group counts, for two-sample tests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<(u64, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference: Option<f64>,
    pub p_value: f64,
    pub method: TestMethod,
}

fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    let ln = ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
    ln.exp()
}

/// Standard normal upper tail `P(Z > z)`.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn check_counts(successes: u64, trials: u64) -> Result<()> {
    if trials == 0 {
        return Err(Error::OutOfRange { name: "trials", value: 0.0 });
    }
    if successes > trials {
        return Err(Error::OutOfRange {
            name: "successes",
            value: successes as f64,
        });
    }
    Ok(())
}

/// One-sample two-sided test of `successes / trials` against `null_p`.
///
/// Exact binomial for up to [`EXACT_TRIAL_LIMIT`] trials, normal
/// approximation with continuity correction above.
pub fn proportion_test(successes: u64, trials: u64, null_p: f64) -> Result<ProportionTestResult> {
    let method = if trials <= EXACT_TRIAL_LIMIT {
        TestMethod::ExactBinomial
    } else {
        TestMethod::NormalApprox
    };
    proportion_test_with(successes, trials, null_p, method)
}

/// [`proportion_test`] with the method chosen by the caller.
///
/// The exact p-value sums the probabilities of all outcomes no more likely
/// than the observed one (relative slack 1e-7 for rounding).
pub fn proportion_test_with(
    successes: u64,
    trials: u64,
    null_p: f64,
    method: TestMethod,
) -> Result<ProportionTestResult> {
    check_counts(successes, trials)?;
    if !(null_p > 0.0 && null_p < 1.0) {
        return Err(Error::OutOfRange { name: "null_p", value: null_p });
    }
    let p_value = match method {
        TestMethod::ExactBinomial => {
            let observed = binomial_pmf(successes, trials, null_p) * (1.0 + 1e-7);
            (0..=trials)
                .map(|k| binomial_pmf(k, trials, null_p))
                .filter(|&d| d <= observed)
                .sum::<f64>()
        }
        TestMethod::NormalApprox => {
            let n = trials as f64;
            let dev = (successes as f64 - n * null_p).abs();
            let yates = dev.min(0.5);
            let z = (dev - yates) / (n * null_p * (1.0 - null_p)).sqrt();
            2.0 * normal_sf(z)
        }
    };
    Ok(ProportionTestResult {
        successes,
        trials,
        proportion: successes as f64 / trials as f64,
        reference: null_p,
        comparison: None,
        difference: None,
        p_value: p_value.clamp(0.0, 1.0),
        method,
    })
}

/// Two-sample two-sided pooled z-test with continuity correction.
pub fn proportion_test_2(s1: u64, n1: u64, s2: u64, n2: u64) -> Result<ProportionTestResult> {
    check_counts(s1, n1)?;
    check_counts(s2, n2)?;
    let p1 = s1 as f64 / n1 as f64;
    let p2 = s2 as f64 / n2 as f64;
    let pooled = (s1 + s2) as f64 / (n1 + n2) as f64;
    let inv = 1.0 / n1 as f64 + 1.0 / n2 as f64;
    let delta = p1 - p2;
    let p_value = if pooled <= 0.0 || pooled >= 1.0 {
        1.0
    } else {
        let yates = (0.5 * inv).min(delta.abs());
        let z = (delta.abs() - yates) / (pooled * (1.0 - pooled) * inv).sqrt();
        2.0 * normal_sf(z)
    };
    Ok(ProportionTestResult {
        successes: s1,
        trials: n1,
        proportion: p1,
        reference: p2,
        comparison: Some((s2, n2)),
        difference: Some(delta),
        p_value: p_value.clamp(0.0, 1.0),
        method: TestMethod::NormalApprox,
    })
}

fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    (0..=k).map(|i| binomial_pmf(i, n, p)).sum::<f64>().min(1.0)
}

/// Clopper–Pearson interval at confidence `1 − alpha`.
pub fn exact_binomial_ci(successes: u64, trials: u64, alpha: f64) -> Result<(f64, f64)> {
    check_counts(successes, trials)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange { name: "alpha", value: alpha });
    }
    let half = alpha / 2.0;
    let bisect = |f: &dyn Fn(f64) -> f64| {
        // f is increasing in p on [0, 1]; find f(p) = 0
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let lower = if successes == 0 {
        0.0
    } else {
        // P(X >= k | p) rises with p
        bisect(&|p| (1.0 - binomial_cdf(successes - 1, trials, p)) - half)
    };
    let upper = if successes == trials {
        1.0
    } else {
        // P(X <= k | p) falls with p
        bisect(&|p| half - binomial_cdf(successes, trials, p))
    };
    Ok((lower, upper))
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Log-likelihood of a logistic model at `beta`.
pub fn log_likelihood(design: &DMatrix<f64>, outcomes: &[bool], beta: &[f64]) -> f64 {
    let eta = design * DVector::from_column_slice(beta);
    eta.iter()
        .zip(outcomes)
        .map(|(&e, &y)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            if y {
                e - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

/// Gradient of [`log_likelihood`]: `Xᵀ(y − μ)`.
pub fn score(design: &DMatrix<f64>, outcomes: &[bool], beta: &[f64]) -> Vec<f64> {
    let eta = design * DVector::from_column_slice(beta);
    let resid = DVector::from_iterator(
        outcomes.len(),
        eta.iter().zip(outcomes).map(|(&e, &y)| f64::from(u8::from(y)) - sigmoid(e)),
    );
    (design.transpose() * resid).iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// Inverse Fisher information.
    Model,
    /// CR0 sandwich summed within clusters, scaled by `G / (G − 1)`.
    ClusterRobust,
}

/// Maximum-likelihood logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    pub covariance_kind: CovarianceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
}

impl LogisticFit {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn deviance(&self) -> f64 {
        -2.0 * self.log_likelihood
    }

    pub fn aic(&self) -> f64 {
        self.deviance() + 2.0 * self.n_params() as f64
    }

    pub fn bic(&self) -> f64 {
        self.deviance() + self.n_params() as f64 * (self.n_obs as f64).ln()
    }

    /// Two-sided Wald p-value for coefficient `j`.
    pub fn p_value(&self, j: usize) -> f64 {
        let z = self.coefficients[j] / self.standard_errors[j];
        if z.is_finite() {
            2.0 * normal_sf(z.abs())
        } else {
            f64::NAN
        }
    }

    /// Table-style summary with named coefficients.
    pub fn report(&self, names: &[String]) -> LogisticReport {
        let coefficients = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(j, &estimate)| CoefficientRow {
                name: names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
                estimate,
                std_error: self.standard_errors[j],
                z: estimate / self.standard_errors[j],
                p_value: self.p_value(j),
            })
            .collect();
        LogisticReport {
            coefficients,
            log_likelihood: self.log_likelihood,
            aic: self.aic(),
            bic: self.bic(),
            deviance: self.deviance(),
            n_obs: self.n_obs,
            converged: self.converged,
            covariance: match self.covariance_kind {
                CovarianceKind::Model => "model-based (inverse Fisher information)".to_string(),
                CovarianceKind::ClusterRobust => {
                    "cluster-robust sandwich (CR0 x G/(G-1))".to_string()
                }
            },
            n_clusters: self.n_clusters,
            method: "logistic regression, IRLS maximum likelihood, Wald z-tests".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticReport {
    pub coefficients: Vec<CoefficientRow>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub deviance: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub covariance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
    pub method: String,
}

fn fisher_information(design: &DMatrix<f64>, beta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eta = design * beta;
    let mu = eta.map(sigmoid);
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= mu[i] * (1.0 - mu[i]);
    }
    (design.transpose() * weighted, mu)
}

fn perfectly_separated(design: &DMatrix<f64>, outcomes: &[bool], beta: &DVector<f64>) -> bool {
    let eta = design * beta;
    eta.iter().zip(outcomes).all(|(&e, &y)| if y { e > 0.0 } else { e < 0.0 })
}

/// Fits `P(y = 1) = σ(X β)` by iteratively reweighted least squares.
///
/// `design` must already contain an intercept column. When `clusters` is
/// given (one label per row), the covariance is the cluster-summed sandwich
/// estimator; otherwise it is the inverse Fisher information.
pub fn logistic_fit(
    design: &DMatrix<f64>,
    outcomes: &[bool],
    clusters: Option<&[usize]>,
) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if outcomes.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: outcomes.len() });
    }
    if let Some(c) = clusters {
        if c.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: c.len() });
        }
    }
    if n <= k {
        return Err(Error::TooFew { min: k + 1, got: n });
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange { name: "design", value: f64::NAN });
    }

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(design, outcomes, beta.as_slice());
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=IRLS_MAX_ITER {
        iterations = iter;
        let (info, mu) = fisher_information(design, &beta);
        let resid = DVector::from_iterator(
            n,
            outcomes.iter().zip(mu.iter()).map(|(&y, &m)| f64::from(u8::from(y)) - m),
        );
        let grad = design.transpose() * resid;
        let Some(chol) = info.cholesky() else {
            if iter > 1 && perfectly_separated(design, outcomes, &beta) {
                return Err(Error::Separation);
            }
            return Err(Error::Singular);
        };
        let delta = chol.solve(&grad);
        // step halving keeps the likelihood from decreasing
        let mut scale = 1.0;
        let mut candidate = &beta + &delta;
        let mut cand_ll = log_likelihood(design, outcomes, candidate.as_slice());
        for _ in 0..30 {
            if cand_ll >= ll - 1e-12 {
                break;
            }
            scale *= 0.5;
            candidate = &beta + &delta * scale;
            cand_ll = log_likelihood(design, outcomes, candidate.as_slice());
        }
        let change = (&delta * scale).amax();
        beta = candidate;
        ll = cand_ll;
        if beta.amax() > DIVERGENCE_LIMIT {
            return Err(Error::Separation);
        }
        if change <= IRLS_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        if perfectly_separated(design, outcomes, &beta) {
            return Err(Error::Separation);
        }
        return Err(Error::NoConvergence { iterations });
    }

    let (info, mu) = fisher_information(design, &beta);
    let bread = info.try_inverse().ok_or(Error::Singular)?;
    let (covariance, covariance_kind, n_clusters) = match clusters {
        None => (bread, CovarianceKind::Model, None),
        Some(labels) => {
            let (meat, groups) = cluster_meat(design, outcomes, &mu, labels);
            let correction = if groups > 1 {
                groups as f64 / (groups as f64 - 1.0)
            } else {
                1.0
            };
            let cov = &bread * meat * &bread * correction;
            (cov, CovarianceKind::ClusterRobust, Some(groups))
        }
    };
    // symmetrize away rounding asymmetry
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let standard_errors = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        covariance: covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
        log_likelihood: ll,
        converged,
        iterations,
        n_obs: n,
        covariance_kind,
        n_clusters,
    })
}

fn cluster_meat(
    design: &DMatrix<f64>,
    outcomes: &[bool],
    mu: &DVector<f64>,
    labels: &[usize],
) -> (DMatrix<f64>, usize) {
    let k = design.ncols();
    let mut sums: std::collections::BTreeMap<usize, DVector<f64>> = Default::default();
    for (i, &label) in labels.iter().enumerate() {
        let r = f64::from(u8::from(outcomes[i])) - mu[i];
        let u = design.row(i).transpose() * r;
        *sums.entry(label).or_insert_with(|| DVector::zeros(k)) += u;
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in sums.values() {
        meat += s * s.transpose();
    }
    (meat, sums.len())
}

/// Rank-based quartile (1–4) of each value.
///
/// Ties share their average rank `r`; the bin is `⌊4(r − 1)/n⌋ + 1`.
pub fn quartile_bins(values: &[f64]) -> Result<Vec<u8>> {
    let n = values.len();
    if n < 4 {
        return Err(Error::TooFew { min: 4, got: n });
    }
    let ranks = average_ranks(values);
    Ok(ranks
        .into_iter()
        .map(|r| ((4.0 * (r - 1.0) / n as f64).floor() as u8 + 1).clamp(1, 4))
        .collect())
}

/// 1-based ranks with ties averaged.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson product-moment correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::TooFew { min: 3, got: x.len() });
    }
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value for a Pearson correlation `r` on `n` pairs, using the
/// large-sample normal approximation to `r √(n−2) / √(1−r²)`.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * ((n - 2) as f64).sqrt() / (1.0 - r * r).sqrt();
    2.0 * normal_sf(t.abs())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::TooFew { min: 2, got: x.len() });
    }
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
