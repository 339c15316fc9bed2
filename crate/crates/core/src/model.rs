//! Random-effects algebra: inverse-variance weights, the pooled estimate,
//! the moment estimator of between-region variance and the empirical
//! Bayes shrinkage estimator of each regional effect.

use serde::{Deserialize, Serialize};

use crate::error::{domain, MrctError, Result};
use crate::numerics::{z_upper, Probability};

/// Hyperparameters of the regional-effect prior `D_r ~ N(delta, tau2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectsParams {
    pub delta: f64,
    pub tau2: f64,
}

impl RandomEffectsParams {
    pub fn new(delta: f64, tau2: f64) -> Result<Self> {
        if !delta.is_finite() || !(tau2 >= 0.0) || !tau2.is_finite() {
            return domain(format!(
                "invalid hyperparameters delta = {delta}, tau2 = {tau2}"
            ));
        }
        Ok(Self { delta, tau2 })
    }

    pub fn from_tau(delta: f64, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return domain(format!("tau must be non-negative, got {tau}"));
        }
        Self::new(delta, tau * tau)
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }

    /// Rounds `delta` and `tau` (not `tau2`) to the given number of decimals.
    pub fn rounded(&self, decimals: u32) -> Self {
        let scale = 10f64.powi(decimals as i32);
        let r = |x: f64| (x * scale).round() / scale;
        let tau = r(self.tau());
        Self {
            delta: r(self.delta),
            tau2: tau * tau,
        }
    }
}

/// One region's estimated effect and the conditional variance of that estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalSummary {
    pub region_id: String,
    pub d_hat: f64,
    pub sigma2: f64,
}

impl RegionalSummary {
    pub fn new(region_id: impl Into<String>, d_hat: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() || !d_hat.is_finite() {
            return domain(format!(
                "invalid regional summary: d_hat = {d_hat}, sigma2 = {sigma2}"
            ));
        }
        Ok(Self {
            region_id: region_id.into(),
            d_hat,
            sigma2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledInference {
    pub d_tilde: f64,
    pub tau2: f64,
    pub weights: Vec<f64>,
    pub total_weight: f64,
    pub variance: f64,
    pub test_statistic: Option<f64>,
    pub significant: Option<bool>,
}

impl PooledInference {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageResult {
    pub region_id: String,
    pub d_tilde_r: f64,
    pub variance: f64,
    pub covariance_with_pooled: f64,
    pub rho_inv: f64,
    pub h: f64,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
}

impl ShrinkageResult {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// `w_r = 1/(tau2 + sigma2_r)` and their sum.
pub fn compute_weights(tau2: f64, sigma2s: &[f64]) -> Result<(Vec<f64>, f64)> {
    if sigma2s.is_empty() {
        return domain("no regional variances supplied");
    }
    if !(tau2 >= 0.0) {
        return domain(format!("tau2 must be non-negative, got {tau2}"));
    }
    if let Some(bad) = sigma2s.iter().find(|s| !(**s > 0.0)) {
        return domain(format!("regional variance must be positive, got {bad}"));
    }
    let weights: Vec<f64> = sigma2s.iter().map(|s| 1.0 / (tau2 + s)).collect();
    let total = weights.iter().sum();
    Ok((weights, total))
}

pub fn pooled_estimate(summaries: &[RegionalSummary], tau2: f64) -> Result<PooledInference> {
    if summaries.len() < 2 {
        return domain(format!(
            "pooling needs at least 2 regions, got {}",
            summaries.len()
        ));
    }
    let sigma2s: Vec<f64> = summaries.iter().map(|s| s.sigma2).collect();
    let (weights, total_weight) = compute_weights(tau2, &sigma2s)?;
    let d_tilde = weights
        .iter()
        .zip(summaries)
        .map(|(w, s)| w * s.d_hat)
        .sum::<f64>()
        / total_weight;
    Ok(PooledInference {
        d_tilde,
        tau2,
        weights,
        total_weight,
        variance: 1.0 / total_weight,
        test_statistic: None,
        significant: None,
    })
}

/// DerSimonian-Laird moment estimator of the between-region variance.
pub fn moment_tau2(summaries: &[RegionalSummary]) -> Result<f64> {
    let fixed = pooled_estimate(summaries, 0.0)?;
    let w = fixed.total_weight;
    let q: f64 = fixed
        .weights
        .iter()
        .zip(summaries)
        .map(|(wr, s)| wr * (s.d_hat - fixed.d_tilde).powi(2))
        .sum();
    let sum_sq: f64 = fixed.weights.iter().map(|x| x * x).sum();
    let denom = w - sum_sq / w;
    if !(denom > 0.0) {
        return domain("moment estimator denominator is not positive");
    }
    let r = summaries.len() as f64;
    Ok(((q - (r - 1.0)) / denom).max(0.0))
}

/// Mean and sample variance (divisor `R - 1`) of prior regional effects.
pub fn naive_hyperparams(regional_effects: &[f64]) -> Result<RandomEffectsParams> {
    let r = regional_effects.len();
    if r < 2 {
        return domain(format!("need at least 2 regional effects, got {r}"));
    }
    let mean = regional_effects.iter().sum::<f64>() / r as f64;
    let ss: f64 = regional_effects.iter().map(|d| (d - mean).powi(2)).sum();
    RandomEffectsParams::new(mean, ss / (r as f64 - 1.0))
}

/// Posterior mean and variance of `D_r` given its estimate and the prior.
pub fn posterior_params(summary: &RegionalSummary, prior: &RandomEffectsParams) -> (f64, f64) {
    let tau2 = prior.tau2;
    if tau2 == 0.0 {
        return (prior.delta, 0.0);
    }
    let kappa = tau2 / (tau2 + summary.sigma2);
    let mean = kappa * summary.d_hat + (1.0 - kappa) * prior.delta;
    let var = 1.0 / (1.0 / tau2 + 1.0 / summary.sigma2);
    (mean, var)
}

/// `rho_r^{-1} = 1 + h_r/(h_r+1) * sum_{j != r} h_j/(h_j+1)`.
pub fn rho_inverse(h_values: &[f64], r: usize) -> f64 {
    let q = |h: f64| h / (h + 1.0);
    let others: f64 = h_values
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != r)
        .map(|(_, h)| q(*h))
        .sum();
    1.0 + q(h_values[r]) * others
}

/// Total weight expressed through signal-to-noise ratios: `tau^{-2} sum h/(h+1)`.
pub fn precision_from_h(tau2: f64, h_values: &[f64]) -> f64 {
    h_values.iter().map(|h| h / (h + 1.0)).sum::<f64>() / tau2
}

pub fn shrinkage_estimate(
    summary: &RegionalSummary,
    tau2: f64,
    pooled: &PooledInference,
) -> Result<ShrinkageResult> {
    let w_r = 1.0 / (tau2 + summary.sigma2);
    let consistent_tau = (pooled.tau2 - tau2).abs() <= 1e-12 * pooled.tau2.max(tau2);
    let member = pooled.weights.iter().any(|w| (w - w_r).abs() <= 1e-9 * w_r);
    if !consistent_tau || !member {
        return Err(MrctError::Domain(format!(
            "pooled inference (tau2 = {}) does not match tau2 = {tau2} and region {}",
            pooled.tau2, summary.region_id
        )));
    }
    let w = pooled.total_weight;
    let s2 = summary.sigma2;
    let kappa = tau2 / (tau2 + s2);
    let d_tilde_r = kappa * summary.d_hat + (1.0 - kappa) * pooled.d_tilde;
    let variance = w_r * tau2 * tau2 + s2 * (2.0 * tau2 + s2) / (w * (tau2 + s2).powi(2));
    let h = tau2 / s2;
    let (posterior_mean, posterior_variance) = posterior_params(
        summary,
        &RandomEffectsParams {
            delta: pooled.d_tilde,
            tau2,
        },
    );
    Ok(ShrinkageResult {
        region_id: summary.region_id.clone(),
        d_tilde_r,
        variance,
        covariance_with_pooled: 1.0 / w,
        rho_inv: w * variance,
        h,
        posterior_mean,
        posterior_variance,
    })
}

/// One-sided Wald test of `delta > -margin`; `margin = 0` is the superiority test.
pub fn wald_test(
    pooled: &PooledInference,
    alpha: Probability,
    margin: f64,
) -> Result<PooledInference> {
    if !(pooled.variance > 0.0) {
        return domain("pooled variance must be positive");
    }
    let t = (pooled.d_tilde + margin) * pooled.total_weight.sqrt();
    let crit = z_upper(alpha.value())?;
    let mut out = pooled.clone();
    out.test_statistic = Some(t);
    out.significant = Some(t > crit);
    Ok(out)
}
