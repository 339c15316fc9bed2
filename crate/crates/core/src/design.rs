//! Overall sample size and regional consistency probability.
//!
//! The overall control-group size `n0` solves
//! `sum_r (tau2 + Omega_r/(n0 f_r))^{-1} = (z_{1-a} + z_{1-b})^2 / (delta + M)^2`,
//! and the consistency probability of region `r` is the normal-weighted
//! average of `Phi((1-pi)(u + z_{1-a} + z_{1-b}) / sqrt(rho_r^{-1} - 1))`
//! over `u > z_b`. Non-inferiority designs shift `delta` by the margin `M`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, MrctError, Result};
use crate::model::{rho_inverse, RandomEffectsParams};
use crate::numerics::{
    find_root, std_normal_cdf, std_normal_quantile, truncated_normal_expectation, z_upper,
    Probability, QuadratureSettings, DEFAULT_ROOT_TOL,
};

fn default_assurance() -> Probability {
    Probability::saturating(0.8)
}

/// Trial-level design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// One-sided size.
    pub alpha: Probability,
    /// Type II error.
    pub beta: Probability,
    /// Fraction of the overall effect a region must retain.
    pub pi: f64,
    /// Randomization ratio treatment : control.
    pub ell: f64,
    /// Non-inferiority margin; 0 for superiority.
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub fractions: Vec<f64>,
    /// Required consistency probability (the `1 - gamma` threshold).
    #[serde(default = "default_assurance")]
    pub assurance: Probability,
}

impl DesignConfig {
    pub fn new(
        alpha: f64,
        beta: f64,
        pi: f64,
        ell: f64,
        margin: f64,
        fractions: Vec<f64>,
    ) -> Result<Self> {
        let cfg = Self {
            alpha: Probability::new(alpha)?,
            beta: Probability::new(beta)?,
            pi,
            ell,
            margin,
            fractions,
            assurance: default_assurance(),
        };
        cfg.validate_scalars()?;
        Ok(cfg)
    }

    /// Checks everything except the regional fractions.
    pub fn validate_scalars(&self) -> Result<()> {
        let a = self.alpha.value();
        let b = self.beta.value();
        if !(a > 0.0 && a < 0.5) {
            return domain(format!("alpha must lie in (0, 0.5), got {a}"));
        }
        if !(b > 0.0 && b < 0.5) {
            return domain(format!("beta must lie in (0, 0.5), got {b}"));
        }
        if !(self.pi >= 0.5 && self.pi <= 1.0) {
            return domain(format!("pi must lie in [0.5, 1], got {}", self.pi));
        }
        if !(self.ell > 0.0) || !self.ell.is_finite() {
            return domain(format!("ell must be positive, got {}", self.ell));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return domain(format!("margin must be non-negative, got {}", self.margin));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_scalars()?;
        validate_fractions(&self.fractions)
    }

    /// `z_{1-alpha} + z_{1-beta}`.
    pub fn z_sum(&self) -> Result<f64> {
        Ok(z_upper(self.alpha.value())? + z_upper(self.beta.value())?)
    }

    pub fn with_fractions(&self, fractions: Vec<f64>) -> Self {
        Self {
            fractions,
            ..self.clone()
        }
    }
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return domain("no regional fractions");
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0)) {
        return domain(format!("fractions must be positive, got {f}"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return domain(format!("fractions sum to {sum}, expected 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDesignInput {
    pub region_id: String,
    /// Variance scale: the regional estimate has variance `omega / (n0 f_r)`.
    pub omega: f64,
}

impl RegionDesignInput {
    pub fn new(region_id: impl Into<String>, omega: f64) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return domain(format!("omega must be positive, got {omega}"));
        }
        Ok(Self {
            region_id: region_id.into(),
            omega,
        })
    }
}

/// Convenience for homogeneous designs.
pub fn homogeneous_regions(omega: f64, r: usize) -> Result<Vec<RegionDesignInput>> {
    (0..r)
        .map(|i| RegionDesignInput::new(format!("region{}", i + 1), omega))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub n0: u64,
    pub n1: u64,
    /// Continuous root before ceiling.
    pub n0_continuous: f64,
    pub regional_n0: Vec<u64>,
    /// Total precision `w` at the ceiled `n0`.
    pub achieved_w: f64,
    pub cp_per_region: Vec<Probability>,
    pub meets_assurance: Vec<bool>,
    /// Every region reaches the assurance threshold.
    pub feasible: bool,
}

fn effective_effect(effects: &RandomEffectsParams, config: &DesignConfig) -> Result<f64> {
    let d = effects.delta + config.margin;
    if !(d > 0.0) {
        return domain(format!("delta + margin must be positive, got {d}"));
    }
    Ok(d)
}

fn check_regions(config: &DesignConfig, regions: &[RegionDesignInput]) -> Result<()> {
    config.validate()?;
    if regions.len() != config.fractions.len() {
        return domain(format!(
            "{} regions but {} fractions",
            regions.len(),
            config.fractions.len()
        ));
    }
    if regions.len() < 2 {
        return domain("a multi-regional design needs at least 2 regions");
    }
    if let Some(r) = regions.iter().find(|r| !(r.omega > 0.0)) {
        return domain(format!("omega of {} must be positive", r.region_id));
    }
    Ok(())
}

/// `w(n0) = sum_r (tau2 + Omega_r/(n0 f_r))^{-1}`.
pub fn precision_at(tau2: f64, regions: &[RegionDesignInput], fractions: &[f64], n0: f64) -> f64 {
    regions
        .iter()
        .zip(fractions)
        .map(|(reg, f)| 1.0 / (tau2 + reg.omega / (n0 * f)))
        .sum()
}

/// Outcome of the `tau/(delta+M) < sqrt(R)/(z_{1-a}+z_{1-b})` check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub ratio: f64,
    pub limit: f64,
    pub regions: usize,
    /// `sqrt(2)/(z_{1-a}+z_{1-b})`: below it the lower bound on CP is attained.
    pub attainability_threshold: f64,
    pub standard_thresholds: Vec<StandardThreshold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardThreshold {
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
}

pub fn check_feasibility(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    r: usize,
) -> Result<Feasibility> {
    config.validate_scalars()?;
    let d = effective_effect(effects, config)?;
    let z = config.z_sum()?;
    let ratio = effects.tau() / d;
    let limit = (r as f64).sqrt() / z;
    let mut standard_thresholds = Vec::with_capacity(4);
    for alpha in [0.025, 0.05] {
        for beta in [0.1, 0.2] {
            let zs = z_upper(alpha)? + z_upper(beta)?;
            standard_thresholds.push(StandardThreshold {
                alpha,
                beta,
                threshold: 2f64.sqrt() / zs,
            });
        }
    }
    Ok(Feasibility {
        feasible: ratio < limit,
        ratio,
        limit,
        regions: r,
        attainability_threshold: 2f64.sqrt() / z,
        standard_thresholds,
    })
}

fn require_feasible(effects: &RandomEffectsParams, config: &DesignConfig, r: usize) -> Result<()> {
    let f = check_feasibility(effects, config, r)?;
    if f.feasible {
        Ok(())
    } else {
        Err(MrctError::Infeasible {
            ratio: f.ratio,
            limit: f.limit,
            regions: r,
        })
    }
}

/// Continuous root of the sample-size equation.
pub fn solve_overall_n0_continuous(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
) -> Result<f64> {
    check_regions(config, regions)?;
    require_feasible(effects, config, regions.len())?;
    let d = effective_effect(effects, config)?;
    let target = config.z_sum()?.powi(2) / (d * d);
    let g = |n0: f64| precision_at(effects.tau2, regions, &config.fractions, n0) / target - 1.0;
    let (mut lo, mut hi) = (1.0, 1e9);
    if g(lo) >= 0.0 {
        lo = 1e-12;
        hi = 1.0;
    } else {
        while g(hi) < 0.0 {
            hi *= 10.0;
            if hi > 1e18 {
                return Err(MrctError::Numerical(
                    "sample-size bracket expansion failed".into(),
                ));
            }
        }
    }
    find_root(g, lo, hi, DEFAULT_ROOT_TOL)
}

/// Solves the sample-size equation, ceils `n0`, and evaluates every region's CP there.
pub fn solve_overall_n0(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
) -> Result<DesignResult> {
    let n0c = solve_overall_n0_continuous(effects, config, regions)?;
    design_at(effects, config, regions, n0c)
}

fn design_at(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
    n0c: f64,
) -> Result<DesignResult> {
    let n0 = (ceil_tolerant(n0c) as u64).max(regions.len() as u64);
    let n1 = ceil_tolerant(config.ell * n0 as f64) as u64;
    let cp_per_region = (0..regions.len())
        .map(|r| consistency_probability(effects, config, regions, n0, r))
        .collect::<Result<Vec<_>>>()?;
    let meets_assurance: Vec<bool> = cp_per_region
        .iter()
        .map(|cp| cp.value() >= config.assurance.value())
        .collect();
    Ok(DesignResult {
        n0,
        n1,
        n0_continuous: n0c,
        regional_n0: allocate_largest_remainder(n0, &config.fractions),
        achieved_w: precision_at(effects.tau2, regions, &config.fractions, n0 as f64),
        feasible: meets_assurance.iter().all(|m| *m),
        cp_per_region,
        meets_assurance,
    })
}

/// Ceiling that ignores floating-point dust just above an integer.
fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Homogeneous-variance, equal-allocation closed form; returns `(n0, n1)`.
pub fn closed_form_n0(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    omega: f64,
    r: usize,
) -> Result<(u64, u64)> {
    config.validate_scalars()?;
    if !(omega > 0.0) {
        return domain("omega must be positive");
    }
    if r < 1 {
        return domain("need at least one region");
    }
    let d = effective_effect(effects, config)?;
    let z2 = config.z_sum()?.powi(2);
    let rf = r as f64;
    let denom = rf * d * d - effects.tau2 * z2;
    if !(denom > 0.0) {
        return Err(MrctError::Infeasible {
            ratio: effects.tau() / d,
            limit: rf.sqrt() / z2.sqrt(),
            regions: r,
        });
    }
    let n0 = ceil_tolerant(rf * omega * z2 / denom) as u64;
    let n1 = ceil_tolerant(config.ell * n0 as f64) as u64;
    Ok((n0, n1))
}

/// `(1/(1-beta)) * integral_{u > z_beta} Phi(slope * (u + zsum)) dPhi(u)`.
fn cp_integral(slope: f64, config: &DesignConfig) -> Result<Probability> {
    if slope.is_infinite() && slope > 0.0 {
        return Ok(Probability::saturating(1.0));
    }
    let z = config.z_sum()?;
    let z_beta = std_normal_quantile(config.beta.value())?;
    let v = truncated_normal_expectation(
        |u| std_normal_cdf(slope * (u + z)),
        z_beta,
        &QuadratureSettings::default(),
    )?;
    Ok(Probability::saturating(v))
}

/// Signal-to-noise ratios `h_j = tau2 n0 f_j / Omega_j`.
pub fn signal_to_noise(
    tau2: f64,
    regions: &[RegionDesignInput],
    fractions: &[f64],
    n0: f64,
) -> Vec<f64> {
    regions
        .iter()
        .zip(fractions)
        .map(|(reg, f)| tau2 * n0 * f / reg.omega)
        .collect()
}

/// Consistency probability of region `r` at a given `n0`.
///
/// A degenerate `rho_r^{-1} - 1` (no heterogeneity, or a region that carries
/// no information) yields exactly 1: the shrunken and pooled estimates coincide.
pub fn consistency_probability(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
    n0: u64,
    r: usize,
) -> Result<Probability> {
    consistency_probability_at(effects, config, regions, n0 as f64, r)
}

pub fn consistency_probability_at(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
    n0: f64,
    r: usize,
) -> Result<Probability> {
    check_regions(config, regions)?;
    effective_effect(effects, config)?;
    if r >= regions.len() {
        return domain(format!("region index {r} out of range"));
    }
    if !(n0 >= 1.0) {
        return domain(format!("n0 must be at least 1, got {n0}"));
    }
    let h = signal_to_noise(effects.tau2, regions, &config.fractions, n0);
    let excess = rho_inverse(&h, r) - 1.0;
    if excess < 1e-14 {
        return Ok(Probability::saturating(1.0));
    }
    cp_integral((1.0 - config.pi) / excess.sqrt(), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attainment {
    Attained,
    Unattained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: Probability,
    pub attainment: Attainment,
    /// `tau2 (z_{1-a}+z_{1-b})^2 / (2 (delta+M)^2)`; the bound is attained at `h/(h+1)` equal to this.
    pub shrinkage_fraction: f64,
}

/// Lower bound on CP over all allocations sharing `(delta, tau, alpha, beta, pi)`.
pub fn cp_lower_bound(effects: &RandomEffectsParams, config: &DesignConfig) -> Result<LowerBound> {
    config.validate_scalars()?;
    let d = effective_effect(effects, config)?;
    if !(effects.tau2 > 0.0) {
        return domain("the lower bound requires tau > 0");
    }
    let z2 = config.z_sum()?.powi(2);
    let q = effects.tau2 * z2 / (2.0 * d * d);
    let one_minus_pi = 1.0 - config.pi;
    if q < 1.0 {
        let slope = 2.0 * d * d * one_minus_pi / (effects.tau2 * z2);
        Ok(LowerBound {
            value: cp_integral(slope, config)?,
            attainment: Attainment::Attained,
            shrinkage_fraction: q,
        })
    } else {
        let excess = effects.tau2 * z2 / (d * d) - 1.0;
        let value = if excess <= 0.0 {
            Probability::saturating(1.0)
        } else {
            cp_integral(one_minus_pi / excess.sqrt(), config)?
        };
        Ok(LowerBound {
            value,
            attainment: Attainment::Unattained,
            shrinkage_fraction: q,
        })
    }
}

/// Smallest `n0` at which region `r` with fraction `f_r` attains the CP lower bound.
pub fn attaining_n0(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    omega: f64,
    fraction: f64,
) -> Result<u64> {
    let bound = cp_lower_bound(effects, config)?;
    if bound.attainment == Attainment::Unattained {
        return Err(MrctError::NotAvailable(format!(
            "lower bound is not attainable (h/(h+1) would need to be {:.4} >= 1)",
            bound.shrinkage_fraction
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) || !(omega > 0.0) {
        return domain("fraction must lie in (0, 1] and omega must be positive");
    }
    let q = bound.shrinkage_fraction;
    let h = q / (1.0 - q);
    Ok(ceil_tolerant(omega * h / (effects.tau2 * fraction)) as u64)
}

/// CP under equal allocation and homogeneous variances.
pub fn cp_equal_allocation(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    r: usize,
) -> Result<Probability> {
    config.validate_scalars()?;
    let d = effective_effect(effects, config)?;
    if r < 2 {
        return domain("equal allocation needs at least 2 regions");
    }
    let f = check_feasibility(effects, config, r)?;
    if !f.feasible {
        return Err(MrctError::NotAvailable(format!(
            "tau/(delta+M) = {:.4} violates the proviso tau/(delta+M) < sqrt(R)/(z_(1-alpha)+z_(1-beta)) = {:.4}",
            f.ratio, f.limit
        )));
    }
    if effects.tau2 == 0.0 {
        return Ok(Probability::saturating(1.0));
    }
    let z2 = config.z_sum()?.powi(2);
    let rf = r as f64;
    let slope = d * d * rf * (1.0 - config.pi) / (effects.tau2 * (rf - 1.0).sqrt() * z2);
    cp_integral(slope, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub fraction: f64,
    pub n0: u64,
    pub regional_n0: u64,
    pub cp: Probability,
}

/// Re-solves the design over a grid of fractions for region `r`, with the
/// remaining mass split evenly across the other regions.
pub fn cp_profile(
    effects: &RandomEffectsParams,
    config: &DesignConfig,
    regions: &[RegionDesignInput],
    r: usize,
    grid: &[f64],
) -> Result<Vec<ProfilePoint>> {
    let count = regions.len();
    if count < 2 {
        return domain("profiling needs at least 2 regions");
    }
    if r >= count {
        return domain(format!("region index {r} out of range"));
    }
    grid.iter()
        .map(|&fr| {
            if !(fr > 0.0 && fr < 1.0) {
                return domain(format!("grid fraction {fr} outside (0, 1)"));
            }
            let rest = (1.0 - fr) / (count as f64 - 1.0);
            let fractions: Vec<f64> = (0..count).map(|j| if j == r { fr } else { rest }).collect();
            let cfg = config.with_fractions(fractions);
            let n0c = solve_overall_n0_continuous(effects, &cfg, regions)?;
            let n0 = (ceil_tolerant(n0c) as u64).max(count as u64);
            let cp = consistency_probability(effects, &cfg, regions, n0, r)?;
            Ok(ProfilePoint {
                fraction: fr,
                n0,
                regional_n0: allocate_largest_remainder(n0, &cfg.fractions)[r],
                cp,
            })
        })
        .collect()
}

/// Splits `total` proportionally to `fractions`, rounding by largest remainder so the parts sum to `total`.
pub fn allocate_largest_remainder(total: u64, fractions: &[f64]) -> Vec<u64> {
    let sum: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|f| total as f64 * f / sum).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| (x + 1e-9).floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    // stable: ties go to the earlier region
    order.sort_by(|&a, &b| {
        let ra = exact[a] - parts[a] as f64;
        let rb = exact[b] - parts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        parts[i] += 1;
    }
    parts
}
