//! Re-analysis of a completed trial from regional summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{
    moment_tau2, pooled_estimate, shrinkage_estimate, wald_test, PooledInference, RegionalSummary,
    ShrinkageResult,
};
use crate::numerics::{z_upper, Probability};

/// Scale of the reported estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Estimates are effects on the analysis scale and are reported as such.
    #[default]
    Identity,
    /// Estimates are hazard ratios; the analysis runs on `-log HR` and reports HRs.
    LogHr,
}

impl Scale {
    fn to_analysis(self, x: f64) -> Result<f64> {
        match self {
            Scale::Identity => Ok(x),
            Scale::LogHr => {
                if !(x > 0.0) {
                    return domain(format!("hazard ratio must be positive, got {x}"));
                }
                Ok(-x.ln())
            }
        }
    }

    fn to_report(self, x: f64) -> f64 {
        match self {
            Scale::Identity => x,
            Scale::LogHr => (-x).exp(),
        }
    }

    /// Reports an interval, swapping ends when the transform is decreasing.
    fn interval(self, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b) = (self.to_report(lo), self.to_report(hi));
        (a.min(b), a.max(b))
    }
}

/// One region's input: an estimate and either its variance or an event count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInput {
    pub region_id: String,
    pub estimate: f64,
    #[serde(default)]
    pub variance: Option<f64>,
    /// Observed events, converted to a variance by the Schoenfeld formula.
    #[serde(default)]
    pub events: Option<u64>,
}

fn default_ci_level() -> Probability {
    Probability::saturating(0.95)
}

fn default_ell() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAnalysisInput {
    pub regions: Vec<RegionInput>,
    #[serde(default)]
    pub margin: f64,
    pub alpha: Probability,
    pub pi: f64,
    #[serde(default)]
    pub scale: Scale,
    /// Two-sided confidence level of the reported intervals.
    #[serde(default = "default_ci_level")]
    pub ci_level: Probability,
    /// Allocation ratio used when variances come from event counts.
    #[serde(default = "default_ell")]
    pub ell: f64,
}

impl TrialAnalysisInput {
    /// Summaries on the analysis scale.
    pub fn summaries(&self) -> Result<Vec<RegionalSummary>> {
        if self.regions.len() < 2 {
            return domain(format!(
                "analysis needs at least 2 regions, got {}",
                self.regions.len()
            ));
        }
        self.regions
            .iter()
            .map(|r| {
                let sigma2 = match (r.variance, r.events) {
                    (Some(v), None) => v,
                    (None, Some(e)) => schoenfeld_sigma2(e, self.ell)?,
                    _ => {
                        return domain(format!(
                            "region {} needs exactly one of variance or events",
                            r.region_id
                        ))
                    }
                };
                RegionalSummary::new(
                    r.region_id.clone(),
                    self.scale.to_analysis(r.estimate)?,
                    sigma2,
                )
            })
            .collect()
    }
}

/// An estimate with its interval on the reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reported {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region_id: String,
    pub summary: RegionalSummary,
    /// Fixed-effects regional interval from `sigma2` alone.
    pub naive: Reported,
    pub shrinkage: ShrinkageResult,
    /// Interval around the shrinkage estimate.
    pub shrunk: Reported,
    pub consistent_superiority: bool,
    pub consistent_ni: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAnalysisReport {
    pub scale: Scale,
    pub ci_level: Probability,
    pub tau2_hat: f64,
    /// Pooled inference with the non-inferiority test at the configured margin.
    pub pooled: PooledInference,
    pub superiority_significant: bool,
    pub overall: Reported,
    pub regions: Vec<RegionReport>,
    pub consistency_superiority: Vec<bool>,
    pub consistency_ni: Vec<bool>,
}

fn reported(scale: Scale, point: f64, sd: f64, z: f64) -> Reported {
    let (lower, upper) = scale.interval(point - z * sd, point + z * sd);
    Reported {
        estimate: scale.to_report(point),
        lower,
        upper,
    }
}

pub fn analyze_trial(input: &TrialAnalysisInput) -> Result<TrialAnalysisReport> {
    if !(input.margin >= 0.0) {
        return domain(format!("margin must be non-negative, got {}", input.margin));
    }
    if !(0.5..=1.0).contains(&input.pi) {
        return domain(format!("pi must lie in [0.5, 1], got {}", input.pi));
    }
    let level = input.ci_level.value();
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("ci_level must lie in (0, 1), got {level}"));
    }
    let z = z_upper((1.0 - level) / 2.0)?;
    let summaries = input.summaries()?;
    let tau2 = moment_tau2(&summaries)?;
    let pooled = wald_test(
        &pooled_estimate(&summaries, tau2)?,
        input.alpha,
        input.margin,
    )?;
    let superiority = wald_test(&pooled, input.alpha, 0.0)?;
    let m = input.margin;
    let pi = input.pi;
    let regions = summaries
        .iter()
        .map(|s| {
            let shrink = shrinkage_estimate(s, tau2, &pooled)?;
            Ok(RegionReport {
                region_id: s.region_id.clone(),
                naive: reported(input.scale, s.d_hat, s.sigma2.sqrt(), z),
                shrunk: reported(input.scale, shrink.d_tilde_r, shrink.sd(), z),
                consistent_superiority: shrink.d_tilde_r >= pi * pooled.d_tilde,
                consistent_ni: shrink.d_tilde_r + m >= pi * (pooled.d_tilde + m),
                summary: s.clone(),
                shrinkage: shrink,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialAnalysisReport {
        scale: input.scale,
        ci_level: input.ci_level,
        tau2_hat: tau2,
        overall: reported(input.scale, pooled.d_tilde, pooled.sd(), z),
        superiority_significant: superiority.significant == Some(true),
        consistency_superiority: regions.iter().map(|r| r.consistent_superiority).collect(),
        consistency_ni: regions.iter().map(|r| r.consistent_ni).collect(),
        pooled,
        regions,
    })
}

/// `(ell + 1)^2 / (ell * events)`.
pub fn schoenfeld_sigma2(events: u64, ell: f64) -> Result<f64> {
    if events == 0 {
        return domain("Schoenfeld variance needs at least one event");
    }
    if !(ell > 0.0) {
        return domain(format!("ell must be positive, got {ell}"));
    }
    Ok((ell + 1.0).powi(2) / (ell * events as f64))
}

/// Row of the forest-plot CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub label: String,
    pub kind: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Naive and shrunken regional rows followed by the pooled row.
pub fn forest_rows(report: &TrialAnalysisReport) -> Vec<ForestRow> {
    let row = |label: &str, kind: &str, r: &Reported| ForestRow {
        label: label.to_string(),
        kind: kind.to_string(),
        estimate: r.estimate,
        lower: r.lower,
        upper: r.upper,
    };
    let mut rows = Vec::new();
    for reg in &report.regions {
        rows.push(row(&reg.region_id, "fixed", &reg.naive));
        rows.push(row(&reg.region_id, "shrinkage", &reg.shrunk));
    }
    rows.push(row("overall", "random_effects", &report.overall));
    rows
}
