//! Monte Carlo verification of designs.
//!
//! Step 1 computes the benchmark design from the true regional effects.
//! Step 2 re-estimates the design inputs from simulated training data.
//! Step 3 draws regional effects from the designed prior, simulates the
//! trial at the designed size and records significance and consistency.
//! Every replication owns an RNG stream derived from the master seed and
//! its indices, so results do not depend on thread scheduling.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{consistency_probability, solve_overall_n0, DesignConfig, RegionDesignInput};
use crate::endpoints::{calibrate_treatment, omega_for, rmst, EndpointSpec, SurvivalModel};
use crate::error::{domain, MrctError, Result};
use crate::model::{
    moment_tau2, naive_hyperparams, pooled_estimate, shrinkage_estimate, wald_test,
    RandomEffectsParams, RegionalSummary,
};
use crate::numerics::Probability;
use crate::survival::{cox_loghr, rmst_estimate, rmst_variance_estimate, Group, SubjectRecord};

fn default_training() -> usize {
    1000
}

fn default_replications() -> usize {
    1000
}

fn default_decimals() -> Option<u32> {
    Some(2)
}

/// Inputs of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// One endpoint specification per region, all of the same kind.
    pub endpoints: Vec<EndpointSpec>,
    /// True regional effects. Required for continuous endpoints; for the other
    /// kinds they are implied by the specification and, if given, must agree.
    #[serde(default)]
    pub true_effects: Option<Vec<f64>>,
    pub design: DesignConfig,
    #[serde(default = "default_training")]
    pub training_n_per_group_per_region: usize,
    #[serde(default = "default_replications")]
    pub m_design: usize,
    #[serde(default = "default_replications")]
    pub m_verify: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Decimals to which `delta` and `tau` are rounded before solving; `None` keeps full precision.
    #[serde(default = "default_decimals")]
    pub hyperparameter_decimals: Option<u32>,
    /// Zero-based index of the region whose consistency is tracked.
    #[serde(default)]
    pub region_of_interest: usize,
}

impl SimulationConfig {
    pub fn regions(&self) -> usize {
        self.endpoints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.regions();
        if r < 2 {
            return domain(format!("need at least 2 regions, got {r}"));
        }
        let kind = self.endpoints[0].kind_name();
        if let Some(other) = self.endpoints.iter().find(|e| e.kind_name() != kind) {
            return domain(format!(
                "all regions must share one endpoint kind, found {kind} and {}",
                other.kind_name()
            ));
        }
        for e in &self.endpoints {
            e.validate()?;
        }
        self.design.validate()?;
        if self.design.fractions.len() != r {
            return domain(format!(
                "{r} regions but {} fractions",
                self.design.fractions.len()
            ));
        }
        if self.m_design == 0 || self.m_verify == 0 {
            return domain("m_design and m_verify must be at least 1");
        }
        if self.training_n_per_group_per_region < 2 {
            return domain("training size must be at least 2 per group per region");
        }
        if self.region_of_interest >= r {
            return domain(format!(
                "region_of_interest {} out of range for {r} regions",
                self.region_of_interest
            ));
        }
        self.true_effects().map(|_| ())
    }

    /// True regional effects, taken from `true_effects` or implied by the endpoints.
    pub fn true_effects(&self) -> Result<Vec<f64>> {
        let implied = self
            .endpoints
            .iter()
            .map(|e| e.implied_effect())
            .collect::<Result<Vec<_>>>()?;
        match &self.true_effects {
            Some(given) => {
                if given.len() != self.regions() {
                    return domain(format!(
                        "{} true effects for {} regions",
                        given.len(),
                        self.regions()
                    ));
                }
                for (r, (g, i)) in given.iter().zip(&implied).enumerate() {
                    if let Some(i) = i {
                        if (g - i).abs() > 1e-9 * i.abs().max(1.0) {
                            return domain(format!(
                                "true effect {g} of region {} disagrees with {i} implied by its endpoint",
                                r + 1
                            ));
                        }
                    }
                }
                Ok(given.clone())
            }
            None => implied
                .into_iter()
                .enumerate()
                .map(|(r, i)| {
                    i.ok_or_else(|| {
                        MrctError::Domain(format!("region {} needs an explicit true effect", r + 1))
                    })
                })
                .collect(),
        }
    }

    fn round(&self, effects: RandomEffectsParams) -> RandomEffectsParams {
        match self.hyperparameter_decimals {
            Some(d) => effects.rounded(d),
            None => effects,
        }
    }

    fn region_inputs(omegas: &[f64]) -> Result<Vec<RegionDesignInput>> {
        omegas
            .iter()
            .enumerate()
            .map(|(i, w)| RegionDesignInput::new(format!("region{}", i + 1), *w))
            .collect()
    }
}

/// Step 1: the design computed from the true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub true_effects: Vec<f64>,
    /// Naive hyperparameters before rounding.
    pub raw_effects: RandomEffectsParams,
    /// Hyperparameters the design was solved with.
    pub effects: RandomEffectsParams,
    pub omegas: Vec<f64>,
    pub n0: u64,
    pub regional_n0: Vec<u64>,
    pub cp: Probability,
}

pub fn run_benchmark(config: &SimulationConfig) -> Result<Benchmark> {
    config.validate()?;
    let true_effects = config.true_effects()?;
    let raw_effects = naive_hyperparams(&true_effects)?;
    let effects = config.round(raw_effects);
    let omegas = config
        .endpoints
        .iter()
        .map(|e| omega_for(e, config.design.ell))
        .collect::<Result<Vec<_>>>()?;
    let regions = SimulationConfig::region_inputs(&omegas)?;
    let design = solve_overall_n0(&effects, &config.design, &regions)?;
    Ok(Benchmark {
        true_effects,
        raw_effects,
        effects,
        omegas,
        n0: design.n0,
        regional_n0: design.regional_n0,
        cp: design.cp_per_region[config.region_of_interest],
    })
}

/// Simulated responses for one region.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionalData {
    Continuous {
        control: Vec<f64>,
        treatment: Vec<f64>,
    },
    Binary {
        control: Vec<bool>,
        treatment: Vec<bool>,
    },
    Survival(Vec<SubjectRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRegion {
    pub data: RegionalData,
    /// The treatment Bernoulli parameter fell outside (0, 1) and was clamped.
    pub bernoulli_clamped: bool,
}

const BERNOULLI_CLAMP: f64 = 1e-6;

fn survival_arms<R: Rng + ?Sized>(
    control: &SurvivalModel,
    treatment: &SurvivalModel,
    censor: &dyn Fn(&mut R) -> f64,
    n_control: usize,
    n_treatment: usize,
    rng: &mut R,
) -> Vec<SubjectRecord> {
    let mut out = Vec::with_capacity(n_control + n_treatment);
    for (model, n, group) in [
        (control, n_control, Group::Control),
        (treatment, n_treatment, Group::Treatment),
    ] {
        for _ in 0..n {
            let t = model.sample(rng);
            let c = censor(rng);
            out.push(SubjectRecord {
                time: t.min(c),
                event: t <= c,
                group,
            });
        }
    }
    out
}

/// Draws both arms of one region with treatment effect `d`.
pub fn generate_arms<R: Rng + ?Sized>(
    endpoint: &EndpointSpec,
    d: f64,
    n_control: usize,
    n_treatment: usize,
    rng: &mut R,
) -> Result<GeneratedRegion> {
    if !d.is_finite() {
        return domain(format!("treatment effect must be finite, got {d}"));
    }
    Ok(match endpoint {
        EndpointSpec::Continuous { sigma2_0, sigma2_1 } => {
            let c =
                Normal::new(0.0, sigma2_0.sqrt()).map_err(|e| MrctError::Domain(e.to_string()))?;
            let t =
                Normal::new(d, sigma2_1.sqrt()).map_err(|e| MrctError::Domain(e.to_string()))?;
            GeneratedRegion {
                data: RegionalData::Continuous {
                    control: (0..n_control).map(|_| c.sample(rng)).collect(),
                    treatment: (0..n_treatment).map(|_| t.sample(rng)).collect(),
                },
                bernoulli_clamped: false,
            }
        }
        EndpointSpec::Binary { p0, .. } => {
            let p0 = p0.value();
            let raw = p0 + d;
            let p1 = raw.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
            GeneratedRegion {
                data: RegionalData::Binary {
                    control: (0..n_control).map(|_| rng.random::<f64>() < p0).collect(),
                    treatment: (0..n_treatment).map(|_| rng.random::<f64>() < p1).collect(),
                },
                bernoulli_clamped: p1 != raw,
            }
        }
        EndpointSpec::SurvivalPh {
            lambda0, follow_up, ..
        } => {
            let control = SurvivalModel::Exponential { rate: *lambda0 };
            let treatment = SurvivalModel::Exponential {
                rate: lambda0 * (-d).exp(),
            };
            let l = *follow_up;
            GeneratedRegion {
                data: RegionalData::Survival(survival_arms(
                    &control,
                    &treatment,
                    &|_: &mut R| l,
                    n_control,
                    n_treatment,
                    rng,
                )),
                bernoulli_clamped: false,
            }
        }
        EndpointSpec::SurvivalRmst {
            control,
            treatment,
            horizon,
            censoring,
        } => {
            let implied = rmst(treatment, *horizon)? - rmst(control, *horizon)?;
            let treatment = if (implied - d).abs() <= 1e-12 * implied.abs().max(1.0) {
                *treatment
            } else {
                calibrate_treatment(control, treatment, *horizon, d)?
            };
            let cens = *censoring;
            GeneratedRegion {
                data: RegionalData::Survival(survival_arms(
                    control,
                    &treatment,
                    &|r: &mut R| cens.sample(r),
                    n_control,
                    n_treatment,
                    rng,
                )),
                bernoulli_clamped: false,
            }
        }
    })
}

/// Draws `n0_region` controls and `round(ell * n0_region)` treated subjects.
pub fn generate_regional_data<R: Rng + ?Sized>(
    endpoint: &EndpointSpec,
    d_true: f64,
    n0_region: u64,
    ell: f64,
    rng: &mut R,
) -> Result<GeneratedRegion> {
    let n1 = (ell * n0_region as f64).round() as usize;
    generate_arms(endpoint, d_true, n0_region as usize, n1, rng)
}

/// Per-region estimates: the effect, its variance, and the variance factor `Omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimate {
    pub d_hat: f64,
    pub sigma2: f64,
    pub omega: f64,
}

fn mean_var(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return Err(MrctError::Estimation(format!(
            "need at least 2 responses per group, got {n}"
        )));
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let v = x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((m, v))
}

fn proportion(x: &[bool]) -> Result<f64> {
    if x.is_empty() {
        return Err(MrctError::Estimation("empty group".into()));
    }
    Ok(x.iter().filter(|b| **b).count() as f64 / x.len() as f64)
}

fn split(records: &[SubjectRecord]) -> (Vec<SubjectRecord>, Vec<SubjectRecord>) {
    records.iter().partition(|s| s.group == Group::Control)
}

/// Estimates the regional effect and its variance from simulated data.
pub fn estimate_region(
    endpoint: &EndpointSpec,
    data: &RegionalData,
    ell: f64,
) -> Result<RegionEstimate> {
    let est = match (endpoint, data) {
        (EndpointSpec::Continuous { .. }, RegionalData::Continuous { control, treatment }) => {
            let (m0, v0) = mean_var(control)?;
            let (m1, v1) = mean_var(treatment)?;
            let (n0, n1) = (control.len() as f64, treatment.len() as f64);
            let pooled = ((n0 - 1.0) * v0 + (n1 - 1.0) * v1) / (n0 + n1 - 2.0);
            RegionEstimate {
                d_hat: m1 - m0,
                sigma2: pooled * (1.0 / n0 + 1.0 / n1),
                omega: v1 / ell + v0,
            }
        }
        (EndpointSpec::Binary { .. }, RegionalData::Binary { control, treatment }) => {
            let p0 = proportion(control)?;
            let p1 = proportion(treatment)?;
            let (v0, v1) = (p0 * (1.0 - p0), p1 * (1.0 - p1));
            RegionEstimate {
                d_hat: p1 - p0,
                sigma2: v1 / treatment.len() as f64 + v0 / control.len() as f64,
                omega: v1 / ell + v0,
            }
        }
        (EndpointSpec::SurvivalPh { .. }, RegionalData::Survival(records)) => {
            let (d_hat, _) = cox_loghr(records)?;
            let (c, t) = split(records);
            let e0 = c.iter().filter(|s| s.event).count() as f64;
            let e1 = t.iter().filter(|s| s.event).count() as f64;
            let factor = (ell + 1.0).powi(2) / ell;
            RegionEstimate {
                d_hat,
                sigma2: factor / (e0 + e1),
                omega: factor / (e0 / c.len() as f64 + ell * e1 / t.len() as f64),
            }
        }
        (EndpointSpec::SurvivalRmst { horizon, .. }, RegionalData::Survival(records)) => {
            let (c, t) = split(records);
            let mu0 = rmst_estimate(&c, *horizon)?;
            let mu1 = rmst_estimate(&t, *horizon)?;
            let s0 = rmst_variance_estimate(&c, *horizon)?;
            let s1 = rmst_variance_estimate(&t, *horizon)?;
            RegionEstimate {
                d_hat: mu1 - mu0,
                sigma2: s1 / t.len() as f64 + s0 / c.len() as f64,
                omega: s1 / ell + s0,
            }
        }
        _ => return domain("simulated data do not match the endpoint kind"),
    };
    if !(est.sigma2 > 0.0 && est.omega > 0.0 && est.d_hat.is_finite()) {
        return Err(MrctError::Estimation(format!(
            "degenerate regional estimate (variance {}, omega {})",
            est.sigma2, est.omega
        )));
    }
    Ok(est)
}

/// Design produced in Step 2 and consumed by Step 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignedTrial {
    pub effects: RandomEffectsParams,
    pub n0: u64,
    pub regional_n0: Vec<u64>,
    pub cp: Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DesignOutcome {
    Designed(DesignedTrial),
    Infeasible {
        effects: RandomEffectsParams,
        message: String,
    },
    EstimationFailed {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReplication {
    pub estimated_effects: Vec<f64>,
    pub estimated_omegas: Vec<f64>,
    pub outcome: DesignOutcome,
}

/// Step 2: estimate the design inputs from training data and solve the design.
pub fn run_design_replication(config: &SimulationConfig, seed: u64) -> Result<DesignReplication> {
    config.validate()?;
    let truth = config.true_effects()?;
    let n = config.training_n_per_group_per_region;
    let ell = config.design.ell;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(truth.len());
    for (endpoint, d) in config.endpoints.iter().zip(&truth) {
        let generated = generate_arms(endpoint, *d, n, n, &mut rng)?;
        match estimate_region(endpoint, &generated.data, ell) {
            Ok(e) => estimates.push(e),
            Err(err) => {
                return Ok(DesignReplication {
                    estimated_effects: estimates.iter().map(|e| e.d_hat).collect(),
                    estimated_omegas: estimates.iter().map(|e| e.omega).collect(),
                    outcome: DesignOutcome::EstimationFailed {
                        message: err.to_string(),
                    },
                })
            }
        }
    }
    let estimated_effects: Vec<f64> = estimates.iter().map(|e| e.d_hat).collect();
    let estimated_omegas: Vec<f64> = estimates.iter().map(|e| e.omega).collect();
    let effects = config.round(naive_hyperparams(&estimated_effects)?);
    let regions = SimulationConfig::region_inputs(&estimated_omegas)?;
    let outcome = match solve_overall_n0(&effects, &config.design, &regions) {
        Ok(design) => DesignOutcome::Designed(DesignedTrial {
            effects,
            n0: design.n0,
            regional_n0: design.regional_n0,
            cp: consistency_probability(
                &effects,
                &config.design,
                &regions,
                design.n0,
                config.region_of_interest,
            )?,
        }),
        Err(err @ (MrctError::Infeasible { .. } | MrctError::Domain(_))) => {
            DesignOutcome::Infeasible {
                effects,
                message: err.to_string(),
            }
        }
        Err(err) => return Err(err),
    };
    Ok(DesignReplication {
        estimated_effects,
        estimated_omegas,
        outcome,
    })
}

/// Result of one simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub significant: bool,
    /// Consistency of the region of interest; evaluated only when significant.
    pub consistent: Option<bool>,
    pub bernoulli_clamped: bool,
    /// A regional effect draw could not be calibrated and was redrawn.
    pub resampled: bool,
}

/// Step 3: simulate and analyze one trial of the designed size.
pub fn run_verification(
    designed: &DesignedTrial,
    config: &SimulationConfig,
    seed: u64,
) -> Result<VerificationOutcome> {
    let r = config.regions();
    if designed.regional_n0.len() != r {
        return domain(format!(
            "designed trial has {} regional sizes for {r} regions",
            designed.regional_n0.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = Normal::new(designed.effects.delta, designed.effects.tau())
        .map_err(|e| MrctError::Domain(e.to_string()))?;
    let ell = config.design.ell;
    let mut summaries = Vec::with_capacity(r);
    let mut clamped = false;
    let mut resampled = false;
    for (i, endpoint) in config.endpoints.iter().enumerate() {
        let n0 = designed.regional_n0[i];
        let mut d: f64 = prior.sample(&mut rng);
        let generated = match generate_regional_data(endpoint, d, n0, ell, &mut rng) {
            Err(MrctError::Calibration { .. }) => {
                resampled = true;
                d = prior.sample(&mut rng);
                generate_regional_data(endpoint, d, n0, ell, &mut rng)?
            }
            other => other?,
        };
        clamped |= generated.bernoulli_clamped;
        let est = estimate_region(endpoint, &generated.data, ell)?;
        summaries.push(RegionalSummary::new(
            format!("region{}", i + 1),
            est.d_hat,
            est.sigma2,
        )?);
    }
    let tau2 = moment_tau2(&summaries)?;
    let pooled = pooled_estimate(&summaries, tau2)?;
    let tested = wald_test(&pooled, config.design.alpha, config.design.margin)?;
    let significant = tested.significant == Some(true);
    let consistent = if significant {
        let shrunk = shrinkage_estimate(&summaries[config.region_of_interest], tau2, &pooled)?;
        let m = config.design.margin;
        Some(shrunk.d_tilde_r + m >= config.design.pi * (pooled.d_tilde + m))
    } else {
        None
    };
    Ok(VerificationOutcome {
        significant,
        consistent,
        bernoulli_clamped: clamped,
        resampled,
    })
}

/// Counts over a batch of verification trials.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub runs: usize,
    pub failures: usize,
    pub significant: usize,
    pub consistent: usize,
    pub bernoulli_clamps: usize,
    pub resampled: usize,
}

impl VerificationSummary {
    /// Significant trials over analyzable trials.
    pub fn power(&self) -> Option<f64> {
        let ok = self.runs - self.failures;
        (ok > 0).then(|| self.significant as f64 / ok as f64)
    }

    /// Consistent trials over significant trials.
    pub fn consistency(&self) -> Option<f64> {
        (self.significant > 0).then(|| self.consistent as f64 / self.significant as f64)
    }
}

/// Runs `m` verification trials on the stream of design replication `index`.
pub fn verify_design(
    designed: &DesignedTrial,
    config: &SimulationConfig,
    index: u64,
    m: usize,
) -> VerificationSummary {
    let mut s = VerificationSummary {
        runs: m,
        ..Default::default()
    };
    for j in 0..m as u64 {
        match run_verification(
            designed,
            config,
            stream_seed(config.master_seed, VERIFY_STREAM, index, j),
        ) {
            Ok(out) => {
                s.significant += out.significant as usize;
                s.consistent += (out.consistent == Some(true)) as usize;
                s.bernoulli_clamps += out.bernoulli_clamped as usize;
                s.resampled += out.resampled as usize;
            }
            Err(_) => s.failures += 1,
        }
    }
    s
}

const DESIGN_STREAM: u64 = 0x4445_5349_474e;
const VERIFY_STREAM: u64 = 0x5645_5249_4659;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `(tag, i, j)` under `master`; a pure function of its arguments.
pub fn stream_seed(master: u64, tag: u64, i: u64, j: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master ^ splitmix64(tag)) ^ i) ^ j)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicationStatus {
    Ok,
    Infeasible,
    EstimationFailed,
}

/// One design replication with its verification batch; flat for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub status: ReplicationStatus,
    pub delta_design: Option<f64>,
    pub tau_design: Option<f64>,
    pub n0_design: Option<u64>,
    pub cp_design: Option<f64>,
    pub verification_runs: usize,
    pub verification_failures: usize,
    pub significant: usize,
    pub consistent: usize,
    pub empirical_power: Option<f64>,
    pub empirical_cp: Option<f64>,
    pub dev_power: Option<f64>,
    pub dev_cp: Option<f64>,
    pub bernoulli_clamps: usize,
    pub resampled_effects: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub benchmark: Benchmark,
    pub benchmark_n0: u64,
    pub benchmark_cp: Probability,
    pub m_design: usize,
    pub m_verify: usize,
    pub master_seed: u64,
    /// Median of the designed `n0`, counting infeasible replications as
    /// unbounded; `None` if half or more are infeasible.
    pub median_n0_design: Option<f64>,
    /// Median absolute deviation of the designed `n0` around its median.
    pub mad_n0_design: Option<f64>,
    /// Median over feasible replications only.
    pub median_n0_feasible: Option<f64>,
    pub mad_n0_feasible: Option<f64>,
    pub mean_cp_design: Option<f64>,
    pub mean_empirical_power: Option<f64>,
    pub mean_empirical_cp: Option<f64>,
    pub mean_dev_power: Option<f64>,
    pub mean_dev_cp: Option<f64>,
    pub feasible_replications: usize,
    pub infeasible_replications: usize,
    pub estimation_failures: usize,
    /// Infeasible plus failed design replications over `m_design`.
    pub flagged_rate: f64,
    pub verification_runs: usize,
    pub verification_failures: usize,
    pub bernoulli_clamps: usize,
    pub resampled_effects: usize,
    pub records: Vec<ReplicationRecord>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Median and MAD of sorted values; `None` when either is unbounded.
fn median_and_mad(sorted: &[f64]) -> (Option<f64>, Option<f64>) {
    let med = median(sorted).filter(|m| m.is_finite());
    let mad = med.and_then(|m| {
        let mut dev: Vec<f64> = sorted.iter().map(|n| (n - m).abs()).collect();
        dev.sort_by(f64::total_cmp);
        median(&dev).filter(|d| d.is_finite())
    });
    (med, mad)
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn replicate(config: &SimulationConfig, index: usize) -> Result<ReplicationRecord> {
    let seed = stream_seed(config.master_seed, DESIGN_STREAM, index as u64, 0);
    let rep = run_design_replication(config, seed)?;
    let mut rec = ReplicationRecord {
        index,
        status: ReplicationStatus::Ok,
        delta_design: None,
        tau_design: None,
        n0_design: None,
        cp_design: None,
        verification_runs: 0,
        verification_failures: 0,
        significant: 0,
        consistent: 0,
        empirical_power: None,
        empirical_cp: None,
        dev_power: None,
        dev_cp: None,
        bernoulli_clamps: 0,
        resampled_effects: 0,
        message: None,
    };
    match rep.outcome {
        DesignOutcome::Designed(designed) => {
            let s = verify_design(&designed, config, index as u64, config.m_verify);
            let target_power = 1.0 - config.design.beta.value();
            rec.delta_design = Some(designed.effects.delta);
            rec.tau_design = Some(designed.effects.tau());
            rec.n0_design = Some(designed.n0);
            rec.cp_design = Some(designed.cp.value());
            rec.verification_runs = s.runs;
            rec.verification_failures = s.failures;
            rec.significant = s.significant;
            rec.consistent = s.consistent;
            rec.empirical_power = s.power();
            rec.empirical_cp = s.consistency();
            rec.dev_power = s.power().map(|p| (p - target_power).abs());
            rec.dev_cp = s.consistency().map(|c| (c - designed.cp.value()).abs());
            rec.bernoulli_clamps = s.bernoulli_clamps;
            rec.resampled_effects = s.resampled;
        }
        DesignOutcome::Infeasible { effects, message } => {
            rec.status = ReplicationStatus::Infeasible;
            rec.delta_design = Some(effects.delta);
            rec.tau_design = Some(effects.tau());
            rec.message = Some(message);
        }
        DesignOutcome::EstimationFailed { message } => {
            rec.status = ReplicationStatus::EstimationFailed;
            rec.message = Some(message);
        }
    }
    Ok(rec)
}

/// Runs the full three-step protocol.
pub fn simulate_study(config: &SimulationConfig) -> Result<SimulationReport> {
    let benchmark = run_benchmark(config)?;
    let records = (0..config.m_design)
        .into_par_iter()
        .map(|i| {
            replicate(config, i).map_err(|e| match e {
                MrctError::Numerical(m) => {
                    MrctError::Numerical(format!("design replication {i}: {m}"))
                }
                MrctError::Estimation(m) => {
                    MrctError::Estimation(format!("design replication {i}: {m}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(config, benchmark, records))
}

fn summarize(
    config: &SimulationConfig,
    benchmark: Benchmark,
    records: Vec<ReplicationRecord>,
) -> SimulationReport {
    let ok: Vec<&ReplicationRecord> = records
        .iter()
        .filter(|r| r.status == ReplicationStatus::Ok)
        .collect();
    let mut n0s: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.n0_design)
        .map(|n| n as f64)
        .collect();
    n0s.sort_by(f64::total_cmp);
    // An infeasible replication needs an unbounded sample size.
    let mut unbounded = n0s.clone();
    unbounded.extend(
        records
            .iter()
            .filter(|r| r.status == ReplicationStatus::Infeasible)
            .map(|_| f64::INFINITY),
    );
    let (med, mad) = median_and_mad(&unbounded);
    let (med_feasible, mad_feasible) = median_and_mad(&n0s);
    let infeasible = records
        .iter()
        .filter(|r| r.status == ReplicationStatus::Infeasible)
        .count();
    let failed = records
        .iter()
        .filter(|r| r.status == ReplicationStatus::EstimationFailed)
        .count();
    SimulationReport {
        benchmark_n0: benchmark.n0,
        benchmark_cp: benchmark.cp,
        benchmark,
        m_design: config.m_design,
        m_verify: config.m_verify,
        master_seed: config.master_seed,
        median_n0_design: med,
        mad_n0_design: mad,
        median_n0_feasible: med_feasible,
        mad_n0_feasible: mad_feasible,
        mean_cp_design: mean(ok.iter().filter_map(|r| r.cp_design)),
        mean_empirical_power: mean(ok.iter().filter_map(|r| r.empirical_power)),
        mean_empirical_cp: mean(ok.iter().filter_map(|r| r.empirical_cp)),
        mean_dev_power: mean(ok.iter().filter_map(|r| r.dev_power)),
        mean_dev_cp: mean(ok.iter().filter_map(|r| r.dev_cp)),
        feasible_replications: ok.len(),
        infeasible_replications: infeasible,
        estimation_failures: failed,
        flagged_rate: (infeasible + failed) as f64 / config.m_design as f64,
        verification_runs: records.iter().map(|r| r.verification_runs).sum(),
        verification_failures: records.iter().map(|r| r.verification_failures).sum(),
        bernoulli_clamps: records.iter().map(|r| r.bernoulli_clamps).sum(),
        resampled_effects: records.iter().map(|r| r.resampled_effects).sum(),
        records,
    }
}
