//! Endpoint families and parametric survival models.
//!
//! Each endpoint reduces to a variance factor `Omega_r`, the quantity the
//! design engine consumes. Survival models also supply RMST, the Pepe
//! asymptotic variance of its Kaplan-Meier estimator, inverse-CDF sampling
//! and the calibration solvers used to hit a target RMST difference.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{domain, MrctError, Result};
use crate::numerics::{find_root, integrate, Probability};

/// Parametric event-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SurvivalModel {
    Exponential {
        rate: f64,
    },
    /// Hazard `early_rate` on `(0, change_point]` and `late_rate` afterwards.
    PiecewiseExponential {
        early_rate: f64,
        late_rate: f64,
        change_point: f64,
    },
    /// `S(t) = exp(-(t/scale)^shape)`.
    Weibull {
        shape: f64,
        scale: f64,
    },
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be positive and finite, got {x}"))
    }
}

/// `(1 - exp(-rate * t)) / rate`, stable for small rates.
fn exp_area(rate: f64, t: f64) -> f64 {
    if rate * t < 1e-300 {
        t
    } else {
        -(-rate * t).exp_m1() / rate
    }
}

impl SurvivalModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { rate } => positive("rate", rate),
            Self::PiecewiseExponential {
                early_rate,
                late_rate,
                change_point,
            } => {
                positive("early_rate", early_rate)?;
                positive("late_rate", late_rate)?;
                positive("change_point", change_point)
            }
            Self::Weibull { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
        }
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match *self {
            Self::Exponential { rate } => rate * t,
            Self::PiecewiseExponential {
                early_rate,
                late_rate,
                change_point,
            } => {
                if t <= change_point {
                    early_rate * t
                } else {
                    early_rate * change_point + late_rate * (t - change_point)
                }
            }
            Self::Weibull { shape, scale } => (t / scale).powf(shape),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => rate,
            Self::PiecewiseExponential {
                early_rate,
                late_rate,
                change_point,
            } => {
                if t <= change_point {
                    early_rate
                } else {
                    late_rate
                }
            }
            Self::Weibull { shape, scale } => shape / scale * (t / scale).powf(shape - 1.0),
        }
    }

    /// Inverse of the cumulative hazard: the time at which `Lambda(t) = s`.
    pub fn inverse_cumulative_hazard(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        match *self {
            Self::Exponential { rate } => s / rate,
            Self::PiecewiseExponential {
                early_rate,
                late_rate,
                change_point,
            } => {
                let knee = early_rate * change_point;
                if s <= knee {
                    s / early_rate
                } else {
                    change_point + (s - knee) / late_rate
                }
            }
            Self::Weibull { shape, scale } => scale * s.powf(1.0 / shape),
        }
    }

    /// Draws an event time by inverting the cumulative hazard at a unit exponential.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        self.inverse_cumulative_hazard(e)
    }

    /// Times where the hazard is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            Self::PiecewiseExponential { change_point, .. } => vec![change_point],
            _ => Vec::new(),
        }
    }

    /// `int_a^b S(u) du` for `0 <= a <= b`.
    pub fn survival_area(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0 && b >= a) {
            return domain(format!("survival area needs 0 <= a <= b, got [{a}, {b}]"));
        }
        match *self {
            Self::Exponential { rate } => Ok(self.survival(a) * exp_area(rate, b - a)),
            Self::PiecewiseExponential {
                early_rate,
                late_rate,
                change_point,
            } => {
                let mut area = 0.0;
                if a < change_point {
                    let end = b.min(change_point);
                    area += self.survival(a) * exp_area(early_rate, end - a);
                }
                if b > change_point {
                    let start = a.max(change_point);
                    area += self.survival(start) * exp_area(late_rate, b - start);
                }
                Ok(area)
            }
            Self::Weibull { shape, scale } => {
                if a == b {
                    return Ok(0.0);
                }
                // int_a^b exp(-(t/scale)^shape) dt through the incomplete gamma function.
                let k = 1.0 / shape;
                let xa = (a / scale).powf(shape);
                let xb = (b / scale).powf(shape);
                let factor = (scale.ln() - shape.ln() + ln_gamma(k)).exp();
                let lower = |x: f64| if x > 0.0 { gamma_lr(k, x) } else { 0.0 };
                let upper = |x: f64| if x > 0.0 { gamma_ur(k, x) } else { 1.0 };
                let frac = if xa > k {
                    upper(xa) - upper(xb)
                } else {
                    lower(xb) - lower(xa)
                };
                Ok(factor * frac.max(0.0))
            }
        }
    }
}

/// Restricted mean survival time `int_0^eta S(t) dt`.
pub fn rmst(model: &SurvivalModel, eta: f64) -> Result<f64> {
    model.validate()?;
    positive("eta", eta)?;
    model.survival_area(0.0, eta)
}

/// Censoring-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CensoringModel {
    #[default]
    None,
    Administrative {
        at: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl CensoringModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::None => Ok(()),
            Self::Administrative { at } => positive("administrative censoring time", at),
            Self::Uniform { lo, hi } => {
                if lo >= 0.0 && hi > lo && hi.is_finite() {
                    Ok(())
                } else {
                    domain(format!(
                        "uniform censoring needs 0 <= lo < hi, got ({lo}, {hi})"
                    ))
                }
            }
        }
    }

    /// Left-continuous censoring survival `P(C >= t)`.
    pub fn left_survival(&self, t: f64) -> f64 {
        match *self {
            Self::None => 1.0,
            Self::Administrative { at } => {
                if t <= at {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// Draws a censoring time; `None` yields infinity.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::None => f64::INFINITY,
            Self::Administrative { at } => at,
            Self::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match *self {
            Self::Uniform { lo, .. } if lo > 0.0 => vec![lo],
            _ => Vec::new(),
        }
    }
}

/// Tail areas `A(t) = int_t^eta S` tabulated on a uniform grid and read back
/// through cubic Hermite interpolation with the exact slope `-S(t)`.
struct TailTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

const TAIL_GRID: usize = 4096;

impl TailTable {
    fn build(model: &SurvivalModel, eta: f64) -> Result<Self> {
        let step = eta / TAIL_GRID as f64;
        let mut values = vec![0.0; TAIL_GRID + 1];
        // Accumulate from the horizon backwards so no cancellation occurs.
        for i in (0..TAIL_GRID).rev() {
            let a = i as f64 * step;
            values[i] = values[i + 1] + model.survival_area(a, a + step)?;
        }
        let slopes = (0..=TAIL_GRID)
            .map(|i| -model.survival(i as f64 * step))
            .collect();
        Ok(Self {
            step,
            values,
            slopes,
        })
    }

    fn eval(&self, t: f64) -> f64 {
        let x = (t / self.step).clamp(0.0, TAIL_GRID as f64);
        let i = (x.floor() as usize).min(TAIL_GRID - 1);
        let u = x - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let u2 = u * u;
        let u3 = u2 * u;
        let v = (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * m1;
        v.max(0.0)
    }
}

/// Asymptotic variance of `sqrt(n) * mu_hat` for the Kaplan-Meier RMST:
/// `int_0^eta A(t)^2 / (S(t) G(t-)) dLambda(t)` with `A(t) = int_t^eta S`.
pub fn rmst_true_variance(
    event_model: &SurvivalModel,
    censor_model: &CensoringModel,
    eta: f64,
) -> Result<f64> {
    event_model.validate()?;
    censor_model.validate()?;
    positive("eta", eta)?;
    if !(censor_model.left_survival(eta) > 0.0) {
        return Err(MrctError::Support(format!(
            "censoring survival is zero at the horizon eta = {eta}"
        )));
    }
    let table = match event_model {
        SurvivalModel::Weibull { .. } => Some(TailTable::build(event_model, eta)?),
        _ => None,
    };
    let tail = |t: f64| -> f64 {
        match &table {
            Some(tab) => tab.eval(t),
            None => event_model.survival_area(t, eta).unwrap_or(0.0),
        }
    };
    // Integrate over s = Lambda(t), which absorbs dLambda and any hazard singularity.
    let integrand = |s: f64| -> f64 {
        let t = event_model.inverse_cumulative_hazard(s).min(eta);
        let surv = (-s).exp();
        if surv == 0.0 {
            return 0.0;
        }
        let a = tail(t);
        a * a / surv / censor_model.left_survival(t)
    };
    let s_end = event_model.cumulative_hazard(eta);
    let mut edges = vec![0.0, s_end];
    for k in event_model.kinks().into_iter().chain(censor_model.kinks()) {
        if k < eta {
            edges.push(event_model.cumulative_hazard(k));
        }
    }
    // Doubling panels keep the decaying integrand resolved on long ranges.
    let mut p = 1.0;
    while p < s_end {
        edges.push(p);
        p *= 2.0;
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate(integrand, w[0], w[1], 1e-10, 1e-11)?;
    }
    Ok(total)
}

/// `Omega_r = sigma2_1 / ell + sigma2_0`.
pub fn omega_continuous(sigma2_0: f64, sigma2_1: f64, ell: f64) -> Result<f64> {
    positive("sigma2_0", sigma2_0)?;
    positive("sigma2_1", sigma2_1)?;
    positive("ell", ell)?;
    Ok(sigma2_1 / ell + sigma2_0)
}

pub fn omega_binary(p0: Probability, p1: Probability, ell: f64) -> Result<f64> {
    positive("ell", ell)?;
    let (p0, p1) = (p0.value(), p1.value());
    if !(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0) {
        return domain(format!(
            "degenerate binary variance: probabilities must lie in (0, 1), got p0 = {p0}, p1 = {p1}"
        ));
    }
    Ok(p1 * (1.0 - p1) / ell + p0 * (1.0 - p0))
}

/// Probability of an event before `follow_up` under a constant hazard.
pub fn event_probability(rate: f64, follow_up: f64) -> Result<Probability> {
    if !(rate >= 0.0) || !(follow_up >= 0.0) {
        return domain(format!(
            "event probability needs non-negative rate and follow-up, got {rate}, {follow_up}"
        ));
    }
    Probability::new(-(-rate * follow_up).exp_m1())
}

/// `Omega_r = (ell + 1)^2 / (ell (P_0 + ell P_1))` with exponential event times.
pub fn omega_survival_ph(lambda0: f64, hr: f64, follow_up: f64, ell: f64) -> Result<f64> {
    positive("lambda0", lambda0)?;
    positive("hr", hr)?;
    positive("follow_up", follow_up)?;
    positive("ell", ell)?;
    let p0 = event_probability(lambda0, follow_up)?.value();
    let p1 = event_probability(lambda0 * hr, follow_up)?.value();
    Ok((ell + 1.0).powi(2) / (ell * (p0 + ell * p1)))
}

pub fn omega_survival_rmst(sigma2_0: f64, sigma2_1: f64, ell: f64) -> Result<f64> {
    omega_continuous(sigma2_0, sigma2_1, ell)
}

const LATE_RATE_BRACKET: (f64, f64) = (1e-8, 10.0);
const CALIBRATION_TOL: f64 = 1e-13;

/// Treatment late rate `gamma1` whose piecewise RMST exceeds the control's by `target_d`.
pub fn calibrate_piecewise_late_rate(
    lambda0: f64,
    gamma0: f64,
    lambda1: f64,
    psi: f64,
    eta: f64,
    target_d: f64,
) -> Result<f64> {
    let control = SurvivalModel::PiecewiseExponential {
        early_rate: lambda0,
        late_rate: gamma0,
        change_point: psi,
    };
    let mu0 = rmst(&control, eta)?;
    late_rate_for(mu0, lambda1, psi, eta, target_d)
}

fn late_rate_for(mu0: f64, lambda1: f64, psi: f64, eta: f64, target_d: f64) -> Result<f64> {
    positive("lambda1", lambda1)?;
    positive("psi", psi)?;
    let diff = |gamma1: f64| {
        let treat = SurvivalModel::PiecewiseExponential {
            early_rate: lambda1,
            late_rate: gamma1,
            change_point: psi,
        };
        treat.survival_area(0.0, eta).unwrap_or(f64::NAN) - mu0
    };
    decreasing_root(diff, LATE_RATE_BRACKET, target_d)
}

/// Root of `diff(x) = target` for `diff` decreasing on the bracket.
fn decreasing_root<F: Fn(f64) -> f64>(diff: F, bracket: (f64, f64), target_d: f64) -> Result<f64> {
    let (lo, hi) = bracket;
    let d_max = diff(lo);
    let d_min = diff(hi);
    if !(d_max > d_min) {
        return Err(MrctError::Numerical(format!(
            "RMST is not decreasing in the hazard parameter on [{lo}, {hi}]"
        )));
    }
    if !(target_d >= d_min && target_d <= d_max) {
        return Err(MrctError::Calibration {
            target: target_d,
            lo: d_min,
            hi: d_max,
        });
    }
    find_root(|x| diff(x) - target_d, lo, hi, CALIBRATION_TOL)
}

const SHAPE_BRACKET: (f64, f64) = (0.05, 20.0);
const SHAPE_GRID: usize = 64;

/// Treatment Weibull shape `nu1` whose RMST exceeds the control's by `target_d`.
///
/// The bracket is scanned on a log grid and the root is taken from the first
/// sub-interval showing a sign change.
pub fn calibrate_weibull_shape(
    nu0: f64,
    theta0: f64,
    theta1: f64,
    eta: f64,
    target_d: f64,
) -> Result<f64> {
    let control = SurvivalModel::Weibull {
        shape: nu0,
        scale: theta0,
    };
    let mu0 = rmst(&control, eta)?;
    shape_for(mu0, theta1, eta, target_d)
}

fn shape_for(mu0: f64, theta1: f64, eta: f64, target_d: f64) -> Result<f64> {
    positive("theta1", theta1)?;
    let resid = |nu: f64| {
        let treat = SurvivalModel::Weibull {
            shape: nu,
            scale: theta1,
        };
        treat.survival_area(0.0, eta).unwrap_or(f64::NAN) - mu0 - target_d
    };
    let (lo, hi) = SHAPE_BRACKET;
    let ratio = (hi / lo).ln() / SHAPE_GRID as f64;
    let grid: Vec<f64> = (0..=SHAPE_GRID)
        .map(|i| {
            if i == SHAPE_GRID {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&nu| resid(nu)).collect();
    let mut points: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    // A target at an interior extremum touches zero without a sign change on
    // the grid, so local extrema are refined and scanned too.
    for i in 1..SHAPE_GRID {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        let sign = if b <= a && b <= c {
            1.0
        } else if b >= a && b >= c {
            -1.0
        } else {
            continue;
        };
        let x = golden_minimum(|nu| sign * resid(nu), grid[i - 1], grid[i + 1]);
        points.push((x, resid(x)));
    }
    points.sort_by(|p, q| p.0.total_cmp(&q.0));
    let touch = 1e-10 * (1.0 + mu0.abs());
    for (i, &(x, v)) in points.iter().enumerate() {
        if v.abs() <= touch {
            return Ok(x);
        }
        if let Some(&(x2, v2)) = points.get(i + 1) {
            if v.signum() != v2.signum() && v2.abs() > touch {
                return find_root(&resid, x, x2, CALIBRATION_TOL);
            }
        }
    }
    let (min, max) = points
        .iter()
        .map(|p| &p.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    Err(MrctError::Calibration {
        target: target_d,
        lo: min + target_d,
        hi: max + target_d,
    })
}

/// Golden-section search for the minimizer of a unimodal `f` on `[a, b]`.
fn golden_minimum<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Re-fits the treatment model's free parameter so that its RMST exceeds the
/// control's by `target_d`: the rate of an exponential, the late rate of a
/// piecewise exponential, the shape of a Weibull.
pub fn calibrate_treatment(
    control: &SurvivalModel,
    treatment: &SurvivalModel,
    eta: f64,
    target_d: f64,
) -> Result<SurvivalModel> {
    treatment.validate()?;
    let mu0 = rmst(control, eta)?;
    Ok(match *treatment {
        SurvivalModel::Exponential { .. } => {
            let diff = |rate: f64| exp_area(rate, eta) - mu0;
            SurvivalModel::Exponential {
                rate: decreasing_root(diff, LATE_RATE_BRACKET, target_d)?,
            }
        }
        SurvivalModel::PiecewiseExponential {
            early_rate,
            change_point,
            ..
        } => SurvivalModel::PiecewiseExponential {
            early_rate,
            late_rate: late_rate_for(mu0, early_rate, change_point, eta, target_d)?,
            change_point,
        },
        SurvivalModel::Weibull { scale, .. } => SurvivalModel::Weibull {
            shape: shape_for(mu0, scale, eta, target_d)?,
            scale,
        },
    })
}

/// Per-region endpoint specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointSpec {
    Continuous {
        sigma2_0: f64,
        sigma2_1: f64,
    },
    Binary {
        p0: Probability,
        p1: Probability,
    },
    SurvivalPh {
        lambda0: f64,
        hr: f64,
        follow_up: f64,
    },
    SurvivalRmst {
        control: SurvivalModel,
        treatment: SurvivalModel,
        horizon: f64,
        #[serde(default)]
        censoring: CensoringModel,
    },
}

impl EndpointSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Continuous { sigma2_0, sigma2_1 } => {
                positive("sigma2_0", *sigma2_0)?;
                positive("sigma2_1", *sigma2_1)
            }
            Self::Binary { p0, p1 } => omega_binary(*p0, *p1, 1.0).map(|_| ()),
            Self::SurvivalPh {
                lambda0,
                hr,
                follow_up,
            } => omega_survival_ph(*lambda0, *hr, *follow_up, 1.0).map(|_| ()),
            Self::SurvivalRmst {
                control,
                treatment,
                horizon,
                censoring,
            } => {
                control.validate()?;
                treatment.validate()?;
                censoring.validate()?;
                positive("horizon", *horizon)
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Continuous { .. } => "continuous",
            Self::Binary { .. } => "binary",
            Self::SurvivalPh { .. } => "survival_ph",
            Self::SurvivalRmst { .. } => "survival_rmst",
        }
    }

    /// Treatment effect implied by the specification, where the family fixes one:
    /// `p1 - p0`, `-log HR`, or the RMST difference. Continuous specs carry no means.
    pub fn implied_effect(&self) -> Result<Option<f64>> {
        Ok(match self {
            Self::Continuous { .. } => None,
            Self::Binary { p0, p1 } => Some(p1.value() - p0.value()),
            Self::SurvivalPh { hr, .. } => {
                positive("hr", *hr)?;
                Some(-hr.ln())
            }
            Self::SurvivalRmst {
                control,
                treatment,
                horizon,
                ..
            } => Some(rmst(treatment, *horizon)? - rmst(control, *horizon)?),
        })
    }
}

/// Dispatches to the family-specific `Omega_r`.
pub fn omega_for(spec: &EndpointSpec, ell: f64) -> Result<f64> {
    match spec {
        EndpointSpec::Continuous { sigma2_0, sigma2_1 } => {
            omega_continuous(*sigma2_0, *sigma2_1, ell)
        }
        EndpointSpec::Binary { p0, p1 } => omega_binary(*p0, *p1, ell),
        EndpointSpec::SurvivalPh {
            lambda0,
            hr,
            follow_up,
        } => omega_survival_ph(*lambda0, *hr, *follow_up, ell),
        EndpointSpec::SurvivalRmst {
            control,
            treatment,
            horizon,
            censoring,
        } => {
            let s0 = rmst_true_variance(control, censoring, *horizon)?;
            let s1 = rmst_true_variance(treatment, censoring, *horizon)?;
            omega_survival_rmst(s0, s1, ell)
        }
    }
}
