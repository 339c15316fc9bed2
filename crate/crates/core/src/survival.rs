//! Nonparametric survival estimation from subject-level records.

use serde::{Deserialize, Serialize};

use crate::error::{domain, MrctError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Control,
    Treatment,
}

/// One subject's observed time `min(T, C)` and event indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub time: f64,
    pub event: bool,
    pub group: Group,
}

impl SubjectRecord {
    pub fn new(time: f64, event: bool, group: Group) -> Result<Self> {
        if !(time >= 0.0 && time.is_finite()) {
            return domain(format!("observed time must be finite and >= 0, got {time}"));
        }
        Ok(Self { time, event, group })
    }
}

/// Right-continuous step function; `initial` holds before the first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub initial: f64,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Value at `t`, including a jump located exactly at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|x| *x <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn left_eval(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|x| *x < t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    /// `int_0^upper f(t) dt`.
    pub fn integral(&self, upper: f64) -> f64 {
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_v = self.initial;
        for (t, v) in self.knots.iter().zip(&self.values) {
            if *t >= upper {
                break;
            }
            area += prev_v * (t - prev_t);
            prev_t = *t;
            prev_v = *v;
        }
        area + prev_v * (upper - prev_t).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmTarget {
    Event,
    Censoring,
}

/// Distinct observed time with its risk set and counts.
#[derive(Debug, Clone, Copy)]
struct RiskRow {
    time: f64,
    at_risk: usize,
    events: usize,
    censored: usize,
    at_risk_treated: usize,
    events_treated: usize,
}

fn risk_table(data: &[SubjectRecord]) -> Result<Vec<RiskRow>> {
    if data.is_empty() {
        return domain("no subjects supplied");
    }
    if let Some(bad) = data.iter().find(|s| !(s.time >= 0.0 && s.time.is_finite())) {
        return domain(format!(
            "observed time must be finite and >= 0, got {}",
            bad.time
        ));
    }
    let mut sorted: Vec<&SubjectRecord> = data.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut rows = Vec::new();
    let mut at_risk = sorted.len();
    let mut at_risk_treated = sorted
        .iter()
        .filter(|s| s.group == Group::Treatment)
        .count();
    let mut i = 0;
    while i < sorted.len() {
        let time = sorted[i].time;
        let mut row = RiskRow {
            time,
            at_risk,
            events: 0,
            censored: 0,
            at_risk_treated,
            events_treated: 0,
        };
        while i < sorted.len() && sorted[i].time == time {
            let s = sorted[i];
            let treated = s.group == Group::Treatment;
            if s.event {
                row.events += 1;
                row.events_treated += treated as usize;
            } else {
                row.censored += 1;
            }
            at_risk -= 1;
            at_risk_treated -= treated as usize;
            i += 1;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Product-limit estimator of the event (or censoring) survival function.
///
/// At tied times events leave the risk set before censorings.
pub fn kaplan_meier(data: &[SubjectRecord], target: KmTarget) -> Result<StepFunction> {
    let rows = risk_table(data)?;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    for row in rows {
        let (d, n) = match target {
            KmTarget::Event => (row.events, row.at_risk),
            KmTarget::Censoring => (row.censored, row.at_risk - row.events),
        };
        if d > 0 {
            s *= 1.0 - d as f64 / n as f64;
            knots.push(row.time);
            values.push(s);
        }
    }
    Ok(StepFunction {
        initial: 1.0,
        knots,
        values,
    })
}

/// Nelson-Aalen cumulative hazard.
pub fn nelson_aalen(data: &[SubjectRecord]) -> Result<StepFunction> {
    let rows = risk_table(data)?;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    for row in rows.iter().filter(|r| r.events > 0) {
        h += row.events as f64 / row.at_risk as f64;
        knots.push(row.time);
        values.push(h);
    }
    Ok(StepFunction {
        initial: 0.0,
        knots,
        values,
    })
}

/// Area under the Kaplan-Meier curve on `[0, eta]`; the last value is carried
/// forward past the largest observation.
pub fn rmst_estimate(data: &[SubjectRecord], eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return domain(format!("horizon must be positive, got {eta}"));
    }
    Ok(kaplan_meier(data, KmTarget::Event)?.integral(eta))
}

/// Plug-in estimate of the asymptotic variance of `sqrt(n) * mu_hat`.
///
/// Divide by the group size to get the variance of the RMST estimate itself.
pub fn rmst_variance_estimate(data: &[SubjectRecord], eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return domain(format!("horizon must be positive, got {eta}"));
    }
    let rows = risk_table(data)?;
    let km = kaplan_meier(data, KmTarget::Event)?;
    let cens = kaplan_meier(data, KmTarget::Censoring)?;
    let total = km.integral(eta);
    let mut sum = 0.0;
    for row in rows.iter().filter(|r| r.events > 0 && r.time <= eta) {
        let t = row.time;
        let s = km.eval(t);
        let tail = total - km.integral(t);
        if s == 0.0 {
            // Nothing survives past t, so the tail area is zero too.
            continue;
        }
        let g = cens.left_eval(t);
        if g == 0.0 {
            return Err(MrctError::Estimation(format!(
                "censoring survival is zero at event time {t}; the variance tail is unstable"
            )));
        }
        sum += tail * tail / (s * g) * row.events as f64 / row.at_risk as f64;
    }
    Ok(sum)
}

const COX_MAX_ITER: usize = 50;

/// Two-group Cox fit with Breslow ties.
///
/// Returns `(-beta_hat, 1 / I(beta_hat))`, where `beta_hat` is the log hazard
/// ratio of treatment versus control; the first entry is positive when
/// treatment is beneficial.
pub fn cox_loghr(data: &[SubjectRecord]) -> Result<(f64, f64)> {
    let rows = risk_table(data)?;
    let n1 = data.iter().filter(|s| s.group == Group::Treatment).count();
    if n1 == 0 || n1 == data.len() {
        return domain("Cox fit needs subjects in both groups");
    }
    let total_events: usize = rows.iter().map(|r| r.events).sum();
    let treated_events: usize = rows.iter().map(|r| r.events_treated).sum();
    if total_events == 0 {
        return domain("Cox fit needs at least one event");
    }
    if treated_events == 0 || treated_events == total_events {
        return Err(MrctError::Estimation(
            "monotone partial likelihood: all events fall in one group".into(),
        ));
    }
    let event_rows: Vec<&RiskRow> = rows.iter().filter(|r| r.events > 0).collect();
    // Log partial likelihood, score and information.
    let eval = |beta: f64| -> (f64, f64, f64) {
        let eb = beta.exp();
        let mut ll = 0.0;
        let mut score = 0.0;
        let mut info = 0.0;
        for r in &event_rows {
            let n0 = (r.at_risk - r.at_risk_treated) as f64;
            let s0 = n0 + r.at_risk_treated as f64 * eb;
            let p = r.at_risk_treated as f64 * eb / s0;
            let d = r.events as f64;
            ll += r.events_treated as f64 * beta - d * s0.ln();
            score += r.events_treated as f64 - d * p;
            info += d * p * (1.0 - p);
        }
        (ll, score, info)
    };
    let mut beta = 0.0;
    let (mut ll, mut score, mut info) = eval(beta);
    for _ in 0..COX_MAX_ITER {
        if !(info > 0.0) {
            break;
        }
        let mut step = score / info;
        let mut next = eval(beta + step);
        let mut halvings = 0;
        while !(next.0 >= ll) && halvings < 30 {
            step *= 0.5;
            next = eval(beta + step);
            halvings += 1;
        }
        beta += step;
        (ll, score, info) = next;
        if step.abs() < 1e-10 * (1.0 + beta.abs()) {
            if info > 0.0 {
                return Ok((-beta, 1.0 / info));
            }
            break;
        }
    }
    Err(MrctError::Estimation(format!(
        "Cox iteration did not converge (beta = {beta}, score = {score})"
    )))
}
