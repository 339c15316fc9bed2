//! Oracles and property checks shared by the property and acceptance suites.
//!
//! Every oracle here is written from first principles and avoids the library
//! routine it checks.

#![allow(dead_code)]

use mrct_core::design::{closed_form_n0, homogeneous_regions, solve_overall_n0, DesignConfig};
use mrct_core::endpoints::{
    calibrate_piecewise_late_rate, calibrate_treatment, calibrate_weibull_shape, rmst,
    SurvivalModel,
};
use mrct_core::model::{pooled_estimate, shrinkage_estimate, RandomEffectsParams, RegionalSummary};
use mrct_core::numerics::{std_normal_cdf, std_normal_quantile};
use mrct_core::survival::{
    cox_loghr, kaplan_meier, rmst_estimate, rmst_variance_estimate, Group, KmTarget, SubjectRecord,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------- normal distribution oracles ----------

pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Composite Simpson rule.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `(1/(1-beta)) int_{z_beta}^inf Phi(slope (u + zsum)) phi(u) du`.
pub fn cp_integral_oracle(slope: f64, alpha: f64, beta: f64) -> f64 {
    let zsum = z_quantile(1.0 - alpha) + z_quantile(1.0 - beta);
    let lo = z_quantile(beta);
    let v = simpson(
        |u| phi_cdf(slope * (u + zsum)) * phi_pdf(u),
        lo,
        lo.max(0.0) + 14.0,
        40_000,
    );
    v / (1.0 - beta)
}

// ---------- design oracles ----------

/// Continuous root of `sum_r (tau2 + omega_r/(n f_r))^{-1} = zsum^2/d^2` by bisection.
pub fn n0_oracle_continuous(
    tau2: f64,
    d: f64,
    alpha: f64,
    beta: f64,
    omegas: &[f64],
    fractions: &[f64],
) -> f64 {
    let zsum = z_quantile(1.0 - alpha) + z_quantile(1.0 - beta);
    let target = zsum * zsum / (d * d);
    let w = |n: f64| -> f64 {
        omegas
            .iter()
            .zip(fractions)
            .map(|(o, f)| 1.0 / (tau2 + o / (n * f)))
            .sum()
    };
    let (mut lo, mut hi) = (1e-9, 1e12);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if w(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn ceil_oracle(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() < 1e-7 {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Variance of the shrinkage estimate of region `r` written as a linear
/// combination of independent marginals `D_hat_j ~ (delta, tau2 + sigma2_j)`.
pub fn shrinkage_variance_oracle(tau2: f64, sigma2: &[f64], r: usize) -> (f64, f64) {
    let w: Vec<f64> = sigma2.iter().map(|s| 1.0 / (tau2 + s)).collect();
    let total: f64 = w.iter().sum();
    let kappa = tau2 / (tau2 + sigma2[r]);
    let var = (0..sigma2.len())
        .map(|j| {
            let c = (1.0 - kappa) * w[j] / total + if j == r { kappa } else { 0.0 };
            c * c * (tau2 + sigma2[j])
        })
        .sum();
    (var, total)
}

/// Consistency probability of region `r` built from the oracles above.
pub fn cp_oracle(
    tau2: f64,
    pi: f64,
    alpha: f64,
    beta: f64,
    omegas: &[f64],
    fractions: &[f64],
    n0: f64,
    r: usize,
) -> f64 {
    let s2: Vec<f64> = omegas
        .iter()
        .zip(fractions)
        .map(|(o, f)| o / (n0 * f))
        .collect();
    let (var, w) = shrinkage_variance_oracle(tau2, &s2, r);
    let excess = w * var - 1.0;
    if excess <= 1e-14 {
        return 1.0;
    }
    cp_integral_oracle((1.0 - pi) / excess.sqrt(), alpha, beta)
}

// ---------- survival oracles ----------

pub fn rec(time: f64, event: bool, group: Group) -> SubjectRecord {
    SubjectRecord::new(time, event, group).unwrap()
}

/// Product-limit estimate at `t` computed straight from the definition.
pub fn km_oracle(data: &[SubjectRecord], t: f64) -> f64 {
    let mut times: Vec<f64> = data.iter().filter(|s| s.event).map(|s| s.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut s = 1.0;
    for u in times.into_iter().filter(|u| *u <= t) {
        let n = data.iter().filter(|x| x.time >= u).count() as f64;
        let d = data.iter().filter(|x| x.event && x.time == u).count() as f64;
        s *= 1.0 - d / n;
    }
    s
}

/// Censoring survival at `t`; censored subjects tied with events stay at risk
/// for the events and leave before the censoring step.
pub fn censoring_km_oracle(data: &[SubjectRecord], t: f64) -> f64 {
    let mut times: Vec<f64> = data.iter().filter(|s| !s.event).map(|s| s.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut g = 1.0;
    for u in times.into_iter().filter(|u| *u <= t) {
        let n = data
            .iter()
            .filter(|x| x.time > u || (x.time == u && !x.event))
            .count() as f64;
        let c = data.iter().filter(|x| !x.event && x.time == u).count() as f64;
        g *= 1.0 - c / n;
    }
    g
}

/// `int_0^eta S(t) dt` by summing rectangles between sorted observation times.
pub fn rmst_oracle(data: &[SubjectRecord], eta: f64) -> f64 {
    let mut cuts: Vec<f64> = data.iter().map(|s| s.time).filter(|t| *t < eta).collect();
    cuts.push(0.0);
    cuts.push(eta);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| km_oracle(data, w[0]) * (w[1] - w[0]))
        .sum()
}

/// Greenwood-weighted form `N sum A(t)^2 d / (n (n - d))` of the RMST variance.
pub fn rmst_variance_oracle(data: &[SubjectRecord], eta: f64) -> f64 {
    let big_n = data.len() as f64;
    let mut times: Vec<f64> = data
        .iter()
        .filter(|s| s.event && s.time <= eta)
        .map(|s| s.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let total = rmst_oracle(data, eta);
    let mut v = 0.0;
    for u in times {
        let n = data.iter().filter(|x| x.time >= u).count() as f64;
        let d = data.iter().filter(|x| x.event && x.time == u).count() as f64;
        if n == d {
            continue;
        }
        let tail = total - rmst_oracle(data, u);
        v += tail * tail * d / (n * (n - d));
    }
    big_n * v
}

/// Breslow log partial likelihood in the treatment coefficient.
pub fn cox_loglik(data: &[SubjectRecord], beta: f64) -> f64 {
    let mut total = 0.0;
    for s in data.iter().filter(|s| s.event) {
        let denom: f64 = data
            .iter()
            .filter(|o| o.time >= s.time)
            .map(|o| {
                if o.group == Group::Treatment {
                    beta.exp()
                } else {
                    1.0
                }
            })
            .sum();
        let z = if s.group == Group::Treatment {
            beta
        } else {
            0.0
        };
        total += z - denom.ln();
    }
    total
}

/// Maximizer of the partial likelihood on a 1e-4 grid over `[-5, 5]`.
pub fn cox_grid(data: &[SubjectRecord]) -> f64 {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for i in 0..=100_000 {
        let b = -5.0 + i as f64 * 1e-4;
        let v = cox_loglik(data, b);
        if v > best.1 {
            best = (b, v);
        }
    }
    best.0
}

// ---------- property checks ----------

fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::from_seed(
            proptest::test_runner::RngAlgorithm::ChaCha,
            &[seed; 32],
        ),
    )
}

fn run_prop<S: Strategy>(
    cases: u32,
    seed: u8,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases, seed)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

/// Equal allocation with homogeneous variances: closed form against the solver.
pub fn check_closed_form_vs_solver(cases: u32) -> Check {
    let strategy = (
        0.05f64..2.0,
        0.0f64..0.45,
        prop::sample::select(vec![0.025, 0.05]),
        prop::sample::select(vec![0.1, 0.2]),
        2usize..9,
        0.2f64..10.0,
    );
    run_prop(
        cases,
        1,
        strategy,
        |(delta, ratio, alpha, beta, r, omega)| {
            let zsum = z_quantile(1.0 - alpha) + z_quantile(1.0 - beta);
            // keep tau/delta inside the feasible region
            let tau = ratio * (r as f64).sqrt() / zsum * delta;
            let eff = RandomEffectsParams::from_tau(delta, tau).unwrap();
            let cfg =
                DesignConfig::new(alpha, beta, 0.5, 1.0, 0.0, vec![1.0 / r as f64; r]).unwrap();
            let regs = homogeneous_regions(omega, r).unwrap();
            let solved = solve_overall_n0(&eff, &cfg, &regs)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let (closed, _) = closed_form_n0(&eff, &cfg, omega, r)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let exact = r as f64 * omega * zsum * zsum
                / (r as f64 * delta * delta - tau * tau * zsum * zsum);
            prop_assert!(
                (solved.n0_continuous - exact).abs() <= 1e-6 * exact.max(1.0),
                "solver {} vs exact {exact}",
                solved.n0_continuous
            );
            let near_integer = (exact - exact.round()).abs() < 1e-6;
            if !near_integer {
                prop_assert_eq!(solved.n0.max(r as u64), closed.max(r as u64));
            }
            Ok(())
        },
    )?;
    Ok(format!("{cases} configurations agree"))
}

/// `1/w <= var(D_tilde_r) <= sigma2_r + tau2` and the variance matches the oracle.
pub fn check_sandwich(cases: u32) -> Check {
    let strategy = (
        1e-4f64..2.0,
        prop::collection::vec((-3.0f64..3.0, 1e-3f64..5.0), 2..9),
    );
    run_prop(cases, 2, strategy, |(tau2, regions)| {
        let summaries: Vec<RegionalSummary> = regions
            .iter()
            .enumerate()
            .map(|(i, (d, s))| RegionalSummary::new(format!("r{i}"), *d, *s).unwrap())
            .collect();
        let s2: Vec<f64> = regions.iter().map(|(_, s)| *s).collect();
        let pooled = pooled_estimate(&summaries, tau2).unwrap();
        for (r, s) in summaries.iter().enumerate() {
            let sh = shrinkage_estimate(s, tau2, &pooled).unwrap();
            let (oracle, w) = shrinkage_variance_oracle(tau2, &s2, r);
            let tol = 1e-10 * oracle;
            prop_assert!(
                (sh.variance - oracle).abs() <= tol,
                "variance {} vs {oracle}",
                sh.variance
            );
            prop_assert!(
                1.0 / w <= sh.variance + tol,
                "lower side: 1/w = {} > {}",
                1.0 / w,
                sh.variance
            );
            prop_assert!(
                sh.variance <= s.sigma2 + tau2 + tol,
                "upper side: {} > {}",
                sh.variance,
                s.sigma2 + tau2
            );
        }
        Ok(())
    })?;
    Ok(format!("{cases} configurations inside the sandwich"))
}

/// Every dataset of up to 5 subjects with times in {1, 2, 3} and every
/// event/censoring pattern.
pub fn check_km_brute_force() -> Check {
    let times = [1.0, 2.0, 3.0];
    let probes = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
    let horizons = [0.5, 1.0, 2.5, 3.0, 4.0];
    let mut datasets = 0usize;
    for n in 1..=5u32 {
        for code in 0..6usize.pow(n) {
            let mut c = code;
            let data: Vec<SubjectRecord> = (0..n)
                .map(|_| {
                    let k = c % 6;
                    c /= 6;
                    rec(times[k / 2], k % 2 == 1, Group::Control)
                })
                .collect();
            datasets += 1;
            let km = kaplan_meier(&data, KmTarget::Event).unwrap();
            let cens = kaplan_meier(&data, KmTarget::Censoring).unwrap();
            for &t in &probes {
                let (a, b) = (km.eval(t), km_oracle(&data, t));
                ensure((a - b).abs() < 1e-12, || {
                    format!("KM at {t}: {a} vs {b} for {data:?}")
                })?;
                let (a, b) = (cens.eval(t), censoring_km_oracle(&data, t));
                ensure((a - b).abs() < 1e-12, || {
                    format!("censoring KM at {t}: {a} vs {b} for {data:?}")
                })?;
            }
            for &eta in &horizons {
                let (a, b) = (rmst_estimate(&data, eta).unwrap(), rmst_oracle(&data, eta));
                ensure((a - b).abs() < 1e-12, || {
                    format!("RMST to {eta}: {a} vs {b} for {data:?}")
                })?;
                let a = rmst_variance_estimate(&data, eta).unwrap();
                let b = rmst_variance_oracle(&data, eta);
                ensure((a - b).abs() < 1e-10 * (1.0 + b), || {
                    format!("RMST variance to {eta}: {a} vs {b} for {data:?}")
                })?;
                if data.iter().all(|s| s.event) {
                    // no censoring: population variance of min(T, eta)
                    let m: Vec<f64> = data.iter().map(|s| s.time.min(eta)).collect();
                    let mean = m.iter().sum::<f64>() / m.len() as f64;
                    let pv = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m.len() as f64;
                    ensure((a - pv).abs() < 1e-10, || {
                        format!("uncensored variance {a} vs {pv}")
                    })?;
                }
            }
        }
    }
    Ok(format!("{datasets} datasets"))
}

/// Cox estimates against the grid maximizer on random small datasets.
pub fn check_cox_grid(count: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0C5);
    let mut fitted = 0;
    let mut attempts = 0;
    while fitted < count {
        attempts += 1;
        if attempts > 20 * count {
            return Err(format!("only {fitted} of {count} datasets were fittable"));
        }
        let n = rng.random_range(4..13);
        let data: Vec<SubjectRecord> = (0..n)
            .map(|_| {
                let t = (rng.random::<f64>() * 50.0).round() / 10.0 + 0.1;
                let event = rng.random::<f64>() < 0.75;
                let group = if rng.random::<bool>() {
                    Group::Treatment
                } else {
                    Group::Control
                };
                rec(t, event, group)
            })
            .collect();
        let Ok((d, var)) = cox_loghr(&data) else {
            continue;
        };
        let beta = -d;
        if beta.abs() > 4.9 {
            continue;
        }
        fitted += 1;
        let g = cox_grid(&data);
        ensure((beta - g).abs() <= 1e-4, || {
            format!("beta {beta} vs grid {g} for {data:?}")
        })?;
        // observed information by central differences
        let h = 1e-4;
        let curv = -(cox_loglik(&data, beta + h) - 2.0 * cox_loglik(&data, beta)
            + cox_loglik(&data, beta - h))
            / (h * h);
        ensure((1.0 / var - curv).abs() <= 1e-4 * curv.max(1e-3), || {
            format!("information {} vs {curv}", 1.0 / var)
        })?;
    }
    Ok(format!("{fitted} datasets ({attempts} drawn)"))
}

/// Calibrated treatment models reproduce the requested RMST difference.
pub fn check_calibration_roundtrips(cases: u32) -> Check {
    let pw = (
        0.01f64..0.1,
        0.01f64..0.1,
        0.005f64..0.1,
        0.01f64..0.15,
        2.0f64..20.0,
        30.0f64..120.0,
    );
    run_prop(cases, 3, pw, |(l0, g0, l1, g1, psi, eta)| {
        let control = SurvivalModel::PiecewiseExponential {
            early_rate: l0,
            late_rate: g0,
            change_point: psi,
        };
        let treat = SurvivalModel::PiecewiseExponential {
            early_rate: l1,
            late_rate: g1,
            change_point: psi,
        };
        let target = rmst(&treat, eta).unwrap() - rmst(&control, eta).unwrap();
        let g = calibrate_piecewise_late_rate(l0, g0, l1, psi, eta, target).unwrap();
        // the late rate is identified only if the horizon passes the change point
        if psi < eta - 1.0 {
            prop_assert!(
                (g - g1).abs() <= 1e-6 * g1.max(1e-3),
                "late rate {g} vs {g1}"
            );
        }
        let back = SurvivalModel::PiecewiseExponential {
            early_rate: l1,
            late_rate: g,
            change_point: psi,
        };
        let d = rmst(&back, eta).unwrap() - rmst(&control, eta).unwrap();
        prop_assert!((d - target).abs() <= 1e-6, "difference {d} vs {target}");
        Ok(())
    })?;
    let wb = (
        0.3f64..5.0,
        10.0f64..100.0,
        0.3f64..5.0,
        10.0f64..100.0,
        20.0f64..120.0,
    );
    run_prop(cases, 4, wb, |(nu0, th0, nu1, th1, eta)| {
        let control = SurvivalModel::Weibull {
            shape: nu0,
            scale: th0,
        };
        let treat = SurvivalModel::Weibull {
            shape: nu1,
            scale: th1,
        };
        let target = rmst(&treat, eta).unwrap() - rmst(&control, eta).unwrap();
        let nu = calibrate_weibull_shape(nu0, th0, th1, eta, target).unwrap();
        let back = SurvivalModel::Weibull {
            shape: nu,
            scale: th1,
        };
        let d = rmst(&back, eta).unwrap() - rmst(&control, eta).unwrap();
        prop_assert!((d - target).abs() <= 1e-6, "difference {d} vs {target}");
        Ok(())
    })?;
    let ex = (0.005f64..0.2, 0.005f64..0.2, 5.0f64..100.0);
    run_prop(cases, 5, ex, |(r0, r1, eta)| {
        let control = SurvivalModel::Exponential { rate: r0 };
        let treat = SurvivalModel::Exponential { rate: r1 };
        let target = rmst(&treat, eta).unwrap() - rmst(&control, eta).unwrap();
        match calibrate_treatment(&control, &treat, eta, target).unwrap() {
            SurvivalModel::Exponential { rate } => {
                prop_assert!((rate - r1).abs() <= 1e-6 * r1, "rate {rate} vs {r1}")
            }
            other => prop_assert!(false, "unexpected family {other:?}"),
        }
        Ok(())
    })?;
    Ok(format!("{cases} cases per family"))
}

/// Normal quantile against the CDF, and survival inversion on all families.
pub fn check_inversions(cases: u32) -> Check {
    run_prop(cases, 6, -12.0f64..12.0, |x| {
        let p = std_normal_cdf(x);
        let p_oracle = phi_cdf(x);
        prop_assert!(
            (p - p_oracle).abs() <= 1e-15 + 1e-12 * p_oracle,
            "cdf {p} vs {p_oracle}"
        );
        if p > 0.0 && p < 1.0 && (1e-300..1.0 - 1e-15).contains(&p) {
            let q = std_normal_quantile(p).unwrap();
            let back = std_normal_cdf(q);
            prop_assert!(
                (back - p).abs() <= 1e-8 * p.min(1.0 - p).max(1e-300),
                "p {p} back {back}"
            );
        }
        Ok(())
    })?;
    run_prop(cases, 7, 1e-6f64..0.999_999, |p| {
        let q = std_normal_quantile(p).unwrap();
        let oracle = z_quantile(p);
        prop_assert!(
            (q - oracle).abs() <= 1e-8 * (1.0 + oracle.abs()),
            "quantile {q} vs {oracle}"
        );
        Ok(())
    })?;
    let model = prop_oneof![
        (0.001f64..1.0).prop_map(|rate| SurvivalModel::Exponential { rate }),
        (0.001f64..1.0, 0.001f64..1.0, 0.5f64..30.0).prop_map(|(a, b, c)| {
            SurvivalModel::PiecewiseExponential {
                early_rate: a,
                late_rate: b,
                change_point: c,
            }
        }),
        (0.1f64..8.0, 1.0f64..100.0)
            .prop_map(|(shape, scale)| SurvivalModel::Weibull { shape, scale }),
    ];
    run_prop(cases, 8, (model, 1e-3f64..200.0), |(m, t)| {
        let s = m.cumulative_hazard(t);
        let back = m.inverse_cumulative_hazard(s);
        prop_assert!(
            (back - t).abs() <= 1e-8 * t.max(1.0),
            "{m:?}: {t} -> {s} -> {back}"
        );
        Ok(())
    })?;
    Ok(format!("{cases} cases per check"))
}

/// Draws a random generator for ad-hoc use in suites.
pub fn seeded(seed: u64) -> impl Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
