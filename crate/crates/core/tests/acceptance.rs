//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed. Set
//! `MRCT_ACCEPTANCE_LONG=1` to add the full-scale simulation runs.

mod support;

use std::time::{Duration, Instant};

use mrct_core::analysis::{analyze_trial, RegionInput, Scale, TrialAnalysisInput};
use mrct_core::design::{
    attaining_n0, cp_equal_allocation, cp_lower_bound, homogeneous_regions, solve_overall_n0,
    Attainment, DesignConfig, RegionDesignInput,
};
use mrct_core::endpoints::{
    omega_survival_ph, rmst, rmst_true_variance, CensoringModel, EndpointSpec, SurvivalModel,
};
use mrct_core::model::RandomEffectsParams;
use mrct_core::sim::{run_benchmark, simulate_study, SimulationConfig};
use mrct_core::{MrctError, Probability};

use support::*;

fn cfg(alpha: f64, beta: f64, fractions: Vec<f64>) -> DesignConfig {
    DesignConfig::new(alpha, beta, 0.5, 1.0, 0.0, fractions).unwrap()
}

fn eff(delta: f64, tau: f64) -> RandomEffectsParams {
    RandomEffectsParams::from_tau(delta, tau).unwrap()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol + 1e-12
}

fn collect(failures: Vec<String>, ok: String) -> Check {
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(failures.join("; "))
    }
}

fn runtime(start: Instant, limit: Duration, failures: &mut Vec<String>) -> String {
    let el = start.elapsed();
    if el > limit {
        failures.push(format!("runtime {:.2?} exceeds {limit:?}", el));
    }
    format!("{el:.2?}")
}

fn s1_fractions() -> Vec<Vec<f64>> {
    vec![
        vec![1.0 / 3.0; 3],
        vec![0.2, 0.3, 0.5],
        vec![0.25; 4],
        vec![0.1, 0.2, 0.3, 0.4],
    ]
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let expected = [
        (
            0.25,
            [
                392, 492, 765, 2704, 399, 514, 828, 3055, 376, 441, 581, 980, 384, 464, 639, 1150,
            ],
        ),
        (
            0.5,
            [
                98, 123, 192, 676, 100, 129, 207, 764, 94, 111, 146, 245, 96, 116, 160, 288,
            ],
        ),
    ];
    let mut failures = Vec::new();
    let mut exact = 0;
    for (delta, table) in expected {
        let mut k = 0;
        for fr in s1_fractions() {
            for ratio in [0.2, 0.3, 0.4, 0.5] {
                let tau = ratio * delta;
                let regs = homogeneous_regions(2.0, fr.len()).unwrap();
                let n0 = solve_overall_n0(&eff(delta, tau), &cfg(0.025, 0.1, fr.clone()), &regs)
                    .map(|d| d.n0);
                let oracle = ceil_oracle(n0_oracle_continuous(
                    tau * tau,
                    delta,
                    0.025,
                    0.1,
                    &vec![2.0; fr.len()],
                    &fr,
                ));
                match n0 {
                    Ok(n) => {
                        if n.abs_diff(table[k]) > 1 {
                            failures.push(format!("delta {delta} row {k}: {n} vs {}", table[k]));
                        }
                        if n != oracle {
                            failures.push(format!("delta {delta} row {k}: {n} vs oracle {oracle}"));
                        }
                        if n == table[k] {
                            exact += 1;
                        }
                    }
                    Err(e) => failures.push(format!("delta {delta} row {k}: {e}")),
                }
                k += 1;
            }
        }
    }
    let t = runtime(start, Duration::from_secs(1), &mut failures);
    collect(failures, format!("32/32 within 1 ({exact} exact), {t}"))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let rows = [
        (3, 0.1, 946, 95, 98.8),
        (3, 0.3, 768, 231, 97.5),
        (3, 0.5, 817, 409, 97.0),
        (4, 0.1, 620, 62, 99.3),
        (4, 0.3, 584, 176, 97.8),
        (4, 0.5, 656, 328, 97.1),
    ];
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (r, f1, n0, n1, cp) in rows {
        let rest = (1.0 - f1) / (r as f64 - 1.0);
        let mut fr = vec![rest; r];
        fr[0] = f1;
        let regs = homogeneous_regions(2.0, r).unwrap();
        let d = match solve_overall_n0(&eff(0.25, 0.1), &cfg(0.025, 0.1, fr.clone()), &regs) {
            Ok(d) => d,
            Err(e) => {
                failures.push(format!("R={r} f1={f1}: {e}"));
                continue;
            }
        };
        let got = 100.0 * d.cp_per_region[0].value();
        let oracle = 100.0 * cp_oracle(0.01, 0.5, 0.025, 0.1, &vec![2.0; r], &fr, d.n0 as f64, 0);
        worst = worst.max((got - cp).abs());
        if d.n0.abs_diff(n0) > 1 || d.regional_n0[0].abs_diff(n1) > 1 {
            failures.push(format!(
                "R={r} f1={f1}: n0 {} / {} vs {n0} / {n1}",
                d.n0, d.regional_n0[0]
            ));
        }
        // published values carry one decimal, so allow that rounding on top of the tolerance
        if !within(got, cp, 0.1 + 0.05) {
            failures.push(format!("R={r} f1={f1}: CP {got:.3} vs {cp}"));
        }
        if !within(got, oracle, 1e-6) {
            failures.push(format!("R={r} f1={f1}: CP {got} vs oracle {oracle}"));
        }
    }
    let t = runtime(start, Duration::from_secs(1), &mut failures);
    collect(failures, format!("6 rows, max CP gap {worst:.3} pp, {t}"))
}

fn criterion_3() -> Check {
    let rows = [
        (0.025, 0.1, 0.4, 96.7, Some((10547, 2110))),
        (0.025, 0.1, 0.6, 84.1, None),
        (0.025, 0.2, 0.4, 98.6, Some((3376, 676))),
        (0.025, 0.2, 0.6, 86.9, None),
        (0.05, 0.1, 0.4, 97.6, Some((4352, 871))),
        (0.05, 0.1, 0.6, 85.0, None),
        (0.05, 0.2, 0.4, 99.2, Some((1958, 392))),
        (0.05, 0.2, 0.6, 88.7, None),
    ];
    let mut failures = Vec::new();
    for (a, b, ratio, cp, pairs) in rows {
        let e = eff(0.25, ratio * 0.25);
        let c = cfg(a, b, vec![]);
        let lb = match cp_lower_bound(&e, &c) {
            Ok(lb) => lb,
            Err(err) => {
                failures.push(format!("({a}, {b}, {ratio}): {err}"));
                continue;
            }
        };
        let got = 100.0 * lb.value.value();
        // independent evaluation of the bound from its two branches
        let zsum = z_quantile(1.0 - a) + z_quantile(1.0 - b);
        let q = ratio * ratio * zsum * zsum;
        let slope = if q < 2.0 {
            0.5 * 2.0 / q
        } else {
            0.5 / (q - 1.0).sqrt()
        };
        let oracle = 100.0 * cp_integral_oracle(slope, a, b);
        if !within(got, cp, 0.1 + 0.05) || !within(got, oracle, 1e-6) {
            failures.push(format!(
                "({a}, {b}, {ratio}): {got:.3} vs {cp} (oracle {oracle:.4})"
            ));
        }
        let attained = lb.attainment == Attainment::Attained;
        if attained != pairs.is_some() {
            failures.push(format!(
                "({a}, {b}, {ratio}): attainment {:?}",
                lb.attainment
            ));
        }
        match pairs {
            Some((n_a, n_b)) => {
                for (f1, want) in [(0.1, n_a), (0.5, n_b)] {
                    match attaining_n0(&e, &c, 2.0, f1) {
                        Ok(n) if n.abs_diff(want) <= 1 => {}
                        other => failures.push(format!("({a}, {b}) f1={f1}: {other:?} vs {want}")),
                    }
                }
            }
            None => {
                if !matches!(
                    attaining_n0(&e, &c, 2.0, 0.1),
                    Err(MrctError::NotAvailable(_))
                ) {
                    failures.push(format!("({a}, {b}, {ratio}): attaining n0 should be n.a."));
                }
            }
        }
    }
    collect(failures, "8 bounds, branches and 8 (n0, f1) pairs".into())
}

fn criterion_4() -> Check {
    // alpha, beta, R, tau/delta, CP (None = n.a.)
    let rows = [
        (0.025, 0.1, 3, 0.4, Some(97.4)),
        (0.025, 0.1, 3, 0.6, None),
        (0.025, 0.1, 4, 0.4, Some(98.1)),
        (0.025, 0.1, 4, 0.6, Some(84.5)),
        (0.025, 0.2, 3, 0.4, Some(99.0)),
        (0.025, 0.2, 3, 0.6, Some(87.2)),
        (0.025, 0.2, 4, 0.4, Some(99.3)),
        (0.025, 0.2, 4, 0.6, Some(89.1)),
        (0.05, 0.1, 3, 0.4, Some(98.1)),
        (0.05, 0.1, 3, 0.6, None),
        (0.05, 0.1, 4, 0.4, Some(98.6)),
        (0.05, 0.1, 4, 0.6, Some(86.8)),
        (0.05, 0.2, 3, 0.4, Some(99.4)),
        (0.05, 0.2, 3, 0.6, Some(89.8)),
        (0.05, 0.2, 4, 0.4, Some(99.6)),
        (0.05, 0.2, 4, 0.6, Some(91.5)),
    ];
    let mut failures = Vec::new();
    for (a, b, r, ratio, want) in rows {
        let got = cp_equal_allocation(&eff(1.0, ratio), &cfg(a, b, vec![]), r);
        match (got, want) {
            (Ok(cp), Some(w)) => {
                let got = 100.0 * cp.value();
                let rf = r as f64;
                let zsum = z_quantile(1.0 - a) + z_quantile(1.0 - b);
                let slope = rf * 0.5 / (ratio * ratio * (rf - 1.0).sqrt() * zsum * zsum);
                let oracle = 100.0 * cp_integral_oracle(slope, a, b);
                if !within(got, w, 0.1 + 0.05) || !within(got, oracle, 1e-6) {
                    failures.push(format!(
                        "({a}, {b}, R={r}, {ratio}): {got:.3} vs {w} (oracle {oracle:.4})"
                    ));
                }
            }
            (Err(MrctError::NotAvailable(m)), None) if m.contains("sqrt(R)") => {}
            (other, w) => failures.push(format!("({a}, {b}, R={r}, {ratio}): {other:?} vs {w:?}")),
        }
    }
    collect(failures, "14 CPs and 2 proviso violations".into())
}

fn binary(d: f64) -> EndpointSpec {
    EndpointSpec::Binary {
        p0: Probability::new(0.3).unwrap(),
        p1: Probability::new(0.3 + d).unwrap(),
    }
}

fn ph(hr: f64) -> EndpointSpec {
    EndpointSpec::SurvivalPh {
        lambda0: 0.05,
        hr,
        follow_up: 36.0,
    }
}

fn rmst_spec(control: SurvivalModel, treatment: SurvivalModel) -> EndpointSpec {
    EndpointSpec::SurvivalRmst {
        control,
        treatment,
        horizon: 80.0,
        censoring: CensoringModel::Uniform { lo: 0.0, hi: 240.0 },
    }
}

fn pw(early: f64, late: f64, psi: f64) -> SurvivalModel {
    SurvivalModel::PiecewiseExponential {
        early_rate: early,
        late_rate: late,
        change_point: psi,
    }
}

fn weibull(shape: f64, scale: f64) -> SurvivalModel {
    SurvivalModel::Weibull { shape, scale }
}

fn early() -> Vec<EndpointSpec> {
    [(0.02, 0.03), (0.03, 0.04), (0.04, 0.05), (0.05, 0.06)]
        .iter()
        .map(|&(l1, g)| rmst_spec(pw(0.07, g, 10.0), pw(l1, g, 10.0)))
        .collect()
}

fn late() -> Vec<EndpointSpec> {
    [0.04, 0.05, 0.06, 0.07]
        .iter()
        .map(|&l| rmst_spec(pw(l, 0.1, 6.0), pw(l, l, 6.0)))
        .collect()
}

fn crossing() -> Vec<EndpointSpec> {
    [(30.0, 50.0), (40.0, 60.0), (50.0, 70.0), (60.0, 80.0)]
        .iter()
        .map(|&(t0, t1)| rmst_spec(weibull(1.6, t0), weibull(1.0, t1)))
        .collect()
}

fn sim_config(
    endpoints: Vec<EndpointSpec>,
    true_effects: Option<Vec<f64>>,
    fr: Vec<f64>,
) -> SimulationConfig {
    SimulationConfig {
        endpoints,
        true_effects,
        design: cfg(0.025, 0.2, fr),
        training_n_per_group_per_region: 1000,
        m_design: 1000,
        m_verify: 1000,
        master_seed: 20240101,
        hyperparameter_decimals: Some(2),
        region_of_interest: 0,
    }
}

fn normal(d: &[f64], fr: Vec<f64>) -> SimulationConfig {
    let ep = EndpointSpec::Continuous {
        sigma2_0: 1.0,
        sigma2_1: 1.0,
    };
    sim_config(vec![ep; d.len()], Some(d.to_vec()), fr)
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let third = vec![1.0 / 3.0; 3];
    let quarter = vec![0.25; 4];
    let un3 = vec![0.2, 0.3, 0.5];
    let un4 = vec![0.1, 0.2, 0.3, 0.4];
    let dec4 = vec![0.4, 0.3, 0.2, 0.1];
    let bin =
        |d: &[f64], fr: Vec<f64>| sim_config(d.iter().map(|x| binary(*x)).collect(), None, fr);
    let haz = |h: &[f64], fr: Vec<f64>| sim_config(h.iter().map(|x| ph(*x)).collect(), None, fr);
    let rows: Vec<(&str, SimulationConfig, u64, f64, f64)> = vec![
        (
            "normal R3 equal",
            normal(&[0.6, 0.4, 0.2], third.clone()),
            284,
            0.94,
            0.01,
        ),
        (
            "normal R3 unequal",
            normal(&[0.6, 0.4, 0.2], un3.clone()),
            312,
            0.95,
            0.01,
        ),
        (
            "normal R4 equal",
            normal(&[0.8, 0.6, 0.4, 0.2], quarter.clone()),
            134,
            0.94,
            0.01,
        ),
        (
            "normal R4 unequal",
            normal(&[0.8, 0.6, 0.4, 0.2], un4.clone()),
            152,
            0.97,
            0.01,
        ),
        (
            "binary R3 equal",
            bin(&[0.6, 0.4, 0.2], third.clone()),
            56,
            0.94,
            0.01,
        ),
        (
            "binary R3 unequal",
            bin(&[0.6, 0.4, 0.2], un3.clone()),
            60,
            0.95,
            0.01,
        ),
        (
            "binary R4 equal",
            bin(&[0.6, 0.4, 0.3, 0.1], quarter.clone()),
            89,
            0.88,
            0.01,
        ),
        (
            "binary R4 unequal",
            bin(&[0.6, 0.4, 0.3, 0.1], un4.clone()),
            102,
            0.90,
            0.01,
        ),
        (
            "PH R3 equal",
            haz(&[0.7, 0.6, 0.4], third.clone()),
            168,
            0.95,
            0.01,
        ),
        ("PH R3 unequal", haz(&[0.7, 0.6, 0.4], un3), 183, 0.95, 0.01),
        (
            "PH R4 equal",
            haz(&[0.8, 0.7, 0.5, 0.4], quarter.clone()),
            210,
            0.90,
            0.01,
        ),
        (
            "PH R4 unequal",
            haz(&[0.8, 0.7, 0.5, 0.4], un4),
            244,
            0.92,
            0.01,
        ),
        (
            "early equal",
            sim_config(early(), None, quarter.clone()),
            572,
            0.90,
            0.02,
        ),
        (
            "early decreasing",
            sim_config(early(), None, dec4.clone()),
            639,
            0.89,
            0.02,
        ),
        (
            "late equal",
            sim_config(late(), None, quarter.clone()),
            220,
            0.93,
            0.02,
        ),
        (
            "late decreasing",
            sim_config(late(), None, dec4.clone()),
            249,
            0.92,
            0.02,
        ),
        (
            "crossing equal",
            sim_config(crossing(), None, quarter),
            856,
            0.87,
            0.02,
        ),
        (
            "crossing decreasing",
            sim_config(crossing(), None, dec4),
            1066,
            0.86,
            0.02,
        ),
    ];
    let mut failures = Vec::new();
    for (name, config, n0, cp, tol) in rows {
        match run_benchmark(&config) {
            Ok(b) => {
                let got_cp = b.cp.value();
                let rel = (b.n0 as f64 - n0 as f64).abs() / n0 as f64;
                if rel > tol || (got_cp - cp).abs() > 0.005 + 1e-12 {
                    failures.push(format!("{name}: {} / {got_cp:.4} vs {n0} / {cp}", b.n0));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let t = runtime(start, Duration::from_secs(120), &mut failures);
    collect(failures, format!("18 benchmark pairs, {t}"))
}

fn criterion_6() -> Check {
    let expected = [
        (
            early(),
            [
                (11.3, 664.0, 607.0),
                (7.2, 505.0, 448.0),
                (4.4, 377.0, 338.0),
                (2.5, 283.0, 261.0),
            ],
        ),
        (
            late(),
            [
                (10.8, 498.0, 113.0),
                (7.0, 367.0, 113.0),
                (4.5, 273.0, 112.0),
                (2.8, 208.0, 111.0),
            ],
        ),
        (
            crossing(),
            [
                (13.1, 855.0, 312.0),
                (9.0, 896.0, 491.0),
                (5.3, 908.0, 612.0),
                (2.3, 903.0, 669.0),
            ],
        ),
    ];
    let mut failures = Vec::new();
    for (specs, rows) in expected {
        for (spec, (d, s1, s0)) in specs.iter().zip(rows) {
            let EndpointSpec::SurvivalRmst {
                control,
                treatment,
                horizon,
                censoring,
            } = spec
            else {
                unreachable!()
            };
            let got_d = rmst(treatment, *horizon).unwrap() - rmst(control, *horizon).unwrap();
            let v1 = rmst_true_variance(treatment, censoring, *horizon).unwrap();
            let v0 = rmst_true_variance(control, censoring, *horizon).unwrap();
            if !within(got_d, d, 0.1)
                || (v1 / s1 - 1.0).abs() > 0.01
                || (v0 / s0 - 1.0).abs() > 0.01
            {
                failures.push(format!("{got_d:.2} ({v1:.1}, {v0:.1}) vs {d} ({s1}, {s0})"));
            }
        }
    }
    collect(failures, "12 regions".into())
}

fn criterion_7() -> Check {
    let expected = [(3.8, [6540, 6974, 6942]), (4.5, [5557, 5926, 5899])];
    let fractions = [
        vec![0.25; 4],
        vec![0.1, 0.2, 0.3, 0.4],
        vec![0.08, 0.27, 0.30, 0.35],
    ];
    let mut failures = Vec::new();
    let mut min_cp = 1.0f64;
    for (l, sizes) in expected {
        let omega = omega_survival_ph(0.018, 1.0, l, 1.0).unwrap();
        // two arms, same hazard: (l+1)^2 / (l * 2p)
        let p = 1.0 - (-0.018 * l).exp();
        if !within(omega, 4.0 / (2.0 * p), 1e-9) {
            failures.push(format!("omega {omega} at L = {l}"));
        }
        for (fr, want) in fractions.iter().zip(sizes) {
            let mut c = cfg(0.025, 0.1, fr.clone());
            c.margin = 1.3f64.ln();
            let regs: Vec<RegionDesignInput> = homogeneous_regions(omega, 4).unwrap();
            match solve_overall_n0(&RandomEffectsParams::new(0.0, 0.0077).unwrap(), &c, &regs) {
                Ok(d) => {
                    let low = d
                        .cp_per_region
                        .iter()
                        .map(|p| p.value())
                        .fold(1.0, f64::min);
                    min_cp = min_cp.min(low);
                    // CPs are published to one decimal of a percent
                    let printed = (1000.0 * low).round() / 10.0;
                    if d.n0.abs_diff(want) > 2 || printed < 99.5 {
                        failures.push(format!(
                            "L={l} {fr:?}: {} (min CP {low:.4}) vs {want}",
                            d.n0
                        ));
                    }
                }
                Err(e) => failures.push(format!("L={l}: {e}")),
            }
        }
    }
    collect(
        failures,
        format!(
            "6 designs, min CP {:.2}% (printed {:.1}%)",
            100.0 * min_cp,
            100.0 * min_cp
        ),
    )
}

fn criterion_8() -> Check {
    let hr = [0.82, 1.01, 0.62, 0.83];
    let s2 = [0.0087, 0.0093, 0.0656, 0.0113];
    let ids = ["EU", "NA", "Asia", "ROW"];
    let input = TrialAnalysisInput {
        regions: ids
            .iter()
            .zip(hr.iter().zip(s2))
            .map(|(id, (h, v))| RegionInput {
                region_id: id.to_string(),
                estimate: *h,
                variance: Some(v),
                events: None,
            })
            .collect(),
        margin: 1.3f64.ln(),
        alpha: Probability::new(0.025).unwrap(),
        pi: 0.5,
        scale: Scale::LogHr,
        ci_level: Probability::new(0.95).unwrap(),
        ell: 1.0,
    };
    let rep = analyze_trial(&input).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if !within(got, want, tol) {
            failures.push(format!("{name} {got:.4} vs {want}"));
        }
    };
    check("tau2", rep.tau2_hat, 0.0077, 0.0002);
    check("D", rep.pooled.d_tilde, 0.150, 0.002);
    check("1/w", 1.0 / rep.pooled.total_weight, 0.0054, 0.0002);
    for (r, want) in rep.regions.iter().zip([0.84, 0.93, 0.83, 0.85]) {
        check(&r.region_id, r.shrunk.estimate, want, 0.01);
    }
    check("overall", rep.overall.estimate, 0.86, 0.01);
    check("overall lower", rep.overall.lower, 0.75, 0.01);
    check("overall upper", rep.overall.upper, 0.99, 0.01);
    if !rep.consistency_ni.iter().all(|c| *c) || !rep.consistency_superiority.iter().all(|c| *c) {
        failures.push(format!(
            "consistency NI {:?}, superiority {:?}",
            rep.consistency_ni, rep.consistency_superiority
        ));
    }
    collect(
        failures,
        format!(
            "tau2 {:.5}, D {:.4}, overall {:.2} ({:.2}, {:.2})",
            rep.tau2_hat,
            rep.pooled.d_tilde,
            rep.overall.estimate,
            rep.overall.lower,
            rep.overall.upper
        ),
    )
}

fn simulation_check(
    name: &str,
    config: SimulationConfig,
    long: bool,
    failures: &mut Vec<String>,
) -> String {
    let start = Instant::now();
    let report = match simulate_study(&config) {
        Ok(r) => r,
        Err(e) => {
            failures.push(format!("{name}: {e}"));
            return String::new();
        }
    };
    let el = start.elapsed();
    let median = report.median_n0_design.unwrap_or(f64::NAN);
    let bench = report.benchmark_n0 as f64;
    let dev_b = report.mean_dev_power.unwrap_or(f64::NAN);
    let dev_cp = report.mean_dev_cp.unwrap_or(f64::NAN);
    if long {
        if !(0.012..=0.068).contains(&dev_b) || !(0.013..=0.048).contains(&dev_cp) {
            failures.push(format!(
                "{name}: dev(beta) {dev_b:.3}, dev(CP) {dev_cp:.3} outside the full-scale ranges"
            ));
        }
    } else {
        if !((median - bench).abs() <= 0.1 * bench) {
            failures.push(format!("{name}: median n0 {median} vs benchmark {bench}"));
        }
        if !(dev_b < 0.05) || !(dev_cp < 0.05) {
            failures.push(format!("{name}: dev(beta) {dev_b:.3}, dev(CP) {dev_cp:.3}"));
        }
        if !(report.flagged_rate < 0.01) {
            failures.push(format!(
                "{name}: flagged rate {:.1}% ({} infeasible, {} failed of {})",
                100.0 * report.flagged_rate,
                report.infeasible_replications,
                report.estimation_failures,
                report.m_design
            ));
        }
        if el > Duration::from_secs(300) {
            failures.push(format!("{name}: runtime {el:.2?}"));
        }
    }
    format!(
        "{name}: median {median} vs {bench}, dev(beta) {dev_b:.3}, dev(CP) {dev_cp:.3}, flagged {:.1}%, {el:.2?}",
        100.0 * report.flagged_rate
    )
}

fn criterion_9(long: bool) -> Check {
    let (md, mv) = if long { (1000, 1000) } else { (50, 200) };
    let mut n = normal(&[0.6, 0.4, 0.2], vec![1.0 / 3.0; 3]);
    let mut p = sim_config(
        [0.7, 0.6, 0.4].iter().map(|h| ph(*h)).collect(),
        None,
        vec![1.0 / 3.0; 3],
    );
    for c in [&mut n, &mut p] {
        c.m_design = md;
        c.m_verify = mv;
    }
    let mut failures = Vec::new();
    let a = simulation_check("normal", n, long, &mut failures);
    let b = simulation_check("PH", p, long, &mut failures);
    let detail = format!("m^D = {md}, m^V = {mv}; {a}; {b}");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} [{detail}]", failures.join("; ")))
    }
}

fn criterion_10() -> Check {
    let parts = [
        ("closed form vs solver", check_closed_form_vs_solver(2_000)),
        ("sandwich", check_sandwich(10_000)),
        ("KM/RMST brute force", check_km_brute_force()),
        ("Cox grid", check_cox_grid(100)),
        ("calibration", check_calibration_roundtrips(300)),
        ("inversion", check_inversions(2_000)),
    ];
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in parts {
        match r {
            Ok(m) => ok.push(format!("{name}: {m}")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    collect(failures, ok.join("; "))
}

fn main() {
    let long = std::env::var("MRCT_ACCEPTANCE_LONG").is_ok_and(|v| v == "1");
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Check>)> = vec![
        (
            1,
            "sample sizes over tau/delta and allocation",
            Box::new(criterion_1),
        ),
        (
            2,
            "sample size and CP over the first region's fraction",
            Box::new(criterion_2),
        ),
        (
            3,
            "CP lower bound and attaining sizes",
            Box::new(criterion_3),
        ),
        (4, "CP under equal allocation", Box::new(criterion_4)),
        (5, "simulation benchmarks", Box::new(criterion_5)),
        (6, "RMST effects and variances", Box::new(criterion_6)),
        (
            7,
            "non-inferiority designs from LEADER",
            Box::new(criterion_7),
        ),
        (8, "LEADER random-effects analysis", Box::new(criterion_8)),
        (
            9,
            "design verification by simulation",
            Box::new(move || criterion_9(long)),
        ),
        (10, "property suites", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run()))
            .unwrap_or_else(|_| Err("panicked".into()));
        let el = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {k:>2} PASS {name}: {detail} [{el:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {k:>2} FAIL {name}: {detail} [{el:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
