//! Special functions, normal-weighted quadrature and scalar root finding.
//!
//! Everything here is pure and allocation-light; the rest of the crate
//! leans on these routines for every probability it reports.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{domain, MrctError, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            domain(format!("probability {value} outside [0, 1]"))
        }
    }

    /// Clamps into `[0, 1]`; used for quadrature output that may overshoot by rounding.
    pub fn saturating(value: f64) -> Self {
        Self(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = MrctError;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

// Acklam's rational approximation, used as the starting point for Halley refinement.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn acklam(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Standard normal quantile `z_p`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("quantile requires 0 < p < 1, got {p}"));
    }
    let mut x = acklam(p);
    for _ in 0..2 {
        // Work in the upper tail through symmetry so the residual keeps its precision.
        let e = if x > 0.0 {
            (1.0 - p) - std_normal_cdf(-x)
        } else {
            std_normal_cdf(x) - p
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Upper quantile `z_{1-a}`.
pub(crate) fn z_upper(a: f64) -> Result<f64> {
    std_normal_quantile(1.0 - a)
}

/// Settings for integrals against the truncated standard normal measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    pub abs_tolerance: f64,
    /// Width, in standard deviations past `max(lower, 0)`, of the integration window.
    pub upper_truncation_sd: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            abs_tolerance: 1e-9,
            upper_truncation_sd: 10.0,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tolerance > 0.0) {
            return domain("abs_tolerance must be positive");
        }
        if !(self.upper_truncation_sd >= 8.0) {
            return domain("upper_truncation_sd must be at least 8");
        }
        Ok(())
    }
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// Subintervals are bisected until each one's error estimate falls under its
/// share of `abs_tol` (or `rel_tol` times its own magnitude).
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return domain("integration limits must be finite");
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let width = hi - lo;
    let mut total = 0.0;
    let mut stack = vec![(lo, hi, 0u32)];
    while let Some((x0, x1, depth)) = stack.pop() {
        let (value, err) = gk15(&f, x0, x1);
        if !value.is_finite() {
            return Err(MrctError::Numerical(format!(
                "non-finite integrand on [{x0}, {x1}]"
            )));
        }
        let share = abs_tol * (x1 - x0) / width;
        if err <= share.max(rel_tol * value.abs()) || err < 1e-15 * value.abs().max(1e-300) {
            total += value;
        } else if depth >= MAX_DEPTH {
            return Err(MrctError::Numerical(format!(
                "quadrature did not converge on [{x0}, {x1}] (error estimate {err:.3e})"
            )));
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((x0, mid, depth + 1));
            stack.push((mid, x1, depth + 1));
        }
    }
    Ok(sign * total)
}

/// `E[f(Z) | Z > lower]` for standard normal `Z`.
///
/// The integral runs over `[lower, max(lower, 0) + upper_truncation_sd]`.
pub fn truncated_normal_expectation<F: Fn(f64) -> f64>(
    f: F,
    lower: f64,
    settings: &QuadratureSettings,
) -> Result<f64> {
    settings.validate()?;
    if !lower.is_finite() {
        return domain("lower limit must be finite");
    }
    let upper = lower.max(0.0) + settings.upper_truncation_sd;
    let mass = std_normal_cdf(-lower);
    let raw = integrate(
        |u| f(u) * std_normal_pdf(u),
        lower,
        upper,
        settings.abs_tolerance * mass,
        0.0,
    )?;
    Ok(raw / mass)
}

/// Brent's method on a sign-changing bracket.
pub fn find_root<F: Fn(f64) -> f64>(
    f: F,
    bracket_lo: f64,
    bracket_hi: f64,
    tol: f64,
) -> Result<f64> {
    const MAX_ITER: usize = 200;
    let mut a = bracket_lo;
    let mut b = bracket_hi;
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(MrctError::Bracketing {
            lo: bracket_lo,
            hi: bracket_hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation, or secant when only two points differ.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(MrctError::Numerical(format!(
                "non-finite function value at {b}"
            )));
        }
    }
    Err(MrctError::Numerical(format!(
        "root finder exceeded {MAX_ITER} iterations"
    )))
}

pub const DEFAULT_ROOT_TOL: f64 = 1e-8;
