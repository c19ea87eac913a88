//! Distribution functions behind the rank tests: chi-square survival via
//! the regularized incomplete gamma function, the standard normal CDF via
//! erfc from the same gamma core, and the studentized range survival
//! function at infinite degrees of freedom by adaptive quadrature.

use crate::error::{NlaError, Result};

/// Convergence target for the series and continued-fraction expansions.
const GAMMA_EPS: f64 = 3e-16;
const GAMMA_MAX_ITER: usize = 500;
/// Guard against denominators collapsing to zero in the Lentz iteration.
const FPMIN: f64 = 1e-300;

/// Absolute tolerance of the studentized-range survival integral.
pub const QUADRATURE_EPS: f64 = 1e-10;
/// Integration window; the normal density is below 1e-16 outside it.
const QUADRATURE_Z: f64 = 8.5;
const SIMPSON_MAX_DEPTH: u32 = 50;

/// Natural log of the gamma function for x > 0 (Lanczos, g = 7).
pub fn lgamma(x: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) via its power series;
/// converges fastest for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> Result<f64> {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            return Ok(sum * (-x + a * x.ln() - lgamma(a)).exp());
        }
    }
    Err(NlaError::DegenerateStats(format!(
        "incomplete gamma series failed to converge (a={a}, x={x})"
    )))
}

/// Regularized upper incomplete gamma Q(a, x) via a modified Lentz
/// continued fraction; converges fastest for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            return Ok(h * (-x + a * x.ln() - lgamma(a)).exp());
        }
    }
    Err(NlaError::DegenerateStats(format!(
        "incomplete gamma continued fraction failed to converge (a={a}, x={x})"
    )))
}

/// Regularized upper incomplete gamma Q(a, x) for a > 0, x >= 0.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_p_series(a, x)?)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Chi-square survival function: P(X > x) with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(NlaError::Validation("chi-square needs df >= 1".into()));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(NlaError::Validation(format!(
            "chi-square statistic must be finite and non-negative, got {x}"
        )));
    }
    gamma_q(f64::from(df) / 2.0, x / 2.0)
}

/// Complementary error function via the incomplete gamma identity
/// erfc(x) = Q(1/2, x^2) for x >= 0.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    gamma_q(0.5, x * x).expect("gamma core converges for a = 1/2")
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    whole: f64,
    m: f64,
    fm: f64,
    eps: f64,
    depth: u32,
) -> Result<f64> {
    if depth > SIMPSON_MAX_DEPTH {
        return Err(NlaError::DegenerateStats(
            "quadrature failed to converge within tolerance".into(),
        ));
    }
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    let half = eps / 2.0;
    Ok(
        adaptive_simpson(f, a, fa, m, fm, left, lm, flm, half, depth + 1)?
            + adaptive_simpson(f, m, fm, b, fb, right, rm, frm, half, depth + 1)?,
    )
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(&f, a, fa, b, fb);
    adaptive_simpson(&f, a, fa, b, fb, whole, m, fm, eps, 0)
}

/// Survival function of the studentized range distribution with k groups at
/// infinite degrees of freedom: one minus the CDF of the range of k
/// independent standard normals,
/// CDF(q) = k * integral of phi(z) * (Phi(z) - Phi(z - q))^(k-1) dz.
pub fn studentized_range_sf(q: f64, k: u32) -> Result<f64> {
    if k < 2 {
        return Err(NlaError::Validation(
            "studentized range needs k >= 2".into(),
        ));
    }
    if !q.is_finite() || q < 0.0 {
        return Err(NlaError::Validation(format!(
            "studentized range statistic must be finite and non-negative, got {q}"
        )));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    let exponent = i32::try_from(k - 1)
        .map_err(|_| NlaError::Validation(format!("k = {k} groups is out of range")))?;
    let integrand = move |z: f64| {
        let inner = normal_cdf(z) - normal_cdf(z - q);
        normal_pdf(z) * inner.max(0.0).powi(exponent)
    };
    let cdf = f64::from(k) * integrate(integrand, -QUADRATURE_Z, QUADRATURE_Z, QUADRATURE_EPS)?;
    Ok((1.0 - cdf).clamp(0.0, 1.0))
}
