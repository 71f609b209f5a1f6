//! Two-sample t-test, Pearson correlation and chi-square independence test,
//! with the incomplete beta and gamma functions behind their p-values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("invalid contingency table: {0}")]
    InvalidTable(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, reflection below 0.5).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(StatsError::Domain(format!("beta parameters must be positive (a={a}, b={b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("x={x} outside [0, 1]")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    })
}

fn lower_gamma_series(s: f64, x: f64) -> f64 {
    let mut sum = 1.0 / s;
    let mut term = sum;
    let mut ap = s;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + s * x.ln() - ln_gamma(s)).exp()
}

fn upper_gamma_cf(s: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + s * x.ln() - ln_gamma(s)).exp() * h
}

/// `Q(s, x) = Γ(s, x) / Γ(s)`.
pub fn regularized_upper_gamma(s: f64, x: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(StatsError::Domain(format!("shape s={s} must be positive")));
    }
    if !(x >= 0.0) {
        return Err(StatsError::Domain(format!("x={x} must be non-negative")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(if x < s + 1.0 {
        1.0 - lower_gamma_series(s, x)
    } else {
        upper_gamma_cf(s, x)
    })
}

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(StatsError::Domain(format!("df={df} must be positive")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    Ok(regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?.clamp(0.0, 1.0))
}

pub fn chi_square_survival(x: f64, df: f64) -> Result<f64> {
    Ok(regularized_upper_gamma(df / 2.0, x / 2.0)?.clamp(0.0, 1.0))
}

fn check_sample(name: &str, v: &[f64], min_len: usize) -> Result<()> {
    if v.len() < min_len {
        return Err(StatsError::InvalidInput(format!(
            "{name} needs at least {min_len} values, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidInput(format!("{name} contains non-finite values")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sum of squared deviations from the mean.
fn ss(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Pooled-variance Student t-test, two-tailed, `df = n_a + n_b - 2`.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_sample("a", a, 2)?;
    check_sample("b", b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (ss(a) + ss(b)) / df;
    if pooled == 0.0 {
        return Err(StatsError::ZeroVariance("both groups are constant".into()));
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        statistic: t,
        df,
        p_value: student_t_two_tailed(t, df)?,
    })
}

/// Pearson r with a two-tailed p-value from `t = r sqrt((n-2)/(1-r^2))`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_sample("x", x, 3)?;
    check_sample("y", y, 3)?;
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput(format!(
            "samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let (sxx, syy) = (ss(x), ss(y));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance("a correlated variable is constant".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = x.len() as f64 - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_tailed(r * (df / (1.0 - r * r)).sqrt(), df)?
    };
    Ok(TestResult {
        statistic: r,
        df,
        p_value: p,
    })
}

/// Pearson chi-square test of independence (no continuity correction).
pub fn chi_square_independence(table: &[Vec<f64>]) -> Result<TestResult> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(StatsError::InvalidTable("need a rectangular table of at least 2×2".into()));
    }
    if table.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(StatsError::InvalidTable("counts must be finite and non-negative".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s == 0.0) {
        return Err(StatsError::InvalidTable("every row and column needs a positive total".into()));
    }
    let total: f64 = row_sums.iter().sum();
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / total;
            chi2 += (o - e) * (o - e) / e;
        }
    }
    let df = ((rows - 1) * (cols - 1)) as f64;
    Ok(TestResult {
        statistic: chi2,
        df,
        p_value: chi_square_survival(chi2, df)?,
    })
}
