//! Hypothesis tests: Shapiro-Wilk (Royston's AS R94 approximation),
//! independent and paired t-tests, Mann-Whitney U and Pearson correlation.
//! All p-values are two-tailed except Shapiro-Wilk, which is upper-tail by
//! construction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample size {0} outside the supported range {1}")]
    SampleSize(usize, &'static str),
    #[error("all values are identical")]
    Constant,
    #[error("zero variance")]
    ZeroVariance,
    #[error("samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ShapiroWilk,
    TTestInd,
    PairedT,
    MannWhitneyU,
    Pearson,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::ShapiroWilk => "shapiro_wilk",
            TestKind::TTestInd => "t_test_ind",
            TestKind::PairedT => "paired_t",
            TestKind::MannWhitneyU => "mann_whitney_u",
            TestKind::Pearson => "pearson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: Option<f64>,
    pub p_value: f64,
    pub test_kind: TestKind,
}

fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sum of squared deviations from the mean.
fn ss(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Polynomial `c[0] + c[1] x + ... ` as evaluated by AS R94.
fn poly(c: &[f64], x: f64) -> f64 {
    let mut ret = c[0];
    if c.len() > 1 {
        let mut p = x * c[c.len() - 1];
        for &cj in c[1..c.len() - 1].iter().rev() {
            p = (p + cj) * x;
        }
        ret += p;
    }
    ret
}

/// Shapiro-Wilk W with Royston's (1995) coefficients and p-value
/// approximation, valid for `3 <= n <= 5000`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<TestResult, StatsError> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::SampleSize(n, "3..=5000"));
    }
    check_finite(sample)?;
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] <= 1e-19 * x[n - 1].abs().max(1.0) {
        return Err(StatsError::Constant);
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    let nn2 = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let norm = std_normal();
        let an25 = an + 0.25;
        let mut summ2 = 0.0;
        for (i, ai) in a.iter_mut().enumerate() {
            *ai = norm.inverse_cdf((i as f64 + 1.0 - 0.375) / an25);
            summ2 += *ai * *ai;
        }
        summ2 *= 2.0;
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - a[0] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -a[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * a[0] * a[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for ai in a.iter_mut().skip(i1) {
            *ai /= -fac;
        }
    }

    let m = mean(&x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let num: f64 = (0..nn2).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = (num * num / denom).min(1.0);

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let y = (1.0 - w).ln();
        let xx = an.ln();
        let (z, mu, sigma) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], an);
            if y >= gamma {
                return Ok(TestResult {
                    statistic: w,
                    df: None,
                    p_value: 1e-99,
                    test_kind: TestKind::ShapiroWilk,
                });
            }
            (
                -(gamma - y).ln(),
                poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an),
                poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp(),
            )
        } else {
            (
                y,
                poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], xx),
                poly(&[-0.4803, -0.082676, 0.0030302], xx).exp(),
            )
        };
        std_normal().sf((z - mu) / sigma)
    };
    Ok(TestResult {
        statistic: w,
        df: None,
        p_value: p.clamp(0.0, 1.0),
        test_kind: TestKind::ShapiroWilk,
    })
}

/// Two-sample t-test with pooled variance, `df = n_a + n_b - 2`.
pub fn t_test_ind(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::SampleSize(a.len().min(b.len()), ">= 2 per group"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = (ss(a) + ss(b)) / df;
    if pooled <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        statistic: t,
        df: Some(df),
        p_value: t_two_tailed(t, df),
        test_kind: TestKind::TTestInd,
    })
}

/// t-test on paired differences `a - b`, `df = n - 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::SampleSize(a.len(), ">= 2 pairs"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let var = ss(&d) / (n - 1.0);
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean(&d) / (var / n).sqrt();
    Ok(TestResult {
        statistic: t,
        df: Some(n - 1.0),
        p_value: t_two_tailed(t, n - 1.0),
        test_kind: TestKind::PairedT,
    })
}

/// Midranks (1-based) of the pooled values and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Null distribution counts of U for sample sizes `(m, n)` without ties:
/// `counts[u]` is the number of rank arrangements giving statistic `u`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // f[j][u] over sizes built up by the recurrence
    // f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u).
    let max_u = m * n;
    let mut table = vec![vec![vec![0.0; max_u + 1]; n + 1]; m + 1];
    for (i, row) in table.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i == 0 || j == 0 {
                cell[0] = 1.0;
            }
        }
    }
    for i in 1..=m {
        for j in 1..=n {
            for u in 0..=i * j {
                let from_a = if u >= j { table[i - 1][j][u - j] } else { 0.0 };
                let from_b = table[i][j - 1][u];
                table[i][j][u] = from_a + from_b;
            }
        }
    }
    table[m][n].clone()
}

/// Mann-Whitney U of `a` against `b` (`U_a = R_a - n_a (n_a + 1) / 2`).
/// Exact null distribution when `n_a + n_b <= 20` and there are no ties,
/// otherwise the normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::SampleSize(0, ">= 1 per group"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let has_ties = ties.iter().any(|&t| t > 1);
    let p = if na + nb <= 20 && !has_ties {
        let counts = u_counts(na, nb);
        let total: f64 = counts.iter().sum();
        let k = u.round() as usize;
        let lower: f64 = counts[..=k].iter().sum::<f64>() / total;
        let upper: f64 = counts[k..].iter().sum::<f64>() / total;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let (fa, fb) = (na as f64, nb as f64);
        let nt = fa + fb;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nt * (nt - 1.0));
        let var = fa * fb / 12.0 * ((nt + 1.0) - tie_term);
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u - fa * fb / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * std_normal().sf(z)).min(1.0)
        }
    };
    Ok(TestResult {
        statistic: u,
        df: None,
        p_value: p,
        test_kind: TestKind::MannWhitneyU,
    })
}

/// Pearson r with a t-transform p-value on `n - 2` degrees of freedom.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 3 {
        return Err(StatsError::SampleSize(a.len(), ">= 3"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    let df = a.len() as f64 - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        t_two_tailed(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(TestResult {
        statistic: r,
        df: Some(df),
        p_value: p,
        test_kind: TestKind::Pearson,
    })
}
