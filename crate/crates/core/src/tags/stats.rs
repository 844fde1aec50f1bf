//! Univariate two-sample tests used by the missingness analysis.
//!
//! Distribution functions come from `statrs`; the test statistics are
//! computed here.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W with Royston's approximation for the coefficients and
/// the p-value. Valid for 3 ≤ n ≤ 5000; returns `None` outside that range
/// or when the sample has zero range.
pub fn shapiro_wilk(sample: &[f64]) -> Option<TestResult> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return None;
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] <= 0.0 {
        return None;
    }
    let half = n / 2;
    // a[i] pairs with x[n-1-i] - x[i]
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let norm = std_normal();
        let nf = n as f64;
        // m[i] for the upper order statistics, largest first
        let m: Vec<f64> = (0..half).map(|i| -norm.inverse_cdf((i as f64 + 1.0 - 0.375) / (nf + 0.25))).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let u = 1.0 / nf.sqrt();
        let a1 = m[0] / ssumm2 + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        let (first, phi) = if n > 5 {
            let a2 = m[1] / ssumm2 + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            a[1] = a2;
            (2, (summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
        } else {
            (1, (summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1))
        };
        a[0] = a1;
        let fac = phi.sqrt();
        for i in first..half {
            a[i] = m[i] / fac;
        }
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let b: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = (b * b / ss).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else {
        let nf = n as f64;
        let w1 = (1.0 - w).ln();
        let (y, mu, sigma) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], nf);
            if w1 >= gamma {
                return Some(TestResult { statistic: w, p_value: 1e-99 });
            }
            (-(gamma - w1).ln(), poly(&[0.544, -0.39978, 0.025054, -6.714e-4], nf), poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp())
        } else {
            let ln = nf.ln();
            (w1, poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln), poly(&[-0.4803, -0.082676, 0.0030302], ln).exp())
        };
        1.0 - std_normal().cdf((y - mu) / sigma)
    };
    Some(TestResult { statistic: w, p_value: p })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Two-sided Student t-test with pooled variance. `None` when either group
/// has fewer than 2 values or the pooled variance is zero.
pub fn t_test(a: &[f64], b: &[f64]) -> Option<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let df = n1 + n2 - 2.0;
    let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
    if sp2 <= 0.0 {
        return None;
    }
    let t = (m1 - m2) / (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(TestResult { statistic: t, p_value: (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0) })
}

/// Midranks (1-based) of the pooled sample and the tie term Σ(t³ − t).
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut r = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = mid;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (r, ties)
}

/// Two-sided Mann-Whitney U, normal approximation with tie and continuity
/// corrections. The statistic is U of the first sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Option<TestResult> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (r, ties) = ranks(&pooled);
    let r1: f64 = r[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let u2 = n1 * n2 - u1;
    let n = n1 + n2;
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return None;
    }
    let z = (u1.max(u2) - mu - 0.5) / var.sqrt();
    let p = (2.0 * (1.0 - std_normal().cdf(z))).clamp(0.0, 1.0);
    Some(TestResult { statistic: u1, p_value: p })
}

/// Pearson chi-square test of independence on an r × c table, with Yates'
/// correction when there is one degree of freedom. All-zero rows and
/// columns are dropped first; `None` if fewer than 2 remain on either axis.
pub fn chi_square(table: &[Vec<f64>]) -> Option<TestResult> {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    let ncols = rows.first()?.len();
    let keep: Vec<usize> = (0..ncols).filter(|&j| rows.iter().map(|r| r[j]).sum::<f64>() > 0.0).collect();
    if rows.len() < 2 || keep.len() < 2 {
        return None;
    }
    let obs: Vec<Vec<f64>> = rows.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
    let row_sums: Vec<f64> = obs.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..keep.len()).map(|j| obs.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let dof = (obs.len() - 1) * (keep.len() - 1);
    let mut stat = 0.0;
    for (i, r) in obs.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / total;
            let o = if dof == 1 {
                let diff = e - o;
                o + diff.signum() * diff.abs().min(0.5)
            } else {
                o
            };
            stat += (o - e).powi(2) / e;
        }
    }
    let dist = ChiSquared::new(dof as f64).ok()?;
    Some(TestResult { statistic: stat, p_value: (1.0 - dist.cdf(stat)).clamp(0.0, 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values frozen from scipy.stats
    const A: [f64; 10] = [2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 3.9, 4.1, 2.2];
    const B: [f64; 8] = [1.2, 0.4, 3.3, 2.2, 1.1, 0.9, 1.7, 2.8];

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn shapiro_matches_reference() {
        let cases: [(&[f64], f64, f64); 4] = [
            (&A, 0.9524826258613804, 0.6979170251090755),
            (&B, 0.9537971297795262, 0.7493771572938038),
            (&[1.0, 2.0, 3.0], 1.0, 1.0),
            (&[0.5, 1.5, 1.7, 2.9, 8.0], 0.8055936917897513, 0.08993242417342985),
        ];
        for (x, w, p) in cases {
            let r = shapiro_wilk(x).unwrap();
            assert!(close(r.statistic, w, 1e-6), "W {} vs {w}", r.statistic);
            assert!(close(r.p_value, p, 1e-4), "p {} vs {p}", r.p_value);
        }
        let mut heavy: Vec<f64> = (1..=20).map(f64::from).collect();
        heavy.push(100.0);
        let r = shapiro_wilk(&heavy).unwrap();
        assert!(close(r.statistic, 0.49437227591863686, 1e-6));
        assert!(close(r.p_value, 1.8057032958320943e-07, 1e-3));
        assert!(shapiro_wilk(&[1.0, 1.0, 1.0]).is_none());
        assert!(shapiro_wilk(&[1.0, 2.0]).is_none());
    }

    #[test]
    fn t_test_matches_reference() {
        let r = t_test(&A, &B).unwrap();
        assert!(close(r.statistic, 3.2071585185443054, 1e-12));
        assert!(close(r.p_value, 0.0054944168786939095, 1e-8));
        assert!(t_test(&[1.0, 1.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn mann_whitney_matches_reference() {
        let r = mann_whitney_u(&A, &B).unwrap();
        assert_eq!(r.statistic, 69.5);
        assert!(close(r.p_value, 0.009859576050075824, 1e-8));
        let e = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 4.0];
        let f = [2.0, 2.0, 2.0, 3.0, 5.0, 5.0, 6.0, 1.0];
        let r = mann_whitney_u(&e, &f).unwrap();
        assert_eq!(r.statistic, 31.5);
        assert!(close(r.p_value, 0.46300775558002427, 1e-8));
    }

    #[test]
    fn chi_square_matches_reference() {
        let r = chi_square(&[vec![10.0, 20.0, 30.0], vec![15.0, 5.0, 12.0]]).unwrap();
        assert!(close(r.statistic, 10.130952380952381, 1e-12));
        assert!(close(r.p_value, 0.006310904994314273, 1e-8));
        let r = chi_square(&[vec![10.0, 20.0], vec![15.0, 5.0]]).unwrap();
        assert!(close(r.statistic, 6.75, 1e-12));
        assert!(close(r.p_value, 0.0093747684594349, 1e-8));
        assert!(chi_square(&[vec![3.0, 0.0], vec![4.0, 0.0]]).is_none());
    }
}
