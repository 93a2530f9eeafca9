//! Small numerical kernels shared by the estimators: compensated summation,
//! prefix sums, weighted least squares and chi-square tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().value()
}

/// Fills `out` with `S_0 = 0, S_k = x_0 + ... + x_{k-1}` (length `trace.len() + 1`).
pub fn prefix_sums_into(trace: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(trace.len() + 1);
    out.push(0.0);
    let mut acc = CompensatedSum::new();
    for &x in trace {
        acc.add(x);
        out.push(acc.value());
    }
}

pub fn prefix_sums(trace: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    prefix_sums_into(trace, &mut out);
    out
}

pub fn gcd(a: u64, b: u64) -> u64 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Result of a straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// sqrt of the weighted residual sum of squares.
    pub residual_norm: f64,
}

/// Weighted least squares for a line. Weights must be positive and finite.
/// Returns `None` with fewer than two points or a degenerate design.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LinearFit> {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), w.len());
    if x.len() < 2 {
        return None;
    }
    let sw: f64 = compensated_sum(w);
    let mx = x.iter().zip(w).map(|(a, b)| a * b).collect::<CompensatedSum>().value() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).collect::<CompensatedSum>().value() / sw;
    let mut sxx = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    for i in 0..x.len() {
        let dx = x[i] - mx;
        sxx.add(w[i] * dx * dx);
        sxy.add(w[i] * dx * (y[i] - my));
    }
    let sxx = sxx.value();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy.value() / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..x.len())
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w[i] * r * r
        })
        .collect::<CompensatedSum>()
        .value();
    Some(LinearFit {
        slope,
        intercept,
        residual_norm: rss.sqrt(),
    })
}

/// Outcome of a chi-square test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi2_p_value(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Goodness-of-fit test of observed counts against cell probabilities.
/// Cells with zero expected probability must have zero counts.
pub fn chi_square_goodness_of_fit(observed: &[u64], probs: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        if p <= 0.0 {
            if o > 0 {
                return ChiSquareTest {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                };
            }
            continue;
        }
        let e = n * p;
        let d = o as f64 - e;
        stat += d * d / e;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    ChiSquareTest {
        statistic: stat,
        dof,
        p_value: chi2_p_value(stat, dof),
    }
}

/// Two-sample chi-square homogeneity test on a common binning.
/// Bins empty in both samples are dropped.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareTest {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let (na, nb) = (na as f64, nb as f64);
    let n = na + nb;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        let ea = na * col / n;
        let eb = nb * col / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        cells += 1;
    }
    let dof = cells.saturating_sub(1);
    ChiSquareTest {
        statistic: stat,
        dof,
        p_value: chi2_p_value(stat, dof),
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values
        .iter()
        .map(|v| (v - mean).powi(2))
        .collect::<CompensatedSum>()
        .value();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 10.0);
    }

    #[test]
    fn prefix_sums_start_at_zero() {
        assert_eq!(prefix_sums(&[1.0, -1.0, 2.0]), vec![0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn gcd_by_euclid() {
        assert_eq!(gcd(12, 18), 6);
        assert_eq!(gcd(7, 0), 7);
        assert_eq!(gcd(1, 5), 1);
    }

    #[test]
    fn line_fit_exact() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let fit = weighted_line_fit(&x, &y, &[1.0; 4]).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!(fit.residual_norm < 1e-12);
        assert!(weighted_line_fit(&[1.0], &[1.0], &[1.0]).is_none());
        assert!(weighted_line_fit(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn chi_square_identical_samples() {
        let t = chi_square_two_sample(&[10, 20, 30, 0], &[10, 20, 30, 0]);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 2);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let g = chi_square_goodness_of_fit(&[50, 50], &[0.5, 0.5]);
        assert_eq!(g.statistic, 0.0);
        let bad = chi_square_goodness_of_fit(&[100, 0], &[0.5, 0.5]);
        assert!(bad.p_value < 1e-10);
    }
}
