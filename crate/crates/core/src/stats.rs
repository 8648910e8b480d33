//! Small statistical helpers for summaries and trend checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    NoTrend,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannKendall {
    pub s: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub trend: Trend,
}

/// Two-sided Mann-Kendall trend test with the usual tie correction.
pub fn mann_kendall(series: &[f64], alpha: f64) -> MannKendall {
    let n = series.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += (series[j] - series[i]).partial_cmp(&0.0).map_or(0.0, |o| o as i8 as f64);
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - ties) / 18.0;
    let z = if var <= 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    let p_value = 2.0 * (1.0 - normal.cdf(z.abs()));
    let trend = if p_value < alpha && z > 0.0 {
        Trend::Increasing
    } else if p_value < alpha && z < 0.0 {
        Trend::Decreasing
    } else {
        Trend::NoTrend
    };
    MannKendall {
        s,
        z,
        p_value,
        trend,
    }
}

/// Sample mean with the half-width of its 95% Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len();
    if n == 0 {
        return MeanCi {
            mean: f64::NAN,
            ci95: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanCi { mean, ci95: 0.0, n };
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    MeanCi {
        mean,
        ci95: t * (var / n as f64).sqrt(),
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_monotone_series() {
        let up: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert_eq!(mann_kendall(&up, 0.05).trend, Trend::Increasing);
        let down: Vec<f64> = up.iter().rev().copied().collect();
        assert_eq!(mann_kendall(&down, 0.05).trend, Trend::Decreasing);
    }

    #[test]
    fn constant_series_has_no_trend() {
        let flat = vec![3.0; 20];
        let mk = mann_kendall(&flat, 0.05);
        assert_eq!(mk.trend, Trend::NoTrend);
        assert_eq!(mk.s, 0.0);
    }

    #[test]
    fn known_statistic() {
        // S for (1, 3, 2, 4): pairs up 5, down 1.
        let mk = mann_kendall(&[1.0, 3.0, 2.0, 4.0], 0.05);
        assert_eq!(mk.s, 4.0);
        let var: f64 = 4.0 * 3.0 * 13.0 / 18.0;
        assert!((mk.z - 3.0 / var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_ci_matches_t_table() {
        let m = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m.mean, 3.0);
        // t(0.975, 4) = 2.776, s = sqrt(2.5)
        assert!((m.ci95 - 2.776 * (2.5f64 / 5.0).sqrt()).abs() < 1e-3);
        assert_eq!(mean_ci(&[7.0]).ci95, 0.0);
    }
}
