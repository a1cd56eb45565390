//! Sample moments, deterministic reductions and the log-log rate fit.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation; the grouping depends only on the length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Count, mean and centred second moment of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    /// Two-pass moments with pairwise sums.
    pub fn from_slice(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        if values.iter().all(|v| *v == values[0]) {
            return Self {
                count: values.len() as u64,
                mean: values[0],
                m2: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        Self {
            count: values.len() as u64,
            mean,
            m2: pairwise_sum(&dev),
        }
    }

    /// Chan et al. combination. Not commutative in floating point, so callers
    /// merge in a fixed order.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n1 = self.count as f64;
        let n2 = other.count as f64;
        let n = n1 + n2;
        let delta = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + delta * n2 / n,
            m2: self.m2 + other.m2 + delta * delta * n1 * n2 / n,
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    /// `|value − target| ≤ z·stderr + slack`.
    pub fn within(&self, target: f64, z: f64, slack: f64) -> bool {
        (self.value - target).abs() <= z * self.stderr + slack
    }
}

impl From<Moments> for Estimate {
    fn from(m: Moments) -> Self {
        Self {
            value: m.mean,
            stderr: m.stderr(),
        }
    }
}

/// One point of a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub h: f64,
    pub error: f64,
    pub stderr: f64,
}

/// Result of regressing `ln|error|` on `ln h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub slope_ci: (f64, f64),
    pub used: usize,
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Weighted least squares of `ln|error|` on `ln h`.
///
/// With positive standard errors the weights are the inverse delta-method
/// variances of `ln|error|`, i.e. `error² / stderr²`, and the slope standard
/// error is the known-variance formula. When every standard error is zero
/// (analytic ladders) the fit is ordinary least squares with the residual-based
/// standard error and a Student-t interval.
pub fn fit_log_log(points: &[RatePoint]) -> Option<LineFit> {
    let pts: Vec<&RatePoint> = points
        .iter()
        .filter(|p| p.error != 0.0 && p.error.is_finite() && p.h > 0.0)
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let analytic = pts.iter().all(|p| p.stderr == 0.0);
    let xs: Vec<f64> = pts.iter().map(|p| p.h.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.error.abs().ln()).collect();
    let ws: Vec<f64> = if analytic {
        vec![1.0; pts.len()]
    } else {
        pts.iter()
            .map(|p| {
                let rel = p.stderr / p.error.abs();
                1.0 / (rel * rel).max(f64::MIN_POSITIVE)
            })
            .collect()
    };
    let sw: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ybar = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let (se, q) = if analytic {
        let dof = pts.len() as f64 - 2.0;
        if dof <= 0.0 {
            (0.0, 0.0)
        } else {
            let rss: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let r = y - intercept - slope * x;
                    r * r
                })
                .sum();
            let se = (rss / dof / sxx).sqrt();
            (se, student_t_975(dof))
        }
    } else {
        ((1.0 / sxx).sqrt(), Z95)
    };
    Some(LineFit {
        slope,
        intercept,
        slope_stderr: se,
        slope_ci: (slope - q * se, slope + q * se),
        used: pts.len(),
    })
}

fn student_t_975(dof: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, dof)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(Z95)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moments_match_naive() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let m = Moments::from_slice(&xs);
        assert_eq!(m.count, 4);
        assert!((m.mean - 3.5).abs() < 1e-15);
        // sum of squared deviations: 6.25 + 2.25 + 0.25 + 12.25
        assert!((m.m2 - 21.0).abs() < 1e-12);
        assert!((m.variance() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn constant_sample_has_zero_stderr() {
        let m = Moments::from_slice(&[0.3; 100]);
        assert_eq!(m.m2, 0.0);
        assert_eq!(m.stderr(), 0.0);
    }

    #[test]
    fn exact_power_law_recovered() {
        let pts: Vec<RatePoint> = [0.25, 0.125, 0.0625, 0.03125]
            .iter()
            .map(|&h: &f64| RatePoint {
                h,
                error: 3.0 * h.powf(1.5),
                stderr: 0.0,
            })
            .collect();
        let fit = fit_log_log(&pts).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-10);
    }

    #[test]
    fn too_few_points() {
        let p = RatePoint {
            h: 0.1,
            error: 1.0,
            stderr: 0.0,
        };
        assert!(fit_log_log(&[p]).is_none());
    }

    proptest! {
        #[test]
        fn merge_agrees_with_whole_sample(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let whole = Moments::from_slice(&xs);
            let merged = Moments::from_slice(&xs[..split]).merge(&Moments::from_slice(&xs[split..]));
            prop_assert_eq!(whole.count, merged.count);
            prop_assert!((whole.mean - merged.mean).abs() <= 1e-9 * (1.0 + whole.mean.abs()));
            prop_assert!((whole.m2 - merged.m2).abs() <= 1e-8 * (1.0 + whole.m2));
        }
    }
}
