//! Estimators and tests for comparing simulated progeny sizes with their
//! predicted tails.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Grid density of the survival-function regression.
pub const POINTS_PER_DECADE: f64 = 40.0;
/// Minimum number of uncensored samples beyond `n_min` for a fit.
pub const MIN_TAIL_SAMPLES: usize = 1000;
/// Largest tolerated share of censored samples among those beyond `n_min`.
pub const MAX_CENSOR_MASS: f64 = 0.1;
/// Grid points with fewer exceedances than this are dropped from a fit.
pub const MIN_POINT_COUNT: usize = 5;
/// Minimum number of uncensored exceedances at each rescaled-trend point.
pub const MIN_TREND_COUNT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("only {found} uncensored samples exceed {n_min}; at least {needed} are needed")]
    InsufficientTail {
        found: usize,
        needed: usize,
        n_min: u64,
    },
    #[error("censored samples make up {mass:.3} of the tail beyond {n_min}, above the {limit} limit")]
    CensorDominated { mass: f64, limit: f64, n_min: u64 },
    #[error("invalid range: need 1 <= n_min < n_max, got [{0}, {1}]")]
    BadRange(u64, u64),
    #[error("samples and censor flags differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sample")]
    Empty,
}

impl StatError {
    /// Refusals caused by the data rather than by the request.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            StatError::InsufficientTail { .. } | StatError::CensorDominated { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub slope: f64,
    pub slope_se: f64,
    pub n_range: (u64, u64),
    pub points_used: usize,
    pub censor_mass_in_range: f64,
    /// Uncensored samples strictly above `n_min`.
    pub tail_samples: usize,
}

/// Empirical survival function with censored samples counted as exceeding
/// every level.
#[derive(Clone, Debug)]
pub struct Survival {
    sorted: Vec<u64>,
    censored: usize,
    total: usize,
}

impl Survival {
    pub fn new(samples: &[u64], censored: &[bool]) -> Result<Self, StatError> {
        if samples.len() != censored.len() {
            return Err(StatError::LengthMismatch(samples.len(), censored.len()));
        }
        if samples.is_empty() {
            return Err(StatError::Empty);
        }
        let mut sorted: Vec<u64> = samples
            .iter()
            .zip(censored)
            .filter(|(_, &c)| !c)
            .map(|(&s, _)| s)
            .collect();
        sorted.sort_unstable();
        Ok(Self {
            censored: samples.len() - sorted.len(),
            sorted,
            total: samples.len(),
        })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn censored(&self) -> usize {
        self.censored
    }

    /// Uncensored samples strictly greater than `n`.
    pub fn exceeding(&self, n: u64) -> usize {
        self.sorted.len() - self.sorted.partition_point(|&s| s <= n)
    }

    /// `P̂(Z > n)`.
    pub fn survival(&self, n: u64) -> f64 {
        (self.exceeding(n) + self.censored) as f64 / self.total as f64
    }

    /// Share of censored samples among all samples beyond `n`.
    pub fn censor_mass(&self, n: u64) -> f64 {
        let beyond = self.exceeding(n) + self.censored;
        if beyond == 0 {
            0.0
        } else {
            self.censored as f64 / beyond as f64
        }
    }

    fn check_tail(&self, n_min: u64, needed: usize) -> Result<f64, StatError> {
        let mass = self.censor_mass(n_min);
        if mass > MAX_CENSOR_MASS {
            return Err(StatError::CensorDominated {
                mass,
                limit: MAX_CENSOR_MASS,
                n_min,
            });
        }
        let found = self.exceeding(n_min);
        if found < needed {
            return Err(StatError::InsufficientTail {
                found,
                needed,
                n_min,
            });
        }
        Ok(mass)
    }
}

/// Integer levels `n_min·10^{k/40}` up to `n_max`, deduplicated.
pub fn log_grid(n_min: u64, n_max: u64) -> Vec<u64> {
    let decades = (n_max as f64 / n_min as f64).log10();
    let steps = (decades * POINTS_PER_DECADE).round() as u64;
    let mut grid: Vec<u64> = (0..=steps)
        .map(|k| (n_min as f64 * 10f64.powf(k as f64 / POINTS_PER_DECADE)).round() as u64)
        .map(|n| n.clamp(n_min, n_max))
        .collect();
    grid.dedup();
    grid
}

/// Least-squares slope of `ln P̂(Z > n)` against `ln n` on [`log_grid`].
///
/// The standard error accounts for the correlation between survival
/// estimates at different levels: to first order
/// `Cov(ln P̂_i, ln P̂_j) = (1/max(p_i, p_j) − 1)/N`.
pub fn tail_fit(
    samples: &[u64],
    censored: &[bool],
    n_min: u64,
    n_max: u64,
) -> Result<TailFit, StatError> {
    if n_min == 0 || n_min >= n_max {
        return Err(StatError::BadRange(n_min, n_max));
    }
    let surv = Survival::new(samples, censored)?;
    let censor_mass = surv.check_tail(n_min, MIN_TAIL_SAMPLES)?;
    let tail_samples = surv.exceeding(n_min);

    let points: Vec<(f64, f64)> = log_grid(n_min, n_max)
        .into_iter()
        .filter(|&n| surv.exceeding(n) + surv.censored() >= MIN_POINT_COUNT)
        .map(|n| ((n as f64).ln(), surv.survival(n)))
        .collect();
    if points.len() < 3 {
        return Err(StatError::InsufficientTail {
            found: tail_samples,
            needed: MIN_TAIL_SAMPLES,
            n_min,
        });
    }
    let m = points.len() as f64;
    let x_bar = points.iter().map(|p| p.0).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
    let a: Vec<f64> = points.iter().map(|p| (p.0 - x_bar) / sxx).collect();
    let slope: f64 = a.iter().zip(&points).map(|(ai, p)| ai * p.1.ln()).sum();

    let total = surv.total() as f64;
    let mut var = 0.0;
    for (i, pi) in points.iter().enumerate() {
        for (j, pj) in points.iter().enumerate() {
            var += a[i] * a[j] * (1.0 / pi.1.max(pj.1) - 1.0) / total;
        }
    }
    Ok(TailFit {
        slope,
        slope_se: var.max(0.0).sqrt(),
        n_range: (n_min, n_max),
        points_used: points.len(),
        censor_mass_in_range: censor_mass,
        tail_samples,
    })
}

/// `n·ln²(n)·P̂(Z > n)` for each `n` in `n_list`.
pub fn critical_trend(
    samples: &[u64],
    censored: &[bool],
    n_list: &[u64],
) -> Result<Vec<f64>, StatError> {
    let Some(&n_min) = n_list.iter().min() else {
        return Ok(Vec::new());
    };
    let surv = Survival::new(samples, censored)?;
    surv.check_tail(n_min, MIN_TREND_COUNT)?;
    n_list
        .iter()
        .map(|&n| {
            let found = surv.exceeding(n);
            if found < MIN_TREND_COUNT {
                return Err(StatError::InsufficientTail {
                    found,
                    needed: MIN_TREND_COUNT,
                    n_min: n,
                });
            }
            let nf = n as f64;
            Ok(nf * nf.ln().powi(2) * surv.survival(n))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Kolmogorov survival function `Q(t) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²t²}`.
pub fn kolmogorov_q(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.18 {
        // Jacobi-transformed series, fast for small t.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * t * t)).exp();
        let mut sum = 0.0;
        let mut k = 1u32;
        loop {
            let term = y.powi(((2 * k - 1) * (2 * k - 1)) as i32);
            sum += term;
            if term < 1e-17 || k > 100 {
                break;
            }
            k += 1;
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * sum).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * t * t).exp();
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100u32 {
            let term = x.powi((k * k) as i32);
            sum += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// `Q((√n_e + 0.12 + 0.11/√n_e)·D)`, `n_e = n_a n_b/(n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatError::Empty);
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_unstable_by(f64::total_cmp);
    xb.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = if xa[i] <= xb[j] { xa[i] } else { xb[j] };
        while i < na && xa[i] == v {
            i += 1;
        }
        while j < nb && xb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let p_value = if d == 0.0 {
        1.0
    } else {
        let sq = ne.sqrt();
        kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
    };
    Ok(KsResult {
        statistic: d,
        p_value,
        n_a: na,
        n_b: nb,
    })
}

/// Wilson score interval for a binomial proportion.
pub fn binomial_ci(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    assert!(successes <= trials, "successes exceed trials");
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;
    use proptest::prelude::*;

    /// `⌊x_m U^{−1/α}⌋`, so `P(Z > n) = (x_m/(n+1))^α` for `n+1 ≥ x_m`.
    fn pareto(alpha: f64, x_m: f64, n: usize, seed: u64) -> Vec<u64> {
        let mut s = make_stream(seed, 0);
        (0..n)
            .map(|_| (x_m * s.uniform().powf(-1.0 / alpha)).floor() as u64)
            .collect()
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = binomial_ci(500, 1000, 0.95);
        // Direct evaluation with z = 1.959964.
        let z: f64 = 1.959_963_984_540_054;
        let c = (0.5 + z * z / 2000.0) / (1.0 + z * z / 1000.0);
        let h = z / (1.0 + z * z / 1000.0) * (0.25 / 1000.0 + z * z / 4e6).sqrt();
        assert!((lo - (c - h)).abs() < 1e-12 && (hi - (c + h)).abs() < 1e-12);
        assert!((lo - 0.469).abs() < 5e-4 && (hi - 0.531).abs() < 5e-4);
        assert_eq!(binomial_ci(0, 40, 0.95).0, 0.0);
        assert_eq!(binomial_ci(40, 40, 0.95).1, 1.0);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let mut s = make_stream(1, 0);
        let a: Vec<f64> = (0..10_000).map(|_| s.uniform()).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let b: Vec<f64> = (0..10_000).map(|_| s.uniform() + 0.5).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value < 1e-6);
    }

    #[test]
    fn ks_known_statistic_with_ties() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [2.0, 3.0, 3.0, 4.0];
        // F_a jumps to 1/4, 3/4, 1 at 1, 2, 3; F_b to 1/4, 3/4, 1 at 2, 3, 4.
        let r = ks_two_sample(&a, &b).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_q_values() {
        // Both series agree where they overlap.
        let direct = |t: f64| {
            2.0 * (1..200)
                .map(|k: i32| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * t * t).exp())
                .sum::<f64>()
        };
        for &t in &[0.6, 0.9, 1.0, 1.17, 1.19, 1.5, 2.0] {
            assert!((kolmogorov_q(t) - direct(t)).abs() < 1e-12, "{t}");
        }
        // Q(1.3581) ≈ 0.05, the classical 5% critical value.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn pareto_slope_is_recovered() {
        let z = pareto(2.4, 100.0, 1_000_000, 3);
        let c = vec![false; z.len()];
        let fit = tail_fit(&z, &c, 100, 10_000).unwrap();
        assert!((fit.slope + 2.4).abs() < 0.1, "{fit:?}");
        assert!(fit.slope_se > 0.0);
    }

    #[test]
    fn fit_calibration_over_repetitions() {
        let mut covered = 0;
        for rep in 0..100 {
            let z = pareto(2.4, 100.0, 100_000, 100 + rep);
            let c = vec![false; z.len()];
            let fit = tail_fit(&z, &c, 100, 10_000).unwrap();
            // Exact slope of ln((100/(n+1))^2.4) on the grid.
            let grid: Vec<f64> = log_grid(100, 10_000)
                .into_iter()
                .filter(|&n| z.iter().filter(|&&v| v > n).count() >= MIN_POINT_COUNT)
                .map(|n| n as f64)
                .collect();
            let xs: Vec<f64> = grid.iter().map(|n| n.ln()).collect();
            let ys: Vec<f64> = grid.iter().map(|n| -2.4 * (n + 1.0).ln()).collect();
            let xb = xs.iter().sum::<f64>() / xs.len() as f64;
            let yb = ys.iter().sum::<f64>() / ys.len() as f64;
            let truth = xs.iter().zip(&ys).map(|(x, y)| (x - xb) * (y - yb)).sum::<f64>()
                / xs.iter().map(|x| (x - xb).powi(2)).sum::<f64>();
            if (fit.slope - truth).abs() <= 2.0 * fit.slope_se {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn degenerate_samples_refused() {
        let z = vec![7u64; 10_000];
        let c = vec![false; z.len()];
        assert!(matches!(
            tail_fit(&z, &c, 10, 100),
            Err(StatError::InsufficientTail { .. })
        ));
        assert!(matches!(tail_fit(&z, &c, 10, 10), Err(StatError::BadRange(..))));
    }

    #[test]
    fn censoring_refused_when_dominant() {
        let mut z = pareto(1.0, 10.0, 20_000, 4);
        let mut c = vec![false; z.len()];
        // P(Z > 100) ≈ 0.1, so about 2000 tail samples; censor 500 more.
        for i in 0..500 {
            z[i] = 5;
            c[i] = true;
        }
        assert!(matches!(
            tail_fit(&z, &c, 100, 1000),
            Err(StatError::CensorDominated { .. })
        ));
    }

    #[test]
    fn trend_values() {
        assert_eq!(critical_trend(&[1, 2], &[false, false], &[]).unwrap(), Vec::<f64>::new());
        let z: Vec<u64> = (1..=1000).collect();
        let c = vec![false; z.len()];
        let v = critical_trend(&z, &c, &[100]).unwrap();
        let expected = 100.0 * 100f64.ln().powi(2) * 0.9;
        assert!((v[0] - expected).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn ks_is_symmetric(a in proptest::collection::vec(0u8..20, 1..60),
                           b in proptest::collection::vec(0u8..20, 1..60)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r1 = ks_two_sample(&a, &b).unwrap();
            let r2 = ks_two_sample(&b, &a).unwrap();
            prop_assert_eq!(r1.statistic, r2.statistic);
            prop_assert_eq!(r1.p_value, r2.p_value);
        }

        #[test]
        fn trend_ignores_sample_order(mut z in proptest::collection::vec(0u64..5000, 200..400),
                                       seed in 0u64..1000) {
            let c = vec![false; z.len()];
            let before = critical_trend(&z, &c, &[20, 40]);
            let mut s = make_stream(seed, 0);
            for i in (1..z.len()).rev() {
                let j = (s.uniform() * (i + 1) as f64) as usize;
                z.swap(i, j);
            }
            prop_assert_eq!(before, critical_trend(&z, &c, &[20, 40]));
        }
    }
}
