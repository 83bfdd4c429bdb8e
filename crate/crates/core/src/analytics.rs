//! Closed-form constants of the chase-escape branching random walk and of
//! the birth-and-assassination walk.
//!
//! The displacement point process of the chase-escape walk is
//! `Σ_{i≤U} δ(E − G_i)` with `E ~ Exp(1)` shared by siblings, `G_i ~ Exp(λ)`
//! and `U ~ ν` of mean `d`. Its log-Laplace transform is
//! `ψ(t) = ln d + ln λ − ln(1 − t) − ln(λ + t)` on `(−λ, 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::law::{LawError, OffspringLaw, TimerLaw};

/// Tolerance used when classifying `λ` against `λ_c`.
pub const REGIME_TOLERANCE: f64 = 1e-12;
/// Tolerance used when classifying `min λφ(u)/u` against 1.
pub const BA_REGIME_TOLERANCE: f64 = 1e-9;

const RHO_STAR_TOLERANCE: f64 = 1e-12;
const GOLDEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("offspring mean must exceed 1, got {0}")]
    SubcriticalTree(f64),
    #[error("t = {t} is outside the domain ({lower}, 1)")]
    Domain { t: f64, lower: f64 },
    #[error("operation requires a critical or subcritical regime, got {0:?}")]
    Regime(Regime),
    #[error("boundary sums need an integer offspring mean, got {0}")]
    NonIntegerMean(f64),
    #[error("boundary sums need a deterministic d-ary tree with d >= 2")]
    NotRegularTree,
    #[error("boundary generation list is empty or contains 0")]
    BadBoundary,
    #[error("x must be finite and nonnegative, got {0}")]
    NegativeStart(f64),
    #[error("n must be positive")]
    ZeroGeneration,
    #[error("timer mgf is not finite anywhere on (0, {upper})")]
    UnboundedMgf { upper: f64 },
    #[error(transparent)]
    Law(#[from] LawError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaRegime {
    Stable,
    Critical,
    Unstable,
}

/// Infection rate together with the offspring law of the tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub offspring: OffspringLaw,
}

impl ModelParams {
    pub fn new(lambda: f64, offspring: OffspringLaw) -> Result<Self, AnalyticsError> {
        let params = Self { lambda, offspring };
        params.validate()?;
        Ok(params)
    }

    pub fn d_ary(lambda: f64, d: u32) -> Result<Self, AnalyticsError> {
        Self::new(lambda, OffspringLaw::d_ary(d)?)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(AnalyticsError::NonPositiveLambda(self.lambda));
        }
        let d = self.d();
        if !(d > 1.0 && d.is_finite()) {
            return Err(AnalyticsError::SubcriticalTree(d));
        }
        Ok(())
    }

    pub fn d(&self) -> f64 {
        self.offspring.mean()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub lambda: f64,
    pub d: f64,
    pub lambda_c: f64,
    pub rho_star: f64,
    pub delta: f64,
    pub rho_minus: Option<f64>,
    pub rho_plus: Option<f64>,
    pub regime: Regime,
    /// `ρ₊/ρ₋`; only defined below criticality.
    pub tail_exponent: Option<f64>,
}

/// `λ_c = 2d − 1 − 2√(d(d−1))`.
pub fn lambda_c(d: f64) -> f64 {
    2.0 * d - 1.0 - 2.0 * (d * (d - 1.0)).sqrt()
}

/// `Δ = λ² − 2λ(2d−1) + 1`.
pub fn discriminant(lambda: f64, d: f64) -> f64 {
    lambda * lambda - 2.0 * lambda * (2.0 * d - 1.0) + 1.0
}

pub fn classify(lambda: f64, d: f64) -> Regime {
    let lc = lambda_c(d);
    if (lambda - lc).abs() <= REGIME_TOLERANCE {
        Regime::Critical
    } else if lambda < lc {
        Regime::Subcritical
    } else {
        Regime::Supercritical
    }
}

#[inline]
fn psi_raw(t: f64, lambda: f64, d: f64) -> f64 {
    d.ln() + lambda.ln() - (1.0 - t).ln() - (lambda + t).ln()
}

#[inline]
fn psi_prime_raw(t: f64, lambda: f64) -> f64 {
    1.0 / (1.0 - t) - 1.0 / (lambda + t)
}

pub fn psi(t: f64, params: &ModelParams) -> Result<f64, AnalyticsError> {
    params.validate()?;
    if !(t > -params.lambda && t < 1.0) {
        return Err(AnalyticsError::Domain {
            t,
            lower: -params.lambda,
        });
    }
    Ok(psi_raw(t, params.lambda, params.d()))
}

pub fn psi_prime(t: f64, params: &ModelParams) -> Result<f64, AnalyticsError> {
    params.validate()?;
    if !(t > -params.lambda && t < 1.0) {
        return Err(AnalyticsError::Domain {
            t,
            lower: -params.lambda,
        });
    }
    Ok(psi_prime_raw(t, params.lambda))
}

/// Minimiser of `ψ(t)/t` on (0, 1).
///
/// The derivative of `ψ(t)/t` has the sign of `g(t) = tψ'(t) − ψ(t)`, which
/// is increasing (ψ is convex), negative near 0 (`g(0⁺) = −ln d`) and
/// positive near 1, so bisection on `g` finds the unique root.
fn rho_star(lambda: f64, d: f64) -> f64 {
    let g = |t: f64| t * psi_prime_raw(t, lambda) - psi_raw(t, lambda, d);
    let mut lo = 1e-9f64.max(-lambda + 1e-9);
    let mut hi = 1.0 - 1e-9;
    while hi - lo > RHO_STAR_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Newton polish: when λ is tiny, g is steep near the root and the
    // bracket width alone leaves g far from 0.
    let g_prime = |t: f64| t * (1.0 / (1.0 - t).powi(2) + 1.0 / (lambda + t).powi(2));
    let mut t = 0.5 * (lo + hi);
    for _ in 0..4 {
        let next = t - g(t) / g_prime(t);
        if !(next >= lo && next <= hi) {
            break;
        }
        t = next;
    }
    t
}

pub fn spectral(params: &ModelParams) -> Result<SpectralData, AnalyticsError> {
    params.validate()?;
    let lambda = params.lambda;
    let d = params.d();
    let lc = lambda_c(d);
    let regime = classify(lambda, d);
    let delta = discriminant(lambda, d);
    let rho_star = rho_star(lambda, d);
    let (rho_minus, rho_plus, tail_exponent) = match regime {
        Regime::Subcritical => {
            let sq = delta.max(0.0).sqrt();
            let rp = 0.5 * (1.0 - lambda + sq);
            // ρ₋ from the product ρ₊ρ₋ = λ(d−1); the difference form cancels.
            let rm = lambda * (d - 1.0) / rp;
            (Some(rm), Some(rp), Some(rp / rm))
        }
        Regime::Critical => {
            let r = 0.5 * (1.0 - lambda);
            (Some(r), Some(r), Some(1.0))
        }
        Regime::Supercritical => (None, None, None),
    };
    Ok(SpectralData {
        lambda,
        d,
        lambda_c: lc,
        rho_star,
        delta,
        rho_minus,
        rho_plus,
        regime,
        tail_exponent,
    })
}

/// `(1 − λ + √Δ)² / (4(d−1)λ)`, the subcritical tail exponent written
/// without the roots.
pub fn tail_exponent_closed_form(lambda: f64, d: f64) -> f64 {
    let sq = discriminant(lambda, d).max(0.0).sqrt();
    (1.0 - lambda + sq).powi(2) / (4.0 * (d - 1.0) * lambda)
}

/// The tilting parameter of the auxiliary one-dimensional walk:
/// `ρ⋆ = (1−λ)/2` at criticality and `ρ₊` below it.
pub fn tilt(spec: &SpectralData) -> Result<f64, AnalyticsError> {
    match spec.regime {
        Regime::Critical => Ok(spec.rho_minus.expect("critical root")),
        Regime::Subcritical => Ok(spec.rho_plus.expect("subcritical roots")),
        r => Err(AnalyticsError::Regime(r)),
    }
}

/// Renewal function of the tilted walk, in closed form.
pub fn renewal_function(x: f64, params: &ModelParams) -> Result<f64, AnalyticsError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(AnalyticsError::NegativeStart(x));
    }
    let spec = spectral(params)?;
    let lambda = params.lambda;
    match spec.regime {
        Regime::Critical => Ok(1.0 + (1.0 + lambda) * x / 2.0),
        Regime::Subcritical => {
            let rp = spec.rho_plus.unwrap();
            let kappa = 2.0 * rp + lambda - 1.0;
            Ok((rp + lambda) / kappa + (rp - 1.0) / kappa * (-kappa * x).exp())
        }
        r => Err(AnalyticsError::Regime(r)),
    }
}

/// Two-sided exponential step law of the tilted walk: mass `c/up_rate` on
/// the positive side with `Exp(up_rate)` magnitude, the rest on the negative
/// side with `Exp(down_rate)` magnitude, where `c = λd/(λ+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLaw {
    pub prefactor: f64,
    pub up_rate: f64,
    pub down_rate: f64,
}

impl StepLaw {
    pub fn density(&self, u: f64) -> f64 {
        if u >= 0.0 {
            self.prefactor * (-self.up_rate * u).exp()
        } else {
            self.prefactor * (self.down_rate * u).exp()
        }
    }

    pub fn p_up(&self) -> f64 {
        self.prefactor / self.up_rate
    }

    pub fn total_mass(&self) -> f64 {
        self.prefactor / self.up_rate + self.prefactor / self.down_rate
    }

    /// Rate `r ≥ 0` with `E[e^{−rX}] = 1`: the exponential decay rate of
    /// the probability of ever going below a level far beneath the start.
    pub fn ruin_decay_rate(&self) -> f64 {
        let p_up = self.p_up();
        (self.down_rate * p_up - self.up_rate * (1.0 - p_up)).max(0.0)
    }
}

pub fn step_law(params: &ModelParams) -> Result<StepLaw, AnalyticsError> {
    let spec = spectral(params)?;
    let rho = tilt(&spec)?;
    let lambda = params.lambda;
    Ok(StepLaw {
        prefactor: lambda * params.d() / (lambda + 1.0),
        up_rate: 1.0 - rho,
        down_rate: lambda + rho,
    })
}

/// Density of one step of the tilted walk at `u`.
pub fn tilted_step_density(u: f64, params: &ModelParams) -> Result<f64, AnalyticsError> {
    Ok(step_law(params)?.density(u))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailConstants {
    /// `(1+√(d/(d−1))) Σ_{u∈∂A} |u| / (d (d−√(d(d−1)))^{|u|−1})`.
    pub critical_prefactor: f64,
    /// Subcritical prefactor in units of the unknown constant `C₁`;
    /// `None` outside the subcritical regime.
    pub subcritical_prefactor_over_c1: Option<f64>,
    /// Power of `n` in the tail: `ρ₊/ρ₋` below criticality, 1 at criticality
    /// (where the tail also carries a `1/ln² n` factor).
    pub exponent: f64,
}

/// Tail prefactors for the process started from a finite connected set `A`,
/// given the generations of the vertices of its outer boundary `∂A`.
pub fn tail_constants(
    params: &ModelParams,
    boundary_generations: &[u32],
) -> Result<TailConstants, AnalyticsError> {
    params.validate()?;
    let d_mean = params.d();
    if d_mean.fract() != 0.0 {
        return Err(AnalyticsError::NonIntegerMean(d_mean));
    }
    match params.offspring.deterministic() {
        Some(d) if d >= 2 => {}
        _ => return Err(AnalyticsError::NotRegularTree),
    }
    if boundary_generations.is_empty() || boundary_generations.contains(&0) {
        return Err(AnalyticsError::BadBoundary);
    }
    let spec = spectral(params)?;
    if spec.regime == Regime::Supercritical {
        return Err(AnalyticsError::Regime(spec.regime));
    }
    let d = d_mean;
    let base = d - (d * (d - 1.0)).sqrt();
    let boundary_sum: f64 = boundary_generations
        .iter()
        .map(|&k| k as f64 / (d * base.powi(k as i32 - 1)))
        .sum();
    let critical_prefactor = (1.0 + (d / (d - 1.0)).sqrt()) * boundary_sum;

    let (subcritical, exponent) = match spec.regime {
        Regime::Subcritical => {
            let lambda = params.lambda;
            let rm = spec.rho_minus.unwrap();
            let rp = spec.rho_plus.unwrap();
            let sum: f64 = boundary_generations
                .iter()
                .map(|&k| (rm + lambda).powi(-(k as i32)) - (rp + lambda).powi(-(k as i32)))
                .sum();
            (
                Some(lambda * sum / spec.delta.sqrt()),
                spec.tail_exponent.unwrap(),
            )
        }
        _ => (None, 1.0),
    };
    Ok(TailConstants {
        critical_prefactor,
        subcritical_prefactor_over_c1: subcritical,
        exponent,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureRates {
    /// `γ = 4λ/(1+λ)²`.
    pub gamma: f64,
    /// `(γd)^n n^{−3/2}`, the subcritical rate up to an unknown constant.
    pub subcritical_rate: f64,
    /// `−(3(1−1/d)π²)^{1/3} n^{1/3}`, the critical log-rate.
    pub critical_log_rate: f64,
}

/// Conjectured decay rates of `P(Z_n > 0)`; exploratory only.
pub fn conjecture_rates(params: &ModelParams, n: u64) -> Result<ConjectureRates, AnalyticsError> {
    params.validate()?;
    if n == 0 {
        return Err(AnalyticsError::ZeroGeneration);
    }
    let regime = classify(params.lambda, params.d());
    if regime == Regime::Supercritical {
        return Err(AnalyticsError::Regime(regime));
    }
    let d = params.d();
    let lambda = params.lambda;
    let n = n as f64;
    let gamma = 4.0 * lambda / (1.0 + lambda).powi(2);
    Ok(ConjectureRates {
        gamma,
        subcritical_rate: (gamma * d).powf(n) * n.powf(-1.5),
        critical_log_rate: -(3.0 * (1.0 - 1.0 / d) * std::f64::consts::PI.powi(2)).cbrt()
            * n.cbrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaSpectralData {
    pub lambda: f64,
    pub u_star: f64,
    /// `min_{u>0} λφ(u)/u`.
    pub min_value: f64,
    pub regime: BaRegime,
    pub rho_tilde_minus: Option<f64>,
    pub rho_tilde_plus: Option<f64>,
    /// `ρ̃₊/ρ̃₋`, the supremum of finite moments of the progeny (stable case).
    pub moment_exponent: Option<f64>,
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimises `λφ(u)/u` over `(0, upper)` for a user-supplied mgf `φ`.
///
/// `upper` may be infinite, in which case the search window is grown by
/// doubling until the (convex) objective starts increasing.
pub fn ba_min_ratio<F: Fn(f64) -> f64>(
    lambda: f64,
    mgf: F,
    upper: f64,
) -> Result<(f64, f64), AnalyticsError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(AnalyticsError::NonPositiveLambda(lambda));
    }
    let objective = |u: f64| {
        let v = lambda * mgf(u) / u;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let hi = if upper.is_finite() {
        upper * (1.0 - 1e-12)
    } else {
        let mut u = 1.0;
        let mut steps = 0;
        while objective(2.0 * u) < objective(u) && steps < 200 {
            u *= 2.0;
            steps += 1;
        }
        4.0 * u
    };
    let lo = hi * 1e-12;
    let probe_finite = (1..64).any(|i| objective(lo + (hi - lo) * i as f64 / 64.0).is_finite());
    if !probe_finite {
        return Err(AnalyticsError::UnboundedMgf { upper });
    }
    let u_star = golden_section(objective, lo, hi, GOLDEN_TOLERANCE);
    Ok((u_star, objective(u_star)))
}

pub fn ba_spectral(lambda: f64, timer: &TimerLaw) -> Result<BaSpectralData, AnalyticsError> {
    timer.validate()?;
    let (u_star, min_value) = ba_min_ratio(lambda, |u| timer.mgf(u), timer.mgf_domain_upper())?;
    let regime = if (min_value - 1.0).abs() <= BA_REGIME_TOLERANCE {
        BaRegime::Critical
    } else if min_value < 1.0 {
        BaRegime::Stable
    } else {
        BaRegime::Unstable
    };
    let (mut rho_minus, mut rho_plus, mut moment_exponent) = (None, None, None);
    if let TimerLaw::Exponential { rate } = *timer {
        // λφ(t)/t = 1 with φ(t) = μ/(μ−t) gives t² − μt + λμ = 0.
        let disc = 1.0 - 4.0 * lambda / rate;
        if regime != BaRegime::Unstable {
            let sq = disc.max(0.0).sqrt();
            let rm = rate * (1.0 - sq) / 2.0;
            let rp = rate * (1.0 + sq) / 2.0;
            rho_minus = Some(rm);
            rho_plus = Some(rp);
            if regime == BaRegime::Stable {
                moment_exponent = Some((1.0 + sq) / (1.0 - sq));
            }
        }
    }
    Ok(BaSpectralData {
        lambda,
        u_star,
        min_value,
        regime,
        rho_tilde_minus: rho_minus,
        rho_tilde_plus: rho_plus,
        moment_exponent,
    })
}

/// `ψ̃(t) = ln(λφ(t)/t)`, the log-Laplace transform of the
/// birth-and-assassination walk.
pub fn ba_psi(t: f64, lambda: f64, timer: &TimerLaw) -> f64 {
    (lambda * timer.mgf(t) / t).ln()
}
