//! Offspring laws for the tree and birth-timer laws for the
//! birth-and-assassination process.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

const TABLE_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("d-ary offspring law needs d >= 1, got {0}")]
    ZeroArity(u32),
    #[error("offspring table key {0:?} is not a nonnegative integer")]
    BadTableKey(String),
    #[error("offspring table probability for {key} must be in [0, 1], got {value}")]
    BadProbability { key: String, value: f64 },
    #[error("offspring table probabilities sum to {sum}, expected 1")]
    TableSum { sum: f64 },
    #[error("offspring table is empty")]
    EmptyTable,
    #[error("poisson mean must be positive and finite, got {0}")]
    BadPoissonMean(f64),
    #[error("timer rate must be positive and finite, got {0}")]
    BadTimerRate(f64),
    #[error("timer table values must be positive and finite")]
    BadTimerValue,
    #[error("timer table needs matching, nonempty values and probs")]
    TimerShape,
    #[error("timer table probabilities sum to {sum}, expected 1")]
    TimerSum { sum: f64 },
}

/// Configuration form of an offspring law, as written in manifests:
/// `{"kind":"d-ary","d":2}`, `{"kind":"table","p":{"0":0.25,"3":0.75}}`
/// or `{"kind":"poisson","mean":2.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OffspringSpec {
    #[serde(rename = "d-ary")]
    DAry { d: u32 },
    #[serde(rename = "table")]
    Table { p: BTreeMap<String, f64> },
    #[serde(rename = "poisson")]
    Poisson { mean: f64 },
}

/// A validated offspring distribution ν.
#[derive(Clone, Debug)]
pub enum OffspringLaw {
    DAry(u32),
    Table {
        counts: Vec<u32>,
        cumulative: Vec<f64>,
        probs: Vec<f64>,
    },
    Poisson(f64, Poisson<f64>),
}

impl PartialEq for OffspringLaw {
    fn eq(&self, other: &Self) -> bool {
        self.to_spec() == other.to_spec()
    }
}

impl OffspringLaw {
    pub fn d_ary(d: u32) -> Result<Self, LawError> {
        if d == 0 {
            return Err(LawError::ZeroArity(d));
        }
        Ok(Self::DAry(d))
    }

    /// ν(0) = 1: every node is a leaf.
    pub fn sterile() -> Self {
        Self::Table {
            counts: vec![0],
            cumulative: vec![1.0],
            probs: vec![1.0],
        }
    }

    pub fn table<I: IntoIterator<Item = (u32, f64)>>(entries: I) -> Result<Self, LawError> {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (k, p) in entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(LawError::BadProbability {
                    key: k.to_string(),
                    value: p,
                });
            }
            *merged.entry(k).or_insert(0.0) += p;
        }
        merged.retain(|_, p| *p > 0.0);
        if merged.is_empty() {
            return Err(LawError::EmptyTable);
        }
        let sum: f64 = merged.values().sum();
        if (sum - 1.0).abs() > TABLE_SUM_TOLERANCE {
            return Err(LawError::TableSum { sum });
        }
        let counts: Vec<u32> = merged.keys().copied().collect();
        let probs: Vec<f64> = merged.values().copied().collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self::Table {
            counts,
            cumulative,
            probs,
        })
    }

    pub fn poisson(mean: f64) -> Result<Self, LawError> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(LawError::BadPoissonMean(mean));
        }
        let dist = Poisson::new(mean).map_err(|_| LawError::BadPoissonMean(mean))?;
        Ok(Self::Poisson(mean, dist))
    }

    pub fn from_spec(spec: &OffspringSpec) -> Result<Self, LawError> {
        match spec {
            OffspringSpec::DAry { d } => Self::d_ary(*d),
            OffspringSpec::Poisson { mean } => Self::poisson(*mean),
            OffspringSpec::Table { p } => {
                let mut entries = Vec::with_capacity(p.len());
                for (key, &value) in p {
                    let k: u32 = key
                        .trim()
                        .parse()
                        .map_err(|_| LawError::BadTableKey(key.clone()))?;
                    if !(0.0..=1.0).contains(&value) {
                        return Err(LawError::BadProbability {
                            key: key.clone(),
                            value,
                        });
                    }
                    entries.push((k, value));
                }
                Self::table(entries)
            }
        }
    }

    pub fn to_spec(&self) -> OffspringSpec {
        match self {
            Self::DAry(d) => OffspringSpec::DAry { d: *d },
            Self::Poisson(mean, _) => OffspringSpec::Poisson { mean: *mean },
            Self::Table { counts, probs, .. } => OffspringSpec::Table {
                p: counts
                    .iter()
                    .zip(probs)
                    .map(|(k, p)| (k.to_string(), *p))
                    .collect(),
            },
        }
    }

    /// Mean number of offspring, `d = Σ i ν(i)`.
    pub fn mean(&self) -> f64 {
        match self {
            Self::DAry(d) => *d as f64,
            Self::Poisson(mean, _) => *mean,
            Self::Table { counts, probs, .. } => counts
                .iter()
                .zip(probs)
                .map(|(&k, &p)| k as f64 * p)
                .sum(),
        }
    }

    /// `Some(d)` when ν(d) = 1.
    pub fn deterministic(&self) -> Option<u32> {
        match self {
            Self::DAry(d) => Some(*d),
            Self::Table { counts, .. } if counts.len() == 1 => Some(counts[0]),
            _ => None,
        }
    }

    pub fn max_offspring(&self) -> Option<u32> {
        match self {
            Self::DAry(d) => Some(*d),
            Self::Table { counts, .. } => counts.last().copied(),
            Self::Poisson(..) => None,
        }
    }

    /// Draws one offspring count. A deterministic law consumes no randomness.
    #[inline]
    pub fn sample(&self, stream: &mut RngStream) -> u32 {
        match self {
            Self::DAry(d) => *d,
            Self::Table {
                counts, cumulative, ..
            } => {
                if counts.len() == 1 {
                    return counts[0];
                }
                let u = stream.uniform();
                let idx = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(counts.len() - 1);
                counts[idx]
            }
            Self::Poisson(_, dist) => dist.sample(stream) as u32,
        }
    }
}

impl Serialize for OffspringLaw {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_spec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for OffspringLaw {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let spec = OffspringSpec::deserialize(deserializer)?;
        Self::from_spec(&spec).map_err(serde::de::Error::custom)
    }
}

/// Law of the assassination timer `K` in the birth-and-assassination process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TimerLaw {
    #[serde(rename = "exponential")]
    Exponential { rate: f64 },
    #[serde(rename = "table")]
    Table { values: Vec<f64>, probs: Vec<f64> },
}

impl TimerLaw {
    pub fn exponential(rate: f64) -> Result<Self, LawError> {
        let law = Self::Exponential { rate };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<(), LawError> {
        match self {
            Self::Exponential { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(LawError::BadTimerRate(*rate));
                }
            }
            Self::Table { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(LawError::TimerShape);
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(LawError::BadTimerValue);
                }
                if let Some((i, p)) = probs
                    .iter()
                    .enumerate()
                    .find(|(_, p)| !(0.0..=1.0).contains(*p))
                {
                    return Err(LawError::BadProbability {
                        key: values[i].to_string(),
                        value: *p,
                    });
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > TABLE_SUM_TOLERANCE {
                    return Err(LawError::TimerSum { sum });
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        match self {
            Self::Exponential { rate } => stream.std_exp() / rate,
            Self::Table { values, probs } => {
                if values.len() == 1 {
                    return values[0];
                }
                let u = stream.uniform();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Table { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    /// Moment generating function `φ(u) = E[e^{uK}]`; `+∞` outside its domain.
    pub fn mgf(&self, u: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if u < *rate {
                    rate / (rate - u)
                } else {
                    f64::INFINITY
                }
            }
            Self::Table { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * (u * v).exp())
                .sum(),
        }
    }

    /// Supremum of the domain where the mgf is finite.
    pub fn mgf_domain_upper(&self) -> f64 {
        match self {
            Self::Exponential { rate } => *rate,
            Self::Table { .. } => f64::INFINITY,
        }
    }

    /// Timer with every value multiplied by `c` (used for time-rescaling checks).
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Exponential { rate } => Self::Exponential { rate: rate / c },
            Self::Table { values, probs } => Self::Table {
                values: values.iter().map(|v| v * c).collect(),
                probs: probs.clone(),
            },
        }
    }
}
