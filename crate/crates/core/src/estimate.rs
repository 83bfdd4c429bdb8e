//! Monte Carlo drivers. Replicate `r` always uses stream `(seed, r)` and
//! aggregates only hold integer counts, so results do not depend on the
//! number of worker threads.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::ModelParams;
use crate::ba::{BaOutcome, BaSimulator};
use crate::caps::Caps;
use crate::ce::{CeOutcome, CeSimulator};
use crate::law::TimerLaw;
use crate::rng::{make_stream, RngStream};
use crate::stats::binomial_ci;
use crate::tree::{InitialSet, TreeError, TreeStore};

/// Runs `f` for replicates `0..replicates` in parallel, returning results
/// in replicate order. `init` builds per-worker scratch state.
pub fn run_replicates<S, T, I, F>(master_seed: u64, replicates: u64, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &mut RngStream) -> T + Sync + Send,
{
    (0..replicates)
        .into_par_iter()
        .map_init(init, |state, r| f(state, &mut make_stream(master_seed, r)))
        .collect()
}

/// Initial infected set given as root paths (child indices), plus delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    #[serde(default = "root_only")]
    pub paths: Vec<Vec<u32>>,
    #[serde(default)]
    pub delay: f64,
}

fn root_only() -> Vec<Vec<u32>> {
    vec![Vec::new()]
}

impl InitialSpec {
    pub fn root(delay: f64) -> Self {
        Self {
            paths: root_only(),
            delay,
        }
    }

    /// Resolves the paths on `tree`, expanding it as needed.
    pub fn resolve(&self, tree: &mut TreeStore, stream: &mut RngStream) -> Result<InitialSet, TreeError> {
        let nodes = self
            .paths
            .iter()
            .map(|p| tree.resolve(p, stream))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(InitialSet {
            nodes,
            delay: self.delay,
        })
    }
}

/// Histogram of a count statistic, split by censoring.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub uncensored: BTreeMap<u64, u64>,
    pub censored: BTreeMap<u64, u64>,
}

impl CountHistogram {
    pub fn add(&mut self, value: u64, censored: bool) {
        let h = if censored {
            &mut self.censored
        } else {
            &mut self.uncensored
        };
        *h.entry(value).or_default() += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (k, v) in &other.uncensored {
            *self.uncensored.entry(*k).or_default() += v;
        }
        for (k, v) in &other.censored {
            *self.censored.entry(*k).or_default() += v;
        }
    }

    pub fn total(&self) -> u64 {
        self.uncensored.values().sum::<u64>() + self.censored.values().sum::<u64>()
    }

    pub fn censored_count(&self) -> u64 {
        self.censored.values().sum()
    }

    /// `P̂(X > n)`, counting censored runs as exceeding every level.
    pub fn survival(&self, n: u64) -> f64 {
        let total = self.total();
        if total == 0 {
            return f64::NAN;
        }
        let above: u64 = self.uncensored.range(n + 1..).map(|(_, v)| v).sum();
        (above + self.censored_count()) as f64 / total as f64
    }

    /// Mean over uncensored runs.
    pub fn uncensored_mean(&self) -> f64 {
        let n: u64 = self.uncensored.values().sum();
        let s: f64 = self.uncensored.iter().map(|(k, v)| *k as f64 * *v as f64).sum();
        s / n as f64
    }

    /// Expands back into per-sample values and censor flags.
    pub fn samples(&self) -> (Vec<u64>, Vec<bool>) {
        let mut values = Vec::new();
        let mut flags = Vec::new();
        for (h, flag) in [(&self.uncensored, false), (&self.censored, true)] {
            for (&k, &v) in h {
                values.extend(std::iter::repeat_n(k, v as usize));
                flags.extend(std::iter::repeat_n(flag, v as usize));
            }
        }
        (values, flags)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CeAggregate {
    pub replicates: u64,
    pub extinct: u64,
    pub censored: u64,
    pub z: CountHistogram,
    /// `Σ Z_n` over replicates, per generation.
    pub z_n_totals: Vec<u64>,
}

impl CeAggregate {
    pub fn add(&mut self, o: &CeOutcome) {
        self.replicates += 1;
        self.extinct += o.extinct as u64;
        self.censored += o.is_censored() as u64;
        self.z.add(o.z, o.is_censored());
        if self.z_n_totals.len() < o.z_n.len() {
            self.z_n_totals.resize(o.z_n.len(), 0);
        }
        for (t, z) in self.z_n_totals.iter_mut().zip(&o.z_n) {
            *t += z;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.replicates += other.replicates;
        self.extinct += other.extinct;
        self.censored += other.censored;
        self.z.merge(&other.z);
        if self.z_n_totals.len() < other.z_n_totals.len() {
            self.z_n_totals.resize(other.z_n_totals.len(), 0);
        }
        for (t, z) in self.z_n_totals.iter_mut().zip(&other.z_n_totals) {
            *t += z;
        }
        self
    }

    pub fn extinction_probability(&self) -> f64 {
        self.extinct as f64 / self.replicates as f64
    }

    pub fn extinction_ci(&self, level: f64) -> (f64, f64) {
        binomial_ci(self.extinct, self.replicates, level)
    }

    pub fn mean_z_n(&self) -> Vec<f64> {
        self.z_n_totals
            .iter()
            .map(|&t| t as f64 / self.replicates as f64)
            .collect()
    }
}

/// Runs `replicates` chase-escape replicates from the initial set `a`.
pub fn estimate_ce(
    params: &ModelParams,
    a: &InitialSpec,
    replicates: u64,
    caps: Caps,
    master_seed: u64,
) -> Result<CeAggregate, TreeError> {
    let lambda = params.lambda;
    let law = params.offspring.clone();
    (0..replicates)
        .into_par_iter()
        .try_fold_with(
            (CeAggregate::default(), None::<(CeSimulator, TreeStore)>),
            |(mut agg, scratch), r| {
                let (mut sim, mut tree) =
                    scratch.unwrap_or_else(|| (CeSimulator::new(lambda), TreeStore::new(law.clone(), caps)));
                let mut stream = make_stream(master_seed, r);
                tree.reset();
                let set = a.resolve(&mut tree, &mut stream)?;
                let o = sim.run(&mut tree, &set, &mut stream)?;
                agg.add(&o);
                Ok((agg, Some((sim, tree))))
            },
        )
        .map(|res| res.map(|(agg, _)| agg))
        .try_reduce(CeAggregate::default, |x, y| Ok(x.merge(y)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaAggregate {
    pub replicates: u64,
    pub stable: u64,
    pub censored: u64,
    pub n: CountHistogram,
}

impl BaAggregate {
    pub fn add(&mut self, o: &BaOutcome) {
        self.replicates += 1;
        self.stable += o.stable as u64;
        self.censored += o.censored.is_some() as u64;
        self.n.add(o.n, o.censored.is_some());
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.replicates += other.replicates;
        self.stable += other.stable;
        self.censored += other.censored;
        self.n.merge(&other.n);
        self
    }

    pub fn stable_fraction(&self) -> f64 {
        self.stable as f64 / self.replicates as f64
    }

    pub fn stable_ci(&self, level: f64) -> (f64, f64) {
        binomial_ci(self.stable, self.replicates, level)
    }
}

pub fn estimate_ba(
    lambda: f64,
    timer: &TimerLaw,
    replicates: u64,
    caps: Caps,
    master_seed: u64,
) -> BaAggregate {
    (0..replicates)
        .into_par_iter()
        .fold_with(
            (BaAggregate::default(), None::<BaSimulator>),
            |(mut agg, sim), r| {
                let mut sim = sim.unwrap_or_else(|| BaSimulator::new(lambda, timer.clone(), caps));
                agg.add(&sim.run(&mut make_stream(master_seed, r)));
                (agg, Some(sim))
            },
        )
        .map(|(agg, _)| agg)
        .reduce(BaAggregate::default, BaAggregate::merge)
}
