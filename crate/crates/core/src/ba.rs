//! Direct simulation of the birth-and-assassination process.
//!
//! The root is born at time 0 and is at risk from time 0. An individual
//! born at `b` whose parent is removed at `t_p` is removed at
//! `T = t_p + K` and gives birth at the points of a rate-λ Poisson process
//! on `[b, T)`. Individuals are processed breadth-first; each one draws
//! `K`, then its inter-birth gaps, including the gap that ends past `T`.

use serde::{Deserialize, Serialize};

use crate::caps::{CapKind, Caps};
use crate::law::TimerLaw;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaIndividual {
    pub parent: Option<u32>,
    pub generation: u32,
    pub birth_time: f64,
    /// Removal time of the parent; the timer runs from here.
    pub at_risk_from: f64,
    /// `at_risk_from + K`; NaN if the individual was never processed.
    pub removal_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaOutcome {
    /// Number of individuals ever born, the root included.
    pub n: u64,
    pub stable: bool,
    pub censored: Option<CapKind>,
    pub last_removal_time: Option<f64>,
    pub master_seed: u64,
    pub stream_index: u64,
}

/// Reusable per-worker state.
#[derive(Clone)]
pub struct BaSimulator {
    lambda: f64,
    timer: TimerLaw,
    caps: Caps,
    people: Vec<BaIndividual>,
    births: Vec<f64>,
}

impl BaSimulator {
    pub fn new(lambda: f64, timer: TimerLaw, caps: Caps) -> Self {
        assert!(lambda > 0.0 && lambda.is_finite(), "lambda must be positive");
        Self {
            lambda,
            timer,
            caps,
            people: Vec::new(),
            births: Vec::new(),
        }
    }

    /// Individuals of the last run, in order of birth generation.
    pub fn individuals(&self) -> &[BaIndividual] {
        &self.people
    }

    pub fn run(&mut self, stream: &mut RngStream) -> BaOutcome {
        self.people.clear();
        self.people.push(BaIndividual {
            parent: None,
            generation: 0,
            birth_time: 0.0,
            at_risk_from: 0.0,
            removal_time: f64::NAN,
        });
        let mut censored = None;
        let mut last_removal = 0.0f64;
        let mut i = 0;
        while i < self.people.len() {
            let me = self.people[i];
            if me.generation >= self.caps.max_generation {
                censored.get_or_insert(CapKind::Generation);
                i += 1;
                continue;
            }
            let removal = me.at_risk_from + self.timer.sample(stream);
            debug_assert!(me.birth_time <= me.at_risk_from);
            debug_assert!(me.parent.is_none_or(|p| removal > self.people[p as usize].removal_time));
            self.people[i].removal_time = removal;
            last_removal = last_removal.max(removal);

            self.births.clear();
            let mut t = me.birth_time;
            loop {
                t += stream.std_exp() / self.lambda;
                if t >= removal {
                    break;
                }
                self.births.push(t);
            }
            if self.people.len() as u64 + self.births.len() as u64 > self.caps.max_nodes {
                censored = Some(CapKind::Nodes);
                break;
            }
            for &b in &self.births {
                self.people.push(BaIndividual {
                    parent: Some(i as u32),
                    generation: me.generation + 1,
                    birth_time: b,
                    at_risk_from: removal,
                    removal_time: f64::NAN,
                });
            }
            i += 1;
        }
        BaOutcome {
            n: self.people.len() as u64,
            stable: censored.is_none(),
            censored,
            last_removal_time: censored.is_none().then_some(last_removal),
            master_seed: stream.master_seed(),
            stream_index: stream.stream_index(),
        }
    }
}

pub fn simulate_ba(lambda: f64, timer: &TimerLaw, caps: Caps, stream: &mut RngStream) -> BaOutcome {
    BaSimulator::new(lambda, timer.clone(), caps).run(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn exp1() -> TimerLaw {
        TimerLaw::exponential(1.0).unwrap()
    }

    #[test]
    fn root_removed_before_any_birth() {
        // Timer 1e-9 leaves essentially no room for a birth.
        let timer = TimerLaw::Table {
            values: vec![1e-9],
            probs: vec![1.0],
        };
        let out = simulate_ba(0.25, &timer, Caps::default(), &mut make_stream(0, 0));
        assert_eq!(out.n, 1);
        assert!(out.stable);
        assert_eq!(out.last_removal_time, Some(1e-9));
    }

    #[test]
    fn lone_root_probability() {
        let lambda = 0.25;
        let mut sim = BaSimulator::new(lambda, exp1(), Caps::default());
        let n = 100_000;
        let lone = (0..n).filter(|&r| sim.run(&mut make_stream(13, r)).n == 1).count();
        let p = 1.0 / (1.0 + lambda);
        let phat = lone as f64 / n as f64;
        assert!((phat - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{phat}");
    }

    #[test]
    fn lineage_invariants() {
        let mut sim = BaSimulator::new(0.2, exp1(), Caps::default());
        for r in 0..2000 {
            let out = sim.run(&mut make_stream(14, r));
            assert!(out.n >= 1);
            assert!(out.stable ^ out.censored.is_some());
            for p in sim.individuals() {
                assert!(p.birth_time <= p.at_risk_from);
                if let Some(q) = p.parent {
                    let parent = sim.individuals()[q as usize];
                    assert_eq!(p.at_risk_from, parent.removal_time);
                    assert!(p.birth_time >= parent.birth_time && p.birth_time < parent.removal_time);
                    assert!(p.removal_time > parent.removal_time);
                }
            }
        }
    }

    #[test]
    fn unstable_runs_get_censored() {
        let caps = Caps::default().with_max_generation(200).with_max_nodes(50_000);
        let mut sim = BaSimulator::new(0.4, exp1(), caps);
        let censored = (0..2000)
            .filter(|&r| sim.run(&mut make_stream(15, r)).censored.is_some())
            .count();
        assert!(censored > 0);
    }
}
