//! Direct continuous-time simulation of the chase-escape process.
//!
//! Every parent-child edge carries its own exponential clock: an infection
//! clock of rate λ while the parent is infected and the child susceptible,
//! and a recovery clock of rate 1 once the parent has recovered and the
//! child is infected. Clocks that lose their precondition are dropped
//! lazily when popped.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::caps::CapKind;
use crate::rng::RngStream;
use crate::tree::{validate_initial_set, InitialSet, NodeId, TreeError, TreeStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Susceptible,
    Infected,
    Recovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeOutcome {
    /// Number of vertices ever infected.
    pub z: u64,
    /// Ever-infected vertices per generation.
    pub z_n: Vec<u64>,
    pub extinct: bool,
    pub censored: Option<CapKind>,
    pub extinction_time: Option<f64>,
    pub max_generation: u32,
    pub master_seed: u64,
    pub stream_index: u64,
}

impl CeOutcome {
    pub fn is_censored(&self) -> bool {
        self.censored.is_some()
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Infect,
    Recover,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    node: NodeId,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug)]
struct NodeState {
    status: Status,
    infected_at: f64,
    recovered_at: f64,
}

const FRESH: NodeState = NodeState {
    status: Status::Susceptible,
    infected_at: f64::NAN,
    recovered_at: f64::NAN,
};

/// Reusable per-worker scratch state. The tree is passed to each run.
#[derive(Clone)]
pub struct CeSimulator {
    lambda: f64,
    state: Vec<NodeState>,
    queue: BinaryHeap<Event>,
    seq: u64,
}

impl CeSimulator {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            state: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn status(&self, node: NodeId) -> Status {
        self.state
            .get(node.index())
            .map_or(Status::Susceptible, |s| s.status)
    }

    pub fn infection_time(&self, node: NodeId) -> Option<f64> {
        self.state
            .get(node.index())
            .map(|s| s.infected_at)
            .filter(|t| !t.is_nan())
    }

    pub fn recovery_time(&self, node: NodeId) -> Option<f64> {
        self.state
            .get(node.index())
            .map(|s| s.recovered_at)
            .filter(|t| !t.is_nan())
    }

    /// Clears the tree and runs from the root alone.
    pub fn run_from_root(
        &mut self,
        tree: &mut TreeStore,
        delay: f64,
        stream: &mut RngStream,
    ) -> CeOutcome {
        tree.reset();
        self.run(tree, &InitialSet::root(delay), stream)
            .expect("the root alone is a valid initial set")
    }

    /// Runs on `tree`, whose materialised part must contain `a`.
    pub fn run(
        &mut self,
        tree: &mut TreeStore,
        a: &InitialSet,
        stream: &mut RngStream,
    ) -> Result<CeOutcome, TreeError> {
        validate_initial_set(tree, a)?;
        self.state.clear();
        self.queue.clear();
        self.seq = 0;

        let mut run = Tally::default();
        let mut members = a.nodes.clone();
        members.sort_unstable();
        members.dedup();
        for &u in &members {
            self.slot(u).status = Status::Infected;
            self.slot(u).infected_at = 0.0;
            run.infect(tree.generation(u));
        }
        for &u in &members {
            if self.expand_infected(tree, u, 0.0, stream).is_err() {
                return Ok(self.finish(tree, run, Some(CapKind::Nodes), stream));
            }
        }
        let t0 = a.delay + stream.std_exp();
        self.push(t0, NodeId::ROOT, Kind::Recover);

        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                Kind::Infect => {
                    let parent = tree.parent(ev.node).expect("infection of a non-root");
                    if self.status(parent) != Status::Infected
                        || self.status(ev.node) != Status::Susceptible
                    {
                        continue;
                    }
                    let s = self.slot(ev.node);
                    s.status = Status::Infected;
                    s.infected_at = ev.time;
                    run.infect(tree.generation(ev.node));
                    if self.expand_infected(tree, ev.node, ev.time, stream).is_err() {
                        return Ok(self.finish(tree, run, Some(CapKind::Nodes), stream));
                    }
                }
                Kind::Recover => {
                    debug_assert_eq!(self.status(ev.node), Status::Infected);
                    debug_assert!(tree
                        .parent(ev.node)
                        .is_none_or(|p| self.status(p) == Status::Recovered));
                    let s = self.slot(ev.node);
                    s.status = Status::Recovered;
                    s.recovered_at = ev.time;
                    run.active -= 1;
                    run.last_time = ev.time;
                    for c in tree.known_children(ev.node).iter() {
                        if self.status(c) == Status::Infected {
                            let t = ev.time + stream.std_exp();
                            self.push(t, c, Kind::Recover);
                        }
                    }
                }
            }
            if run.active == 0 {
                break;
            }
        }
        Ok(self.finish(tree, run, None, stream))
    }

    fn slot(&mut self, node: NodeId) -> &mut NodeState {
        let i = node.index();
        if i >= self.state.len() {
            self.state.resize((2 * self.state.len()).max(i + 1), FRESH);
        }
        &mut self.state[i]
    }

    fn push(&mut self, time: f64, node: NodeId, kind: Kind) {
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            node,
            kind,
        });
    }

    /// Materialises the children of a newly infected node and starts their
    /// infection clocks. `Err` means the node cap stopped the run.
    fn expand_infected(
        &mut self,
        tree: &mut TreeStore,
        u: NodeId,
        t: f64,
        stream: &mut RngStream,
    ) -> Result<(), ()> {
        let Some(kids) = tree.children(u, stream) else {
            // A generation-capped node stays childless and the run goes on.
            return if tree.generation(u) >= tree.caps().max_generation {
                Ok(())
            } else {
                Err(())
            };
        };
        for c in kids.iter() {
            let g = stream.std_exp() / self.lambda;
            if self.status(c) == Status::Susceptible {
                self.push(t + g, c, Kind::Infect);
            }
        }
        Ok(())
    }

    fn finish(
        &mut self,
        tree: &TreeStore,
        run: Tally,
        cap: Option<CapKind>,
        stream: &RngStream,
    ) -> CeOutcome {
        let censored = cap.or(tree.censored());
        let extinct = censored.is_none();
        CeOutcome {
            z: run.z_n.iter().sum(),
            max_generation: run.z_n.len().saturating_sub(1) as u32,
            z_n: run.z_n,
            extinct,
            censored,
            extinction_time: extinct.then_some(run.last_time),
            master_seed: stream.master_seed(),
            stream_index: stream.stream_index(),
        }
    }
}

#[derive(Default)]
struct Tally {
    z_n: Vec<u64>,
    active: u64,
    last_time: f64,
}

impl Tally {
    fn infect(&mut self, generation: u32) {
        let g = generation as usize;
        if self.z_n.len() <= g {
            self.z_n.resize(g + 1, 0);
        }
        self.z_n[g] += 1;
        self.active += 1;
    }
}

/// One chase-escape run of `C(T, A, x)` on `tree`, with `x = a.delay`.
pub fn simulate_ce(
    tree: &mut TreeStore,
    a: &InitialSet,
    lambda: f64,
    stream: &mut RngStream,
) -> Result<CeOutcome, TreeError> {
    CeSimulator::new(lambda).run(tree, a, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caps::Caps;
    use crate::law::OffspringLaw;
    use crate::rng::make_stream;

    #[test]
    fn sterile_root() {
        let mut tree = TreeStore::new(OffspringLaw::sterile(), Caps::default());
        let out = simulate_ce(&mut tree, &InitialSet::root(0.0), 0.5, &mut make_stream(0, 0))
            .unwrap();
        assert_eq!(out.z, 1);
        assert_eq!(out.z_n, vec![1]);
        assert!(out.extinct);
        assert!(out.extinction_time.unwrap() > 0.0);
    }

    #[test]
    fn first_step_race() {
        let lambda = 0.15;
        let mut sim = CeSimulator::new(lambda);
        let mut tree = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), Caps::default());
        let n = 100_000;
        let hits = (0..n)
            .filter(|&r| sim.run_from_root(&mut tree, 0.0, &mut make_stream(21, r)).z >= 2)
            .count();
        let p = 2.0 * lambda / (1.0 + 2.0 * lambda);
        let phat = hits as f64 / n as f64;
        assert!((phat - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{phat}");
    }

    #[test]
    fn trajectory_invariants() {
        let mut sim = CeSimulator::new(0.09);
        let mut tree = TreeStore::new(OffspringLaw::d_ary(3).unwrap(), Caps::default());
        for r in 0..2000 {
            let out = sim.run_from_root(&mut tree, 0.3, &mut make_stream(4, r));
            assert!(out.extinct);
            assert_eq!(out.z, out.z_n.iter().sum::<u64>());
            let mut infected = 0;
            for i in 0..tree.len() as u32 {
                let u = NodeId(i);
                let Some(ti) = sim.infection_time(u) else {
                    assert_eq!(sim.status(u), Status::Susceptible);
                    continue;
                };
                infected += 1;
                assert_eq!(sim.status(u), Status::Recovered);
                let tr = sim.recovery_time(u).unwrap();
                assert!(tr > ti);
                if let Some(p) = tree.parent(u) {
                    let pi = sim.infection_time(p).unwrap();
                    let pr = sim.recovery_time(p).unwrap();
                    assert!(ti >= pi && ti <= pr);
                    assert!(tr > pr);
                } else {
                    assert!(tr > 0.3);
                }
            }
            assert_eq!(infected, out.z);
        }
    }

    #[test]
    fn initial_set_and_delay() {
        let law = OffspringLaw::d_ary(2).unwrap();
        let mut sim = CeSimulator::new(0.1);
        let mut tree = TreeStore::new(law, Caps::default());
        let mut s = make_stream(1, 1);
        let child = tree.resolve(&[0], &mut s).unwrap();
        let a = InitialSet {
            nodes: vec![NodeId::ROOT, child],
            delay: 2.0,
        };
        let out = sim.run(&mut tree, &a, &mut s).unwrap();
        assert!(out.z >= 2);
        assert!(out.extinction_time.unwrap() > 2.0);

        let bad = InitialSet {
            nodes: vec![child],
            delay: 0.0,
        };
        assert_eq!(sim.run(&mut tree, &bad, &mut s), Err(TreeError::MissingRoot));
    }

    #[test]
    fn supercritical_runs_get_censored() {
        let caps = Caps::default().with_max_generation(200).with_max_nodes(20_000);
        let mut sim = CeSimulator::new(0.5);
        let mut tree = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), caps);
        let censored = (0..2000)
            .filter(|&r| sim.run_from_root(&mut tree, 0.0, &mut make_stream(3, r)).is_censored())
            .count();
        assert!(censored > 0);
    }

    #[test]
    fn reproducible() {
        let law = OffspringLaw::poisson(2.0).unwrap();
        let run = |r| {
            let mut tree = TreeStore::new(law.clone(), Caps::default());
            CeSimulator::new(0.2).run_from_root(&mut tree, 0.0, &mut make_stream(77, r))
        };
        for r in 0..50 {
            assert_eq!(run(r), run(r));
        }
    }
}
