//! Killed branching random walks and the constructions built on them.
//!
//! [`simulate_kbrw`] runs a walk killed below 0 for any [`PointProcess`].
//! [`coupling_realization`] builds the chase-escape process from two
//! independent branching random walks of infection and recovery times on a
//! lazily grown tree; with the same stream it reproduces the killed walk of
//! the chase-escape point process node for node.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analytics::{step_law, AnalyticsError, ModelParams, StepLaw};
use crate::caps::{CapKind, Caps};
use crate::ce::Status;
use crate::kernel::PointProcess;
use crate::rng::RngStream;
use crate::tree::{NodeId, TreeStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbrwRealization {
    pub start: f64,
    /// Total number of individuals never killed.
    pub z: u64,
    /// Surviving individuals per generation; `z_n[0] = 1`.
    pub z_n: Vec<u64>,
    pub censored: Option<CapKind>,
}

impl KbrwRealization {
    pub fn is_censored(&self) -> bool {
        self.censored.is_some()
    }
}

/// One individual of a traced walk. Killed individuals are kept with
/// `alive = false`; their descendants are never generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbrwNode {
    pub parent: Option<u32>,
    pub generation: u32,
    pub position: f64,
    pub alive: bool,
}

/// Killed branching random walk started at `x`, expanded breadth-first.
///
/// The node cap bounds every individual generated, killed ones included,
/// matching the count of materialised tree nodes in the coupling.
pub fn simulate_kbrw<P: PointProcess>(
    pp: &P,
    x: f64,
    caps: Caps,
    stream: &mut RngStream,
) -> KbrwRealization {
    run_kbrw(pp, x, caps, stream, None)
}

/// [`simulate_kbrw`] that also returns every generated individual.
pub fn simulate_kbrw_traced<P: PointProcess>(
    pp: &P,
    x: f64,
    caps: Caps,
    stream: &mut RngStream,
) -> (KbrwRealization, Vec<KbrwNode>) {
    let mut trace = Vec::new();
    let r = run_kbrw(pp, x, caps, stream, Some(&mut trace));
    (r, trace)
}

fn run_kbrw<P: PointProcess>(
    pp: &P,
    x: f64,
    caps: Caps,
    stream: &mut RngStream,
    mut trace: Option<&mut Vec<KbrwNode>>,
) -> KbrwRealization {
    assert!(x >= 0.0 && x.is_finite(), "start must be finite and nonnegative");
    let mut z_n = vec![1u64];
    let mut censored = None;
    let mut created: u64 = 1;
    // (position, trace index)
    let mut current: Vec<(f64, u32)> = vec![(x, 0)];
    let mut next = Vec::new();
    let mut kids = Vec::new();
    if let Some(t) = trace.as_deref_mut() {
        t.push(KbrwNode {
            parent: None,
            generation: 0,
            position: x,
            alive: true,
        });
    }
    let mut generation = 0u32;
    'outer: while !current.is_empty() {
        let leaf = caps.is_leaf_depth(generation);
        if !leaf && generation >= caps.max_generation {
            censored.get_or_insert(CapKind::Generation);
            break;
        }
        next.clear();
        for &(v, id) in &current {
            kids.clear();
            pp.draw_children(stream, -v, leaf, &mut kids);
            if created + kids.len() as u64 > caps.max_nodes {
                censored = Some(CapKind::Nodes);
                if !next.is_empty() {
                    z_n.push(next.len() as u64);
                }
                break 'outer;
            }
            created += kids.len() as u64;
            for &d in &kids {
                let w = v + d;
                let alive = w >= 0.0;
                let tid = match trace.as_deref_mut() {
                    Some(t) => {
                        t.push(KbrwNode {
                            parent: Some(id),
                            generation: generation + 1,
                            position: w,
                            alive,
                        });
                        (t.len() - 1) as u32
                    }
                    None => 0,
                };
                if alive {
                    next.push((w, tid));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        z_n.push(next.len() as u64);
        std::mem::swap(&mut current, &mut next);
        generation += 1;
    }
    KbrwRealization {
        start: x,
        z: z_n.iter().sum(),
        z_n,
        censored,
    }
}

/// Whether killed vertices are expanded too.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingMode {
    /// Only vertices that get infected are expanded; matches the draw
    /// schedule of [`simulate_kbrw`].
    Killed,
    /// Every vertex of the (necessarily finite) tree is expanded. Used for
    /// common-random-number comparisons across λ.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingNode {
    /// `I(u)`, the infection time if `u` ever gets infected.
    pub infection: f64,
    /// `R(u)`; NaN when the vertex was never expanded.
    pub recovery: f64,
    /// `W(u) = R(⟵u) − I(u)`.
    pub w: f64,
    /// `W(v) ≥ 0` for every `v` on the root path of `u`.
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRealization {
    pub lambda: f64,
    pub delay: f64,
    /// Indexed by node id; covers every materialised vertex.
    pub nodes: Vec<CouplingNode>,
    pub z: u64,
    pub z_n: Vec<u64>,
    pub censored: Option<CapKind>,
}

impl CouplingRealization {
    /// Chase-escape status of `u` at time `t`:
    /// infected on `[I(u), R(u))` and recovered from `R(u)` on when every
    /// `W` on the root path is nonnegative, susceptible otherwise.
    pub fn status_at(&self, t: f64, u: NodeId) -> Status {
        let Some(n) = self.nodes.get(u.index()) else {
            return Status::Susceptible;
        };
        if !n.alive || t < n.infection {
            Status::Susceptible
        } else if t < n.recovery || n.recovery.is_nan() {
            Status::Infected
        } else {
            Status::Recovered
        }
    }

    pub fn alive_set(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive)
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }
}

/// Builds `R` as a branching random walk with Exp(1) steps started from
/// `x + Exp(1)`, and `I` as one with Exp(λ) steps started from 0.
pub fn coupling_realization(
    tree: &mut TreeStore,
    lambda: f64,
    delay: f64,
    mode: CouplingMode,
    stream: &mut RngStream,
) -> CouplingRealization {
    assert!(lambda > 0.0 && lambda.is_finite(), "lambda must be positive");
    assert!(delay >= 0.0 && delay.is_finite(), "delay must be nonnegative");
    let max_generation = tree.caps().max_generation;
    let mut nodes = vec![CouplingNode {
        infection: 0.0,
        recovery: f64::NAN,
        w: delay,
        alive: true,
    }];
    let mut parent_recovery = vec![delay];
    let mut z_n = vec![1u64];
    let mut censored = None;
    let mut queue = VecDeque::from([NodeId::ROOT]);
    while let Some(u) = queue.pop_front() {
        let g = tree.generation(u);
        let leaf = tree.caps().is_leaf_depth(g);
        if !leaf && g >= max_generation {
            if nodes[u.index()].alive {
                censored.get_or_insert(CapKind::Generation);
            }
            continue;
        }
        let Some(kids) = tree.children(u, stream) else {
            censored = Some(CapKind::Nodes);
            break;
        };
        let e = stream.std_exp();
        let ru = parent_recovery[u.index()] + e;
        let iu = nodes[u.index()].infection;
        let alive_u = nodes[u.index()].alive;
        nodes[u.index()].recovery = ru;
        for c in kids.iter() {
            let ic = iu + stream.std_exp() / lambda;
            let w = ru - ic;
            let alive = alive_u && w >= 0.0;
            debug_assert_eq!(c.index(), nodes.len());
            nodes.push(CouplingNode {
                infection: ic,
                recovery: f64::NAN,
                w,
                alive,
            });
            parent_recovery.push(ru);
            if alive {
                let gc = g as usize + 1;
                if z_n.len() <= gc {
                    z_n.resize(gc + 1, 0);
                }
                z_n[gc] += 1;
            }
            if alive || mode == CouplingMode::Full {
                queue.push_back(c);
            }
        }
    }
    CouplingRealization {
        lambda,
        delay,
        nodes,
        z: z_n.iter().sum(),
        z_n,
        censored,
    }
}

/// Pruning controls for [`biggins_martingale`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigginsOptions {
    /// Particles whose weighted contribution drops below `eta` play
    /// Russian roulette: they survive with probability `contribution/eta`
    /// and are reweighted to contribute exactly `eta`.
    pub eta: f64,
    pub max_particles: usize,
}

impl Default for BigginsOptions {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            max_particles: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigginsPath {
    pub rho: f64,
    /// `W_0, …, W_n` with `W_n = Σ_{|u|=n} e^{ρV(u)}`, estimated unbiasedly.
    pub w: Vec<f64>,
    /// Largest simulated position per generation; `-∞` once nothing is left.
    pub max_position: Vec<f64>,
    pub particles: Vec<usize>,
    /// The particle cap stopped the sequence early.
    pub truncated: bool,
}

/// The additive martingale of the unkilled walk, generations `0..=n_max`.
pub fn biggins_martingale<P: PointProcess>(
    pp: &P,
    rho: f64,
    x: f64,
    n_max: u32,
    options: BigginsOptions,
    stream: &mut RngStream,
) -> BigginsPath {
    assert!(rho > 0.0 && rho < 1.0, "rho must lie in (0, 1)");
    let mut path = BigginsPath {
        rho,
        w: vec![(rho * x).exp()],
        max_position: vec![x],
        particles: vec![1],
        truncated: false,
    };
    // (position, weight)
    let mut current = vec![(x, 1.0f64)];
    let mut next = Vec::new();
    let mut kids = Vec::new();
    for _ in 0..n_max {
        next.clear();
        for &(v, weight) in &current {
            kids.clear();
            pp.draw_children(stream, f64::NEG_INFINITY, false, &mut kids);
            for &d in &kids {
                let p = v + d;
                let m = weight * (rho * p).exp();
                if m >= options.eta {
                    next.push((p, weight));
                } else if stream.uniform() * options.eta < m {
                    next.push((p, options.eta / (rho * p).exp()));
                }
            }
            if next.len() > options.max_particles {
                path.truncated = true;
                return path;
            }
        }
        let w: f64 = next.iter().map(|&(p, wt)| wt * (rho * p).exp()).sum();
        let max = next.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        path.w.push(w);
        path.max_position.push(max);
        path.particles.push(next.len());
        std::mem::swap(&mut current, &mut next);
    }
    path
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QWalkSample {
    pub start: f64,
    /// Steps taken before the first passage below 0, or before stopping.
    pub steps: u64,
    /// `−S_τ` at the first passage below 0; `None` if the walk escaped to
    /// +∞ (positive drift) or hit the step cap.
    pub overshoot: Option<f64>,
    /// `Σ_{j<τ*} 1{S_j ≥ −x}` for the walk started at 0, where `τ*` is the
    /// first `j ≥ 1` with `S_j ≥ 0`.
    pub renewal_count: u64,
    /// The step cap stopped either walk.
    pub censored: bool,
}

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Distance above 0 beyond which a walk with positive drift is taken to
/// have escaped; the chance of a later passage below 0 is below `e^{-35}`.
const ESCAPE_LOG_TOLERANCE: f64 = 35.0;

#[inline]
fn step(law: &StepLaw, stream: &mut RngStream) -> f64 {
    if stream.uniform() < law.p_up() {
        stream.std_exp() / law.up_rate
    } else {
        -stream.std_exp() / law.down_rate
    }
}

/// Draws one sample of the tilted one-dimensional walk from `x`.
pub fn qwalk_first_passage(
    params: &ModelParams,
    x: f64,
    stream: &mut RngStream,
) -> Result<QWalkSample, AnalyticsError> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(AnalyticsError::NegativeStart(x));
    }
    Ok(qwalk_sample(&step_law(params)?, x, DEFAULT_STEP_CAP, stream))
}

/// [`qwalk_first_passage`] for an explicit step law and step cap.
pub fn qwalk_sample(law: &StepLaw, x: f64, step_cap: u64, stream: &mut RngStream) -> QWalkSample {
    let drift_rate = law.ruin_decay_rate();
    let escape = if drift_rate > 0.0 {
        ESCAPE_LOG_TOLERANCE / drift_rate
    } else {
        f64::INFINITY
    };
    let mut censored = false;

    let mut s = x;
    let mut steps = 0u64;
    let overshoot = loop {
        if steps >= step_cap {
            censored = true;
            break None;
        }
        s += step(law, stream);
        steps += 1;
        if s < 0.0 {
            break Some(-s);
        }
        if s > escape {
            break None;
        }
    };

    let (renewal_count, renewal_censored) = renewal_count(law, x, step_cap, stream);
    censored |= renewal_censored;

    QWalkSample {
        start: x,
        steps,
        overshoot,
        renewal_count,
        censored,
    }
}

/// One sample of `Σ_{j<τ*} 1{S_j ≥ −x}` for the tilted walk started at 0,
/// where `τ*` is the first `j ≥ 1` with `S_j ≥ 0`. The flag is set if the
/// step cap stopped the walk.
pub fn renewal_count(law: &StepLaw, x: f64, step_cap: u64, stream: &mut RngStream) -> (u64, bool) {
    // Below −x only the first return above −x matters, and since upward
    // jumps are exponential it lands at −x + Exp(up_rate).
    let mut s = 0.0;
    let mut count = 1u64;
    for _ in 0..step_cap {
        s += step(law, stream);
        if s < -x {
            s = -x + stream.std_exp() / law.up_rate;
        }
        if s >= 0.0 {
            return (count, false);
        }
        count += 1;
    }
    (count, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{renewal_function, spectral};
    use crate::kernel::{BaPointProcess, CePointProcess};
    use crate::law::OffspringLaw;
    use crate::rng::make_stream;

    fn ce(lambda: f64, d: u32) -> CePointProcess {
        CePointProcess::new(lambda, OffspringLaw::d_ary(d).unwrap()).unwrap()
    }

    fn lc2() -> f64 {
        3.0 - 2.0 * 2f64.sqrt()
    }

    #[test]
    fn sterile_walk_is_the_root() {
        let pp = CePointProcess::new(0.3, OffspringLaw::sterile()).unwrap();
        let r = simulate_kbrw(&pp, 0.0, Caps::default(), &mut make_stream(0, 0));
        assert_eq!((r.z, r.z_n.clone()), (1, vec![1]));
    }

    #[test]
    fn first_generation_probability() {
        let lambda = 0.15;
        let pp = ce(lambda, 2);
        let n = 100_000;
        let hits = (0..n)
            .filter(|&r| simulate_kbrw(&pp, 0.0, Caps::default(), &mut make_stream(31, r)).z >= 2)
            .count();
        let p = 2.0 * lambda / (1.0 + 2.0 * lambda);
        let phat = hits as f64 / n as f64;
        assert!((phat - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{phat}");
    }

    #[test]
    fn traced_alive_flags_follow_paths() {
        let pp = CePointProcess::new(0.12, OffspringLaw::poisson(2.0).unwrap()).unwrap();
        for r in 0..300 {
            let (real, trace) =
                simulate_kbrw_traced(&pp, 0.5, Caps::default(), &mut make_stream(2, r));
            let mut path_ok = vec![true; trace.len()];
            for (i, n) in trace.iter().enumerate() {
                let parent_ok = n.parent.is_none_or(|p| path_ok[p as usize]);
                path_ok[i] = parent_ok && n.position >= 0.0;
                assert_eq!(n.alive, path_ok[i]);
                if let Some(p) = n.parent {
                    assert!(trace[p as usize].alive);
                    assert_eq!(n.generation, trace[p as usize].generation + 1);
                }
            }
            assert_eq!(real.z as usize, trace.iter().filter(|n| n.alive).count());
            assert_eq!(real.z_n[0], 1);
            for w in real.z_n.windows(2) {
                assert!(w[1] <= 2 * w[0] || pp.max_children().is_none());
            }
        }
    }

    #[test]
    fn coupling_matches_kbrw_exactly() {
        let caps = Caps::default().with_max_nodes(50_000).with_max_generation(500);
        for &lambda in &[0.1, lc2(), 0.3] {
            let pp = ce(lambda, 2);
            let mut tree = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), caps);
            for r in 0..500 {
                tree.reset();
                let c = coupling_realization(
                    &mut tree,
                    lambda,
                    0.0,
                    CouplingMode::Killed,
                    &mut make_stream(40, r),
                );
                let k = simulate_kbrw(&pp, 0.0, caps, &mut make_stream(40, r));
                assert_eq!((c.z, &c.z_n, c.censored), (k.z, &k.z_n, k.censored), "λ={lambda} r={r}");
            }
        }
    }

    #[test]
    fn coupling_statuses() {
        let mut tree = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), Caps::default());
        for r in 0..200 {
            tree.reset();
            let c = coupling_realization(&mut tree, 0.15, 0.0, CouplingMode::Killed, &mut make_stream(1, r));
            assert_eq!(c.status_at(0.0, NodeId::ROOT), Status::Infected);
            for i in 1..tree.len() as u32 {
                assert_eq!(c.status_at(0.0, NodeId(i)), Status::Susceptible);
            }
            let mut ever = 0;
            for i in 0..tree.len() as u32 {
                let s = c.status_at(f64::INFINITY, NodeId(i));
                assert_ne!(s, Status::Infected);
                if s == Status::Recovered {
                    ever += 1;
                    let n = c.nodes[i as usize];
                    assert!(n.recovery > n.infection);
                }
            }
            assert_eq!(ever, c.z);
        }
    }

    #[test]
    fn full_coupling_is_monotone_in_lambda() {
        let caps = Caps::default().truncated_at(9);
        let mut t1 = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), caps);
        let mut t2 = t1.clone();
        for r in 0..300 {
            t1.reset();
            t2.reset();
            let a = coupling_realization(&mut t1, 0.10, 0.0, CouplingMode::Full, &mut make_stream(8, r));
            let b = coupling_realization(&mut t2, 0.15, 0.0, CouplingMode::Full, &mut make_stream(8, r));
            assert_eq!(a.nodes.len(), b.nodes.len());
            for (x, y) in a.nodes.iter().zip(&b.nodes) {
                assert!(x.w <= y.w);
                assert!(!x.alive || y.alive);
            }
        }
    }

    #[test]
    fn generation_cap_censors_both_routes_alike() {
        let caps = Caps::default().with_max_generation(3);
        let pp = ce(0.3, 2);
        let mut tree = TreeStore::new(OffspringLaw::d_ary(2).unwrap(), caps);
        let mut seen = 0;
        for r in 0..2000 {
            tree.reset();
            let c = coupling_realization(&mut tree, 0.3, 0.0, CouplingMode::Killed, &mut make_stream(5, r));
            let k = simulate_kbrw(&pp, 0.0, caps, &mut make_stream(5, r));
            assert_eq!((c.z, &c.z_n, c.censored), (k.z, &k.z_n, k.censored));
            if k.censored.is_some() {
                seen += 1;
                assert_eq!(k.z_n.len(), 4);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn ba_walk_is_stable_at_criticality() {
        let pp = BaPointProcess::exponential(0.25).unwrap();
        let caps = Caps::default().with_max_generation(200);
        let n = 10_000;
        let finite = (0..n)
            .filter(|&r| !simulate_kbrw(&pp, 0.0, caps, &mut make_stream(9, r)).is_censored())
            .count();
        assert!(finite as f64 / n as f64 >= 0.999, "{finite}");
    }

    #[test]
    fn biggins_mean_is_one_at_criticality() {
        let lc = lc2();
        let pp = ce(lc, 2);
        let rho = spectral(&ModelParams::d_ary(lc, 2).unwrap()).unwrap().rho_star;
        let n = 10_000;
        let w5: Vec<f64> = (0..n)
            .map(|r| {
                let p = biggins_martingale(&pp, rho, 0.0, 5, BigginsOptions::default(), &mut make_stream(3, r));
                assert_eq!(p.w[0], 1.0);
                p.w[5]
            })
            .collect();
        let mean = w5.iter().sum::<f64>() / n as f64;
        let sd = (w5.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 5.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn critical_step_law_is_symmetric() {
        let law = step_law(&ModelParams::d_ary(lc2(), 2).unwrap()).unwrap();
        assert!((law.p_up() - 0.5).abs() < 1e-12);
        let mut s = make_stream(10, 0);
        let n = 1_000_000;
        let ups = (0..n).filter(|_| step(&law, &mut s) > 0.0).count();
        let phat = ups as f64 / n as f64;
        assert!((phat - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{phat}");
    }

    #[test]
    fn renewal_count_at_zero_is_one() {
        let p = ModelParams::d_ary(0.15, 2).unwrap();
        for r in 0..1000 {
            let q = qwalk_first_passage(&p, 0.0, &mut make_stream(6, r)).unwrap();
            assert_eq!(q.renewal_count, 1);
        }
    }

    #[test]
    fn subcritical_renewal_estimate() {
        let p = ModelParams::d_ary(0.15, 2).unwrap();
        let law = step_law(&p).unwrap();
        let n = 200_000u64;
        let counts: Vec<f64> = (0..n)
            .map(|r| qwalk_sample(&law, 1.0, 1_000_000, &mut make_stream(7, r)).renewal_count as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let target = renewal_function(1.0, &p).unwrap();
        assert!((mean - target).abs() < 5.0 * sd / (n as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn subcritical_walk_can_escape() {
        let p = ModelParams::d_ary(0.15, 2).unwrap();
        let escaped = (0..2000)
            .filter(|&r| {
                let q = qwalk_first_passage(&p, 2.0, &mut make_stream(8, r)).unwrap();
                assert!(!q.censored);
                q.overshoot.is_none()
            })
            .count();
        assert!(escaped > 0);
    }
}
