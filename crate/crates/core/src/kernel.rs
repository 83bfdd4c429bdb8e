//! Displacement point processes of the two killed branching random walks.
//!
//! Draw schedule, shared with the direct simulators and the coupling:
//! chase-escape parents draw `U`, then `E`, then one `G_i` per child;
//! birth-and-assassination parents draw `K`, then inter-arrival gaps until
//! the first child that would fall below the floor.

use serde::{Deserialize, Serialize};

use crate::law::{LawError, OffspringLaw, TimerLaw};
use crate::rng::{KernelError, RngStream};

/// A point process giving the displacements of one parent's children.
pub trait PointProcess {
    /// Appends the displacements of one parent's children to `out`.
    ///
    /// `floor` is the kill level relative to the parent. Processes whose
    /// children are generated in decreasing order stop at the first child
    /// below it; the others emit every child. A `leaf` parent has no
    /// children but still consumes its parent-level draw.
    fn draw_children(&self, stream: &mut RngStream, floor: f64, leaf: bool, out: &mut Vec<f64>);

    /// Upper bound on the number of children, if the offspring law has one.
    fn max_children(&self) -> Option<u32> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CePointProcess {
    pub lambda: f64,
    pub offspring: OffspringLaw,
}

impl CePointProcess {
    pub fn new(lambda: f64, offspring: OffspringLaw) -> Result<Self, KernelError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(KernelError::InvalidRate(lambda));
        }
        Ok(Self { lambda, offspring })
    }

    /// The shared recovery increment `E` and the per-child infection
    /// increments `G_i` of one parent with `k` children.
    #[inline]
    pub fn draw_increments(&self, stream: &mut RngStream, k: u32, gs: &mut Vec<f64>) -> f64 {
        let e = stream.std_exp();
        gs.clear();
        gs.extend((0..k).map(|_| stream.std_exp() / self.lambda));
        e
    }
}

impl PointProcess for CePointProcess {
    fn draw_children(&self, stream: &mut RngStream, _floor: f64, leaf: bool, out: &mut Vec<f64>) {
        let k = if leaf { 0 } else { self.offspring.sample(stream) };
        let e = stream.std_exp();
        for _ in 0..k {
            out.push(e - stream.std_exp() / self.lambda);
        }
    }

    fn max_children(&self) -> Option<u32> {
        self.offspring.max_offspring()
    }
}

/// `Σ_{i≤U} δ(E − G_i)` for one parent.
pub fn ce_children(stream: &mut RngStream, proc: &CePointProcess) -> Vec<f64> {
    let mut out = Vec::new();
    proc.draw_children(stream, f64::NEG_INFINITY, false, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaPointProcess {
    pub lambda: f64,
    pub timer: TimerLaw,
}

impl BaPointProcess {
    pub fn new(lambda: f64, timer: TimerLaw) -> Result<Self, LawError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LawError::BadTimerRate(lambda));
        }
        timer.validate()?;
        Ok(Self { lambda, timer })
    }

    pub fn exponential(lambda: f64) -> Result<Self, LawError> {
        Self::new(lambda, TimerLaw::exponential(1.0)?)
    }
}

impl PointProcess for BaPointProcess {
    fn draw_children(&self, stream: &mut RngStream, floor: f64, leaf: bool, out: &mut Vec<f64>) {
        let k = self.timer.sample(stream);
        if leaf {
            return;
        }
        let mut s = 0.0;
        loop {
            s += stream.std_exp() / self.lambda;
            let v = k - s;
            if v < floor {
                break;
            }
            out.push(v);
        }
    }
}

/// `K − S_1, K − S_2, …` for one parent, stopping at the first value below
/// `floor`; `S_i` are partial sums of independent Exp(λ) gaps.
pub fn ba_children(
    stream: &mut RngStream,
    proc: &BaPointProcess,
    floor: f64,
) -> Result<Vec<f64>, KernelError> {
    if !floor.is_finite() {
        return Err(KernelError::InvalidFloor(floor));
    }
    let mut out = Vec::new();
    proc.draw_children(stream, floor, false, &mut out);
    Ok(out)
}

/// Same as [`ba_children`] with the timer value and arrival times supplied.
pub fn ba_children_from<I: IntoIterator<Item = f64>>(
    k: f64,
    arrivals: I,
    floor: f64,
) -> Result<Vec<f64>, KernelError> {
    if !floor.is_finite() {
        return Err(KernelError::InvalidFloor(floor));
    }
    Ok(arrivals
        .into_iter()
        .map(|s| k - s)
        .take_while(|&v| v >= floor)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_stream;

    fn three_sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn sterile_law_gives_no_children() {
        let p = CePointProcess::new(0.3, OffspringLaw::sterile()).unwrap();
        let mut s = make_stream(1, 0);
        assert!(ce_children(&mut s, &p).is_empty());
    }

    #[test]
    fn binary_children_are_below_shared_e() {
        let p = CePointProcess::new(0.15, OffspringLaw::d_ary(2).unwrap()).unwrap();
        let mut a = make_stream(4, 4);
        let mut b = make_stream(4, 4);
        let kids = ce_children(&mut a, &p);
        assert_eq!(kids.len(), 2);
        let e = b.std_exp();
        assert!(kids.iter().all(|&v| v <= e));
    }

    #[test]
    fn probability_some_child_is_nonnegative() {
        let lambda = 0.15;
        let p = CePointProcess::new(lambda, OffspringLaw::d_ary(2).unwrap()).unwrap();
        let mut s = make_stream(2, 0);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| {
                ce_children(&mut s, &p)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
                    >= 0.0
            })
            .count();
        let target = 2.0 * lambda / (1.0 + 2.0 * lambda);
        let phat = hits as f64 / n as f64;
        assert!((phat - target).abs() < three_sigma(target, n), "{phat}");
    }

    #[test]
    fn siblings_are_positively_correlated() {
        let p = CePointProcess::new(0.15, OffspringLaw::d_ary(2).unwrap()).unwrap();
        let mut s = make_stream(3, 0);
        let n = 100_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let k = ce_children(&mut s, &p);
                (k[0], k[1])
            })
            .collect();
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n as f64;
        // Cov = Var(E) = 1; the product has standard deviation near 45.
        assert!(cov > 0.0, "{cov}");
        assert!((cov - 1.0).abs() < 5.0 * 45.0 / (n as f64).sqrt(), "{cov}");
    }

    #[test]
    fn displacements_are_monotone_in_lambda() {
        let law = OffspringLaw::d_ary(3).unwrap();
        let lo = CePointProcess::new(0.1, law.clone()).unwrap();
        let hi = CePointProcess::new(0.15, law).unwrap();
        for idx in 0..1000 {
            let a = ce_children(&mut make_stream(9, idx), &lo);
            let b = ce_children(&mut make_stream(9, idx), &hi);
            assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        }
    }

    #[test]
    fn ba_from_explicit_draws() {
        let kids = ba_children_from(0.9, [0.5, 1.4, 2.0], 0.0).unwrap();
        assert_eq!(kids.len(), 1);
        assert!((kids[0] - 0.4).abs() < 1e-15);
        assert_eq!(
            ba_children_from(0.9, [0.5], f64::NEG_INFINITY),
            Err(KernelError::InvalidFloor(f64::NEG_INFINITY))
        );
        let p = BaPointProcess::exponential(0.25).unwrap();
        assert!(ba_children(&mut make_stream(0, 0), &p, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn ba_children_decrease_and_stop_below_floor() {
        let p = BaPointProcess::exponential(0.25).unwrap();
        for idx in 0..10_000 {
            let floor = -((idx % 7) as f64) * 0.5;
            let kids = ba_children(&mut make_stream(5, idx), &p, floor).unwrap();
            assert!(kids.windows(2).all(|w| w[0] > w[1]));
            assert!(kids.iter().all(|&v| v >= floor));
        }
    }

    #[test]
    fn ba_empty_list_probability() {
        let lambda = 0.25;
        let p = BaPointProcess::exponential(lambda).unwrap();
        let mut s = make_stream(6, 0);
        let n = 1_000_000;
        let empty = (0..n)
            .filter(|_| ba_children(&mut s, &p, 0.0).unwrap().is_empty())
            .count();
        let target = 1.0 / (1.0 + lambda);
        let phat = empty as f64 / n as f64;
        assert!((phat - target).abs() < three_sigma(target, n), "{phat}");
    }
}
