//! Forward-in-time splitting tree simulation.
//!
//! Individuals are generated depth first from a single root. Each one draws
//! its lifetime, then a single Poisson stream of rate `b + theta` over its
//! life whose events are births or mutations. Children inherit the parent's
//! type at their birth time. Visiting order is the contour order: an
//! individual, then the subtrees of its daughters from youngest to oldest.

use rand::Rng;
use rand_distr::Exp1;

use crate::cpp::SpectrumSample;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Default bound on the population alive at the horizon.
pub const DEFAULT_CAP: u64 = 1_000_000;
/// Bound on individuals generated per run, as a multiple of the cap.
const TOTAL_FACTOR: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndividualRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub birth: f64,
    pub death: f64,
    /// Type carried at `min(death, horizon)`; 0 is the root's original type.
    pub type_id: u32,
}

impl IndividualRecord {
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && self.death > t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOutcome {
    Survived(SpectrumSample),
    Extinct,
    /// The population alive at the horizon exceeded the cap.
    Overflow,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    birth: f64,
    parent: usize,
    ty: u32,
}

const NO_PARENT: usize = usize::MAX;

struct Engine<'a, R: ?Sized> {
    params: &'a ModelParams,
    horizon: f64,
    rng: &'a mut R,
    next_type: u32,
    children: Vec<Pending>,
}

impl<R: Rng + ?Sized> Engine<'_, R> {
    #[inline]
    fn exp(&mut self, rate: f64) -> f64 {
        let e: f64 = self.rng.sample(Exp1);
        e / rate
    }

    /// Lives out one individual; its children are left in `self.children`, oldest first.
    #[inline]
    fn live(&mut self, p: Pending) -> (f64, u32) {
        let death = p.birth + self.params.lifespan.sample(self.rng);
        let end = death.min(self.horizon);
        let rate = self.params.b + self.params.theta;
        let birth_share = self.params.b / rate;
        let mut ty = p.ty;
        let mut s = p.birth;
        self.children.clear();
        if rate > 0.0 {
            loop {
                s += self.exp(rate);
                if s >= end {
                    break;
                }
                if self.params.theta == 0.0 || self.rng.random::<f64>() < birth_share {
                    self.children.push(Pending { birth: s, parent: NO_PARENT, ty });
                } else {
                    self.next_type += 1;
                    ty = self.next_type;
                }
            }
        }
        (death, ty)
    }

    /// Depth-first generation; `visit` sees every individual born before the horizon.
    /// Returns `false` on overflow.
    fn run(&mut self, cap: u64, mut visit: impl FnMut(&IndividualRecord)) -> bool {
        let mut stack = vec![Pending { birth: 0.0, parent: NO_PARENT, ty: 0 }];
        let (mut id, mut alive) = (0usize, 0u64);
        let limit = cap.saturating_mul(TOTAL_FACTOR);
        while let Some(p) = stack.pop() {
            let (death, ty) = self.live(p);
            let rec = IndividualRecord {
                id,
                parent: (p.parent != NO_PARENT).then_some(p.parent),
                birth: p.birth,
                death,
                type_id: ty,
            };
            if death > self.horizon {
                alive += 1;
                if alive > cap {
                    return false;
                }
            }
            if id as u64 >= limit {
                return false;
            }
            visit(&rec);
            stack.extend(self.children.drain(..).map(|c| Pending { parent: id, ..c }));
            id += 1;
        }
        true
    }
}

fn check_horizon(t: f64, cap: u64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive and finite, got {t}")));
    }
    if cap == 0 {
        return Err(Error::InvalidParameter("population cap must be positive".into()));
    }
    Ok(())
}

/// Simulates the tree up to `t` and returns the spectrum of the population alive at `t`.
pub fn simulate_forward<R: Rng + ?Sized>(
    params: &ModelParams,
    t: f64,
    cap: u64,
    rng: &mut R,
) -> Result<ForwardOutcome> {
    check_horizon(t, cap)?;
    let mut engine = Engine { params, horizon: t, rng, next_type: 0, children: Vec::new() };
    let mut counts: Vec<u64> = vec![0];
    let completed = engine.run(cap, |r| {
        if r.death > t {
            let k = r.type_id as usize;
            if k >= counts.len() {
                counts.resize(k + 1, 0);
            }
            counts[k] += 1;
        }
    });
    if !completed {
        return Ok(ForwardOutcome::Overflow);
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Ok(ForwardOutcome::Extinct);
    }
    let z0 = counts[0];
    counts[0] = 0;
    Ok(ForwardOutcome::Survived(SpectrumSample::from_family_sizes(n, z0, counts)))
}

/// All individuals born before `t`, in contour order; `None` on overflow.
pub fn simulate_tree<R: Rng + ?Sized>(
    params: &ModelParams,
    t: f64,
    cap: u64,
    rng: &mut R,
) -> Result<Option<Vec<IndividualRecord>>> {
    check_horizon(t, cap)?;
    let mut engine = Engine { params, horizon: t, rng, next_type: 0, children: Vec::new() };
    let mut records = Vec::new();
    Ok(engine.run(cap, |r| records.push(*r)).then_some(records))
}

/// `death - t` for every individual alive at `t`, in contour order.
///
/// Empty when the population is extinct at `t`.
pub fn residual_lifetimes<R: Rng + ?Sized>(params: &ModelParams, t: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_horizon(t, DEFAULT_CAP)?;
    let mut engine = Engine { params, horizon: t, rng, next_type: 0, children: Vec::new() };
    let mut out = Vec::new();
    if !engine.run(DEFAULT_CAP, |r| {
        if r.death > t {
            out.push(r.death - t)
        }
    }) {
        return Err(Error::Domain(format!("population at {t} exceeded {DEFAULT_CAP}")));
    }
    Ok(out)
}

/// Population counts at checkpoints and how many of those individuals
/// have descendants alive at the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescentCounts {
    pub alive: Vec<u64>,
    pub descending: Vec<u64>,
    /// Whether anyone is alive at the horizon.
    pub survives: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DescentOutcome {
    Counted(DescentCounts),
    Overflow,
}

/// Whether an individual alive at `start` with the given death time has a
/// descendant (itself included) alive at `horizon`. Stops at the first witness.
fn reaches<R: Rng + ?Sized>(
    params: &ModelParams,
    start: f64,
    death: f64,
    horizon: f64,
    budget: &mut u64,
    stack: &mut Vec<f64>,
    rng: &mut R,
) -> Option<bool> {
    stack.clear();
    let mut cur = (start, death);
    loop {
        if cur.1 > horizon {
            return Some(true);
        }
        let mut s = cur.0;
        loop {
            let e: f64 = rng.sample(Exp1);
            s += e / params.b;
            if s >= cur.1 {
                break;
            }
            stack.push(s);
        }
        let Some(birth) = stack.pop() else {
            return Some(false);
        };
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        cur = (birth, birth + params.lifespan.sample(rng));
    }
}

/// Counts `N_t` and `N_t^{(T)}` (individuals alive at `t` with descendants alive at `T`)
/// for each checkpoint `t`.
///
/// The tree is generated up to the last checkpoint; each individual alive
/// there is then followed to `T` only until one living descendant is found.
pub fn infinite_descent_counts<R: Rng + ?Sized>(
    params: &ModelParams,
    checkpoints: &[f64],
    horizon: f64,
    cap: u64,
    rng: &mut R,
) -> Result<DescentOutcome> {
    let last = checkpoints.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if checkpoints.is_empty() || !(checkpoints.iter().all(|&c| c > 0.0) && last < horizon) {
        return Err(Error::InvalidParameter(format!(
            "checkpoints must be positive and below the horizon {horizon}"
        )));
    }
    check_horizon(horizon, cap)?;
    let Some(records) = simulate_tree(params, last, cap, rng)? else {
        return Ok(DescentOutcome::Overflow);
    };
    // extended[i]: i or a daughter born after `last` leads to the horizon
    let mut extended = vec![false; records.len()];
    let mut budget = cap.saturating_mul(TOTAL_FACTOR);
    let mut stack = Vec::new();
    for r in records.iter().filter(|r| r.death > last) {
        match reaches(params, last, r.death, horizon, &mut budget, &mut stack, rng) {
            Some(hit) => extended[r.id] = hit,
            None => return Ok(DescentOutcome::Overflow),
        }
    }
    // A lineage at time c is the individual itself plus daughters born after c;
    // daughters born before c are separate lineages at c.
    let mut leads = extended.clone();
    let mut lineage: Vec<Vec<bool>> = vec![extended.clone(); checkpoints.len()];
    for r in records.iter().rev() {
        if let (true, Some(p)) = (leads[r.id], r.parent) {
            leads[p] = true;
            for (j, &c) in checkpoints.iter().enumerate() {
                if r.birth > c {
                    lineage[j][p] = true;
                }
            }
        }
    }
    let mut alive = vec![0; checkpoints.len()];
    let mut descending = vec![0; checkpoints.len()];
    for r in &records {
        for (j, &c) in checkpoints.iter().enumerate() {
            if r.alive_at(c) {
                alive[j] += 1;
                descending[j] += lineage[j][r.id] as u64;
            }
        }
    }
    Ok(DescentOutcome::Counted(DescentCounts { alive, descending, survives: leads[0] }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LifespanDistribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bd(theta: f64) -> ModelParams {
        ModelParams::new(2.0, theta, LifespanDistribution::Exponential { rate: 1.0 }).unwrap()
    }

    #[test]
    fn no_mutations_means_all_clonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            if let ForwardOutcome::Survived(s) = simulate_forward(&bd(0.0), 2.0, DEFAULT_CAP, &mut rng).unwrap() {
                assert_eq!(s.z0, s.n);
                assert!(s.families.is_empty());
            }
        }
    }

    #[test]
    fn spectra_are_conservative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            if let ForwardOutcome::Survived(s) = simulate_forward(&bd(0.5), 2.0, DEFAULT_CAP, &mut rng).unwrap() {
                assert!(s.is_conservative());
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let p = ModelParams::new(2.0, 0.0, LifespanDistribution::Immortal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(simulate_forward(&p, 8.0, 10, &mut rng).unwrap(), ForwardOutcome::Overflow);
        assert!(simulate_forward(&p, 8.0, 0, &mut rng).is_err());
        assert!(simulate_forward(&p, -1.0, 10, &mut rng).is_err());
    }

    #[test]
    fn records_respect_lifetimes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let recs = simulate_tree(&bd(0.5), 3.0, DEFAULT_CAP, &mut rng).unwrap().unwrap();
        for r in &recs {
            assert!(r.death > r.birth);
            if let Some(p) = r.parent {
                let q = recs[p];
                assert!(p < r.id && r.birth > q.birth && r.birth < q.death);
            }
        }
    }

    #[test]
    fn fixed_lifespan_overshoots_are_bounded() {
        let p = ModelParams::new(1.5, 0.0, LifespanDistribution::Deterministic { value: 1.0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            for o in residual_lifetimes(&p, 3.0, &mut rng).unwrap() {
                assert!((0.0..1.0).contains(&o) && o > 0.0);
            }
        }
    }

    #[test]
    fn descent_counts_are_bounded_by_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let DescentOutcome::Counted(c) =
                infinite_descent_counts(&bd(0.0), &[1.0, 2.0], 4.0, DEFAULT_CAP, &mut rng).unwrap()
            else {
                panic!("unexpected overflow")
            };
            for j in 0..2 {
                assert!(c.descending[j] <= c.alive[j]);
            }
            assert_eq!(c.survives, c.descending[0] > 0);
        }
        assert!(infinite_descent_counts(&bd(0.0), &[5.0], 4.0, DEFAULT_CAP, &mut rng).is_err());
    }
}
