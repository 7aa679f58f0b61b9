//! Coalescent point process sampling, Poissonian mutations and allelic partitions.
//!
//! A CPP at horizon `t` is the sequence of branch depths `H_0 = t, H_1, ..., H_{N-1}`
//! where `H_1, H_2, ...` are i.i.d. with `P(H > s) = 1 / W(s)`, stopped at the
//! first depth exceeding `t`. Leaf `i` is attached, at depth `H_i`, to the
//! nearest leaf on its left with a larger depth.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::scale::ScaleGrid;

/// Outcome of one branch draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchDraw {
    Depth(f64),
    /// The branch is deeper than the horizon; the CPP stops.
    Exceeds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalescentPointProcess {
    horizon: f64,
    depths: Vec<f64>,
}

impl CoalescentPointProcess {
    /// Validates `depths[0] == horizon` and interior depths in `(0, horizon)`.
    pub fn from_depths(horizon: f64, depths: Vec<f64>) -> Result<Self> {
        if depths.first() != Some(&horizon) {
            return Err(Error::InvalidParameter("first depth must equal the horizon".into()));
        }
        if depths[1..].iter().any(|&h| !(h > 0.0 && h < horizon)) {
            return Err(Error::InvalidParameter("interior depths must lie in (0, horizon)".into()));
        }
        Ok(Self { horizon, depths })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    /// Population size `N`.
    pub fn size(&self) -> usize {
        self.depths.len()
    }

    /// Length of branch `i`; branch 0 spans the whole horizon.
    pub fn branch_length(&self, i: usize) -> f64 {
        self.depths[i]
    }

    /// Number of branches deeper than `depth`, i.e. ancestors at time `t - depth`
    /// of the alive population.
    pub fn ancestors_at_depth(&self, depth: f64) -> usize {
        self.depths.iter().filter(|&&h| h > depth).count()
    }
}

/// Branch depth law of a CPP whose scale function is `W(. + base) / W(base)`.
///
/// `base = 0` is the ordinary CPP; `base = a` is the lower tree of the
/// grafting construction, with `P(H > s) = W(a) / W(s + a)`.
#[derive(Debug, Clone, Copy)]
pub struct BranchLaw<'a> {
    grid: &'a ScaleGrid,
    base: f64,
    span: f64,
    w_base: f64,
    exceed_prob: f64,
}

impl<'a> BranchLaw<'a> {
    pub fn new(grid: &'a ScaleGrid, base: f64, span: f64) -> Result<Self> {
        if !(base >= 0.0 && span > 0.0) {
            return Err(Error::Domain(format!("branch law needs base >= 0 and span > 0, got {base}, {span}")));
        }
        if base + span > grid.horizon() * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "grid horizon {} does not cover {}",
                grid.horizon(),
                base + span
            )));
        }
        let w_base = grid.eval(base)?;
        let exceed_prob = w_base / grid.eval(base + span)?;
        Ok(Self { grid, base, span, w_base, exceed_prob })
    }

    /// `P(H > span)`, the parameter of the geometric population size.
    pub fn exceed_prob(&self) -> f64 {
        self.exceed_prob
    }

    /// Maps a uniform variate to a branch; `u <= P(H > span)` gives [`BranchDraw::Exceeds`].
    #[inline]
    pub fn from_uniform(&self, u: f64) -> BranchDraw {
        if u <= self.exceed_prob {
            return BranchDraw::Exceeds;
        }
        let s = self.grid.invert_within(self.w_base / u) - self.base;
        BranchDraw::Depth(s.clamp(f64::MIN_POSITIVE, self.span * (1.0 - f64::EPSILON)))
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> BranchDraw {
        self.from_uniform(rng.random::<f64>())
    }

    /// Samples a CPP with horizon `span` under this branch law.
    pub fn sample_cpp<R: Rng + ?Sized>(&self, rng: &mut R) -> CoalescentPointProcess {
        let mut depths = vec![self.span];
        self.fill_depths(&mut depths, rng);
        CoalescentPointProcess { horizon: self.span, depths }
    }

    #[inline]
    fn fill_depths<R: Rng + ?Sized>(&self, depths: &mut Vec<f64>, rng: &mut R) {
        while let BranchDraw::Depth(h) = self.draw(rng) {
            depths.push(h);
        }
    }
}

/// One branch of the CPP at horizon `t`.
pub fn sample_branch<R: Rng + ?Sized>(grid: &ScaleGrid, t: f64, rng: &mut R) -> Result<BranchDraw> {
    Ok(BranchLaw::new(grid, 0.0, t)?.draw(rng))
}

/// CPP at horizon `t`; conditioning on `N_t > 0` is implicit since `H_0 = t`.
pub fn sample_cpp<R: Rng + ?Sized>(grid: &ScaleGrid, t: f64, rng: &mut R) -> Result<CoalescentPointProcess> {
    Ok(BranchLaw::new(grid, 0.0, t)?.sample_cpp(rng))
}

/// Mutation depths per branch, each branch sorted by increasing depth.
///
/// A depth `a` on branch `i` is a mutation at calendar time `t - a`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MutationSet {
    depths: Vec<f64>,
    offsets: Vec<usize>,
}

impl MutationSet {
    /// Builds a set from per-branch depth lists (sorted internally).
    pub fn from_branches(branches: Vec<Vec<f64>>) -> Self {
        let mut set = Self { depths: Vec::new(), offsets: vec![0] };
        for mut b in branches {
            b.sort_by(f64::total_cmp);
            set.depths.extend(b);
            set.offsets.push(set.depths.len());
        }
        set
    }

    pub fn branch_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn branch(&self, i: usize) -> &[f64] {
        &self.depths[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Global id of the `j`-th mutation of branch `i`.
    pub fn id(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    pub fn total(&self) -> usize {
        self.depths.len()
    }

    fn clear(&mut self) {
        self.depths.clear();
        self.offsets.clear();
        self.offsets.push(0);
    }

    #[inline]
    fn push_branch<R: Rng + ?Sized>(&mut self, length: f64, theta: f64, rng: &mut R) {
        if theta > 0.0 {
            let mut d = 0.0;
            loop {
                let e: f64 = rng.sample(Exp1);
                d += e / theta;
                if d >= length {
                    break;
                }
                self.depths.push(d);
            }
        }
        self.offsets.push(self.depths.len());
    }
}

/// Poisson(`theta * L_i`) mutations on each branch, uniform depths.
pub fn scatter_mutations<R: Rng + ?Sized>(
    cpp: &CoalescentPointProcess,
    theta: f64,
    rng: &mut R,
) -> MutationSet {
    let mut set = MutationSet::default();
    set.clear();
    for &len in &cpp.depths {
        set.push_branch(len, theta, rng);
    }
    set
}

/// Population size, clonal family size and frequency spectrum of one realization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpectrumSample {
    pub n: u64,
    /// Carriers of the ancestral type.
    pub z0: u64,
    /// `(k, A(k))` pairs with `A(k) > 0`, increasing in `k`.
    pub families: Vec<(u64, u64)>,
}

impl SpectrumSample {
    /// Number of non-ancestral families of size `k`.
    pub fn a(&self, k: u64) -> u64 {
        self.families
            .binary_search_by_key(&k, |&(kk, _)| kk)
            .map(|i| self.families[i].1)
            .unwrap_or(0)
    }

    /// `Z0 + sum_k k A(k) == N`.
    pub fn is_conservative(&self) -> bool {
        self.z0 + self.families.iter().map(|&(k, c)| k * c).sum::<u64>() == self.n
    }

    /// Builds the spectrum from per-leaf type labels; `None` is the ancestral type.
    pub fn from_family_sizes(n: u64, z0: u64, mut sizes: Vec<u64>) -> Self {
        sizes.retain(|&s| s > 0);
        sizes.sort_unstable();
        let mut families: Vec<(u64, u64)> = Vec::new();
        for s in sizes {
            match families.last_mut() {
                Some((k, c)) if *k == s => *c += 1,
                _ => families.push((s, 1)),
            }
        }
        Self { n, z0, families }
    }
}

/// Reusable buffers for the sweep over leaves.
#[derive(Debug, Default)]
pub struct PartitionScratch {
    stack: Vec<(f64, usize)>,
    carriers: Vec<u64>,
}

/// Allelic partition of the leaves: each leaf carries the most recent mutation on its lineage.
pub fn extract_partition(cpp: &CoalescentPointProcess, muts: &MutationSet) -> Result<SpectrumSample> {
    validate_mutations(cpp, muts)?;
    Ok(sweep(&cpp.depths, muts, &mut PartitionScratch::default()))
}

/// Same result as [`extract_partition`], found by walking up each leaf's lineage.
/// Quadratic in the worst case; kept as a reference.
pub fn lineage_walk_partition(cpp: &CoalescentPointProcess, muts: &MutationSet) -> Result<SpectrumSample> {
    validate_mutations(cpp, muts)?;
    let h = cpp.depths();
    let mut carriers = vec![0u64; muts.total()];
    let mut z0 = 0;
    for leaf in 0..h.len() {
        let mut branch = leaf;
        let mut floor = 0.0;
        let found = loop {
            let hit = muts.branch(branch).iter().position(|&d| d >= floor);
            if let Some(j) = hit {
                break Some(muts.id(branch, j));
            }
            if branch == 0 {
                break None;
            }
            floor = h[branch];
            branch = (0..branch).rev().find(|&j| h[j] > h[branch]).unwrap();
        };
        match found {
            Some(id) => carriers[id] += 1,
            None => z0 += 1,
        }
    }
    Ok(SpectrumSample::from_family_sizes(h.len() as u64, z0, carriers))
}

fn validate_mutations(cpp: &CoalescentPointProcess, muts: &MutationSet) -> Result<()> {
    if muts.branch_count() != cpp.size() {
        return Err(Error::InvalidParameter(format!(
            "mutation set has {} branches, CPP has {}",
            muts.branch_count(),
            cpp.size()
        )));
    }
    for i in 0..cpp.size() {
        let len = cpp.branch_length(i);
        if muts.branch(i).iter().any(|&d| !(d > 0.0 && d < len)) {
            return Err(Error::InvalidParameter(format!(
                "mutation depth outside branch {i} of length {len}"
            )));
        }
    }
    Ok(())
}

// Stack holds the mutations on the current lineage, shallowest on top.
fn sweep(depths: &[f64], muts: &MutationSet, scratch: &mut PartitionScratch) -> SpectrumSample {
    let PartitionScratch { stack, carriers } = scratch;
    stack.clear();
    carriers.clear();
    carriers.resize(muts.total(), 0);
    let mut z0 = 0;
    for (i, &h) in depths.iter().enumerate() {
        if i > 0 {
            while matches!(stack.last(), Some(&(d, _)) if d < h) {
                stack.pop();
            }
        }
        let branch = muts.branch(i);
        for j in (0..branch.len()).rev() {
            stack.push((branch[j], muts.id(i, j)));
        }
        match stack.last() {
            Some(&(_, id)) => carriers[id] += 1,
            None => z0 += 1,
        }
    }
    SpectrumSample::from_family_sizes(depths.len() as u64, z0, std::mem::take(carriers))
}

/// Allocation-reusing sampler for Monte Carlo loops.
#[derive(Debug, Default)]
pub struct CppSampler {
    depths: Vec<f64>,
    muts: MutationSet,
    scratch: PartitionScratch,
}

impl CppSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Samples a CPP under `law`, scatters mutations at rate `theta` and returns its spectrum.
    pub fn spectrum<R: Rng + ?Sized>(&mut self, law: &BranchLaw<'_>, theta: f64, rng: &mut R) -> SpectrumSample {
        self.depths.clear();
        self.depths.push(law.span);
        law.fill_depths(&mut self.depths, rng);
        self.muts.clear();
        for &len in &self.depths {
            self.muts.push_branch(len, theta, rng);
        }
        let sample = sweep(&self.depths, &self.muts, &mut self.scratch);
        self.scratch.carriers = Vec::with_capacity(self.muts.total());
        sample
    }

    /// Population size only, without mutations.
    pub fn population<R: Rng + ?Sized>(&mut self, law: &BranchLaw<'_>, rng: &mut R) -> u64 {
        let mut n = 1;
        while let BranchDraw::Depth(_) = law.draw(rng) {
            n += 1;
        }
        n
    }

    /// Depths of the last sampled CPP.
    pub fn last_depths(&self) -> &[f64] {
        &self.depths
    }
}

/// Grafting construction: a lower CPP on `(t - a, t)` with i.i.d. CPPs of height `a`
/// attached above each of its leaves.
///
/// Returns the assembled CPP at horizon `t` and the lower population size `N^{(t)}_{t-a}`.
pub fn graft<R: Rng + ?Sized>(
    grid: &ScaleGrid,
    a: f64,
    t: f64,
    rng: &mut R,
) -> Result<(CoalescentPointProcess, usize)> {
    if !(a > 0.0 && a < t) {
        return Err(Error::Domain(format!("graft needs 0 < a < t, got a = {a}, t = {t}")));
    }
    let lower = BranchLaw::new(grid, a, t - a)?.sample_cpp(rng);
    let upper = BranchLaw::new(grid, 0.0, a)?;
    let mut depths = Vec::new();
    for (i, &h) in lower.depths.iter().enumerate() {
        depths.push(if i == 0 { t } else { h + a });
        upper.fill_depths(&mut depths, rng);
    }
    let lower_count = lower.size();
    Ok((CoalescentPointProcess { horizon: t, depths }, lower_count))
}

/// Samples `(N^{(t)}_{t-a}, Z_0^{(t)}(a))`: the lower tree of the grafting construction
/// and how many of its leaves carry no mutation on their lower lineage.
///
/// `a = 0` is the full tree at `t`; `a = t` is the degenerate single-leaf tree.
pub fn sample_lower_joint<R: Rng + ?Sized>(
    grid: &ScaleGrid,
    a: f64,
    t: f64,
    theta: f64,
    rng: &mut R,
) -> Result<(u64, u64)> {
    if !(a >= 0.0 && a <= t && t > 0.0) {
        return Err(Error::Domain(format!("lower tree needs 0 <= a <= t, got a = {a}, t = {t}")));
    }
    if a == t {
        return Ok((1, 1));
    }
    let law = BranchLaw::new(grid, a, t - a)?;
    let s = CppSampler::new().spectrum(&law, theta, rng);
    Ok((s.n, s.z0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LifespanDistribution, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> ScaleGrid {
        let p = ModelParams::new(2.0, 0.5, LifespanDistribution::Exponential { rate: 1.0 }).unwrap();
        ScaleGrid::build(&p, 1e-3, 3.0, false).unwrap()
    }

    #[test]
    fn boundary_uniform_exceeds() {
        let g = grid();
        let law = BranchLaw::new(&g, 0.0, 2.0).unwrap();
        assert_eq!(law.from_uniform(law.exceed_prob()), BranchDraw::Exceeds);
        assert_eq!(law.from_uniform(0.0), BranchDraw::Exceeds);
        match law.from_uniform(0.5) {
            BranchDraw::Depth(h) => assert!(h > 0.0 && h < 2.0),
            BranchDraw::Exceeds => panic!("u = 0.5 should give a branch"),
        }
    }

    #[test]
    fn cpp_construction_invariants() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let c = sample_cpp(&g, 2.0, &mut rng).unwrap();
            assert_eq!(c.depths()[0], 2.0);
            assert!(c.depths()[1..].iter().all(|&h| h > 0.0 && h < 2.0));
        }
        assert!(sample_cpp(&g, 5.0, &mut rng).is_err());
    }

    #[test]
    fn no_mutations_means_all_clonal() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = sample_cpp(&g, 2.0, &mut rng).unwrap();
        let m = scatter_mutations(&c, 0.0, &mut rng);
        assert_eq!(m.total(), 0);
        let s = extract_partition(&c, &m).unwrap();
        assert_eq!(s.z0, c.size() as u64);
        assert!(s.families.is_empty());
    }

    #[test]
    fn single_branch_single_mutation() {
        let c = CoalescentPointProcess::from_depths(2.0, vec![2.0]).unwrap();
        let m = MutationSet::from_branches(vec![vec![0.7]]);
        let s = extract_partition(&c, &m).unwrap();
        assert_eq!((s.n, s.z0, s.a(1)), (1, 0, 1));
    }

    #[test]
    fn hand_built_partition() {
        // leaves 0..4 with depths 3, 1, 2, 0.5; mutation at depth 1.5 on branch 2
        // is inherited by leaves 2 and 3; mutation at 0.2 on branch 1 marks leaf 1.
        let c = CoalescentPointProcess::from_depths(3.0, vec![3.0, 1.0, 2.0, 0.5]).unwrap();
        let m = MutationSet::from_branches(vec![vec![], vec![0.2], vec![1.5], vec![]]);
        let s = extract_partition(&c, &m).unwrap();
        assert_eq!(s.z0, 1);
        assert_eq!(s.a(1), 1);
        assert_eq!(s.a(2), 1);
        assert_eq!(s, lineage_walk_partition(&c, &m).unwrap());
    }

    #[test]
    fn rejects_mutation_beyond_branch() {
        let c = CoalescentPointProcess::from_depths(2.0, vec![2.0, 0.5]).unwrap();
        let m = MutationSet::from_branches(vec![vec![], vec![0.6]]);
        assert!(extract_partition(&c, &m).is_err());
        let m = MutationSet::from_branches(vec![vec![]]);
        assert!(extract_partition(&c, &m).is_err());
    }

    #[test]
    fn sweep_matches_lineage_walk() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let c = sample_cpp(&g, 2.0, &mut rng).unwrap();
            let m = scatter_mutations(&c, 0.5, &mut rng);
            let s = extract_partition(&c, &m).unwrap();
            assert!(s.is_conservative());
            assert_eq!(s, lineage_walk_partition(&c, &m).unwrap());
        }
    }

    #[test]
    fn graft_lower_count_is_positive() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let (c, n) = graft(&g, 1.999, 2.0, &mut rng).unwrap();
            assert!(n >= 1);
            assert_eq!(c.depths()[0], 2.0);
            assert_eq!(c.ancestors_at_depth(1.999), n);
        }
        assert!(graft(&g, 0.0, 2.0, &mut rng).is_err());
        assert!(graft(&g, 2.0, 2.0, &mut rng).is_err());
    }

    #[test]
    fn lower_joint_without_mutations_is_diagonal() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (n, z) = sample_lower_joint(&g, 1.0, 2.0, 0.0, &mut rng).unwrap();
            assert_eq!(n, z);
        }
        assert_eq!(sample_lower_joint(&g, 2.0, 2.0, 0.5, &mut rng).unwrap(), (1, 1));
        assert!(sample_lower_joint(&g, 2.5, 2.0, 0.5, &mut rng).is_err());
    }
}
