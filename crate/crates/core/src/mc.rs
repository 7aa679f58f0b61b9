//! Replica-parallel Monte Carlo with results independent of the worker count.
//!
//! Replica `i` draws from a ChaCha8 stream selected by `(seed, i)`. Replicas are
//! grouped in fixed-size chunks; each chunk folds into its own accumulator and
//! the chunk accumulators are merged in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Replicas per chunk.
pub const CHUNK: u64 = 512;

/// The random stream of replica `replica`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Accumulators combined across chunks.
pub trait Merge {
    fn merge(&mut self, other: Self);
}

impl<T> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        self.extend(other);
    }
}

macro_rules! merge_tuple {
    ($($n:tt $t:ident),+) => {
        impl<$($t: Merge),+> Merge for ($($t,)+) {
            fn merge(&mut self, other: Self) {
                $(self.$n.merge(other.$n);)+
            }
        }
    };
}
merge_tuple!(0 A, 1 B);
merge_tuple!(0 A, 1 B, 2 C);
merge_tuple!(0 A, 1 B, 2 C, 3 D);

/// Exact running sums of an integer statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntMoments {
    pub count: u64,
    pub sum: i128,
    pub sum_sq: i128,
}

impl IntMoments {
    #[inline]
    pub fn push(&mut self, x: i64) {
        let x = x as i128;
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    /// Unbiased sample variance from the exact numerator `n S2 - S1^2`.
    pub fn variance(&self) -> f64 {
        let n = self.count as i128;
        if n < 2 {
            return f64::NAN;
        }
        let num = match n.checked_mul(self.sum_sq) {
            Some(a) => (a - self.sum * self.sum) as f64,
            None => n as f64 * self.sum_sq as f64 - (self.sum as f64).powi(2),
        };
        num / (n * (n - 1)) as f64
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl Merge for IntMoments {
    fn merge(&mut self, other: Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

impl<const N: usize> Merge for [IntMoments; N] {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Counts of non-negative integer outcomes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    #[inline]
    pub fn push(&mut self, v: u64) {
        let i = v as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expands back into a sorted sample.
    pub fn samples(&self) -> Vec<u64> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(v, &c)| std::iter::repeat_n(v as u64, c as usize))
            .collect()
    }
}

impl Merge for Histogram {
    fn merge(&mut self, other: Self) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

/// Runs `reps` replicas on `threads` workers (0 = all cores) and merges their accumulators.
pub fn fold<A, F>(seed: u64, reps: u64, threads: usize, body: F) -> Result<A>
where
    A: Merge + Default + Send,
    F: Fn(&mut A, &mut ChaCha8Rng, u64) + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let chunks = reps.div_ceil(CHUNK);
    let parts: Vec<A> = pool.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = A::default();
                for i in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                    let mut rng = replica_rng(seed, i);
                    body(&mut acc, &mut rng, i);
                }
                acc
            })
            .collect()
    });
    let mut total = A::default();
    for p in parts {
        total.merge(p);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn draw(threads: usize, reps: u64) -> (IntMoments, Vec<u64>) {
        fold(9, reps, threads, |acc: &mut (IntMoments, Vec<u64>), rng, _| {
            let x = rng.random_range(0..1000u64);
            acc.0.push(x as i64);
            acc.1.push(x);
        })
        .unwrap()
    }

    #[test]
    fn worker_count_does_not_matter() {
        assert_eq!(draw(1, 5000), draw(4, 5000));
    }

    #[test]
    fn exact_variance() {
        let mut m = IntMoments::default();
        for x in [1, 2, 3, 4] {
            m.push(x);
        }
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_round_trip() {
        let mut h = Histogram::default();
        for v in [3, 1, 3, 0] {
            h.push(v);
        }
        assert_eq!(h.samples(), vec![0, 1, 3, 3]);
        assert_eq!(h.total(), 4);
    }

    proptest! {
        #[test]
        fn merge_is_partition_independent(xs in proptest::collection::vec(-1000i64..1000, 1..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let mut whole = IntMoments::default();
            xs.iter().for_each(|&x| whole.push(x));
            let (mut a, mut b) = (IntMoments::default(), IntMoments::default());
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            b.merge(a);
            prop_assert_eq!(whole, b);
        }
    }
}
