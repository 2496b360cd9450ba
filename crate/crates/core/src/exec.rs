//! Execution policy for the data-parallel inner loops.
//!
//! Every hot loop in the crate (per-region statistics, convolution output
//! channels, α-grid sweeps, bootstrap and permutation resamples) goes through
//! [`ExecPolicy::map`]. With the `parallel` feature enabled (the default) the
//! `Parallel` policy dispatches onto the rayon pool; without it both policies
//! run the same sequential loop. Results are always collected in index order,
//! so the two policies produce identical outputs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    #[default]
    Parallel,
}

impl ExecPolicy {
    /// Whether this policy actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }

    /// Evaluate `f(i)` for `i in 0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == ExecPolicy::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`ExecPolicy::map`]; the first error in index order wins.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    /// Apply `f` to disjoint mutable chunks of `data` of length `chunk`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == ExecPolicy::Parallel {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Derive an independent 64-bit seed for resample `index` from a root seed.
///
/// SplitMix64 finalizer over `root ^ golden * (index + 1)`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let a = ExecPolicy::Sequential.map(1000, |i| (i as f64).sqrt());
        let b = ExecPolicy::Parallel.map(1000, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_mutation_covers_everything() {
        let mut v = vec![0usize; 103];
        ExecPolicy::Parallel.for_each_chunk_mut(&mut v, 10, |ci, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = ci * 10 + j;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
