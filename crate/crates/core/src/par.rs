//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in index order, so output never depends on
//! thread count or on whether the `parallel` feature is enabled. Reductions
//! are done over fixed-size chunks combined left to right.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per chunk for deterministic chunked reductions.
pub const CHUNK: usize = 4096;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Applies `f` to every element in place, possibly in parallel.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().for_each(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().for_each(f)
    }
}

/// Sum of `f(i)` for `i in 0..n`, accumulated per [`CHUNK`] and then over
/// chunks in order. Bit-identical with and without the `parallel` feature.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = map_range(n_chunks, |c| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(n);
        (start..end).map(&f).sum::<f64>()
    });
    partials.into_iter().sum()
}

/// Vector-valued variant of [`chunked_sum`]: every `f(i, acc)` call adds its
/// contribution into a length-`dim` accumulator.
pub fn chunked_vec_sum<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials = map_range(n_chunks, |c| {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(n);
        let mut acc = vec![0.0; dim];
        for i in start..end {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; dim];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(10_000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn chunked_sum_matches_chunk_order_reference() {
        let n = 3 * CHUNK + 17;
        let f = |i: usize| 1.0 / (1.0 + i as f64);
        let mut expected = 0.0;
        for c in 0..n.div_ceil(CHUNK) {
            let s: f64 = (c * CHUNK..((c + 1) * CHUNK).min(n)).map(f).sum();
            expected += s;
        }
        assert_eq!(chunked_sum(n, f).to_bits(), expected.to_bits());
    }

    #[test]
    fn chunked_vec_sum_counts() {
        let v = chunked_vec_sum(10_001, 2, |i, acc| {
            acc[i % 2] += 1.0;
        });
        assert_eq!(v, vec![5001.0, 5000.0]);
    }
}
