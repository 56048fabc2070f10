//! Ordered data-parallel maps. With the `parallel` feature these run on
//! rayon; the `_seq` versions are always compiled so both paths can be
//! compared and benchmarked.

/// `f(0), f(1), ..., f(n-1)` in order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indices_seq(n, f)
    }
}

pub fn map_indices_seq<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Applies `f` to consecutive chunks of `items`, results in chunk order.
pub fn map_chunks<I, T, F>(items: &[I], chunk: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_chunks(chunk).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_chunks_seq(items, chunk, f)
    }
}

pub fn map_chunks_seq<I, T, F: Fn(&[I]) -> T>(items: &[I], chunk: usize, f: F) -> Vec<T> {
    items.chunks(chunk.max(1)).map(f).collect()
}

/// Counts items satisfying `pred`, split into chunks.
pub fn count_matching<I, F>(items: &[I], chunk: usize, pred: F) -> u64
where
    I: Sync,
    F: Fn(&I) -> bool + Sync + Send,
{
    map_chunks(items, chunk, |c| c.iter().filter(|x| pred(x)).count() as u64).into_iter().sum()
}

pub fn count_matching_seq<I, F: Fn(&I) -> bool>(items: &[I], pred: F) -> u64 {
    items.iter().filter(|x| pred(x)).count() as u64
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
