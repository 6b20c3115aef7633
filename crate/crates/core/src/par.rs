//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these dispatch to rayon; without it they are
//! ordinary iterator chains. Both paths return results in input order, so
//! any reduction done by the caller is deterministic regardless of the
//! number of worker threads.

macro_rules! if_rayon {
    ($rayon_value: expr, $else_value: expr) => {{
        #[cfg(feature = "parallel")]
        {
            ($rayon_value)
        }
        #[cfg(not(feature = "parallel"))]
        {
            ($else_value)
        }
    }};
}

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n` and collects the results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if_rayon!(
        (0..n).into_par_iter().map(f).collect(),
        (0..n).map(f).collect()
    )
}

/// Maps `f` over fixed-size chunks of `items`; chunk boundaries depend only
/// on `chunk`, never on the thread count.
pub fn map_chunks<I, T, F>(items: &[I], chunk: usize, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    if_rayon!(
        items.par_chunks(chunk).map(f).collect(),
        items.chunks(chunk).map(f).collect()
    )
}

/// Caps the global worker pool. Returns `false` if the pool was already
/// initialised or the crate was built without the `parallel` feature.
pub fn configure_threads(threads: Option<usize>) -> bool {
    if_rayon!(
        {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                builder = builder.num_threads(n.max(1));
            }
            builder.build_global().is_ok()
        },
        {
            let _ = threads;
            false
        }
    )
}

/// Whether this build runs data-parallel loops on rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indices(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn chunks_cover_everything() {
        let items: Vec<u32> = (0..37).collect();
        let sums = map_chunks(&items, 8, |c| c.iter().sum::<u32>());
        assert_eq!(sums.len(), 5);
        assert_eq!(sums.iter().sum::<u32>(), (0..37u32).sum::<u32>());
    }
}
