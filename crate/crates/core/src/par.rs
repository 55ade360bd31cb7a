//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they are plain iterator loops. Results are identical either way, which the
//! tests and benches rely on.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether the crate was built with rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// First (lowest-index) `Some` produced by `f`.
pub fn find_map_first<T, R, F>(items: &[T], f: F) -> Option<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Option<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().find_map_first(|(i, item)| f(i, item))
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().find_map(|(i, item)| f(i, item))
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
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

/// Order-preserving map over an integer range.
pub fn map_range<R, F>(range: Range<u64>, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}

/// True iff `f` holds for every item.
pub fn all<T, F>(items: &[T], f: F) -> bool
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().all(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().all(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_first_is_lowest_index() {
        let v: Vec<u32> = (0..10_000).collect();
        assert_eq!(find_map_first(&v, |i, &x| (x % 997 == 996).then_some(i)), Some(996));
        assert_eq!(find_map_first(&v, |_, &x| (x > 20_000).then_some(x)), None);
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map(&[1, 2, 3], |x| x * 2), vec![2, 4, 6]);
        assert_eq!(map_range(5..8, |x| x + 1), vec![6, 7, 8]);
        assert!(all(&[2, 4, 6], |x| x % 2 == 0));
    }
}
