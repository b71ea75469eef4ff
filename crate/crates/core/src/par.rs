//! Thin switch between rayon and sequential iteration so the crate also
//! builds for targets without threads.

/// Calls `f(index, item)` on every element of `items`.
pub(crate) fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Fallible [`for_each_mut`]. Every item is visited; the error reported is
/// the one with the lowest index, so the outcome is schedule independent.
pub(crate) fn try_for_each_mut<T, E, F>(items: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    results.into_iter().collect()
}

/// Ordered map over `0..n`.
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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
        (0..n).map(f).collect()
    }
}
