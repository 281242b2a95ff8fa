use crate::error::Result;

/// Evaluates `f(0..count)` and collects in index order, in parallel when the
/// `parallel` feature is on. Output never depends on scheduling.
pub(crate) fn map_indices<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}
