//! Internal helper for optionally-parallel, order-deterministic maps.

use alloc::vec::Vec;

/// Maps `f` over `0..n`, preserving index order in the output.
///
/// With the `parallel` feature the map runs on the rayon pool; the collected
/// order (and therefore every downstream reduction) is identical to the
/// sequential version.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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
