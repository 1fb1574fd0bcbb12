//! Execution policy for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the hot loops run on rayon;
//! `ExecMode::Sequential` keeps the exact same code path single-threaded.
//! Without the feature the crate compiles with no rayon dependency and
//! everything is sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            ExecMode::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
/// Results are identical for both modes: each item is computed independently
/// and floating-point reductions stay inside `f`.
pub fn map_indexed<U, F>(n: usize, mode: ExecMode, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}
