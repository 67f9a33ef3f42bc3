//! Batch execution helpers.
//!
//! Every data-parallel loop in the crate goes through [`map`] so the same code
//! runs on the rayon pool when the `parallel` feature is enabled and on the
//! calling thread otherwise.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

impl ExecMode {
    /// The mode actually used: `Parallel` degrades to `Sequential` when the
    /// crate is built without the `parallel` feature.
    pub fn effective(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving input order in the output.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `op` inside a pool bounded to `jobs` worker threads. `jobs == 0`
/// means the global pool's default size.
pub fn with_jobs<R, OP>(mode: ExecMode, jobs: usize, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel if jobs > 0 => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(op),
            Err(err) => {
                tracing::warn!(%err, "could not build bounded pool; using global pool");
                op()
            }
        },
        _ => {
            let _ = jobs;
            op()
        }
    }
}
