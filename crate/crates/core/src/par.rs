//! Execution strategy for independent batches of work.

use serde::{Deserialize, Serialize};

/// How independent work items (campaigns, sweep entries, dual executions) are run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

/// Environment variable capping the worker count of parallel sweeps.
pub const THREADS_ENV: &str = "GRAPHMETA_THREADS";

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

impl Parallelism {
    /// Maps `f` over `items`, preserving order. Falls back to sequential
    /// execution when the `parallel` feature is off or the thread cap is 1.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Parallelism::Sequential => items.iter().map(f).collect(),
            Parallelism::Rayon => par_map(items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match thread_cap() {
        Some(1) => items.iter().map(f).collect(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let _ = thread_cap();
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_agree() {
        let items: Vec<u64> = (0..100).collect();
        let seq = Parallelism::Sequential.map(&items, |x| x * x);
        let par = Parallelism::Rayon.map(&items, |x| x * x);
        assert_eq!(seq, par);
    }
}
