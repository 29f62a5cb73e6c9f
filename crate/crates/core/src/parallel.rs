//! Data-parallel helpers. With the `parallel` feature the maps run on
//! rayon; without it (or with one job) they run sequentially. Output order
//! always matches input order, so results never depend on the worker
//! count.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Execution {
    /// `None` lets rayon pick; `Some(1)` is sequential.
    jobs: Option<usize>,
}

impl Execution {
    pub fn sequential() -> Self {
        Execution { jobs: Some(1) }
    }

    pub fn parallel() -> Self {
        Execution { jobs: None }
    }

    /// `0` means "let the runtime decide".
    pub fn with_jobs(jobs: usize) -> Self {
        Execution {
            jobs: (jobs > 0).then_some(jobs),
        }
    }

    pub fn jobs(&self) -> Option<usize> {
        self.jobs
    }

    pub fn is_sequential(&self) -> bool {
        !cfg!(feature = "parallel") || self.jobs == Some(1)
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if exec.is_sequential() {
        return items.iter().map(f).collect();
    }
    par_map(exec, items, f)
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    let run = || items.par_iter().map(&f).collect::<Vec<R>>();
    match exec.jobs {
        None => run(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => items.iter().map(&f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(_exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map_slice(Execution::sequential(), &xs, |x| x * x);
        for exec in [Execution::parallel(), Execution::with_jobs(3)] {
            assert_eq!(map_slice(exec, &xs, |x| x * x), seq);
        }
    }
}
