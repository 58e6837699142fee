//! Execution policy: rayon when the `parallel` feature is on, a plain loop otherwise.
//!
//! All parallel sites map over an index range and collect in index order, so
//! results are identical for any thread count.

/// How many worker threads a computation may use. `threads == 1` always runs
/// on the calling thread; `threads == 0` means "all available".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPolicy {
    pub threads: usize,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        ExecPolicy { threads: 0 }
    }
}

impl ExecPolicy {
    pub const SEQUENTIAL: ExecPolicy = ExecPolicy { threads: 1 };

    pub fn new(threads: usize) -> Self {
        ExecPolicy { threads }
    }

    pub fn is_sequential(&self) -> bool {
        self.threads == 1 || !cfg!(feature = "parallel")
    }

    /// `f(0), f(1), …, f(n-1)` collected in order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.is_sequential() || n <= 1 {
            return (0..n).map(f).collect();
        }
        self.map_parallel(n, f)
    }

    #[cfg(feature = "parallel")]
    fn map_parallel<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        let run = || (0..n).into_par_iter().map(&f).collect();
        if self.threads == 0 {
            run()
        } else {
            match rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
            {
                Ok(pool) => pool.install(run),
                Err(_) => (0..n).map(&f).collect(),
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn map_parallel<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }

    /// Applies `f` to each mutable chunk of `data` (chunk length `chunk`).
    pub fn for_each_chunk_mut<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if self.is_sequential() {
            data.chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        self.chunks_parallel(data, chunk, f);
    }

    #[cfg(feature = "parallel")]
    fn chunks_parallel<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        use rayon::prelude::*;
        let run = |data: &mut [T]| {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c))
        };
        if self.threads == 0 {
            run(data)
        } else {
            match rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build()
            {
                Ok(pool) => pool.install(|| run(data)),
                Err(_) => data
                    .chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c)),
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn chunks_parallel<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}
