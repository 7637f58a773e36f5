use anchorcap_core::pipeline::SegmentExecutor;
use rayon::prelude::*;

/// Runs segment jobs on a dedicated rayon pool. Results come back in job
/// order, so output does not depend on the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses one thread per available core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl SegmentExecutor for RayonExecutor {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..jobs).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anchorcap_core::pipeline::Sequential;

    #[test]
    fn keeps_job_order() {
        let ex = RayonExecutor::new(3).unwrap();
        let want = Sequential.run(50, |i| i * i);
        assert_eq!(ex.run(50, |i| i * i), want);
    }
}
