//! Seeded synthetic workloads for tests, benchmarks and training.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::swf::{JobRecord, Time};

/// Jobs alternate long and short, starting with a long one. They arrive in
/// batches of 1..=`max_batch`, with U[0, 2·`mean_gap`] seconds between batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlternatingWorkload {
    pub short_runtime: Time,
    pub long_runtime: Time,
    pub max_batch: usize,
    pub mean_gap: Time,
}

impl Default for AlternatingWorkload {
    fn default() -> Self {
        AlternatingWorkload { short_runtime: 1, long_runtime: 50, max_batch: 4, mean_gap: 50 }
    }
}

impl AlternatingWorkload {
    pub fn generate(&self, n: usize, seed: u64) -> Vec<JobRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jobs = Vec::with_capacity(n);
        let mut t = 0;
        while jobs.len() < n {
            let batch = rng.gen_range(1..=self.max_batch).min(n - jobs.len());
            for _ in 0..batch {
                let rt = if jobs.len() % 2 == 0 { self.long_runtime } else { self.short_runtime };
                jobs.push(JobRecord {
                    job_id: jobs.len() as u64 + 1,
                    submit_time: t,
                    actual_runtime: rt,
                    requested_nodes: 1,
                    requested_time: rt.max(1),
                });
            }
            t += rng.gen_range(0..=2 * self.mean_gap);
        }
        jobs
    }
}

/// Independent uniform job sizes. Requested time overestimates the runtime
/// by up to 2×, as user estimates usually do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomWorkload {
    pub max_nodes: u32,
    pub max_runtime: Time,
    pub max_gap: Time,
}

impl RandomWorkload {
    pub fn iter(self, n: usize, seed: u64) -> impl Iterator<Item = JobRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0;
        (0..n).map(move |i| {
            let rt = rng.gen_range(0..=self.max_runtime);
            let rec = JobRecord {
                job_id: i as u64 + 1,
                submit_time: t,
                actual_runtime: rt,
                requested_nodes: rng.gen_range(1..=self.max_nodes),
                requested_time: rng.gen_range(rt.max(1)..=2 * rt.max(1)),
            };
            t += rng.gen_range(0..=self.max_gap);
            rec
        })
    }

    pub fn generate(self, n: usize, seed: u64) -> Vec<JobRecord> {
        self.iter(n, seed).collect()
    }
}
