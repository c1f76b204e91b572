//! Observation encoding, action masks and the reward signal.
//!
//! The state is a fixed-length vector: for each of the first K queued jobs
//! the triple (waited/τ, requested_time/τ, requested_nodes/total_nodes),
//! zero-padded past the end of the queue, followed by the free-node fraction
//! and min(queue_len, Q)/Q.

use crate::queue::{Job, QueueView};
use crate::swf::Time;

/// Time normalizer, seconds.
pub const TAU: f64 = 3600.0;
/// Queue-length normalizer.
pub const QUEUE_CAP: usize = 100;

pub type StateVector = Vec<f64>;

pub fn encode_state(window: &[&Job], queue_len: usize, free_nodes: u32, total_nodes: u32, now: Time, k: usize) -> StateVector {
    let total = f64::from(total_nodes);
    let mut s = Vec::with_capacity(3 * k + 2);
    for slot in 0..k {
        match window.get(slot) {
            Some(job) => {
                s.push(job.waited_until(now) as f64 / TAU);
                s.push(job.record.requested_time as f64 / TAU);
                s.push(f64::from(job.record.requested_nodes) / total);
            }
            None => s.extend([0.0; 3]),
        }
    }
    s.push(f64::from(free_nodes) / total);
    s.push(queue_len.min(QUEUE_CAP) as f64 / QUEUE_CAP as f64);
    s
}

/// Encode straight from a queue snapshot.
pub fn encode_view(view: QueueView<'_>, free_nodes: u32, total_nodes: u32, now: Time, k: usize) -> StateVector {
    let window: Vec<&Job> = view.iter().take(k).collect();
    encode_state(&window, view.len(), free_nodes, total_nodes, now, k)
}

/// Feasibility of each action: slot i when the job exists and fits, and the
/// trailing no-op.
pub fn action_mask(window: &[&Job], free_nodes: u32, k: usize, allow_noop: bool) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..k)
        .map(|i| window.get(i).is_some_and(|j| j.record.requested_nodes <= free_nodes))
        .collect();
    mask.push(allow_noop);
    mask
}

/// Negative wait accrued by the queued jobs since the last decision,
/// normalized by τ·Q. Jobs that arrived after the last decision are charged
/// from their submit time.
pub fn compute_reward<'a>(queued: impl IntoIterator<Item = &'a Job>, now: Time, last_decision_time: Time, tau: f64) -> f64 {
    let accrued: u64 = queued
        .into_iter()
        .map(|j| now.saturating_sub(last_decision_time.max(j.submit_time())))
        .sum();
    if accrued == 0 {
        return 0.0;
    }
    -(accrued as f64) / (tau * QUEUE_CAP as f64)
}
