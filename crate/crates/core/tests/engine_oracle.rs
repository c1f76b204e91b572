mod common;

use batchsim::engine::simulate;
use batchsim::policy::{Fcfs, Ljf, SchedulingPolicy, Sjf};
use batchsim::swf::{JobRecord, Time};
use common::{reference_simulate, CheckedEasy, RefPolicy};
use proptest::prelude::*;

fn trace_strategy() -> impl Strategy<Value = (Vec<JobRecord>, u32)> {
    (1u32..=8).prop_flat_map(|total| {
        let job = (0u64..=4, 0u64..=20, 1u32..=total + 1, 0u64..=5);
        (Just(total), prop::collection::vec(job, 1..=10))
    })
    .prop_map(|(total, raw)| {
        let mut t = 0;
        let jobs = raw
            .into_iter()
            .enumerate()
            .map(|(i, (gap, rt, nodes, slack))| {
                t += gap;
                JobRecord {
                    job_id: i as u64 + 1,
                    submit_time: t,
                    actual_runtime: rt,
                    requested_nodes: nodes,
                    requested_time: rt.max(1) + slack,
                }
            })
            .collect();
        (jobs, total)
    })
}

fn engine_times(jobs: &[JobRecord], total: u32, policy: &mut dyn SchedulingPolicy) -> Vec<(u64, Time, Time)> {
    let (_, finished) = simulate(jobs, total, policy).unwrap();
    let mut v: Vec<_> = finished.iter().map(|j| (j.id(), j.start_time().unwrap(), j.end_time().unwrap())).collect();
    v.sort();
    v
}

fn reference_times(jobs: &[JobRecord], total: u32, p: RefPolicy) -> Vec<(u64, Time, Time)> {
    reference_simulate(jobs, total, p).times.into_iter().map(|(id, (s, e))| (id, s, e)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn heuristics_match_reference((jobs, total) in trace_strategy()) {
        prop_assert_eq!(engine_times(&jobs, total, &mut Fcfs), reference_times(&jobs, total, RefPolicy::Fcfs));
        prop_assert_eq!(engine_times(&jobs, total, &mut Sjf), reference_times(&jobs, total, RefPolicy::Sjf));
        prop_assert_eq!(engine_times(&jobs, total, &mut Ljf), reference_times(&jobs, total, RefPolicy::Ljf));
    }

    #[test]
    fn conservation_holds((jobs, total) in trace_strategy()) {
        for policy in [&mut Fcfs as &mut dyn SchedulingPolicy, &mut Sjf, &mut Ljf] {
            let (summary, finished) = simulate(&jobs, total, policy).unwrap();
            prop_assert_eq!(summary.counts.read, jobs.len());
            prop_assert_eq!(summary.counts.finished + summary.counts.discarded, jobs.len());
            prop_assert_eq!(summary.counts.queued + summary.counts.running, 0);
            let expected: u64 = finished.iter().map(|j| j.record.requested_nodes as u64 * j.record.actual_runtime).sum();
            prop_assert_eq!(summary.busy_node_seconds, expected);
            let u = summary.metrics.utilization;
            prop_assert!((0.0..=1.0).contains(&u), "utilization {}", u);
        }
    }

    #[test]
    fn easy_never_delays_head((jobs, total) in trace_strategy()) {
        let mut checked = CheckedEasy::default();
        let (summary, _) = simulate(&jobs, total, &mut checked).unwrap();
        prop_assert!(checked.violations.is_empty(), "{:?}", checked.violations);
        prop_assert_eq!(summary.counts.finished + summary.counts.discarded, jobs.len());
    }
}

#[test]
fn worked_example_exact() {
    let jobs = common::three_job_trace();
    let (summary, finished) = simulate(&jobs, 4, &mut Fcfs).unwrap();
    let waits: u64 = finished.iter().map(|j| j.wait_time().unwrap()).sum();
    assert_eq!((waits, finished.len()), (17, 3));
    assert_eq!(summary.metrics.makespan, 15);
    assert_eq!(summary.busy_node_seconds, 36);
    assert_eq!(summary.metrics.utilization, 0.6);

    let (_, finished) = simulate(&jobs, 4, &mut Sjf).unwrap();
    let mut waits: Vec<_> = finished.iter().map(|j| (j.id(), j.wait_time().unwrap())).collect();
    waits.sort();
    assert_eq!(waits, vec![(1, 0), (2, 9), (3, 0)]);
}

#[test]
fn easy_backfills_short_job_past_blocked_head() {
    let rec = |id, submit, rt, nodes| JobRecord { job_id: id, submit_time: submit, actual_runtime: rt, requested_nodes: nodes, requested_time: rt };
    // head (job 2) waits for job 1; job 3 fits in the gap, job 4 would delay the head
    let jobs = vec![rec(1, 0, 10, 3), rec(2, 1, 5, 4), rec(3, 2, 8, 1), rec(4, 2, 20, 1)];
    let mut checked = CheckedEasy::default();
    let (_, finished) = simulate(&jobs, 4, &mut checked).unwrap();
    assert!(checked.violations.is_empty(), "{:?}", checked.violations);
    let start = |id| finished.iter().find(|j| j.id() == id).unwrap().start_time().unwrap();
    assert_eq!(start(3), 2);
    assert_eq!(start(2), 10);
    assert_eq!(start(4), 15);
}
