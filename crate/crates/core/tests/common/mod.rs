//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use batchsim::metrics::DebugLog;
use batchsim::policy::{EasyBackfill, PolicyKind, SchedContext, ScheduleDecision, SchedulingPolicy};
use batchsim::rl::{Agent, Algorithm, Checkpoint, Hyperparameters, NeuralNet};
use batchsim::swf::{JobId, JobRecord, Time};
use batchsim::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefPolicy {
    Fcfs,
    Sjf,
    Ljf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RefOutcome {
    /// job id → (start, end)
    pub times: BTreeMap<JobId, (Time, Time)>,
    pub discarded: Vec<JobId>,
}

/// Brute-force simulator that advances the clock one second at a time and
/// reschedules at every tick until nothing more starts.
pub fn reference_simulate(jobs: &[JobRecord], total_nodes: u32, policy: RefPolicy) -> RefOutcome {
    let mut out = RefOutcome::default();
    let mut free = total_nodes;
    let mut running: Vec<(Time, u32)> = Vec::new();
    let mut queue: Vec<&JobRecord> = Vec::new();
    let mut next = 0;
    let mut t: Time = 0;
    loop {
        running.retain(|&(end, n)| {
            if end == t {
                free += n;
                false
            } else {
                true
            }
        });
        while next < jobs.len() && jobs[next].submit_time == t {
            let j = &jobs[next];
            if j.requested_nodes > total_nodes {
                out.discarded.push(j.job_id);
            } else {
                queue.push(j);
            }
            next += 1;
        }
        loop {
            let mut order: Vec<&JobRecord> = queue.clone();
            match policy {
                RefPolicy::Fcfs => {}
                RefPolicy::Sjf => order.sort_by_key(|j| (j.requested_time, j.submit_time, j.job_id)),
                RefPolicy::Ljf => order.sort_by_key(|j| (std::cmp::Reverse(j.requested_time), j.submit_time, j.job_id)),
            }
            let mut started = Vec::new();
            for j in order {
                if j.requested_nodes > free {
                    break;
                }
                free -= j.requested_nodes;
                started.push(j.job_id);
                out.times.insert(j.job_id, (t, t + j.actual_runtime));
                if j.actual_runtime == 0 {
                    free += j.requested_nodes;
                } else {
                    running.push((t + j.actual_runtime, j.requested_nodes));
                }
            }
            queue.retain(|j| !started.contains(&j.job_id));
            if started.is_empty() {
                break;
            }
        }
        if next == jobs.len() && queue.is_empty() && running.is_empty() {
            return out;
        }
        t += 1;
        assert!(t < 1_000_000, "reference simulator did not terminate");
    }
}

/// Small random trace: up to `max_jobs` jobs on up to `max_nodes` nodes with
/// runtimes up to `max_runtime`. About one job in twenty is too wide for the
/// cluster.
pub fn random_small_trace(rng: &mut ChaCha8Rng, max_jobs: usize, max_nodes: u32, max_runtime: Time) -> (Vec<JobRecord>, u32) {
    let total = rng.gen_range(1..=max_nodes);
    let n = rng.gen_range(1..=max_jobs);
    let mut t = 0;
    let jobs = (0..n)
        .map(|i| {
            t += rng.gen_range(0..=4);
            let rt = rng.gen_range(0..=max_runtime);
            let nodes = if rng.gen_ratio(1, 20) { total + 1 } else { rng.gen_range(1..=total) };
            JobRecord {
                job_id: i as u64 + 1,
                submit_time: t,
                actual_runtime: rt,
                requested_nodes: nodes,
                requested_time: rt.max(1) + rng.gen_range(0..=5),
            }
        })
        .collect();
    (jobs, total)
}

/// Earliest time at which `needed` nodes are free, given nodes free now and
/// (end, nodes) holds that release at their end (never before `now`).
pub fn independent_shadow(needed: u32, free_now: u32, now: Time, holds: &[(Time, u32)]) -> Option<Time> {
    let mut ends: Vec<(Time, u32)> = holds.iter().map(|&(e, n)| (e.max(now), n)).collect();
    ends.sort();
    let mut free = free_now;
    if free >= needed {
        return Some(now);
    }
    for (e, n) in ends {
        free += n;
        if free >= needed {
            return Some(e);
        }
    }
    None
}

/// Wraps EASY and checks every decision: the FCFS prefix comes first, the
/// whole decision fits, and backfilled jobs never push back the blocked
/// head's shadow start.
#[derive(Default)]
pub struct CheckedEasy {
    pub checks: usize,
    pub backfilled: usize,
    pub violations: Vec<String>,
}

impl SchedulingPolicy for CheckedEasy {
    fn name(&self) -> &str {
        "easy-checked"
    }

    fn select(&mut self, ctx: &SchedContext<'_>, log: &mut DebugLog) -> Result<ScheduleDecision> {
        let d = EasyBackfill.select(ctx, log)?;
        let queue: Vec<&JobRecord> = ctx.queue.iter().map(|j| &j.record).collect();
        let mut holds: Vec<(Time, u32)> = ctx.running.iter().map(|r| (r.expected_end, r.nodes)).collect();
        let mut free = ctx.free_nodes;
        let mut k = 0;
        while k < queue.len() && queue[k].requested_nodes <= free {
            free -= queue[k].requested_nodes;
            holds.push((ctx.now + queue[k].requested_time, queue[k].requested_nodes));
            k += 1;
        }
        let prefix: Vec<JobId> = queue[..k].iter().map(|j| j.job_id).collect();
        if d.jobs.len() < k || d.jobs[..k] != prefix[..] {
            self.violations.push(format!("t={}: decision {:?} does not start with FCFS prefix {:?}", ctx.now, d.jobs, prefix));
            return Ok(d);
        }
        if k == queue.len() {
            return Ok(d);
        }
        let head = queue[k];
        let before = independent_shadow(head.requested_nodes, free, ctx.now, &holds);
        for id in &d.jobs[k..] {
            let j = queue.iter().find(|j| j.job_id == *id).expect("picked job is queued");
            if j.requested_nodes > free {
                self.violations.push(format!("t={}: backfilled job {id} does not fit", ctx.now));
                return Ok(d);
            }
            free -= j.requested_nodes;
            holds.push((ctx.now + j.requested_time, j.requested_nodes));
            self.backfilled += 1;
        }
        let after = independent_shadow(head.requested_nodes, free, ctx.now, &holds);
        self.checks += 1;
        if after > before {
            self.violations.push(format!(
                "t={}: head job {} shadow moved from {before:?} to {after:?} by {:?}",
                ctx.now,
                head.job_id,
                &d.jobs[k..]
            ));
        }
        Ok(d)
    }
}

/// Wait-time totals per policy, as exact integers.
pub fn total_wait(times: &BTreeMap<JobId, (Time, Time)>, jobs: &[JobRecord]) -> Time {
    jobs.iter().filter_map(|j| times.get(&j.job_id).map(|(s, _)| s - j.submit_time)).sum()
}

pub fn three_job_trace() -> Vec<JobRecord> {
    let rec = |id, submit, rt, nodes| JobRecord { job_id: id, submit_time: submit, actual_runtime: rt, requested_nodes: nodes, requested_time: rt };
    vec![rec(1, 0, 10, 2), rec(2, 1, 5, 3), rec(3, 2, 1, 1)]
}

pub fn small_hp() -> Hyperparameters {
    Hyperparameters { window_k: 5, hidden_sizes: vec![8, 8], ..Default::default() }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Largest relative error between backprop and central differences of
/// L = c · f(x), over all parameters of `nets` random networks.
pub fn gradient_check(nets: usize, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = small_hp().layer_sizes();
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let mut net = NeuralNet::new(&sizes, &mut rng);
        // nonzero biases too, so the bias gradients are checked away from zero
        net.params_mut().for_each(|p| *p += rng.gen_range(-0.1..0.1));
        let x = random_vec(&mut rng, sizes[0]);
        let c = random_vec(&mut rng, *sizes.last().unwrap());
        let loss = |n: &NeuralNet| n.forward(&x).iter().zip(&c).map(|(o, c)| o * c).sum::<f64>();
        let analytic: Vec<f64> = net.backward(&net.forward_cached(&x), &c).flat().collect();
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

/// Random (state, mask, epsilon) draws against both agents. Returns the
/// number of draws that picked a masked action.
pub fn masking_violations(draws: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hp = small_hp();
    let n_actions = hp.num_actions();
    let mut agents = [PolicyKind::Dqn, PolicyKind::Pg].map(|k| Agent::new(k, hp.clone(), seed).unwrap());
    let mut bad = 0;
    for d in 0..draws {
        let state = random_vec(&mut rng, hp.state_len()).into_iter().map(|v| v * 10.0).collect::<Vec<_>>();
        let mut mask: Vec<bool> = (0..n_actions).map(|_| rng.gen_bool(0.4)).collect();
        if !mask.iter().any(|&m| m) {
            let i = rng.gen_range(0..n_actions);
            mask[i] = true;
        }
        let epsilon: f64 = rng.gen();
        let agent = &mut agents[d % 2];
        let explore = rng.gen_bool(0.5);
        if let Agent::Dqn(a) = agent {
            a.epsilon = epsilon;
        }
        let a = agent.act(&state, &mask, explore);
        if a >= n_actions || !mask[a] {
            bad += 1;
        }
    }
    bad
}

/// Save and reload a checkpoint through a file; true when the reloaded net
/// reproduces the forward outputs bit for bit on `inputs` random states.
pub fn checkpoint_roundtrip(dir: &std::path::Path, inputs: usize, seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hp = Hyperparameters::default();
    let net = NeuralNet::new(&hp.layer_sizes(), &mut rng);
    let ckpt = Checkpoint { algorithm: Algorithm::Dqn, epsilon: 0.123456789, hp: hp.clone(), net };
    let path = dir.join("roundtrip.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    if back.epsilon.to_bits() != ckpt.epsilon.to_bits() || back.hp != ckpt.hp {
        return false;
    }
    (0..inputs).all(|_| {
        let x: Vec<f64> = (0..hp.state_len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = ckpt.net.forward(&x);
        let b = back.net.forward(&x);
        a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits())
    })
}
