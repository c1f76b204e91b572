//! Node inventory and availability tracking.

use std::collections::HashMap;

use crate::error::{Result, SimError};
use crate::swf::{JobId, Time};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Free,
    Busy(JobId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub state: NodeState,
}

impl Node {
    pub fn running_job(&self) -> Option<JobId> {
        match self.state {
            NodeState::Busy(j) => Some(j),
            NodeState::Free => None,
        }
    }
}

/// Result of an allocation attempt that did not hit a fatal error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocation {
    Granted(Vec<NodeId>),
    Insufficient,
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    nodes: Vec<Node>,
    held: HashMap<JobId, Vec<NodeId>>,
    free_count: u32,
    busy_node_seconds: u64,
    last_update: Time,
}

impl ClusterState {
    pub fn new(total_nodes: u32) -> Self {
        assert!(total_nodes >= 1, "cluster needs at least one node");
        ClusterState {
            nodes: (0..total_nodes)
                .map(|id| Node { id, state: NodeState::Free })
                .collect(),
            held: HashMap::new(),
            free_count: total_nodes,
            busy_node_seconds: 0,
            last_update: 0,
        }
    }

    pub fn total_nodes(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn free_count(&self) -> u32 {
        self.free_count
    }

    pub fn busy_count(&self) -> u32 {
        self.total_nodes() - self.free_count
    }

    pub fn busy_node_seconds(&self) -> u64 {
        self.busy_node_seconds
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_of(&self, job_id: JobId) -> Option<&[NodeId]> {
        self.held.get(&job_id).map(Vec::as_slice)
    }

    fn accrue(&mut self, now: Time) {
        // time only moves forward; a stale `now` accrues nothing
        if now > self.last_update {
            self.busy_node_seconds += u64::from(self.busy_count()) * (now - self.last_update);
            self.last_update = now;
        }
    }

    /// Grant the `n` lowest-indexed free nodes to `job_id`.
    pub fn allocate(&mut self, job_id: JobId, n: u32, now: Time) -> Result<Allocation> {
        assert!(n >= 1, "allocation of zero nodes");
        if n > self.total_nodes() {
            return Err(SimError::Job {
                job_id,
                msg: format!("requests {n} nodes but the cluster has {}", self.total_nodes()),
            });
        }
        if self.held.contains_key(&job_id) {
            return Err(SimError::Internal(format!("job {job_id} already holds nodes")));
        }
        if self.free_count < n {
            return Ok(Allocation::Insufficient);
        }
        self.accrue(now);
        let mut granted = Vec::with_capacity(n as usize);
        for node in self.nodes.iter_mut() {
            if granted.len() == n as usize {
                break;
            }
            if node.state == NodeState::Free {
                node.state = NodeState::Busy(job_id);
                granted.push(node.id);
            }
        }
        self.free_count -= n;
        self.held.insert(job_id, granted.clone());
        Ok(Allocation::Granted(granted))
    }

    /// Free every node held by `job_id`; returns how many were freed.
    pub fn release(&mut self, job_id: JobId, now: Time) -> Result<u32> {
        let held = self
            .held
            .remove(&job_id)
            .ok_or_else(|| SimError::Internal(format!("release of job {job_id}, which holds no nodes")))?;
        self.accrue(now);
        for &id in &held {
            let node = &mut self.nodes[id as usize];
            debug_assert_eq!(node.state, NodeState::Busy(job_id));
            node.state = NodeState::Free;
        }
        let n = held.len() as u32;
        self.free_count += n;
        Ok(n)
    }

    /// Busy node-seconds over `total_nodes * makespan`.
    ///
    /// A non-positive makespan has no defined utilization; `None` is returned
    /// and callers report 0.
    pub fn utilization(&self, makespan: Time) -> Option<f64> {
        utilization(self.busy_node_seconds, self.total_nodes(), makespan)
    }
}

pub fn utilization(busy_node_seconds: u64, total_nodes: u32, makespan: Time) -> Option<f64> {
    if makespan == 0 {
        return None;
    }
    let u = busy_node_seconds as f64 / (f64::from(total_nodes) * makespan as f64);
    Some(u.clamp(0.0, 1.0))
}
