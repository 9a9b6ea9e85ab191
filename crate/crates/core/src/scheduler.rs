//! Dependency- and resource-aware dispatch of query-graph nodes.
//!
//! [`Coordinator`] owns the graph and the resource pool and performs every
//! state mutation. Executors (the virtual-clock simulator in [`crate::sim`],
//! the threaded wall-clock executor in the IO crate) drive it: they ask for
//! dispatches, run backends, and report completions back.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::BackendRequest;
use crate::graph::{ContextEntry, GraphError, NodeId, NodeStatus, QueryGraph};
use crate::router::ExpertId;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceId(String);

impl ResourceId {
    pub fn new(id: impl Into<String>) -> Self {
        ResourceId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ResourceId {
    fn from(s: &str) -> Self {
        ResourceId::new(s)
    }
}

impl From<String> for ResourceId {
    fn from(s: String) -> Self {
        ResourceId(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceStatus {
    Free,
    Busy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// A completing node frees its resource and newly ready nodes dispatch
    /// immediately.
    #[default]
    EventDriven,
    /// Dispatch in rounds: the next round starts only once every node of the
    /// current one has completed, and all resources free at round end.
    StrictRounds,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("sub-query {node}: expert `{expert}` has no resource mapping")]
    UnmappedExpert { node: NodeId, expert: ExpertId },
    #[error("sub-query {0} has no expert assignment")]
    Unassigned(NodeId),
    #[error("sub-query {0} is not pending")]
    NotPending(NodeId),
    #[error("sub-query {0} is not ready")]
    NotReady(NodeId),
    #[error("unknown resource `{0}`")]
    UnknownResource(ResourceId),
    #[error("resource `{0}` is already busy")]
    ResourceBusy(ResourceId),
    #[error("backend failed on sub-query {node}: {message}")]
    BackendFailure { node: NodeId, message: String },
    #[error("no runnable sub-query while {pending:?} remain unfinished")]
    Deadlock { pending: Vec<NodeId> },
    #[error("completion reported for sub-query {0}, which is not running")]
    UnexpectedCompletion(NodeId),
    #[error("execution has not finished")]
    Unfinished,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Expert-to-resource mapping plus per-resource free/busy flags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePool {
    expert_to_resource: BTreeMap<ExpertId, ResourceId>,
    status: BTreeMap<ResourceId, ResourceStatus>,
}

impl ResourcePool {
    /// Pool whose resources are exactly the mapped ones, all free.
    pub fn new<I, E, R>(mapping: I) -> Self
    where
        I: IntoIterator<Item = (E, R)>,
        E: Into<ExpertId>,
        R: Into<ResourceId>,
    {
        let expert_to_resource: BTreeMap<ExpertId, ResourceId> = mapping
            .into_iter()
            .map(|(e, r)| (e.into(), r.into()))
            .collect();
        let status = expert_to_resource
            .values()
            .map(|r| (r.clone(), ResourceStatus::Free))
            .collect();
        ResourcePool {
            expert_to_resource,
            status,
        }
    }

    /// Pool with an explicit resource list; every mapped resource must be in it.
    pub fn with_resources<I, E, R>(
        resources: impl IntoIterator<Item = ResourceId>,
        mapping: I,
    ) -> Result<Self, SchedulerError>
    where
        I: IntoIterator<Item = (E, R)>,
        E: Into<ExpertId>,
        R: Into<ResourceId>,
    {
        let status: BTreeMap<ResourceId, ResourceStatus> = resources
            .into_iter()
            .map(|r| (r, ResourceStatus::Free))
            .collect();
        let mut expert_to_resource = BTreeMap::new();
        for (expert, resource) in mapping {
            let resource = resource.into();
            if !status.contains_key(&resource) {
                return Err(SchedulerError::UnknownResource(resource));
            }
            expert_to_resource.insert(expert.into(), resource);
        }
        Ok(ResourcePool {
            expert_to_resource,
            status,
        })
    }

    /// One resource per expert, named after it.
    pub fn dedicated<I, E>(experts: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<ExpertId>,
    {
        Self::new(experts.into_iter().map(|e| {
            let e = e.into();
            let r = ResourceId::new(alloc::format!("res-{e}"));
            (e, r)
        }))
    }

    /// Every expert shares one resource, forcing strictly serial execution.
    pub fn serial<I, E>(experts: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<ExpertId>,
    {
        Self::new(
            experts
                .into_iter()
                .map(|e| (e.into(), ResourceId::new("serial"))),
        )
    }

    pub fn resources(&self) -> impl Iterator<Item = &ResourceId> {
        self.status.keys()
    }

    pub fn mapping(&self) -> &BTreeMap<ExpertId, ResourceId> {
        &self.expert_to_resource
    }

    pub fn resource_for(&self, expert: &ExpertId) -> Option<&ResourceId> {
        self.expert_to_resource.get(expert)
    }

    pub fn status(&self, resource: &ResourceId) -> Option<ResourceStatus> {
        self.status.get(resource).copied()
    }

    pub fn is_free(&self, resource: &ResourceId) -> bool {
        self.status(resource) == Some(ResourceStatus::Free)
    }

    pub fn acquire(&mut self, resource: &ResourceId) -> Result<(), SchedulerError> {
        match self.status.get_mut(resource) {
            Some(s @ ResourceStatus::Free) => {
                *s = ResourceStatus::Busy;
                Ok(())
            }
            Some(ResourceStatus::Busy) => Err(SchedulerError::ResourceBusy(resource.clone())),
            None => Err(SchedulerError::UnknownResource(resource.clone())),
        }
    }

    pub fn release(&mut self, resource: &ResourceId) {
        if let Some(s) = self.status.get_mut(resource) {
            *s = ResourceStatus::Free;
        }
    }

    pub fn release_all(&mut self) {
        self.status
            .values_mut()
            .for_each(|s| *s = ResourceStatus::Free);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatched,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Offset from the start of execution.
    pub time: Duration,
    pub node: NodeId,
    pub kind: EventKind,
    pub resource: ResourceId,
}

/// Timestamped dispatch/completion log of one graph execution.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    /// Source node ids of the context each node was dispatched with.
    pub contexts: BTreeMap<NodeId, Vec<NodeId>>,
}

impl ExecutionTrace {
    fn record(&mut self, time: Duration, node: NodeId, kind: EventKind, resource: &ResourceId) {
        self.events.push(TraceEvent {
            time,
            node,
            kind,
            resource: resource.clone(),
        });
    }

    fn time_of(&self, node: NodeId, kind: EventKind) -> Option<Duration> {
        self.events
            .iter()
            .find(|e| e.node == node && e.kind == kind)
            .map(|e| e.time)
    }

    pub fn dispatched_at(&self, node: NodeId) -> Option<Duration> {
        self.time_of(node, EventKind::Dispatched)
    }

    pub fn completed_at(&self, node: NodeId) -> Option<Duration> {
        self.time_of(node, EventKind::Completed)
    }

    pub fn node_latency(&self, node: NodeId) -> Option<Duration> {
        Some(
            self.completed_at(node)?
                .saturating_sub(self.dispatched_at(node)?),
        )
    }

    /// Last completion minus first dispatch.
    pub fn makespan(&self) -> Duration {
        let start = self
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Dispatched)
            .map(|e| e.time)
            .min();
        let end = self
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Completed)
            .map(|e| e.time)
            .max();
        match (start, end) {
            (Some(s), Some(e)) => e.saturating_sub(s),
            _ => Duration::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionResult {
    /// Responses of out-degree-0 nodes, ascending by id.
    pub leaf_responses: Vec<(NodeId, String)>,
    pub all_responses: BTreeMap<NodeId, String>,
    pub trace: ExecutionTrace,
    /// Final graph state; every node `Completed`.
    pub graph: QueryGraph,
}

impl ExecutionResult {
    pub fn makespan(&self) -> Duration {
        self.trace.makespan()
    }
}

/// A failed execution with whatever trace was recorded before the failure.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionError {
    pub error: SchedulerError,
    pub trace: ExecutionTrace,
    pub responses: BTreeMap<NodeId, String>,
}

impl ExecutionError {
    pub fn node(&self) -> Option<NodeId> {
        match &self.error {
            SchedulerError::BackendFailure { node, .. }
            | SchedulerError::UnmappedExpert { node, .. }
            | SchedulerError::Unassigned(node) => Some(*node),
            _ => None,
        }
    }
}

impl From<SchedulerError> for ExecutionError {
    fn from(error: SchedulerError) -> Self {
        ExecutionError {
            error,
            trace: ExecutionTrace::default(),
            responses: BTreeMap::new(),
        }
    }
}

impl fmt::Display for ExecutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl core::error::Error for ExecutionError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Nodes without predecessors: every predecessor is vacuously complete.
pub fn initial_ready_set(graph: &QueryGraph) -> BTreeSet<NodeId> {
    graph.roots().into_iter().collect()
}

/// Picks the ready nodes to start now.
///
/// Walks `ready` in ascending id order and takes each node whose resource is
/// free and not already claimed by a lower id. The result is maximal: every
/// skipped node contends with a selected or busy resource. Selected nodes
/// become `Running` and their resources `Busy`.
pub fn schedule_nodes(
    ready: &BTreeSet<NodeId>,
    graph: &mut QueryGraph,
    pool: &mut ResourcePool,
) -> Result<BTreeSet<NodeId>, SchedulerError> {
    let mut plan: Vec<(NodeId, ResourceId)> = Vec::new();
    for &id in ready {
        let node = graph.node(id).ok_or(GraphError::UnknownNode(id))?;
        if node.status != NodeStatus::Ready {
            return Err(SchedulerError::NotReady(id));
        }
        let expert = node.expert.as_ref().ok_or(SchedulerError::Unassigned(id))?;
        let resource = pool
            .resource_for(expert)
            .ok_or_else(|| SchedulerError::UnmappedExpert {
                node: id,
                expert: expert.clone(),
            })?;
        if pool.is_free(resource) && plan.iter().all(|(_, r)| r != resource) {
            plan.push((id, resource.clone()));
        }
    }
    let mut selected = BTreeSet::new();
    for (id, resource) in plan {
        graph.advance_status(id, NodeStatus::Running)?;
        pool.acquire(&resource)?;
        selected.insert(id);
    }
    Ok(selected)
}

/// One node handed to an executor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dispatch {
    pub node: NodeId,
    pub expert: ExpertId,
    pub resource: ResourceId,
    pub request: BackendRequest,
}

/// Single owner of graph state, resource status and the trace.
#[derive(Debug)]
pub struct Coordinator {
    graph: QueryGraph,
    pool: ResourcePool,
    mode: SchedulingMode,
    ready: BTreeSet<NodeId>,
    running: BTreeMap<NodeId, ResourceId>,
    responses: BTreeMap<NodeId, String>,
    trace: ExecutionTrace,
}

impl Coordinator {
    /// Validates that every node is pending, assigned and mapped, then marks
    /// the root nodes ready.
    pub fn new(
        mut graph: QueryGraph,
        mut pool: ResourcePool,
        mode: SchedulingMode,
    ) -> Result<Self, SchedulerError> {
        for node in graph.nodes() {
            if node.status != NodeStatus::Pending {
                return Err(SchedulerError::NotPending(node.id));
            }
            let expert = node
                .expert
                .as_ref()
                .ok_or(SchedulerError::Unassigned(node.id))?;
            if pool.resource_for(expert).is_none() {
                return Err(SchedulerError::UnmappedExpert {
                    node: node.id,
                    expert: expert.clone(),
                });
            }
        }
        pool.release_all();
        let ready = initial_ready_set(&graph);
        for &id in &ready {
            graph.advance_status(id, NodeStatus::Ready)?;
        }
        Ok(Coordinator {
            graph,
            pool,
            mode,
            ready,
            running: BTreeMap::new(),
            responses: BTreeMap::new(),
            trace: ExecutionTrace::default(),
        })
    }

    pub fn graph(&self) -> &QueryGraph {
        &self.graph
    }

    pub fn pool(&self) -> &ResourcePool {
        &self.pool
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn ready(&self) -> &BTreeSet<NodeId> {
        &self.ready
    }

    pub fn in_flight(&self) -> usize {
        self.running.len()
    }

    pub fn is_finished(&self) -> bool {
        self.responses.len() == self.graph.len()
    }

    /// Starts every node that can start at `now`.
    ///
    /// In strict-rounds mode nothing starts while a round is in flight.
    /// Returns [`SchedulerError::Deadlock`] if nothing runs, nothing can
    /// start and nodes remain.
    pub fn dispatch(&mut self, now: Duration) -> Result<Vec<Dispatch>, SchedulerError> {
        if self.mode == SchedulingMode::StrictRounds && !self.running.is_empty() {
            return Ok(Vec::new());
        }
        let selected = schedule_nodes(&self.ready, &mut self.graph, &mut self.pool)?;
        if selected.is_empty() && self.running.is_empty() && !self.is_finished() {
            let pending = self
                .graph
                .node_ids()
                .filter(|id| !self.responses.contains_key(id))
                .collect();
            return Err(SchedulerError::Deadlock { pending });
        }
        let mut dispatches = Vec::with_capacity(selected.len());
        for id in selected {
            self.ready.remove(&id);
            let node = self.graph.node(id).expect("scheduled node exists");
            let expert = node.expert.clone().expect("validated at construction");
            let resource = self.pool.resource_for(&expert).expect("validated").clone();
            self.trace.record(now, id, EventKind::Dispatched, &resource);
            self.trace
                .contexts
                .insert(id, node.context.iter().map(|c| c.source).collect());
            let request = BackendRequest::new(id, node.text.clone(), node.context.clone());
            self.running.insert(id, resource.clone());
            dispatches.push(Dispatch {
                node: id,
                expert,
                resource,
                request,
            });
        }
        Ok(dispatches)
    }

    /// Records a node's response.
    ///
    /// The node is marked completed, its response is appended to every
    /// successor's context, and successors whose predecessors are now all
    /// complete become ready.
    pub fn complete(
        &mut self,
        node: NodeId,
        response: String,
        now: Duration,
    ) -> Result<(), SchedulerError> {
        let resource = self
            .running
            .remove(&node)
            .ok_or(SchedulerError::UnexpectedCompletion(node))?;
        self.graph.advance_status(node, NodeStatus::Completed)?;
        self.trace
            .record(now, node, EventKind::Completed, &resource);

        let successors = self.graph.successors(node).to_vec();
        for succ in successors {
            self.graph.push_context(
                succ,
                ContextEntry {
                    source: node,
                    response: response.clone(),
                },
            )?;
            let unblocked = self.graph.predecessors(succ).iter().all(|p| {
                self.graph
                    .node(*p)
                    .is_some_and(|n| n.status == NodeStatus::Completed)
            });
            if unblocked {
                self.graph.advance_status(succ, NodeStatus::Ready)?;
                self.ready.insert(succ);
            }
        }
        self.responses.insert(node, response);

        match self.mode {
            SchedulingMode::EventDriven => self.pool.release(&resource),
            SchedulingMode::StrictRounds => {
                if self.running.is_empty() {
                    self.pool.release_all();
                }
            }
        }
        Ok(())
    }

    /// Abandons execution after a backend error on `node`.
    pub fn abort(self, node: NodeId, message: impl ToString) -> ExecutionError {
        self.fail(SchedulerError::BackendFailure {
            node,
            message: message.to_string(),
        })
    }

    pub fn fail(self, error: SchedulerError) -> ExecutionError {
        ExecutionError {
            error,
            trace: self.trace,
            responses: self.responses,
        }
    }

    pub fn finish(self) -> Result<ExecutionResult, ExecutionError> {
        if !self.is_finished() {
            return Err(self.fail(SchedulerError::Unfinished));
        }
        let leaf_responses = self
            .graph
            .leaves()
            .into_iter()
            .map(|id| (id, self.responses[&id].clone()))
            .collect();
        Ok(ExecutionResult {
            leaf_responses,
            all_responses: self.responses,
            trace: self.trace,
            graph: self.graph,
        })
    }
}
