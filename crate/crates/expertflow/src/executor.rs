//! Wall-clock executor: the coordinator stays on the calling thread and each
//! dispatched node runs on its own scoped worker thread.
//!
//! Workers never touch graph state. They invoke the backend, sleep for any
//! simulated latency the backend reports, and send `(node, result)` back.

use std::collections::BTreeMap;
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Instant;

use expertflow_core::backend::{BackendError, BackendRegistry};
use expertflow_core::graph::{NodeId, QueryGraph};
use expertflow_core::scheduler::{
    Coordinator, ExecutionError, ExecutionResult, ResourceId, ResourcePool, SchedulingMode,
};

/// Process-wide locks for resources shared between concurrent requests.
#[derive(Debug, Default)]
pub struct ResourceLocks {
    locks: BTreeMap<ResourceId, Mutex<()>>,
}

impl ResourceLocks {
    pub fn for_pool(pool: &ResourcePool) -> Self {
        ResourceLocks {
            locks: pool
                .resources()
                .map(|r| (r.clone(), Mutex::new(())))
                .collect(),
        }
    }

    fn lock(&self, resource: &ResourceId) -> Option<MutexGuard<'_, ()>> {
        self.locks
            .get(resource)
            .map(|m| m.lock().unwrap_or_else(|poisoned| poisoned.into_inner()))
    }
}

pub fn execute(
    graph: QueryGraph,
    pool: ResourcePool,
    backends: &BackendRegistry,
    mode: SchedulingMode,
    shared: Option<&Arc<ResourceLocks>>,
) -> Result<ExecutionResult, ExecutionError> {
    run(Coordinator::new(graph, pool, mode)?, backends, shared)
}

/// One node at a time, lowest available id first.
pub fn execute_sequential(
    graph: QueryGraph,
    backends: &BackendRegistry,
) -> Result<ExecutionResult, ExecutionError> {
    let pool = ResourcePool::serial(graph.nodes().iter().filter_map(|n| n.expert.clone()));
    run(
        Coordinator::new(graph, pool, SchedulingMode::EventDriven)?,
        backends,
        None,
    )
}

fn run(
    mut coordinator: Coordinator,
    backends: &BackendRegistry,
    shared: Option<&Arc<ResourceLocks>>,
) -> Result<ExecutionResult, ExecutionError> {
    let start = Instant::now();
    let (tx, rx) = mpsc::channel::<(NodeId, Result<String, BackendError>)>();
    thread::scope(|scope| {
        loop {
            let dispatches = match coordinator.dispatch(start.elapsed()) {
                Ok(d) => d,
                Err(e) => return Err(coordinator.fail(e)),
            };
            for d in dispatches {
                let tx = tx.clone();
                let backend = backends.get(&d.expert).cloned();
                let locks = shared.cloned();
                scope.spawn(move || {
                    let _guard = locks.as_ref().and_then(|l| l.lock(&d.resource));
                    let result = match backend {
                        Some(b) => b.invoke(&d.request).map(|reply| {
                            if !reply.latency.is_zero() {
                                thread::sleep(reply.latency);
                            }
                            reply.text
                        }),
                        None => Err(BackendError::Unregistered(d.expert.clone())),
                    };
                    let _ = tx.send((d.node, result));
                });
            }
            if coordinator.in_flight() == 0 {
                break;
            }
            let (node, result) = rx.recv().expect("a worker is in flight");
            match result {
                Ok(text) => {
                    if let Err(e) = coordinator.complete(node, text, start.elapsed()) {
                        return Err(coordinator.fail(e));
                    }
                }
                Err(e) => return Err(coordinator.abort(node, e)),
            }
        }
        coordinator.finish()
    })
}
