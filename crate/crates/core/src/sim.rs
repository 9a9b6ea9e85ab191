//! Discrete-event executor on a virtual clock.
//!
//! Backends report a simulated latency instead of sleeping, so makespans are
//! exact sums of those latencies. Completions that share a timestamp are
//! applied together, in ascending node id, before the next dispatch.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::time::Duration;

use crate::backend::BackendRegistry;
use crate::graph::{NodeId, QueryGraph};
use crate::scheduler::{
    Coordinator, ExecutionError, ExecutionResult, ResourcePool, SchedulingMode,
};

/// Runs the graph with parallel dispatch over `pool`.
pub fn execute(
    graph: QueryGraph,
    pool: ResourcePool,
    backends: &BackendRegistry,
    mode: SchedulingMode,
) -> Result<ExecutionResult, ExecutionError> {
    run(Coordinator::new(graph, pool, mode)?, backends)
}

/// Runs the graph one node at a time, lowest available id first.
pub fn execute_sequential(
    graph: QueryGraph,
    backends: &BackendRegistry,
) -> Result<ExecutionResult, ExecutionError> {
    let pool = ResourcePool::serial(graph.nodes().iter().filter_map(|n| n.expert.clone()));
    run(
        Coordinator::new(graph, pool, SchedulingMode::EventDriven)?,
        backends,
    )
}

fn run(
    mut coordinator: Coordinator,
    backends: &BackendRegistry,
) -> Result<ExecutionResult, ExecutionError> {
    let mut now = Duration::ZERO;
    let mut in_flight: BTreeMap<(Duration, NodeId), String> = BTreeMap::new();
    loop {
        let dispatches = match coordinator.dispatch(now) {
            Ok(d) => d,
            Err(e) => return Err(coordinator.fail(e)),
        };
        for d in dispatches {
            match backends.invoke(&d.expert, &d.request) {
                Ok(reply) => {
                    in_flight.insert((now + reply.latency, d.node), reply.text);
                }
                Err(e) => return Err(coordinator.abort(d.node, e)),
            }
        }
        let Some((&(next, _), _)) = in_flight.first_key_value() else {
            break;
        };
        now = next;
        while let Some(entry) = in_flight.first_entry() {
            if entry.key().0 != now {
                break;
            }
            let ((_, node), text) = entry.remove_entry();
            if let Err(e) = coordinator.complete(node, text, now) {
                return Err(coordinator.fail(e));
            }
        }
    }
    coordinator.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{
        BackendError, BackendRequest, ExpertBackend, LatencyModel, MockLatency, Reply,
    };
    use crate::graph::{build_graph, DependencyEdge};
    use crate::scheduler::{EventKind, SchedulerError};
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::vec::Vec;

    const UNIT: Duration = Duration::from_millis(100);

    fn graph(n: usize, pairs: &[(u32, u32)], experts: &[&str]) -> QueryGraph {
        let edges: Vec<_> = pairs
            .iter()
            .map(|&(a, b)| DependencyEdge::new(a, b))
            .collect();
        let mut g = build_graph(
            "q",
            (1..=n).map(|i| alloc::format!("sq{i}")).collect(),
            &edges,
        )
        .unwrap();
        for (i, e) in experts.iter().enumerate() {
            g.assign_expert(NodeId(i as u32 + 1), (*e).into()).unwrap();
        }
        g
    }

    fn unit_backends(experts: &[&str]) -> BackendRegistry {
        let mut r = BackendRegistry::new();
        for e in experts {
            r.register(
                (*e).into(),
                Arc::new(MockLatency::new(
                    (*e).into(),
                    LatencyModel::Constant { ms: 100.0 },
                    0,
                )),
            );
        }
        r
    }

    fn completion_order(result: &ExecutionResult) -> Vec<u32> {
        result
            .trace
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Completed)
            .map(|e| e.node.0)
            .collect()
    }

    #[test]
    fn chain_runs_in_order() {
        let g = graph(3, &[(1, 2), (2, 3)], &["A", "B", "C"]);
        let r = execute(
            g,
            ResourcePool::dedicated(["A", "B", "C"]),
            &unit_backends(&["A", "B", "C"]),
            SchedulingMode::EventDriven,
        )
        .unwrap();
        assert_eq!(completion_order(&r), vec![1, 2, 3]);
        assert_eq!(r.makespan(), 3 * UNIT);
    }

    #[test]
    fn independent_nodes_run_in_parallel() {
        let g = graph(3, &[], &["A", "B", "C"]);
        let r = execute(
            g,
            ResourcePool::dedicated(["A", "B", "C"]),
            &unit_backends(&["A", "B", "C"]),
            SchedulingMode::EventDriven,
        )
        .unwrap();
        assert_eq!(r.makespan(), UNIT);
        assert_eq!(r.leaf_responses.len(), 3);
    }

    #[test]
    fn diamond_with_shared_middle_resource() {
        // t0: 1, t1: 2, t2: 3 (waits for the shared resource), t3: 4
        let g = graph(4, &[(1, 2), (1, 3), (2, 4), (3, 4)], &["A", "B", "C", "A"]);
        let pool = ResourcePool::new([("A", "gpu0"), ("B", "gpu1"), ("C", "gpu1")]);
        let backends = unit_backends(&["A", "B", "C"]);
        let r = execute(g.clone(), pool, &backends, SchedulingMode::EventDriven).unwrap();
        assert_eq!(r.makespan(), 4 * UNIT);
        assert_eq!(r.trace.dispatched_at(NodeId(3)), Some(2 * UNIT));

        let seq = execute_sequential(g, &backends).unwrap();
        assert_eq!(seq.makespan(), 4 * UNIT);
        assert_eq!(seq.leaf_responses, r.leaf_responses);
    }

    #[test]
    fn sequential_baseline() {
        let backends = unit_backends(&["A", "B", "C"]);
        let r = execute_sequential(graph(3, &[], &["A", "B", "C"]), &backends).unwrap();
        assert_eq!(r.makespan(), 3 * UNIT);
        assert_eq!(completion_order(&r), vec![1, 2, 3]);
        let r =
            execute_sequential(graph(3, &[(1, 2), (2, 3)], &["A", "B", "C"]), &backends).unwrap();
        assert_eq!(r.makespan(), 3 * UNIT);
    }

    #[test]
    fn diamond_speedup_with_distinct_middle_resources() {
        let g = graph(4, &[(1, 2), (1, 3), (2, 4), (3, 4)], &["A", "A", "B", "B"]);
        let backends = unit_backends(&["A", "B"]);
        let par = execute(
            g.clone(),
            ResourcePool::dedicated(["A", "B"]),
            &backends,
            SchedulingMode::EventDriven,
        )
        .unwrap();
        let seq = execute_sequential(g, &backends).unwrap();
        assert_eq!(par.makespan(), 3 * UNIT);
        assert_eq!(seq.makespan(), 4 * UNIT);
    }

    #[test]
    fn event_driven_beats_strict_rounds_on_uneven_latency() {
        // 1 (A, 300ms) and 2 (B, 100ms) are roots; 3 (B) depends on 2.
        let mut backends = BackendRegistry::new();
        backends.register(
            "A".into(),
            Arc::new(MockLatency::new(
                "A".into(),
                LatencyModel::Constant { ms: 300.0 },
                0,
            )),
        );
        backends.register(
            "B".into(),
            Arc::new(MockLatency::new(
                "B".into(),
                LatencyModel::Constant { ms: 100.0 },
                0,
            )),
        );
        let g = graph(3, &[(2, 3)], &["A", "B", "B"]);
        let pool = ResourcePool::dedicated(["A", "B"]);
        let event = execute(
            g.clone(),
            pool.clone(),
            &backends,
            SchedulingMode::EventDriven,
        )
        .unwrap();
        let rounds = execute(g, pool, &backends, SchedulingMode::StrictRounds).unwrap();
        assert_eq!(event.makespan(), Duration::from_millis(300));
        assert_eq!(rounds.makespan(), Duration::from_millis(400));
        assert_eq!(event.all_responses, rounds.all_responses);
    }

    struct Failing;

    impl ExpertBackend for Failing {
        fn invoke(&self, _: &BackendRequest) -> Result<Reply, BackendError> {
            Err(BackendError::HttpFailure {
                status: Some(500),
                message: "boom".into(),
            })
        }
    }

    #[test]
    fn backend_failure_returns_partial_trace() {
        let mut backends = unit_backends(&["A"]);
        backends.register("B".into(), Arc::new(Failing));
        let g = graph(2, &[(1, 2)], &["A", "B"]);
        let err = execute(
            g,
            ResourcePool::dedicated(["A", "B"]),
            &backends,
            SchedulingMode::EventDriven,
        )
        .unwrap_err();
        assert!(matches!(
            err.error,
            SchedulerError::BackendFailure {
                node: NodeId(2),
                ..
            }
        ));
        assert_eq!(err.node(), Some(NodeId(2)));
        assert_eq!(err.responses.len(), 1);
        assert_eq!(err.trace.completed_at(NodeId(1)), Some(UNIT));
    }
}
