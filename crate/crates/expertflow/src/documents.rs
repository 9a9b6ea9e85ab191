//! JSON shapes for graphs, routing decisions and execution traces, as
//! exchanged by the CLI and the HTTP service.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use expertflow_core::graph::{build_graph, DependencyEdge, GraphError, NodeId, QueryGraph};
use expertflow_core::router::{ExpertId, RouteTarget, RoutingDecision};
use expertflow_core::scheduler::{EventKind, ExecutionTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert: Option<ExpertId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub query: String,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<[u32; 2]>,
}

impl From<&QueryGraph> for GraphDoc {
    fn from(graph: &QueryGraph) -> Self {
        GraphDoc {
            query: graph.original_query().to_string(),
            nodes: graph
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.get(),
                    text: n.text.clone(),
                    expert: n.expert.clone(),
                })
                .collect(),
            edges: graph
                .edges()
                .iter()
                .map(|e| [e.from.get(), e.to.get()])
                .collect(),
        }
    }
}

impl GraphDoc {
    /// Rebuilds the graph, re-running every structural check. Node ids must
    /// be `1..=n` in order.
    pub fn to_graph(&self) -> Result<QueryGraph, GraphError> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id as usize != i + 1 {
                return Err(GraphError::UnknownNode(NodeId(node.id)));
            }
        }
        let edges: Vec<DependencyEdge> = self
            .edges
            .iter()
            .map(|[a, b]| DependencyEdge::new(*a, *b))
            .collect();
        let mut graph = build_graph(
            &self.query,
            self.nodes.iter().map(|n| n.text.clone()).collect(),
            &edges,
        )?;
        for node in &self.nodes {
            if let Some(expert) = &node.expert {
                graph.assign_expert(NodeId(node.id), expert.clone())?;
            }
        }
        Ok(graph)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDoc {
    pub node: u32,
    pub expert: ExpertId,
    pub fallback: bool,
    pub best_similarity: f64,
    pub scores: BTreeMap<String, f64>,
}

impl RoutingDoc {
    pub fn new(node: NodeId, decision: &RoutingDecision) -> Self {
        RoutingDoc {
            node: node.get(),
            expert: decision.target.expert_id(),
            fallback: decision.target == RouteTarget::Base,
            best_similarity: decision.best_similarity,
            scores: decision
                .per_expert_scores
                .iter()
                .map(|(e, s)| (e.to_string(), *s))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEventDoc {
    /// Milliseconds since execution start.
    pub time: f64,
    pub node: u32,
    pub event: EventKind,
    pub resource: String,
}

pub fn trace_events(trace: &ExecutionTrace) -> Vec<TraceEventDoc> {
    trace
        .events
        .iter()
        .map(|e| TraceEventDoc {
            time: e.time.as_secs_f64() * 1e3,
            node: e.node.get(),
            event: e.kind,
            resource: e.resource.to_string(),
        })
        .collect()
}

/// One JSON event per line.
pub fn write_trace_jsonl<W: Write>(trace: &ExecutionTrace, mut out: W) -> io::Result<()> {
    for event in trace_events(trace) {
        serde_json::to_writer(&mut out, &event).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub makespan_ms: f64,
    /// Dispatch-to-completion time per node.
    pub node_latency_ms: BTreeMap<u32, f64>,
}

impl From<&ExecutionTrace> for TraceSummary {
    fn from(trace: &ExecutionTrace) -> Self {
        let nodes: std::collections::BTreeSet<NodeId> =
            trace.events.iter().map(|e| e.node).collect();
        TraceSummary {
            makespan_ms: trace.makespan().as_secs_f64() * 1e3,
            node_latency_ms: nodes
                .into_iter()
                .filter_map(|n| Some((n.get(), trace.node_latency(n)?.as_secs_f64() * 1e3)))
                .collect(),
        }
    }
}
