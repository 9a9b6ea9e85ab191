//! Decomposer output parsing and the validated sub-query DAG.
//!
//! The decomposer emits each sub-query wrapped in `<q>…</q>` and at most one
//! `<dep>…</dep>` span holding comma separated dependency chains such as
//! `1 -> 4, 2 -> 3, 3 -> 4`. An edge `(i, j)` means sub-query `j` needs the
//! response of sub-query `i` before it can run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::router::ExpertId;

/// 1-based sub-query number, as written by the decomposer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn get(self) -> u32 {
        self.0
    }

    fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    fn from_index(index: usize) -> Self {
        NodeId(index as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Ready,
    Running,
    Completed,
}

impl NodeStatus {
    /// Whether `next` is the single legal successor state.
    pub fn can_advance_to(self, next: NodeStatus) -> bool {
        matches!(
            (self, next),
            (NodeStatus::Pending, NodeStatus::Ready)
                | (NodeStatus::Ready, NodeStatus::Running)
                | (NodeStatus::Running, NodeStatus::Completed)
        )
    }
}

/// A predecessor's response handed to a dependent sub-query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub source: NodeId,
    pub response: String,
}

impl ContextEntry {
    /// Prompt line for this entry: `Context[i]: <response>`.
    pub fn render(&self) -> String {
        alloc::format!("Context[{}]: {}", self.source, self.response)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubQueryNode {
    pub id: NodeId,
    pub text: String,
    pub expert: Option<ExpertId>,
    pub status: NodeStatus,
    /// Predecessor responses, kept in ascending predecessor id order.
    pub context: Vec<ContextEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from: NodeId,
    pub to: NodeId,
}

impl DependencyEdge {
    pub fn new(from: u32, to: u32) -> Self {
        DependencyEdge {
            from: NodeId(from),
            to: NodeId(to),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("malformed decomposition tokens at byte {position}: {reason}")]
    MalformedTokens {
        position: usize,
        reason: &'static str,
    },
    #[error("dependency endpoint `{endpoint}` does not name a sub-query in 1..={count}")]
    BadDependencyRef { endpoint: String, count: usize },
    #[error("decomposition contains no sub-queries")]
    EmptyDecomposition,
    #[error("sub-query {0} depends on itself")]
    SelfLoop(NodeId),
    #[error("dependency cycle {}", format_cycle(.cycle))]
    CycleDetected { cycle: Vec<NodeId> },
    #[error("no sub-query with id {0}")]
    UnknownNode(NodeId),
    #[error("sub-query {node} cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        node: NodeId,
        from: NodeStatus,
        to: NodeStatus,
    },
    #[error("sub-query {node} cannot take context from {source_node}")]
    InvalidContext { node: NodeId, source_node: NodeId },
    #[error("sub-query {0} already has an expert assignment")]
    AlreadyAssigned(NodeId),
}

fn format_cycle(cycle: &[NodeId]) -> String {
    let mut out = String::new();
    for id in cycle.iter().chain(cycle.first()) {
        if !out.is_empty() {
            out.push_str(" -> ");
        }
        out.push_str(&id.to_string());
    }
    out
}

/// Sub-queries in textual order plus deduplicated edges in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub sub_queries: Vec<String>,
    pub edges: Vec<DependencyEdge>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tag {
    QueryOpen,
    QueryClose,
    DepOpen,
    DepClose,
}

const TAGS: &[(&str, Tag)] = &[
    ("<q>", Tag::QueryOpen),
    ("</q>", Tag::QueryClose),
    ("<\\q>", Tag::QueryClose),
    ("<dep>", Tag::DepOpen),
    ("</dep>", Tag::DepClose),
    ("<\\dep>", Tag::DepClose),
];

fn tag_at(rest: &str) -> Option<(Tag, usize)> {
    TAGS.iter()
        .find(|(literal, _)| rest.starts_with(literal))
        .map(|(literal, tag)| (*tag, literal.len()))
}

/// Parses the decomposer's token-tagged target sequence.
///
/// Text outside of tagged spans is ignored. Both `</q>` and `<\q>` close a
/// span (likewise for `dep`). An absent or empty dependency span means the
/// sub-queries are independent.
pub fn parse_decomposition(raw: &str) -> Result<Decomposition, GraphError> {
    let mut sub_queries = Vec::new();
    let mut dependency: Option<&str> = None;
    let mut open: Option<(Tag, usize, usize)> = None;
    let mut cursor = 0;

    while let Some(offset) = raw[cursor..].find('<') {
        let at = cursor + offset;
        let Some((tag, len)) = tag_at(&raw[at..]) else {
            cursor = at + 1;
            continue;
        };
        match (open, tag) {
            (None, Tag::QueryOpen) => open = Some((Tag::QueryOpen, at, at + len)),
            (None, Tag::DepOpen) => {
                if dependency.is_some() {
                    return Err(GraphError::MalformedTokens {
                        position: at,
                        reason: "more than one <dep> span",
                    });
                }
                open = Some((Tag::DepOpen, at, at + len));
            }
            (Some((Tag::QueryOpen, start, body)), Tag::QueryClose) => {
                let text = raw[body..at].trim();
                if text.is_empty() {
                    return Err(GraphError::MalformedTokens {
                        position: start,
                        reason: "empty sub-query span",
                    });
                }
                sub_queries.push(text.to_string());
                open = None;
            }
            (Some((Tag::DepOpen, _, body)), Tag::DepClose) => {
                dependency = Some(&raw[body..at]);
                open = None;
            }
            (None, _) => {
                return Err(GraphError::MalformedTokens {
                    position: at,
                    reason: "closing tag without a matching opening tag",
                })
            }
            (Some(_), _) => {
                return Err(GraphError::MalformedTokens {
                    position: at,
                    reason: "nested or mismatched tag",
                })
            }
        }
        cursor = at + len;
    }

    if let Some((_, start, _)) = open {
        return Err(GraphError::MalformedTokens {
            position: start,
            reason: "unterminated span",
        });
    }
    if sub_queries.is_empty() {
        return Err(GraphError::EmptyDecomposition);
    }
    let edges = parse_dependencies(dependency.unwrap_or(""), sub_queries.len())?;
    Ok(Decomposition { sub_queries, edges })
}

/// Expands `a -> b -> c, d -> e` into pairwise edges, deduplicated.
pub fn parse_dependencies(spec: &str, count: usize) -> Result<Vec<DependencyEdge>, GraphError> {
    let spec = spec.trim().trim_matches('"').trim();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for clause in spec.split(',') {
        let clause = clause.trim();
        if clause.is_empty() {
            continue;
        }
        let mut previous: Option<NodeId> = None;
        for endpoint in clause.split("->") {
            let id = parse_endpoint(endpoint.trim(), count)?;
            if let Some(from) = previous {
                let edge = DependencyEdge { from, to: id };
                if seen.insert(edge) {
                    edges.push(edge);
                }
            }
            previous = Some(id);
        }
    }
    Ok(edges)
}

fn parse_endpoint(token: &str, count: usize) -> Result<NodeId, GraphError> {
    match token.parse::<u32>() {
        Ok(n) if n >= 1 && (n as usize) <= count => Ok(NodeId(n)),
        _ => Err(GraphError::BadDependencyRef {
            endpoint: token.to_string(),
            count,
        }),
    }
}

/// Emits the canonical token-tagged form: every `<q>` span in numbering
/// order, then one `<dep>` span of pairwise clauses (omitted when there are
/// no edges).
pub fn render_decomposition<S: AsRef<str>>(sub_queries: &[S], edges: &[DependencyEdge]) -> String {
    let mut out = String::new();
    for text in sub_queries {
        out.push_str("<q>");
        out.push_str(text.as_ref());
        out.push_str("</q>");
    }
    if !edges.is_empty() {
        out.push_str("<dep>");
        for (i, edge) in edges.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&alloc::format!("{} -> {}", edge.from, edge.to));
        }
        out.push_str("</dep>");
    }
    out
}

/// Directed acyclic graph of sub-queries.
///
/// Structure (nodes, edges) is frozen at construction. Status and context are
/// mutated only through the scheduler's coordinator.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGraph {
    original_query: String,
    nodes: Vec<SubQueryNode>,
    edges: Vec<DependencyEdge>,
    predecessors: Vec<Vec<NodeId>>,
    successors: Vec<Vec<NodeId>>,
}

/// Builds a validated DAG with every node `Pending` and no context.
pub fn build_graph(
    original_query: &str,
    sub_queries: Vec<String>,
    edges: &[DependencyEdge],
) -> Result<QueryGraph, GraphError> {
    let count = sub_queries.len();
    if count == 0 {
        return Err(GraphError::EmptyDecomposition);
    }
    let mut unique = BTreeSet::new();
    for edge in edges {
        for end in [edge.from, edge.to] {
            if end.0 == 0 || end.index() >= count {
                return Err(GraphError::BadDependencyRef {
                    endpoint: end.to_string(),
                    count,
                });
            }
        }
        if edge.from == edge.to {
            return Err(GraphError::SelfLoop(edge.from));
        }
        unique.insert(*edge);
    }

    let mut predecessors = alloc::vec![Vec::new(); count];
    let mut successors = alloc::vec![Vec::new(); count];
    for edge in &unique {
        successors[edge.from.index()].push(edge.to);
        predecessors[edge.to.index()].push(edge.from);
    }
    for list in predecessors.iter_mut() {
        list.sort_unstable();
    }
    if let Some(cycle) = find_cycle(&successors) {
        return Err(GraphError::CycleDetected { cycle });
    }

    let nodes = sub_queries
        .into_iter()
        .enumerate()
        .map(|(i, text)| SubQueryNode {
            id: NodeId::from_index(i),
            text,
            expert: None,
            status: NodeStatus::Pending,
            context: Vec::new(),
        })
        .collect();

    Ok(QueryGraph {
        original_query: original_query.to_string(),
        nodes,
        edges: unique.into_iter().collect(),
        predecessors,
        successors,
    })
}

/// Parses raw decomposer output and builds the graph in one step.
pub fn graph_from_decomposition(original_query: &str, raw: &str) -> Result<QueryGraph, GraphError> {
    let decomposition = parse_decomposition(raw)?;
    build_graph(
        original_query,
        decomposition.sub_queries,
        &decomposition.edges,
    )
}

/// Iterative three-colour DFS; returns the ids on the first back-edge cycle.
fn find_cycle(successors: &[Vec<NodeId>]) -> Option<Vec<NodeId>> {
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut colour = alloc::vec![WHITE; successors.len()];
    let mut stack: Vec<(usize, usize)> = Vec::new();

    for start in 0..successors.len() {
        if colour[start] != WHITE {
            continue;
        }
        colour[start] = GREY;
        stack.push((start, 0));
        while let Some(top) = stack.last_mut() {
            let (node, next) = *top;
            if let Some(&succ) = successors[node].get(next) {
                top.1 += 1;
                let succ = succ.index();
                match colour[succ] {
                    WHITE => {
                        colour[succ] = GREY;
                        stack.push((succ, 0));
                    }
                    GREY => {
                        let pos = stack.iter().position(|(n, _)| *n == succ).unwrap_or(0);
                        return Some(
                            stack[pos..]
                                .iter()
                                .map(|(n, _)| NodeId::from_index(*n))
                                .collect(),
                        );
                    }
                    _ => {}
                }
            } else {
                colour[node] = BLACK;
                stack.pop();
            }
        }
    }
    None
}

impl QueryGraph {
    pub fn original_query(&self) -> &str {
        &self.original_query
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SubQueryNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&SubQueryNode> {
        if id.0 == 0 {
            return None;
        }
        self.nodes.get(id.index())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Deduplicated edges, sorted by `(from, to)`.
    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn predecessors(&self, id: NodeId) -> &[NodeId] {
        self.node(id)
            .map_or(&[], |_| &self.predecessors[id.index()])
    }

    pub fn successors(&self, id: NodeId) -> &[NodeId] {
        self.node(id).map_or(&[], |_| &self.successors[id.index()])
    }

    /// Nodes with out-degree 0, ascending.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|id| self.successors(*id).is_empty())
            .collect()
    }

    /// Nodes with in-degree 0, ascending.
    pub fn roots(&self) -> Vec<NodeId> {
        self.node_ids()
            .filter(|id| self.predecessors(*id).is_empty())
            .collect()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.node(id).is_some() && self.successors(id).is_empty()
    }

    /// Kahn's algorithm, taking the smallest available id at each step.
    pub fn topological_order(&self) -> Vec<NodeId> {
        let mut indegree: Vec<usize> = self.predecessors.iter().map(Vec::len).collect();
        let mut available: BTreeSet<NodeId> = self.roots().into_iter().collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(next) = available.pop_first() {
            order.push(next);
            for succ in self.successors(next) {
                let d = &mut indegree[succ.index()];
                *d -= 1;
                if *d == 0 {
                    available.insert(*succ);
                }
            }
        }
        order
    }

    /// Expert assignment per node, `None` where unassigned.
    pub fn assignments(&self) -> BTreeMap<NodeId, Option<ExpertId>> {
        self.nodes
            .iter()
            .map(|n| (n.id, n.expert.clone()))
            .collect()
    }

    /// Sets the routed expert of a node. Each node is assigned once.
    pub fn assign_expert(&mut self, id: NodeId, expert: ExpertId) -> Result<(), GraphError> {
        let node = self.node_mut(id)?;
        if node.expert.is_some() {
            return Err(GraphError::AlreadyAssigned(id));
        }
        node.expert = Some(expert);
        Ok(())
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut SubQueryNode, GraphError> {
        if id.0 == 0 {
            return Err(GraphError::UnknownNode(id));
        }
        self.nodes
            .get_mut(id.index())
            .ok_or(GraphError::UnknownNode(id))
    }

    pub(crate) fn advance_status(&mut self, id: NodeId, to: NodeStatus) -> Result<(), GraphError> {
        let node = self.node_mut(id)?;
        if !node.status.can_advance_to(to) {
            return Err(GraphError::InvalidTransition {
                node: id,
                from: node.status,
                to,
            });
        }
        node.status = to;
        Ok(())
    }

    /// Appends a predecessor's response; keeps the context sorted by source.
    pub(crate) fn push_context(
        &mut self,
        id: NodeId,
        entry: ContextEntry,
    ) -> Result<(), GraphError> {
        let is_pred = self.predecessors(id).binary_search(&entry.source).is_ok();
        let node = self.node_mut(id)?;
        if !is_pred || node.context.iter().any(|c| c.source == entry.source) {
            return Err(GraphError::InvalidContext {
                node: id,
                source_node: entry.source,
            });
        }
        let pos = node.context.partition_point(|c| c.source < entry.source);
        node.context.insert(pos, entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn edges(pairs: &[(u32, u32)]) -> Vec<DependencyEdge> {
        pairs
            .iter()
            .map(|&(a, b)| DependencyEdge::new(a, b))
            .collect()
    }

    fn strings(n: usize) -> Vec<String> {
        (1..=n).map(|i| alloc::format!("sub-query {i}?")).collect()
    }

    #[test]
    fn parses_chain_dependency() {
        let d =
            parse_decomposition("<q>A?</q><q>B?</q><q>C?</q><q>D?</q><dep>1 -> 2 -> 3 -> 4</dep>")
                .unwrap();
        assert_eq!(d.sub_queries, vec!["A?", "B?", "C?", "D?"]);
        assert_eq!(d.edges, edges(&[(1, 2), (2, 3), (3, 4)]));
    }

    #[test]
    fn parses_multi_clause_dependency() {
        let d = parse_decomposition(
            "<q>A?</q><q>B?</q><q>C?</q><q>D?</q><dep>1 -> 4, 2 -> 3, 3 -> 4</dep>",
        )
        .unwrap();
        assert_eq!(d.edges, edges(&[(1, 4), (2, 3), (3, 4)]));
    }

    #[test]
    fn single_sub_query_without_dependencies() {
        let d = parse_decomposition("<q>Only one?</q>").unwrap();
        assert_eq!(d.sub_queries, vec!["Only one?"]);
        assert!(d.edges.is_empty());
    }

    #[test]
    fn out_of_range_endpoint() {
        let err = parse_decomposition("<q>A?</q><dep>1 -> 3</dep>").unwrap_err();
        assert_eq!(
            err,
            GraphError::BadDependencyRef {
                endpoint: "3".into(),
                count: 1
            }
        );
    }

    #[test]
    fn backslash_closing_tags_and_whitespace() {
        let d = parse_decomposition("  <q> A? <\\q>\n<q>B?<\\q> <dep> \"1->2\" <\\dep>").unwrap();
        assert_eq!(d.sub_queries, vec!["A?", "B?"]);
        assert_eq!(d.edges, edges(&[(1, 2)]));
    }

    #[test]
    fn empty_dep_span_is_independence() {
        let d = parse_decomposition("<q>A?</q><q>B?</q><dep>  </dep>").unwrap();
        assert!(d.edges.is_empty());
    }

    #[test]
    fn duplicate_clauses_are_deduplicated() {
        let d =
            parse_decomposition("<q>A</q><q>B</q><q>C</q><dep>1 -> 2, 1 -> 2 -> 3, 2 -> 3</dep>")
                .unwrap();
        assert_eq!(d.edges, edges(&[(1, 2), (2, 3)]));
    }

    #[test]
    fn malformed_inputs() {
        for raw in [
            "<q>A?",
            "A?</q>",
            "<q>A?<q>B?</q></q>",
            "<q>A?<dep>1</dep></q>",
            "<q>A?</q><dep>1</dep><dep>1</dep>",
            "<q>   </q>",
            "<q>A?</dep>",
        ] {
            assert!(
                matches!(
                    parse_decomposition(raw),
                    Err(GraphError::MalformedTokens { .. })
                ),
                "{raw}"
            );
        }
        assert_eq!(
            parse_decomposition("no tags at all"),
            Err(GraphError::EmptyDecomposition)
        );
        assert_eq!(
            parse_decomposition("<dep>1 -> 2</dep>"),
            Err(GraphError::EmptyDecomposition)
        );
    }

    #[test]
    fn non_numeric_or_zero_endpoint() {
        assert!(matches!(
            parse_decomposition("<q>A</q><q>B</q><dep>1 -> x</dep>"),
            Err(GraphError::BadDependencyRef { .. })
        ));
        assert!(matches!(
            parse_decomposition("<q>A</q><q>B</q><dep>0 -> 1</dep>"),
            Err(GraphError::BadDependencyRef { .. })
        ));
        assert!(matches!(
            parse_decomposition("<q>A</q><q>B</q><dep>1 -> -> 2</dep>"),
            Err(GraphError::BadDependencyRef { .. })
        ));
    }

    #[test]
    fn chain_graph_has_single_leaf() {
        let g = build_graph("q", strings(3), &edges(&[(1, 2), (2, 3)])).unwrap();
        assert_eq!(g.leaves(), vec![NodeId(3)]);
        assert_eq!(g.roots(), vec![NodeId(1)]);
        assert!(g
            .nodes()
            .iter()
            .all(|n| n.status == NodeStatus::Pending && n.context.is_empty()));
    }

    #[test]
    fn two_cycle_rejected() {
        let err = build_graph("q", strings(2), &edges(&[(1, 2), (2, 1)])).unwrap_err();
        assert_eq!(
            err,
            GraphError::CycleDetected {
                cycle: vec![NodeId(1), NodeId(2)]
            }
        );
        assert_eq!(err.to_string(), "dependency cycle 1 -> 2 -> 1");
    }

    #[test]
    fn self_loop_rejected() {
        let err = build_graph("q", strings(2), &edges(&[(2, 2)])).unwrap_err();
        assert_eq!(err, GraphError::SelfLoop(NodeId(2)));
    }

    #[test]
    fn second_table_graph_degrees() {
        // out-degrees: 1->{4}, 2->{3}, 3->{4}, 4->{}; in-degrees: 1:0, 2:0, 3:1, 4:2
        let g = build_graph("q", strings(4), &edges(&[(1, 4), (2, 3), (3, 4)])).unwrap();
        assert_eq!(g.leaves(), vec![NodeId(4)]);
        assert_eq!(g.roots(), vec![NodeId(1), NodeId(2)]);
        assert_eq!(g.predecessors(NodeId(4)), &[NodeId(1), NodeId(3)]);
    }

    #[test]
    fn all_independent_nodes_are_leaves() {
        let g = build_graph("q", strings(3), &[]).unwrap();
        assert_eq!(g.leaves(), vec![NodeId(1), NodeId(2), NodeId(3)]);
        assert_eq!(g.roots(), g.leaves());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = build_graph("q", strings(2), &edges(&[(1, 2), (1, 2)])).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn topological_order_prefers_low_ids() {
        let g = build_graph("q", strings(4), &edges(&[(3, 1), (2, 4)])).unwrap();
        assert_eq!(
            g.topological_order(),
            vec![NodeId(2), NodeId(3), NodeId(1), NodeId(4)]
        );
    }

    #[test]
    fn status_transitions_are_linear() {
        let mut g = build_graph("q", strings(1), &[]).unwrap();
        let id = NodeId(1);
        assert!(g.advance_status(id, NodeStatus::Running).is_err());
        g.advance_status(id, NodeStatus::Ready).unwrap();
        g.advance_status(id, NodeStatus::Running).unwrap();
        g.advance_status(id, NodeStatus::Completed).unwrap();
        assert!(g.advance_status(id, NodeStatus::Ready).is_err());
    }

    #[test]
    fn context_only_from_predecessors_once() {
        let mut g = build_graph("q", strings(3), &edges(&[(1, 3), (2, 3)])).unwrap();
        let entry = |s: u32| ContextEntry {
            source: NodeId(s),
            response: "r".into(),
        };
        g.push_context(NodeId(3), entry(2)).unwrap();
        g.push_context(NodeId(3), entry(1)).unwrap();
        assert!(g.push_context(NodeId(3), entry(1)).is_err());
        assert!(g.push_context(NodeId(2), entry(1)).is_err());
        let sources: Vec<_> = g
            .node(NodeId(3))
            .unwrap()
            .context
            .iter()
            .map(|c| c.source)
            .collect();
        assert_eq!(sources, vec![NodeId(1), NodeId(2)]);
    }

    #[test]
    fn render_emits_canonical_form() {
        let raw = render_decomposition(&["A?", "B?"], &edges(&[(1, 2)]));
        assert_eq!(raw, "<q>A?</q><q>B?</q><dep>1 -> 2</dep>");
        assert_eq!(render_decomposition(&["A?"], &[]), "<q>A?</q>");
    }
}
