//! Final-answer composition from leaf responses only.
//!
//! Interior responses have already been consumed as context by their
//! successors, so only out-degree-0 nodes reach the aggregation prompt.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::{BackendError, TextModel};
use crate::graph::NodeId;
use crate::router::ExpertId;
use crate::scheduler::ExecutionResult;

pub const AGGREGATION_INSTRUCTION: &str = "You are an intelligent AI assistant, and your task is to combine expert \
responses such that overall response answers the query. Your answer must be coherent and should answer the original \
query by using the expert responses as context. Please provide a detailed, well-structured and error free answer to \
the original query.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("no leaf responses to aggregate")]
    EmptyLeaves,
    #[error("leaf {0} appears more than once")]
    DuplicateLeaf(NodeId),
    #[error("aggregator backend failed: {0}")]
    Backend(#[from] BackendError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafResponse {
    pub node: NodeId,
    pub expert: ExpertId,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregationInput {
    pub original_query: String,
    pub leaf_responses: Vec<LeafResponse>,
}

impl AggregationInput {
    pub fn from_execution(result: &ExecutionResult) -> Self {
        let leaf_responses = result
            .leaf_responses
            .iter()
            .map(|(id, text)| LeafResponse {
                node: *id,
                expert: result
                    .graph
                    .node(*id)
                    .and_then(|n| n.expert.clone())
                    .unwrap_or_else(ExpertId::base),
                text: text.clone(),
            })
            .collect();
        AggregationInput {
            original_query: result.graph.original_query().into(),
            leaf_responses,
        }
    }
}

/// Fills the aggregation template. Experts are numbered from 1 over the
/// leaves in ascending node id order.
pub fn render_prompt(input: &AggregationInput) -> Result<String, AggregationError> {
    if input.leaf_responses.is_empty() {
        return Err(AggregationError::EmptyLeaves);
    }
    let mut seen = BTreeSet::new();
    for leaf in &input.leaf_responses {
        if !seen.insert(leaf.node) {
            return Err(AggregationError::DuplicateLeaf(leaf.node));
        }
    }
    let mut leaves: Vec<&LeafResponse> = input.leaf_responses.iter().collect();
    leaves.sort_by_key(|l| l.node);

    let mut prompt = String::from(AGGREGATION_INSTRUCTION);
    prompt.push('\n');
    prompt.push_str(&format!("Query: {}\n", input.original_query));
    prompt.push_str("The expert responses are given below:\n");
    for (i, leaf) in leaves.iter().enumerate() {
        prompt.push_str(&format!("Response from Expert {}: {}\n", i + 1, leaf.text));
    }
    prompt.push_str("###\nOutput:\n");
    Ok(prompt)
}

pub fn aggregate(
    input: &AggregationInput,
    model: &dyn TextModel,
) -> Result<String, AggregationError> {
    let prompt = render_prompt(input)?;
    Ok(model.complete(&prompt)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::IdentityModel;
    use alloc::vec;

    fn leaf(node: u32, text: &str) -> LeafResponse {
        LeafResponse {
            node: NodeId(node),
            expert: "A".into(),
            text: text.into(),
        }
    }

    fn input(leaves: Vec<LeafResponse>) -> AggregationInput {
        AggregationInput {
            original_query: "Q".into(),
            leaf_responses: leaves,
        }
    }

    #[test]
    fn single_leaf_prompt() {
        let prompt = render_prompt(&input(vec![leaf(3, "ans")])).unwrap();
        assert!(prompt.starts_with(AGGREGATION_INSTRUCTION));
        assert!(prompt.contains("Query: Q\n"));
        assert!(prompt.contains("Response from Expert 1: ans\n"));
        assert!(!prompt.contains("Expert 2"));
    }

    #[test]
    fn leaves_are_numbered_by_node_order() {
        let prompt = render_prompt(&input(vec![leaf(5, "five"), leaf(2, "two")])).unwrap();
        let first = prompt.find("Response from Expert 1: two").unwrap();
        let second = prompt.find("Response from Expert 2: five").unwrap();
        assert!(first < second);
    }

    #[test]
    fn empty_and_duplicate_leaves() {
        assert_eq!(
            render_prompt(&input(vec![])),
            Err(AggregationError::EmptyLeaves)
        );
        assert_eq!(
            render_prompt(&input(vec![leaf(1, "a"), leaf(1, "b")])),
            Err(AggregationError::DuplicateLeaf(NodeId(1)))
        );
    }

    #[test]
    fn identity_model_returns_prompt() {
        let i = input(vec![leaf(1, "the leaf text")]);
        let answer = aggregate(&i, &IdentityModel).unwrap();
        assert_eq!(answer, render_prompt(&i).unwrap());
        assert!(answer.contains("the leaf text"));
    }

    #[test]
    fn exact_template() {
        let prompt = render_prompt(&input(vec![leaf(1, "x"), leaf(2, "y")])).unwrap();
        let expected = format!(
            "{AGGREGATION_INSTRUCTION}\nQuery: Q\nThe expert responses are given below:\n\
             Response from Expert 1: x\nResponse from Expert 2: y\n###\nOutput:\n"
        );
        assert_eq!(prompt, expected);
    }
}
