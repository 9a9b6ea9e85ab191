//! Embedding-similarity expert routing.
//!
//! Each expert is summarised by one or more centroid embeddings built from its
//! training sentences. A sub-query goes to the expert whose best centroid has
//! the highest cosine similarity, or to the base model when that score falls
//! below the `sq_sim` threshold.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, QueryGraph};

/// Default similarity threshold below which routing falls back to base.
pub const DEFAULT_SQ_SIM: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertId(String);

impl ExpertId {
    /// Reserved id of the non-specialised fallback model.
    pub const BASE: &'static str = "base";

    pub fn new(id: impl Into<String>) -> Self {
        ExpertId(id.into())
    }

    pub fn base() -> Self {
        ExpertId(Self::BASE.to_string())
    }

    pub fn is_base(&self) -> bool {
        self.0 == Self::BASE
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ExpertId {
    fn from(s: &str) -> Self {
        ExpertId::new(s)
    }
}

impl From<String> for ExpertId {
    fn from(s: String) -> Self {
        ExpertId(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RouterError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("embedding has no components")]
    EmptyEmbedding,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot split {sentences} sentences into {k} centroids")]
    KTooLarge { k: usize, sentences: usize },
    #[error("centroid count must be at least 1")]
    ZeroCentroids,
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("no expert profiles registered")]
    EmptyProfiles,
    #[error("expert id `base` is reserved for the fallback model")]
    ReservedExpertId,
    #[error("threshold {0} is outside [-1, 1]")]
    InvalidThreshold(f64),
    #[error("embedding provider fault: {0}")]
    Provider(String),
    #[error("routing sub-query {node}: {message}")]
    AtNode { node: NodeId, message: String },
}

/// Finite, non-empty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, RouterError> {
        if values.is_empty() {
            return Err(RouterError::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(RouterError::NonFinite { index });
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, RouterError> {
        Embedding::new(self.0.iter().map(|v| v * factor).collect())
    }

    fn check_dim(&self, expected: usize) -> Result<(), RouterError> {
        if self.dim() != expected {
            return Err(RouterError::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = RouterError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMethod {
    #[default]
    #[serde(alias = "mp", alias = "mean")]
    MeanPooling,
    #[serde(alias = "lths", alias = "last_token")]
    LastTokenHiddenState,
}

impl PoolingMethod {
    pub fn pool(self, tokens: &[Embedding]) -> Result<Embedding, RouterError> {
        match self {
            PoolingMethod::MeanPooling => pool_mean(tokens),
            PoolingMethod::LastTokenHiddenState => pool_lths(tokens),
        }
    }
}

/// Componentwise mean of the token embeddings.
///
/// Uses a running mean so that n copies of `v` pool back to exactly `v`.
pub fn pool_mean(tokens: &[Embedding]) -> Result<Embedding, RouterError> {
    let first = tokens.first().ok_or(RouterError::EmptySequence)?;
    let dim = first.dim();
    let mut mean = first.0.clone();
    for (i, token) in tokens.iter().enumerate().skip(1) {
        token.check_dim(dim)?;
        let count = (i + 1) as f64;
        for (m, v) in mean.iter_mut().zip(&token.0) {
            *m += (v - *m) / count;
        }
    }
    Embedding::new(mean)
}

/// The final token's embedding, unchanged.
pub fn pool_lths(tokens: &[Embedding]) -> Result<Embedding, RouterError> {
    let last = tokens.last().ok_or(RouterError::EmptySequence)?;
    let dim = last.dim();
    for token in tokens {
        token.check_dim(dim)?;
    }
    Ok(last.clone())
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, RouterError> {
    b.check_dim(a.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(RouterError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// An expert's routing signature.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpertProfile {
    expert_id: ExpertId,
    pooling: PoolingMethod,
    centroids: Vec<Embedding>,
}

impl ExpertProfile {
    pub fn new(
        expert_id: ExpertId,
        centroids: Vec<Embedding>,
        pooling: PoolingMethod,
    ) -> Result<Self, RouterError> {
        if expert_id.is_base() {
            return Err(RouterError::ReservedExpertId);
        }
        let first = centroids.first().ok_or(RouterError::ZeroCentroids)?;
        let dim = first.dim();
        for centroid in &centroids {
            centroid.check_dim(dim)?;
        }
        Ok(ExpertProfile {
            expert_id,
            pooling,
            centroids,
        })
    }

    pub fn expert_id(&self) -> &ExpertId {
        &self.expert_id
    }

    pub fn pooling(&self) -> PoolingMethod {
        self.pooling
    }

    pub fn centroids(&self) -> &[Embedding] {
        &self.centroids
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].dim()
    }

    /// Best cosine similarity over this expert's centroids.
    pub fn score(&self, query: &Embedding) -> Result<f64, RouterError> {
        let mut best = f64::NEG_INFINITY;
        for centroid in &self.centroids {
            best = best.max(cosine_similarity(query, centroid)?);
        }
        Ok(best)
    }
}

/// Builds `k` centroids from an expert's pooled sentence embeddings.
///
/// Sentences are split into `k` contiguous chunks in dataset order; the first
/// `n % k` chunks take one extra sentence. Each centroid is its chunk mean.
pub fn build_profile(
    expert_id: ExpertId,
    sentence_embeddings: &[Embedding],
    k: usize,
    pooling: PoolingMethod,
) -> Result<ExpertProfile, RouterError> {
    if k == 0 {
        return Err(RouterError::ZeroCentroids);
    }
    let n = sentence_embeddings.len();
    if n == 0 {
        return Err(RouterError::EmptySequence);
    }
    if k > n {
        return Err(RouterError::KTooLarge { k, sentences: n });
    }
    let (base, extra) = (n / k, n % k);
    let mut centroids = Vec::with_capacity(k);
    let mut start = 0;
    for chunk in 0..k {
        let len = base + usize::from(chunk < extra);
        centroids.push(pool_mean(&sentence_embeddings[start..start + len])?);
        start += len;
    }
    ExpertProfile::new(expert_id, centroids, pooling)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteTarget {
    Expert(ExpertId),
    Base,
}

impl RouteTarget {
    /// Expert id to serve this decision; `base` for the fallback.
    pub fn expert_id(&self) -> ExpertId {
        match self {
            RouteTarget::Expert(id) => id.clone(),
            RouteTarget::Base => ExpertId::base(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub target: RouteTarget,
    pub best_similarity: f64,
    /// Score per expert, in profile registration order.
    pub per_expert_scores: Vec<(ExpertId, f64)>,
}

/// Routes one embedding. Ties go to the earliest registered profile; the
/// threshold comparison is inclusive.
pub fn route(
    query: &Embedding,
    profiles: &[ExpertProfile],
    threshold: f64,
) -> Result<RoutingDecision, RouterError> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(RouterError::InvalidThreshold(threshold));
    }
    if profiles.is_empty() {
        return Err(RouterError::EmptyProfiles);
    }
    let mut scores = Vec::with_capacity(profiles.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, profile) in profiles.iter().enumerate() {
        let score = profile.score(query)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
        scores.push((profile.expert_id.clone(), score));
    }
    let (index, best_similarity) = best.expect("profiles is non-empty");
    let target = if best_similarity >= threshold {
        RouteTarget::Expert(profiles[index].expert_id.clone())
    } else {
        RouteTarget::Base
    };
    Ok(RoutingDecision {
        target,
        best_similarity,
        per_expert_scores: scores,
    })
}

/// Produces pooled sentence embeddings for a batch of texts.
pub trait EmbeddingProvider {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError> {
        (**self).embed(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for alloc::sync::Arc<P> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError> {
        (**self).embed(texts)
    }
}

/// Embeds every sub-query and records its routed expert (or `base`) on the
/// graph. Returns one decision per node in id order.
pub fn assign_experts<P: EmbeddingProvider + ?Sized>(
    graph: &mut QueryGraph,
    provider: &P,
    profiles: &[ExpertProfile],
    threshold: f64,
) -> Result<Vec<(NodeId, RoutingDecision)>, RouterError> {
    let texts: Vec<&str> = graph.nodes().iter().map(|n| n.text.as_str()).collect();
    let embeddings = provider.embed(&texts).map_err(|e| match e {
        RouterError::Provider(m) => RouterError::Provider(m),
        other => RouterError::Provider(other.to_string()),
    })?;
    if embeddings.len() != texts.len() {
        return Err(RouterError::Provider(alloc::format!(
            "provider returned {} embeddings for {} texts",
            embeddings.len(),
            texts.len()
        )));
    }
    let ids: Vec<NodeId> = graph.node_ids().collect();
    let mut decisions = Vec::with_capacity(ids.len());
    for (id, embedding) in ids.into_iter().zip(&embeddings) {
        let decision = route(embedding, profiles, threshold).map_err(|e| RouterError::AtNode {
            node: id,
            message: e.to_string(),
        })?;
        graph
            .assign_expert(id, decision.target.expert_id())
            .map_err(|e| RouterError::AtNode {
                node: id,
                message: e.to_string(),
            })?;
        decisions.push((id, decision));
    }
    Ok(decisions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn profile(id: &str, centroids: &[&[f64]]) -> ExpertProfile {
        ExpertProfile::new(
            ExpertId::new(id),
            centroids.iter().map(|c| e(c)).collect(),
            PoolingMethod::MeanPooling,
        )
        .unwrap()
    }

    #[test]
    fn mean_pooling_examples() {
        assert_eq!(
            pool_mean(&[e(&[2.0, 0.0]), e(&[0.0, 2.0])]).unwrap(),
            e(&[1.0, 1.0])
        );
        assert_eq!(pool_mean(&[e(&[5.0, 5.0])]).unwrap(), e(&[5.0, 5.0]));
        assert_eq!(
            pool_mean(&[e(&[1.0, 2.0]), e(&[3.0, 4.0]), e(&[5.0, 6.0])]).unwrap(),
            e(&[3.0, 4.0])
        );
    }

    #[test]
    fn pooling_errors() {
        assert_eq!(pool_mean(&[]), Err(RouterError::EmptySequence));
        assert_eq!(pool_lths(&[]), Err(RouterError::EmptySequence));
        assert!(matches!(
            pool_mean(&[e(&[1.0]), e(&[1.0, 2.0])]),
            Err(RouterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn last_token_examples() {
        assert_eq!(
            pool_lths(&[e(&[1.0, 0.0]), e(&[0.0, 1.0])]).unwrap(),
            e(&[0.0, 1.0])
        );
        assert_eq!(pool_lths(&[e(&[7.0, 7.0])]).unwrap(), e(&[7.0, 7.0]));
        assert_eq!(
            pool_lths(&[e(&[1.0, 2.0]), e(&[3.0, 4.0]), e(&[5.0, 6.0])]).unwrap(),
            e(&[5.0, 6.0])
        );
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert_eq!(
            Embedding::new(vec![1.0, f64::NAN]),
            Err(RouterError::NonFinite { index: 1 })
        );
        assert_eq!(Embedding::new(vec![]), Err(RouterError::EmptyEmbedding));
    }

    #[test]
    fn profile_chunks() {
        let p = build_profile(
            "a".into(),
            &[e(&[1.0, 0.0]), e(&[0.0, 1.0])],
            1,
            PoolingMethod::MeanPooling,
        )
        .unwrap();
        assert_eq!(p.centroids(), &[e(&[0.5, 0.5])]);

        let sentences = [
            e(&[1.0, 0.0]),
            e(&[1.0, 0.0]),
            e(&[0.0, 1.0]),
            e(&[0.0, 1.0]),
        ];
        let p = build_profile("a".into(), &sentences, 2, PoolingMethod::MeanPooling).unwrap();
        assert_eq!(p.centroids(), &[e(&[1.0, 0.0]), e(&[0.0, 1.0])]);

        assert_eq!(
            build_profile("a".into(), &sentences[..2], 3, PoolingMethod::MeanPooling),
            Err(RouterError::KTooLarge { k: 3, sentences: 2 })
        );
    }

    #[test]
    fn uneven_chunks_differ_by_at_most_one() {
        // 5 sentences, k = 3 -> chunk sizes 2, 2, 1
        let sentences: Vec<_> = (0..5).map(|i| e(&[i as f64])).collect();
        let p = build_profile("a".into(), &sentences, 3, PoolingMethod::MeanPooling).unwrap();
        assert_eq!(p.centroids(), &[e(&[0.5]), e(&[2.5]), e(&[4.0])]);
    }

    #[test]
    fn base_id_is_reserved() {
        assert_eq!(
            ExpertProfile::new(
                ExpertId::base(),
                vec![e(&[1.0])],
                PoolingMethod::MeanPooling
            ),
            Err(RouterError::ReservedExpertId)
        );
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(),
            1.0
        );
        assert_eq!(
            cosine_similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(),
            0.0
        );
        // 0.9 / sqrt(0.81 + 0.01)
        let c = cosine_similarity(&e(&[0.9, 0.1]), &e(&[1.0, 0.0])).unwrap();
        assert!((c - 0.993_883_734_673_619_6).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(RouterError::ZeroVector)
        );
        assert!(matches!(
            cosine_similarity(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(RouterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn route_examples() {
        let experts = [
            profile("A", &[&[1.0, 0.0, 0.0]]),
            profile("B", &[&[0.0, 1.0, 0.0]]),
        ];
        let d = route(&e(&[1.0, 0.0, 0.0]), &experts, DEFAULT_SQ_SIM).unwrap();
        assert_eq!(d.target, RouteTarget::Expert("A".into()));
        assert_eq!(d.best_similarity, 1.0);

        let d = route(&e(&[0.0, 0.0, 1.0]), &experts, DEFAULT_SQ_SIM).unwrap();
        assert_eq!(d.target, RouteTarget::Base);
        assert_eq!(d.best_similarity, 0.0);

        let experts = [profile("A", &[&[1.0, 0.0]]), profile("B", &[&[0.0, 1.0]])];
        let d = route(&e(&[0.9, 0.1]), &experts, DEFAULT_SQ_SIM).unwrap();
        assert_eq!(d.target, RouteTarget::Expert("A".into()));
        assert!((d.best_similarity - 0.9939).abs() < 1e-3);
    }

    #[test]
    fn route_threshold_is_inclusive() {
        let experts = [profile("A", &[&[1.0, 0.0]])];
        let d = route(&e(&[1.0, 0.0]), &experts, 1.0).unwrap();
        assert_eq!(d.target, RouteTarget::Expert("A".into()));
    }

    #[test]
    fn route_ties_go_to_first_registered() {
        let experts = [profile("B", &[&[1.0, 0.0]]), profile("A", &[&[1.0, 0.0]])];
        let d = route(&e(&[1.0, 0.0]), &experts, 0.5).unwrap();
        assert_eq!(d.target, RouteTarget::Expert("B".into()));
    }

    #[test]
    fn route_errors() {
        assert_eq!(route(&e(&[1.0]), &[], 0.7), Err(RouterError::EmptyProfiles));
        let experts = [profile("A", &[&[1.0, 0.0]])];
        assert!(matches!(
            route(&e(&[1.0, 0.0, 0.0]), &experts, 0.7),
            Err(RouterError::DimensionMismatch { .. })
        ));
        assert_eq!(
            route(&e(&[1.0, 0.0]), &experts, 1.5),
            Err(RouterError::InvalidThreshold(1.5))
        );
    }

    /// Looks texts up in a fixed table.
    struct TableProvider(BTreeMap<&'static str, Embedding>);

    impl EmbeddingProvider for TableProvider {
        fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, RouterError> {
            texts
                .iter()
                .map(|t| {
                    self.0
                        .get(t)
                        .cloned()
                        .ok_or_else(|| RouterError::Provider(t.to_string()))
                })
                .collect()
        }
    }

    fn assigned(graph: &QueryGraph) -> Vec<String> {
        graph
            .nodes()
            .iter()
            .map(|n| n.expert.as_ref().unwrap().to_string())
            .collect()
    }

    #[test]
    fn assign_experts_examples() {
        let provider = TableProvider(BTreeMap::from([
            ("a", e(&[1.0, 0.0, 0.0])),
            ("b", e(&[0.0, 1.0, 0.0])),
            ("z", e(&[0.0, 0.0, 1.0])),
        ]));
        let experts = [
            profile("A", &[&[1.0, 0.0, 0.0]]),
            profile("B", &[&[0.0, 1.0, 0.0]]),
        ];

        let mut g = build_graph("q", vec!["a".into(), "b".into()], &[]).unwrap();
        assign_experts(&mut g, &provider, &experts, 0.7).unwrap();
        assert_eq!(assigned(&g), vec!["A", "B"]);

        let mut g = build_graph("q", vec!["z".into()], &[]).unwrap();
        assign_experts(&mut g, &provider, &experts, 0.7).unwrap();
        assert_eq!(assigned(&g), vec!["base"]);

        let mut g = build_graph("q", vec!["a".into(), "b".into(), "z".into()], &[]).unwrap();
        let decisions = assign_experts(&mut g, &provider, &experts, 0.7).unwrap();
        assert_eq!(assigned(&g), vec!["A", "B", "base"]);
        assert_eq!(decisions.len(), 3);
    }

    #[test]
    fn assign_experts_attaches_node_id() {
        let provider = TableProvider(BTreeMap::from([
            ("a", e(&[1.0, 0.0])),
            ("bad", e(&[1.0, 0.0, 0.0])),
        ]));
        let experts = [profile("A", &[&[1.0, 0.0]])];
        let mut g = build_graph("q", vec!["a".into(), "bad".into()], &[]).unwrap();
        let err = assign_experts(&mut g, &provider, &experts, 0.7).unwrap_err();
        assert!(matches!(
            err,
            RouterError::AtNode {
                node: NodeId(2),
                ..
            }
        ));

        let mut g = build_graph("q", vec!["missing".into()], &[]).unwrap();
        assert!(matches!(
            assign_experts(&mut g, &provider, &experts, 0.7),
            Err(RouterError::Provider(_))
        ));
    }
}
