//! ID prediction/assignment strategies for the open-set scenario.
//!
//! When a query sample may belong to a student outside the enrolled
//! population, six strategies decide between matching an existing ID and
//! minting a new one:
//!
//! 1. **sequential** — always mints `max(existing) + 1`;
//! 2. **similarity** — 1-NN match accepted iff `exp(-distance)` reaches a
//!    confidence threshold (boundary inclusive);
//! 3. **outlier** — isolation-forest score strictly above 0.5 mints a new
//!    ID, otherwise the 1-NN match is used;
//! 4. **clustering** — nearest-centroid assignment with a novelty cutoff;
//!    inliers take the majority ID of their cluster (ties to the lowest
//!    ID), a cluster with no known members forces a new ID;
//! 5. **feature_hash** — an MD5 over a canonical feature string, reduced
//!    modulo 10,000, with wrap-around increments on collision;
//! 6. **ensemble** — 2-of-3 majority vote over strategies 2-4.
//!
//! Every strategy is deterministic given its fitted models, and a freshly
//! minted ID never collides with the existing set.

use std::collections::BTreeSet;

use md5::{Digest, Md5};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::cluster::{knn1_match, novelty_score, KMeansModel, NoveltyThreshold};
use crate::error::{Error, Result};
use crate::iforest::{anomaly_score, IsolationForestModel};

/// Which strategy produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sequential,
    Similarity,
    Outlier,
    Clustering,
    FeatureHash,
    Ensemble,
}

/// The decision itself: either a match against an enrolled ID or a newly
/// minted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Outcome {
    Matched(u32),
    NewId(u32),
}

impl Outcome {
    /// True when the decision mints a new ID.
    pub fn is_new(&self) -> bool {
        matches!(self, Outcome::NewId(_))
    }

    /// The ID carried by the decision, whichever kind it is.
    pub fn id(&self) -> u32 {
        match self {
            Outcome::Matched(id) | Outcome::NewId(id) => *id,
        }
    }
}

/// The individual new-vs-match votes behind an ensemble decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleVotes {
    pub similarity_new: bool,
    pub outlier_new: bool,
    pub clustering_new: bool,
}

/// Strategy-specific scalars retained for reporting. Unused fields are
/// omitted from the serialized record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Euclidean distance to the nearest enrolled sample.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub distance: Option<f64>,
    /// `exp(-distance)` similarity confidence.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub confidence: Option<f64>,
    /// Isolation-forest anomaly score.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anomaly_score: Option<f64>,
    /// Distance to the nearest cluster centre.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub novelty_score: Option<f64>,
    /// Novelty cutoff in force when the decision was made.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    /// Index of the assigned cluster.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cluster: Option<usize>,
    /// Integer value of the first 8 hex digits of the MD5 digest.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hash_value: Option<u64>,
    /// Canonical feature string the hash was computed over.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub canonical_string: Option<String>,
    /// Sub-strategy votes (ensemble only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub votes: Option<EnsembleVotes>,
}

/// One strategy's verdict for one query, with its supporting scalars.
/// This is the per-query record the CLI emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    pub strategy: Strategy,
    pub outcome: Outcome,
    pub evidence: Evidence,
}

fn distinct_ids(known_ids: &[u32]) -> BTreeSet<u32> {
    known_ids.iter().copied().collect()
}

fn next_sequential(existing: &BTreeSet<u32>) -> Result<u32> {
    let max = *existing
        .iter()
        .next_back()
        .ok_or_else(|| Error::Data("sequential assignment over an empty ID set".into()))?;
    max.checked_add(1)
        .ok_or_else(|| Error::Data("sequential assignment overflowed the ID space".into()))
}

/// Strategy 1: mint `max(existing) + 1`, unconditionally.
pub fn sequential_assign(existing_ids: &BTreeSet<u32>) -> Result<AssignmentDecision> {
    let id = next_sequential(existing_ids)?;
    Ok(AssignmentDecision {
        strategy: Strategy::Sequential,
        outcome: Outcome::NewId(id),
        evidence: Evidence::default(),
    })
}

/// Strategy 2: accept the 1-NN match iff its confidence `exp(-distance)`
/// is at least `confidence_threshold` (boundary inclusive); otherwise mint
/// a sequential ID.
pub fn similarity_assign(
    query: &[f64],
    known_x: &ArrayView2<f64>,
    known_ids: &[u32],
    confidence_threshold: f64,
) -> Result<AssignmentDecision> {
    if !(confidence_threshold > 0.0 && confidence_threshold < 1.0) {
        return Err(Error::Config(format!(
            "similarity confidence threshold must lie in (0, 1), got {confidence_threshold}"
        )));
    }
    let (nearest_id, distance, confidence) = knn1_match(known_x, known_ids, query)?;
    let existing = distinct_ids(known_ids);
    let outcome = if confidence >= confidence_threshold {
        Outcome::Matched(nearest_id)
    } else {
        Outcome::NewId(next_sequential(&existing)?)
    };
    Ok(AssignmentDecision {
        strategy: Strategy::Similarity,
        outcome,
        evidence: Evidence {
            distance: Some(distance),
            confidence: Some(confidence),
            ..Evidence::default()
        },
    })
}

/// Strategy 3: an anomaly score strictly above 0.5 mints a sequential ID;
/// otherwise the query takes its 1-NN match.
pub fn outlier_assign(
    query: &[f64],
    iforest: &IsolationForestModel,
    known_x: &ArrayView2<f64>,
    known_ids: &[u32],
) -> Result<AssignmentDecision> {
    let score = anomaly_score(iforest, query)?;
    let existing = distinct_ids(known_ids);
    let mut evidence = Evidence {
        anomaly_score: Some(score),
        ..Evidence::default()
    };
    let outcome = if score > 0.5 {
        Outcome::NewId(next_sequential(&existing)?)
    } else {
        let (nearest_id, distance, confidence) = knn1_match(known_x, known_ids, query)?;
        evidence.distance = Some(distance);
        evidence.confidence = Some(confidence);
        Outcome::Matched(nearest_id)
    };
    Ok(AssignmentDecision {
        strategy: Strategy::Outlier,
        outcome,
        evidence,
    })
}

/// Strategy 4: assign the query to its nearest centroid; a novelty score
/// above the cutoff mints a sequential ID, otherwise the majority enrolled
/// ID of that cluster is matched (ties to the lowest ID). A cluster with no
/// enrolled members cannot produce a match and also mints a new ID.
pub fn cluster_assign(
    query: &[f64],
    kmeans: &KMeansModel,
    threshold: &NoveltyThreshold,
    known_x: &ArrayView2<f64>,
    known_ids: &[u32],
) -> Result<AssignmentDecision> {
    if known_ids.len() != known_x.nrows() {
        return Err(Error::Data(format!(
            "cluster_assign: {} known rows but {} ids",
            known_x.nrows(),
            known_ids.len()
        )));
    }
    let (cluster, _) = kmeans.nearest_centroid(query);
    let score = novelty_score(query, kmeans);
    let existing = distinct_ids(known_ids);
    let evidence = Evidence {
        novelty_score: Some(score),
        tau: Some(threshold.tau),
        cluster: Some(cluster),
        ..Evidence::default()
    };
    if score > threshold.tau {
        return Ok(AssignmentDecision {
            strategy: Strategy::Clustering,
            outcome: Outcome::NewId(next_sequential(&existing)?),
            evidence,
        });
    }
    // Majority enrolled ID among the members of the assigned cluster.
    let members = kmeans.assignments(known_x);
    let mut counts: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for (i, &c) in members.iter().enumerate() {
        if c == cluster {
            *counts.entry(known_ids[i]).or_insert(0) += 1;
        }
    }
    // BTreeMap iterates in ascending ID order, so a strict `>` keeps the
    // lowest ID on tied counts.
    let majority = counts
        .iter()
        .fold(None::<(u32, usize)>, |best, (&id, &n)| match best {
            Some((_, bn)) if n <= bn => best,
            _ => Some((id, n)),
        });
    let outcome = match majority {
        Some((id, _)) => Outcome::Matched(id),
        None => Outcome::NewId(next_sequential(&existing)?),
    };
    Ok(AssignmentDecision {
        strategy: Strategy::Clustering,
        outcome,
        evidence,
    })
}

/// The canonical feature string hashed by [`feature_hash_id`]: values in
/// fixed feature order, formatted to 6 decimal places, comma-joined.
pub fn canonical_feature_string(features: &[f64]) -> Result<String> {
    if features.is_empty() {
        return Err(Error::Data("feature hash over an empty vector".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "feature hash requires finite feature values".into(),
        ));
    }
    Ok(features
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(","))
}

/// Strategy 5: MD5 the canonical feature string, take the first 8 hex
/// digits as an integer, reduce modulo 10,000, and increment (wrapping)
/// past any IDs already taken.
pub fn feature_hash_id(
    features: &[f64],
    existing_ids: &BTreeSet<u32>,
) -> Result<AssignmentDecision> {
    let canonical = canonical_feature_string(features)?;
    let digest = Md5::digest(canonical.as_bytes());
    let hex_digest = hex::encode(digest);
    let hash_value = u64::from_str_radix(&hex_digest[..8], 16)
        .expect("8 hex chars always parse into a u64");
    let mut id = (hash_value % 10_000) as u32;
    let mut probes = 0;
    while existing_ids.contains(&id) {
        id = (id + 1) % 10_000;
        probes += 1;
        if probes == 10_000 {
            return Err(Error::Data(
                "feature hash exhausted: all 10000 IDs are taken".into(),
            ));
        }
    }
    Ok(AssignmentDecision {
        strategy: Strategy::FeatureHash,
        outcome: Outcome::NewId(id),
        evidence: Evidence {
            hash_value: Some(hash_value),
            canonical_string: Some(canonical),
            ..Evidence::default()
        },
    })
}

/// Everything the ensemble needs to run its three sub-strategies.
pub struct EnsembleContext<'a> {
    pub known_x: ArrayView2<'a, f64>,
    pub known_ids: &'a [u32],
    pub confidence_threshold: f64,
    pub iforest: &'a IsolationForestModel,
    pub kmeans: &'a KMeansModel,
    pub novelty: &'a NoveltyThreshold,
}

/// Strategy 6: 2-of-3 majority over {similarity, outlier, clustering}.
/// Two or more "new" votes mint a sequential ID; otherwise the query is
/// matched to the similarity strategy's nearest ID.
pub fn ensemble_assign(query: &[f64], ctx: &EnsembleContext<'_>) -> Result<AssignmentDecision> {
    let sim = similarity_assign(
        query,
        &ctx.known_x,
        ctx.known_ids,
        ctx.confidence_threshold,
    )?;
    let out = outlier_assign(query, ctx.iforest, &ctx.known_x, ctx.known_ids)?;
    let clu = cluster_assign(query, ctx.kmeans, ctx.novelty, &ctx.known_x, ctx.known_ids)?;
    let votes = EnsembleVotes {
        similarity_new: sim.outcome.is_new(),
        outlier_new: out.outcome.is_new(),
        clustering_new: clu.outcome.is_new(),
    };
    let n_new = [votes.similarity_new, votes.outlier_new, votes.clustering_new]
        .iter()
        .filter(|&&v| v)
        .count();
    let existing = distinct_ids(ctx.known_ids);
    let outcome = if n_new >= 2 {
        Outcome::NewId(next_sequential(&existing)?)
    } else {
        // The match side always follows the similarity strategy's nearest
        // neighbour, even when similarity itself was the lone "new" vote.
        let (nearest_id, _, _) = knn1_match(&ctx.known_x, ctx.known_ids, query)?;
        Outcome::Matched(nearest_id)
    };
    Ok(AssignmentDecision {
        strategy: Strategy::Ensemble,
        outcome,
        evidence: Evidence {
            distance: sim.evidence.distance,
            confidence: sim.evidence.confidence,
            anomaly_score: out.evidence.anomaly_score,
            novelty_score: clu.evidence.novelty_score,
            tau: clu.evidence.tau,
            votes: Some(votes),
            ..Evidence::default()
        },
    })
}
