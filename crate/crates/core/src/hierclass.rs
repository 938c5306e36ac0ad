//! Flat and local-binary classification over the class hierarchy.
//!
//! Local-binary classifiers answer independently per node; there is no
//! top-down routing through ancestors.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::svm::{
    cross_validate, cross_validate_binary, decision_value, predict_multiclass, train_binary, train_one_vs_all, CvReport, LinearModel,
    SvmError, TrainConfig,
};
use crate::taxonomy::{TaxonomyError, TaxonomyTree};

#[derive(Debug, Error)]
pub enum HierError {
    #[error("node {0} has no positive samples")]
    NoPositives(String),
    #[error("node {0} has no negative samples")]
    NoNegatives(String),
    #[error("global classification is not supported")]
    UnsupportedStrategy,
    #[error("{samples} samples and {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Every sample outside the node is negative.
    Inclusive,
    /// Only samples under the node's parent (outside the node) are negative.
    Sibling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    Flat,
    LocalBinary { policy: Policy, target_node_id: String },
    Global,
}

impl Strategy {
    /// `flat`, `inclusive`, `sibling` or `global`; the node applies to the binary policies.
    pub fn from_name(name: &str, node_id: &str) -> Option<Strategy> {
        match name {
            "flat" => Some(Strategy::Flat),
            "inclusive" | "sibling" => Some(Strategy::LocalBinary {
                policy: name.parse().ok()?,
                target_node_id: node_id.to_string(),
            }),
            "global" => Some(Strategy::Global),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Flat => "flat",
            Strategy::LocalBinary {
                policy: Policy::Inclusive, ..
            } => "inclusive",
            Strategy::LocalBinary { policy: Policy::Sibling, .. } => "sibling",
            Strategy::Global => "global",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Inclusive => "inclusive",
            Policy::Sibling => "sibling",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inclusive" => Ok(Policy::Inclusive),
            "sibling" => Ok(Policy::Sibling),
            other => Err(format!("unknown policy {other:?}")),
        }
    }
}

/// Sample indices (ascending) and the code sets they were drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSet {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub positive_codes: BTreeSet<String>,
    pub negative_codes: BTreeSet<String>,
}

pub fn assemble_training_set<S: AsRef<str>>(
    tree: &TaxonomyTree,
    codes: &[S],
    node_id: &str,
    policy: Policy,
) -> Result<TrainingSet, HierError> {
    let positive_codes = tree.descendants(node_id)?;
    let negative_codes: BTreeSet<String> = match policy {
        Policy::Inclusive => tree.codes().filter(|c| !positive_codes.contains(*c)).map(str::to_string).collect(),
        Policy::Sibling => tree.siblings_under(node_id)?,
    };
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, code) in codes.iter().enumerate() {
        let code = code.as_ref();
        if positive_codes.contains(code) {
            positives.push(i);
        } else if negative_codes.contains(code) {
            negatives.push(i);
        }
    }
    if positives.is_empty() {
        return Err(HierError::NoPositives(node_id.to_string()));
    }
    if negatives.is_empty() {
        return Err(HierError::NoNegatives(node_id.to_string()));
    }
    Ok(TrainingSet {
        positives,
        negatives,
        positive_codes,
        negative_codes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeClassifier {
    pub node_id: String,
    pub policy: Policy,
    pub model: LinearModel,
    pub positive_codes: BTreeSet<String>,
    pub negative_codes: BTreeSet<String>,
    pub positives: usize,
    pub negatives: usize,
    pub cv: CvReport,
}

impl NodeClassifier {
    /// Label for samples inside the node: its own code, else the node id.
    pub fn positive_label(&self) -> String {
        self.model.positive_label.clone()
    }

    pub fn negative_label(&self) -> String {
        format!("not-{}", self.model.positive_label)
    }

    /// Boundary (decision = 0) counts as positive.
    pub fn predict(&self, x: &[f32]) -> Result<bool, HierError> {
        Ok(checked_decision(&self.model, x)? >= 0.0)
    }

    pub fn truth_label(&self, code: &str) -> String {
        if self.positive_codes.contains(code) {
            self.positive_label()
        } else {
            self.negative_label()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedNode {
    pub node_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum TrainedClassifier {
    Flat {
        models: Vec<LinearModel>,
        cv: CvReport,
    },
    LocalBinary {
        target: NodeClassifier,
        /// Remaining tree nodes when every node is trained, in node-id order.
        others: Vec<NodeClassifier>,
        skipped: Vec<SkippedNode>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOptions {
    pub all_nodes: bool,
    pub backend_id: String,
    pub created_at: String,
}

fn check_lengths<S>(x: &[&[f32]], codes: &[S]) -> Result<(), HierError> {
    if x.len() != codes.len() {
        return Err(HierError::LengthMismatch {
            samples: x.len(),
            labels: codes.len(),
        });
    }
    Ok(())
}

fn stamp(model: LinearModel, opts: &TrainOptions) -> LinearModel {
    LinearModel {
        created_at: opts.created_at.clone(),
        ..model.with_backend(opts.backend_id.clone())
    }
}

fn train_node<S: AsRef<str>>(
    tree: &TaxonomyTree,
    x: &[&[f32]],
    codes: &[S],
    node_id: &str,
    policy: Policy,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<NodeClassifier, HierError> {
    let set = assemble_training_set(tree, codes, node_id, policy)?;
    let mut members: Vec<(usize, i8)> = set
        .positives
        .iter()
        .map(|&i| (i, 1))
        .chain(set.negatives.iter().map(|&i| (i, -1)))
        .collect();
    members.sort_unstable();
    let sx: Vec<&[f32]> = members.iter().map(|&(i, _)| x[i]).collect();
    let sy: Vec<i8> = members.iter().map(|&(_, y)| y).collect();
    let cv = cross_validate_binary(&sx, &sy, cfg)?;
    let node = tree.node(node_id)?;
    let label = node.code.clone().unwrap_or_else(|| node_id.to_string());
    let model = stamp(train_binary(&sx, &sy, cv.best_c, cfg)?.with_label(label), opts);
    Ok(NodeClassifier {
        node_id: node_id.to_string(),
        policy,
        model,
        positive_codes: set.positive_codes,
        negative_codes: set.negative_codes,
        positives: set.positives.len(),
        negatives: set.negatives.len(),
        cv,
    })
}

/// Trains on the given (already split) training samples; C is chosen by CV
/// over these samples only.
pub fn train<S: AsRef<str> + Sync>(
    strategy: &Strategy,
    tree: &TaxonomyTree,
    x: &[&[f32]],
    codes: &[S],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainedClassifier, HierError> {
    check_lengths(x, codes)?;
    match strategy {
        Strategy::Global => Err(HierError::UnsupportedStrategy),
        Strategy::Flat => {
            let cv = cross_validate(x, codes, cfg)?;
            let models = train_one_vs_all(x, codes, cv.best_c, cfg)?
                .into_iter()
                .map(|m| stamp(m, opts))
                .collect();
            Ok(TrainedClassifier::Flat { models, cv })
        }
        Strategy::LocalBinary { policy, target_node_id } => {
            let target = train_node(tree, x, codes, target_node_id, *policy, cfg, opts)?;
            let mut others = Vec::new();
            let mut skipped = Vec::new();
            if opts.all_nodes {
                let ids: Vec<&str> = tree
                    .nodes()
                    .map(|n| n.node_id.as_str())
                    .filter(|id| *id != target_node_id)
                    .collect();
                let results: Vec<_> = ids
                    .par_iter()
                    .map(|id| (*id, train_node(tree, x, codes, id, *policy, cfg, opts)))
                    .collect();
                for (id, r) in results {
                    match r {
                        Ok(c) => others.push(c),
                        Err(e) => {
                            info!("skipping node {id}: {e}");
                            skipped.push(SkippedNode {
                                node_id: id.to_string(),
                                reason: e.to_string(),
                            });
                        }
                    }
                }
            }
            Ok(TrainedClassifier::LocalBinary { target, others, skipped })
        }
    }
}

fn checked_decision(model: &LinearModel, x: &[f32]) -> Result<f64, HierError> {
    decision_value(model, x).map_err(|e| match e {
        SvmError::DimensionMismatch { expected, got } => HierError::DimensionMismatch { expected, got },
        other => HierError::Svm(other),
    })
}

impl TrainedClassifier {
    pub fn dim(&self) -> usize {
        match self {
            TrainedClassifier::Flat { models, .. } => models.first().map_or(0, |m| m.dim),
            TrainedClassifier::LocalBinary { target, .. } => target.model.dim,
        }
    }

    pub fn backend_id(&self) -> &str {
        match self {
            TrainedClassifier::Flat { models, .. } => models.first().map_or("", |m| m.backend_id.as_str()),
            TrainedClassifier::LocalBinary { target, .. } => &target.model.backend_id,
        }
    }

    /// Class code (flat) or the target node's positive / negative label.
    pub fn predict(&self, x: &[f32]) -> Result<String, HierError> {
        if x.len() != self.dim() {
            return Err(HierError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            TrainedClassifier::Flat { models, .. } => Ok(predict_multiclass(models, x)?.to_string()),
            TrainedClassifier::LocalBinary { target, .. } => Ok(if target.predict(x)? {
                target.positive_label()
            } else {
                target.negative_label()
            }),
        }
    }

    /// Ground-truth label in the same vocabulary as `predict`.
    pub fn truth_label(&self, code: &str) -> String {
        match self {
            TrainedClassifier::Flat { .. } => code.to_string(),
            TrainedClassifier::LocalBinary { target, .. } => target.truth_label(code),
        }
    }

    /// Whether a predicted label means "inside `node_codes`" (used for cover).
    pub fn is_positive(&self, label: &str, node_codes: &BTreeSet<String>) -> bool {
        match self {
            TrainedClassifier::Flat { .. } => node_codes.contains(label),
            TrainedClassifier::LocalBinary { target, .. } => label == target.positive_label(),
        }
    }
}
