//! Class hierarchy with dotted node ids ("1", "1.1", "1.1.1", ...).
//!
//! Labels may sit on internal nodes (annotators do not always reach species
//! level), so subtree queries return internal-node codes as well as leaves.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node id of the kelp class in the shipped hierarchy.
pub const KELP_NODE: &str = "1.1.1";
/// Class code of kelp (Ecklonia radiata).
pub const KELP_CODE: &str = "MAECK";

const ROTTNEST_JSON: &str = include_str!("../data/catami_rottnest.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("taxonomy JSON is invalid: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cycle detected: node {0} appears inside its own subtree")]
    CycleDetected(String),
    #[error("node id {0} appears more than once")]
    DuplicateNode(String),
    #[error("class code {code} is used by both {first} and {second}")]
    DuplicateCode {
        code: String,
        first: String,
        second: String,
    },
    #[error("node {node_id} does not extend its parent id {parent} by one component")]
    OrphanNode { node_id: String, parent: String },
    #[error("empty node id")]
    EmptyNodeId,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} is the root and has no siblings")]
    RootHasNoSiblings(String),
}

/// Recursive JSON form of a taxonomy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    #[serde(default)]
    pub code: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn new(node_id: impl Into<String>, code: impl Into<String>, name: impl Into<String>) -> Self {
        NodeSpec {
            node_id: node_id.into(),
            code: code.into(),
            name: name.into(),
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<NodeSpec>) -> Self {
        self.children = children;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub node_id: String,
    /// `None` for pure grouping nodes.
    pub code: Option<String>,
    pub display_name: String,
    pub parent: Option<String>,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyTree {
    root: String,
    nodes: BTreeMap<String, TaxonomyNode>,
    code_index: BTreeMap<String, String>,
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonomyTree, TaxonomyError> {
    let text = fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TaxonomyTree::from_json(&text)
}

impl TaxonomyTree {
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let spec: NodeSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    /// The bundled hierarchy covering all 78 Rottnest Island class codes.
    pub fn rottnest_default() -> Self {
        Self::from_json(ROTTNEST_JSON).expect("bundled taxonomy is valid")
    }

    pub fn rottnest_json() -> &'static str {
        ROTTNEST_JSON
    }

    pub fn from_spec(spec: &NodeSpec) -> Result<Self, TaxonomyError> {
        if spec.node_id.is_empty() {
            return Err(TaxonomyError::EmptyNodeId);
        }
        let mut tree = TaxonomyTree {
            root: spec.node_id.clone(),
            nodes: BTreeMap::new(),
            code_index: BTreeMap::new(),
        };
        // (spec, parent id, ancestors on the path from root)
        let mut stack: Vec<(&NodeSpec, Option<String>, Vec<String>)> = vec![(spec, None, Vec::new())];
        while let Some((node, parent, ancestors)) = stack.pop() {
            let id = &node.node_id;
            if ancestors.iter().any(|a| a == id) {
                return Err(TaxonomyError::CycleDetected(id.clone()));
            }
            if tree.nodes.contains_key(id) {
                return Err(TaxonomyError::DuplicateNode(id.clone()));
            }
            if let Some(p) = &parent {
                if !extends_by_one(p, id) {
                    return Err(TaxonomyError::OrphanNode {
                        node_id: id.clone(),
                        parent: p.clone(),
                    });
                }
            }
            let code = (!node.code.is_empty()).then(|| node.code.clone());
            if let Some(c) = &code {
                if let Some(first) = tree.code_index.get(c) {
                    return Err(TaxonomyError::DuplicateCode {
                        code: c.clone(),
                        first: first.clone(),
                        second: id.clone(),
                    });
                }
                tree.code_index.insert(c.clone(), id.clone());
            }
            tree.nodes.insert(
                id.clone(),
                TaxonomyNode {
                    node_id: id.clone(),
                    code,
                    display_name: node.name.clone(),
                    parent: parent.clone(),
                    children: node.children.iter().map(|c| c.node_id.clone()).collect(),
                },
            );
            let mut path = ancestors;
            path.push(id.clone());
            for child in node.children.iter().rev() {
                stack.push((child, Some(id.clone()), path.clone()));
            }
        }
        Ok(tree)
    }

    /// Rebuilds the recursive JSON form.
    pub fn to_spec(&self) -> NodeSpec {
        fn build(tree: &TaxonomyTree, id: &str) -> NodeSpec {
            let node = &tree.nodes[id];
            NodeSpec {
                node_id: node.node_id.clone(),
                code: node.code.clone().unwrap_or_default(),
                name: node.display_name.clone(),
                children: node.children.iter().map(|c| build(tree, c)).collect(),
            }
        }
        build(self, &self.root)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, node_id: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        self.nodes
            .get(node_id)
            .ok_or_else(|| TaxonomyError::UnknownNode(node_id.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values()
    }

    pub fn node_for_code(&self, code: &str) -> Option<&str> {
        self.code_index.get(code).map(String::as_str)
    }

    pub fn contains_code(&self, code: &str) -> bool {
        self.code_index.contains_key(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.code_index.keys().map(String::as_str)
    }

    /// Codes of every node in the subtree rooted at `node_id`, the node itself
    /// included when it carries a code.
    pub fn descendants(&self, node_id: &str) -> Result<BTreeSet<String>, TaxonomyError> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self.node(node_id)?];
        while let Some(node) = stack.pop() {
            if let Some(code) = &node.code {
                out.insert(code.clone());
            }
            stack.extend(node.children.iter().map(|c| &self.nodes[c]));
        }
        Ok(out)
    }

    /// Codes under the parent of `node_id` that are not under `node_id`.
    pub fn siblings_under(&self, node_id: &str) -> Result<BTreeSet<String>, TaxonomyError> {
        let node = self.node(node_id)?;
        let parent = node
            .parent
            .as_deref()
            .ok_or_else(|| TaxonomyError::RootHasNoSiblings(node_id.to_string()))?;
        let own = self.descendants(node_id)?;
        let mut all = self.descendants(parent)?;
        all.retain(|c| !own.contains(c));
        Ok(all)
    }

    /// Node ids from the root down to `node_id`, inclusive.
    pub fn path_to(&self, node_id: &str) -> Result<Vec<String>, TaxonomyError> {
        let mut path = Vec::new();
        let mut seen = HashSet::new();
        let mut cur = Some(self.node(node_id)?);
        while let Some(node) = cur {
            if !seen.insert(node.node_id.as_str()) {
                return Err(TaxonomyError::CycleDetected(node.node_id.clone()));
            }
            path.push(node.node_id.clone());
            cur = node.parent.as_deref().map(|p| &self.nodes[p]);
        }
        path.reverse();
        Ok(path)
    }
}

fn extends_by_one(parent: &str, child: &str) -> bool {
    match child.strip_prefix(parent).and_then(|rest| rest.strip_prefix('.')) {
        Some(component) => !component.is_empty() && !component.contains('.'),
        None => false,
    }
}
