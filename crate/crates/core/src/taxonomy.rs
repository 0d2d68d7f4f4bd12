//! The three-rooted privacy behavior taxonomy (actions, data types, purposes)
//! and the distance-discounted credit used for hierarchical scoring.
//!
//! Nodes live in an arena indexed by [`NodeId`]. Each category has a synthetic
//! root node that is not itself a label: distances and credit are only defined
//! between labels, so the root never provides a path between two branches.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::text::normalize_name;
use crate::Rational;

/// Default taxonomy shipped with the crate.
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Action,
    DataType,
    Purpose,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Action, Category::DataType, Category::Purpose];

    /// Key used in the taxonomy file and in serialized label sets.
    pub fn key(self) -> &'static str {
        match self {
            Category::Action => "actions",
            Category::DataType => "data_types",
            Category::Purpose => "purposes",
        }
    }

    /// Display name of the synthetic category root.
    pub fn root_name(self) -> &'static str {
        match self {
            Category::Action => "Action",
            Category::DataType => "Data Type",
            Category::Purpose => "Purpose",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Category::Action => 0,
            Category::DataType => 1,
            Category::Purpose => 2,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Action => "action",
            Category::DataType => "data type",
            Category::Purpose => "purpose",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub name: String,
    pub category: Category,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Edge count from the category root (roots are 0).
    pub depth: u32,
    /// Lower-case verb form used when rendering stories (actions only).
    pub verb: Option<String>,
}

impl TaxonomyNode {
    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("malformed taxonomy file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("cannot read taxonomy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty label name at {path}")]
    EmptyName { path: String },
    #[error("duplicate label `{name}` at {path} (first defined at {first})")]
    DuplicateName {
        name: String,
        path: String,
        first: String,
    },
    #[error("orphan label `{name}` at {path}: parent `{parent}` does not exist")]
    Orphan {
        name: String,
        path: String,
        parent: String,
    },
    #[error("cycle through label `{name}` at {path}")]
    Cycle { name: String, path: String },
    #[error("label `{name}` ({category}) placed under `{parent}` which belongs to another category")]
    CategoryMismatch {
        name: String,
        category: Category,
        parent: String,
    },
    #[error("node {0:?} is not part of this taxonomy")]
    UnknownNode(NodeId),
}

/// One node of the on-disk taxonomy format.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeSpec>,
}

/// The on-disk taxonomy format.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TaxonomyFile {
    pub version: String,
    #[serde(default)]
    pub actions: Vec<NodeSpec>,
    #[serde(default)]
    pub data_types: Vec<NodeSpec>,
    #[serde(default)]
    pub purposes: Vec<NodeSpec>,
}

/// A flat parent-pointer description of one label, used by [`Taxonomy::from_edges`].
#[derive(Clone, Debug)]
pub struct LabelEdge {
    pub name: String,
    pub category: Category,
    /// `None` places the label directly under the category root.
    pub parent: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    version: String,
    nodes: Vec<TaxonomyNode>,
    roots: [NodeId; 3],
    index: HashMap<String, NodeId>,
}

impl Taxonomy {
    fn with_roots(version: String) -> Self {
        let mut t = Taxonomy {
            version,
            nodes: Vec::new(),
            roots: [NodeId(0), NodeId(1), NodeId(2)],
            index: HashMap::new(),
        };
        for cat in Category::ALL {
            let id = NodeId(t.nodes.len() as u32);
            t.nodes.push(TaxonomyNode {
                id,
                name: cat.root_name().to_string(),
                category: cat,
                parent: None,
                children: Vec::new(),
                depth: 0,
                verb: None,
            });
            t.index.insert(normalize_name(cat.root_name()), id);
            t.roots[cat.index()] = id;
        }
        t
    }

    /// Parse a taxonomy file (JSON).
    pub fn load(source: &[u8]) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_slice(source)?;
        Self::from_file_spec(&file)
    }

    pub fn load_path(path: &Path) -> Result<Self, TaxonomyError> {
        let bytes = std::fs::read(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::load(&bytes)
    }

    /// The taxonomy shipped with the crate.
    pub fn load_default() -> Self {
        Self::load(DEFAULT_TAXONOMY_JSON.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn from_file_spec(file: &TaxonomyFile) -> Result<Self, TaxonomyError> {
        let mut t = Self::with_roots(file.version.clone());
        let mut paths: HashMap<NodeId, String> = HashMap::new();
        for cat in Category::ALL {
            let specs = match cat {
                Category::Action => &file.actions,
                Category::DataType => &file.data_types,
                Category::Purpose => &file.purposes,
            };
            let root = t.root(cat);
            paths.insert(root, cat.key().to_string());
            for spec in specs {
                t.insert_spec(spec, root, cat.key(), &mut paths)?;
            }
        }
        Ok(t)
    }

    fn insert_spec(
        &mut self,
        spec: &NodeSpec,
        parent: NodeId,
        parent_path: &str,
        paths: &mut HashMap<NodeId, String>,
    ) -> Result<(), TaxonomyError> {
        let path = format!("{parent_path}/{}", spec.name.trim());
        let id = self.push_node(&spec.name, spec.verb.clone(), parent, &path, paths)?;
        for child in &spec.children {
            self.insert_spec(child, id, &path, paths)?;
        }
        Ok(())
    }

    fn push_node(
        &mut self,
        raw_name: &str,
        verb: Option<String>,
        parent: NodeId,
        path: &str,
        paths: &mut HashMap<NodeId, String>,
    ) -> Result<NodeId, TaxonomyError> {
        let key = normalize_name(raw_name);
        if key.is_empty() {
            return Err(TaxonomyError::EmptyName {
                path: path.to_string(),
            });
        }
        if let Some(&existing) = self.index.get(&key) {
            let first = paths
                .get(&existing)
                .cloned()
                .unwrap_or_else(|| self.nodes[existing.index()].name.clone());
            return Err(TaxonomyError::DuplicateName {
                name: raw_name.trim().to_string(),
                path: path.to_string(),
                first,
            });
        }
        let id = NodeId(self.nodes.len() as u32);
        let parent_node = &self.nodes[parent.index()];
        let node = TaxonomyNode {
            id,
            // display name keeps its casing but loses stray whitespace
            name: raw_name.split_whitespace().collect::<Vec<_>>().join(" "),
            category: parent_node.category,
            parent: Some(parent),
            children: Vec::new(),
            depth: parent_node.depth + 1,
            verb: verb.map(|v| normalize_name(&v)),
        };
        self.nodes.push(node);
        self.nodes[parent.index()].children.push(id);
        self.index.insert(key, id);
        paths.insert(id, path.to_string());
        Ok(id)
    }

    /// Build a taxonomy from parent pointers. Edges may appear in any order;
    /// orphans, cycles and cross-category parents are rejected.
    pub fn from_edges(
        version: impl Into<String>,
        edges: impl IntoIterator<Item = LabelEdge>,
    ) -> Result<Self, TaxonomyError> {
        let edges: Vec<LabelEdge> = edges.into_iter().collect();
        let mut t = Self::with_roots(version.into());
        let mut paths: HashMap<NodeId, String> = HashMap::new();

        let mut by_name: HashMap<String, usize> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            let key = normalize_name(&e.name);
            if key.is_empty() {
                return Err(TaxonomyError::EmptyName {
                    path: format!("{}/<edge {i}>", e.category.key()),
                });
            }
            let clashes_root = Category::ALL
                .iter()
                .any(|c| normalize_name(c.root_name()) == key);
            if clashes_root {
                return Err(TaxonomyError::DuplicateName {
                    name: e.name.clone(),
                    path: format!("{}/{}", e.category.key(), e.name),
                    first: "<category root>".into(),
                });
            }
            if let Some(&first) = by_name.get(&key) {
                return Err(TaxonomyError::DuplicateName {
                    name: e.name.clone(),
                    path: format!("{}/{}", e.category.key(), e.name),
                    first: format!("{}/{}", edges[first].category.key(), edges[first].name),
                });
            }
            by_name.insert(key, i);
        }

        // Resolve each edge's parent index; detect orphans and cycles by walking up.
        let parent_of = |i: usize| -> Result<Option<usize>, TaxonomyError> {
            match &edges[i].parent {
                None => Ok(None),
                Some(p) => match by_name.get(&normalize_name(p)) {
                    Some(&j) => Ok(Some(j)),
                    None => Err(TaxonomyError::Orphan {
                        name: edges[i].name.clone(),
                        path: format!("{}/{}", edges[i].category.key(), edges[i].name),
                        parent: p.clone(),
                    }),
                },
            }
        };
        for i in 0..edges.len() {
            let mut chain = vec![i];
            let mut cur = i;
            while let Some(p) = parent_of(cur)? {
                if edges[p].category != edges[cur].category {
                    return Err(TaxonomyError::CategoryMismatch {
                        name: edges[cur].name.clone(),
                        category: edges[cur].category,
                        parent: edges[p].name.clone(),
                    });
                }
                if chain.contains(&p) {
                    let path = chain
                        .iter()
                        .rev()
                        .map(|&k| edges[k].name.as_str())
                        .collect::<Vec<_>>()
                        .join("/");
                    return Err(TaxonomyError::Cycle {
                        name: edges[p].name.clone(),
                        path,
                    });
                }
                chain.push(p);
                cur = p;
            }
        }

        // Insert parents before children, preserving input order among siblings.
        let mut placed: Vec<Option<NodeId>> = vec![None; edges.len()];
        for cat in Category::ALL {
            paths.insert(t.root(cat), cat.key().to_string());
        }
        let mut remaining: Vec<usize> = (0..edges.len()).collect();
        while !remaining.is_empty() {
            let mut next = Vec::new();
            for i in remaining {
                let parent = match parent_of(i)? {
                    None => Some(t.root(edges[i].category)),
                    Some(j) => placed[j],
                };
                match parent {
                    Some(pid) => {
                        let path = format!("{}/{}", paths[&pid], edges[i].name.trim());
                        let id = t.push_node(&edges[i].name, None, pid, &path, &mut paths)?;
                        placed[i] = Some(id);
                    }
                    None => next.push(i),
                }
            }
            remaining = next;
        }
        Ok(t)
    }

    /// Serialize back to the on-disk format.
    pub fn to_file_spec(&self) -> TaxonomyFile {
        let spec_of = |cat: Category| -> Vec<NodeSpec> {
            fn build(t: &Taxonomy, id: NodeId) -> NodeSpec {
                let n = &t.nodes[id.index()];
                NodeSpec {
                    name: n.name.clone(),
                    verb: n.verb.clone(),
                    children: n.children.iter().map(|&c| build(t, c)).collect(),
                }
            }
            self.nodes[self.root(cat).index()]
                .children
                .iter()
                .map(|&c| build(self, c))
                .collect()
        };
        TaxonomyFile {
            version: self.version.clone(),
            actions: spec_of(Category::Action),
            data_types: spec_of(Category::DataType),
            purposes: spec_of(Category::Purpose),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Total node count, including the three category roots.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 3
    }

    /// Number of labels (non-root nodes) in a category.
    pub fn label_count(&self, cat: Category) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.category == cat && !n.is_root())
            .count()
    }

    pub fn root(&self, cat: Category) -> NodeId {
        self.roots[cat.index()]
    }

    pub fn node(&self, id: NodeId) -> Result<&TaxonomyNode, TaxonomyError> {
        self.nodes.get(id.index()).ok_or(TaxonomyError::UnknownNode(id))
    }

    /// Panicking accessor for ids obtained from this taxonomy.
    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn category(&self, id: NodeId) -> Category {
        self.nodes[id.index()].category
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.iter()
    }

    /// Labels of a category in pre-order (parents before children, siblings in file order).
    pub fn labels(&self, cat: Category) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.nodes[self.root(cat).index()]
            .children
            .iter()
            .rev()
            .copied()
            .collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id.index()].children.iter().rev().copied());
        }
        out
    }

    /// Exact lookup by normalized name. Never fuzzy.
    pub fn find_label(&self, raw: &str) -> Option<NodeId> {
        self.index.get(&normalize_name(raw)).copied()
    }

    /// Lookup restricted to labels (not roots) of one category.
    pub fn find_in(&self, raw: &str, cat: Category) -> Option<NodeId> {
        self.find_label(raw).filter(|&id| {
            let n = &self.nodes[id.index()];
            n.category == cat && !n.is_root()
        })
    }

    /// Lower-case verb for an action label; falls back to the normalized name.
    pub fn verb(&self, id: NodeId) -> String {
        let n = &self.nodes[id.index()];
        n.verb.clone().unwrap_or_else(|| normalize_name(&n.name))
    }

    /// Edge count between two labels on one ancestor/descendant chain of the
    /// same category; `None` for siblings, cousins, roots or cross-category pairs.
    pub fn tree_distance(&self, a: NodeId, b: NodeId) -> Result<Option<u32>, TaxonomyError> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        if a == b {
            return Ok(Some(0));
        }
        if na.category != nb.category || na.is_root() || nb.is_root() {
            return Ok(None);
        }
        let (mut deep, shallow) = if na.depth >= nb.depth { (na, nb) } else { (nb, na) };
        let diff = deep.depth - shallow.depth;
        for _ in 0..diff {
            deep = &self.nodes[deep.parent.expect("non-root has parent").index()];
        }
        Ok((deep.id == shallow.id).then_some(diff))
    }

    /// Partial credit `1/(1+d)` for labels `d` edges apart on one chain, else 0.
    pub fn credit(&self, predicted: NodeId, gold: NodeId) -> Result<Rational, TaxonomyError> {
        Ok(match self.tree_distance(predicted, gold)? {
            Some(d) => Rational::new(BigInt::from(1), BigInt::from(1 + d)),
            None => Rational::zero(),
        })
    }

    /// Slash-separated path from the category key to the node.
    pub fn path(&self, id: NodeId) -> String {
        let mut parts = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = &self.nodes[c.index()];
            if n.is_root() {
                parts.push(n.category.key().to_string());
            } else {
                parts.push(n.name.clone());
            }
            cur = n.parent;
        }
        parts.reverse();
        parts.join("/")
    }
}
