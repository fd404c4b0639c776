//! Logical plan DAG.
//!
//! A plan is a set of nodes addressed by caller-chosen string ids with a
//! single root. Edges point from a node to its inputs; output edges are
//! derived. A node may feed several consumers (shared subplan), so the
//! structure is a DAG, not a tree.
//!
//! JSON form:
//! `{"root": "<id>", "nodes": [{"id", "kind", "table"?, "alias"?, "join_keys"?, "columns"?, "inputs"}]}`.
//! `join_keys` is a flat list of `[input_ordinal, "alias.column"]` pairs in
//! which entries `2i` and `2i+1` form one equality.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Scan,
    /// Key redistribution marker; a pass-through when executed.
    Hash,
    Join,
    Project,
    #[serde(rename = "multijoin")]
    MultiJoin,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Scan => "scan",
            NodeKind::Hash => "hash",
            NodeKind::Join => "join",
            NodeKind::Project => "project",
            NodeKind::MultiJoin => "multijoin",
        })
    }
}

/// `(input ordinal, qualified field)`.
pub type KeyField = (usize, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    /// Scan only; qualifies the table's columns. Defaults to the table name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub join_keys: Vec<KeyField>,
    /// Project: qualified names to keep. Multijoin: optional output list of
    /// `"<ordinal>:*"` or `"<ordinal>:<qualified field>"` items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Multi-join group annotation, set only during a rewrite pass.
    #[serde(skip)]
    pub group: Option<usize>,
}

impl PlanNode {
    fn bare(id: &str, kind: NodeKind, inputs: &[&str]) -> Self {
        PlanNode {
            id: id.to_string(),
            kind,
            table: None,
            alias: None,
            join_keys: Vec::new(),
            columns: None,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            group: None,
        }
    }

    pub fn scan(id: &str, table: &str, alias: Option<&str>) -> Self {
        PlanNode { table: Some(table.to_string()), alias: alias.map(str::to_string), ..Self::bare(id, NodeKind::Scan, &[]) }
    }

    pub fn hash(id: &str, input: &str) -> Self {
        Self::bare(id, NodeKind::Hash, &[input])
    }

    /// `conditions` are `(left field, right field)` equalities.
    pub fn join(id: &str, left: &str, right: &str, conditions: &[(&str, &str)]) -> Self {
        let join_keys = conditions.iter().flat_map(|(l, r)| [(0, l.to_string()), (1, r.to_string())]).collect();
        PlanNode { join_keys, ..Self::bare(id, NodeKind::Join, &[left, right]) }
    }

    pub fn project(id: &str, input: &str, columns: &[&str]) -> Self {
        PlanNode { columns: Some(columns.iter().map(|s| s.to_string()).collect()), ..Self::bare(id, NodeKind::Project, &[input]) }
    }

    /// Scan alias, falling back to the table name.
    pub fn scan_alias(&self) -> Option<&str> {
        self.alias.as_deref().or(self.table.as_deref())
    }

    /// Equality conditions as `(left, right)` key-field pairs.
    pub fn conditions(&self) -> impl Iterator<Item = (&KeyField, &KeyField)> {
        self.join_keys.chunks_exact(2).map(|c| (&c[0], &c[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan json (line {line}, column {column}): {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("duplicate node id {0}")]
    DuplicateId(String),
    #[error("root {0} is not a node")]
    MissingRoot(String),
    #[error("node {node}: input {input} does not exist")]
    DanglingInput { node: String, input: String },
    #[error("node {node}: {kind} takes {expected} inputs, found {found}")]
    Arity { node: String, kind: NodeKind, expected: &'static str, found: usize },
    #[error("node {node}: {reason}")]
    Invalid { node: String, reason: String },
    #[error("cycle through edge {from} -> {to}")]
    Cycle { from: String, to: String },
    #[error("node {0} is not reachable from the root")]
    Unreachable(String),
}

fn invalid(node: &PlanNode, reason: impl Into<String>) -> PlanError {
    PlanError::Invalid { node: node.id.clone(), reason: reason.into() }
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    root: String,
    nodes: Vec<PlanNode>,
}

/// A validated plan: unique ids, no dangling inputs, kind arities respected,
/// acyclic, every node reachable from the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    root: String,
    nodes: Vec<PlanNode>,
    index: BTreeMap<String, usize>,
}

impl Plan {
    pub fn new(root: impl Into<String>, nodes: Vec<PlanNode>) -> Result<Plan, PlanError> {
        let root = root.into();
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(PlanError::DuplicateId(n.id.clone()));
            }
        }
        if !index.contains_key(&root) {
            return Err(PlanError::MissingRoot(root));
        }
        let plan = Plan { root, nodes, index };
        for n in &plan.nodes {
            if let Some(input) = n.inputs.iter().find(|i| !plan.index.contains_key(*i)) {
                return Err(PlanError::DanglingInput { node: n.id.clone(), input: input.clone() });
            }
            check_node(n)?;
        }
        plan.check_acyclic()?;
        let reachable: BTreeSet<&str> = plan.ordered_nodes().iter().map(|n| n.id.as_str()).collect();
        if let Some(n) = plan.nodes.iter().find(|n| !reachable.contains(n.id.as_str())) {
            return Err(PlanError::Unreachable(n.id.clone()));
        }
        Ok(plan)
    }

    pub fn parse(text: &str) -> Result<Plan, PlanError> {
        let doc: PlanDoc =
            serde_json::from_str(text).map_err(|e| PlanError::Json { line: e.line(), column: e.column(), message: e.to_string() })?;
        Plan::new(doc.root, doc.nodes)
    }

    /// Pretty JSON; nodes in their stored order.
    pub fn to_json(&self) -> String {
        let doc = PlanDoc { root: self.root.clone(), nodes: self.nodes.clone() };
        serde_json::to_string_pretty(&doc).expect("plan serialization is infallible")
    }

    pub fn root_id(&self) -> &str {
        &self.root
    }

    pub fn root(&self) -> &PlanNode {
        &self.nodes[self.index[&self.root]]
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut PlanNode> {
        self.index.get(id).map(|&i| &mut self.nodes[i])
    }

    /// Consumers of `id`, each listed once, in node order.
    pub fn outputs(&self, id: &str) -> Vec<&PlanNode> {
        self.nodes.iter().filter(|n| n.inputs.iter().any(|i| i == id)).collect()
    }

    pub fn inputs_of(&self, node: &PlanNode) -> Vec<&PlanNode> {
        node.inputs.iter().map(|i| self.node(i).expect("validated input")).collect()
    }

    /// Breadth-first from the root, first discovery wins.
    pub fn ordered_nodes(&self) -> Vec<&PlanNode> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.root.as_str()]);
        seen.insert(self.root.as_str());
        let mut out = Vec::new();
        while let Some(id) = queue.pop_front() {
            let node = self.node(id).expect("validated id");
            out.push(node);
            for input in &node.inputs {
                if seen.insert(input.as_str()) {
                    queue.push_back(input.as_str());
                }
            }
        }
        out
    }

    /// Same nodes (ignoring group annotations) under the same ids and root.
    pub fn isomorphic(&self, other: &Plan) -> bool {
        let strip = |n: &PlanNode| PlanNode { group: None, ..n.clone() };
        self.root == other.root
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().all(|n| other.node(&n.id).is_some_and(|m| strip(m) == strip(n)))
    }

    /// Scan aliases reachable from `id`, with multiplicity.
    pub fn aliases_under(&self, id: &str) -> Vec<&str> {
        let node = self.node(id).expect("validated id");
        if node.kind == NodeKind::Scan {
            return node.scan_alias().into_iter().collect();
        }
        node.inputs.iter().flat_map(|i| self.aliases_under(i)).collect()
    }

    fn check_acyclic(&self) -> Result<(), PlanError> {
        // 0 = unvisited, 1 = on the DFS stack, 2 = finished.
        let mut state = vec![0u8; self.nodes.len()];
        let mut stack: Vec<(usize, usize)> = vec![(self.index[&self.root], 0)];
        state[self.index[&self.root]] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let inputs = &self.nodes[node].inputs;
            if *next == inputs.len() {
                state[node] = 2;
                stack.pop();
                continue;
            }
            let child = self.index[&inputs[*next]];
            *next += 1;
            match state[child] {
                0 => {
                    state[child] = 1;
                    stack.push((child, 0));
                }
                1 => return Err(PlanError::Cycle { from: self.nodes[node].id.clone(), to: self.nodes[child].id.clone() }),
                _ => {}
            }
        }
        Ok(())
    }
}

fn check_node(n: &PlanNode) -> Result<(), PlanError> {
    let found = n.inputs.len();
    let arity = |expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(PlanError::Arity { node: n.id.clone(), kind: n.kind, expected, found })
        }
    };
    match n.kind {
        NodeKind::Scan => {
            arity("0", found == 0)?;
            if n.table.is_none() {
                return Err(invalid(n, "scan without table"));
            }
        }
        NodeKind::Hash => arity("1", found == 1)?,
        NodeKind::Project => {
            arity("1", found == 1)?;
            match &n.columns {
                None => return Err(invalid(n, "project without columns")),
                Some(cols) => cols.iter().try_for_each(|c| check_qualified(n, c))?,
            }
        }
        NodeKind::Join => {
            arity("2", found == 2)?;
            check_keys(n)?;
        }
        NodeKind::MultiJoin => {
            arity(">= 2", found >= 2)?;
            check_keys(n)?;
            if let Some(cols) = &n.columns {
                for c in cols {
                    let (ord, field) = parse_output_column(c).ok_or_else(|| invalid(n, format!("bad output column {c}")))?;
                    if ord >= found {
                        return Err(invalid(n, format!("output column {c} names input {ord}")));
                    }
                    if let Some(f) = field {
                        check_qualified(n, f)?;
                    }
                }
            }
        }
    }
    if n.kind != NodeKind::Scan && (n.table.is_some() || n.alias.is_some()) {
        return Err(invalid(n, "only scans carry a table or alias"));
    }
    Ok(())
}

fn check_keys(n: &PlanNode) -> Result<(), PlanError> {
    if n.join_keys.is_empty() || n.join_keys.len() % 2 != 0 {
        return Err(invalid(n, "join_keys must hold a non-empty, even number of entries"));
    }
    for (ord, field) in &n.join_keys {
        if *ord >= n.inputs.len() {
            return Err(invalid(n, format!("join key {field} names input {ord}")));
        }
        check_qualified(n, field)?;
    }
    Ok(())
}

fn check_qualified(n: &PlanNode, field: &str) -> Result<(), PlanError> {
    match field.split_once('.') {
        Some((a, c)) if !a.is_empty() && !c.is_empty() => Ok(()),
        _ => Err(invalid(n, format!("field {field} is not qualified as alias.column"))),
    }
}

/// Splits a multijoin output item into its input ordinal and field
/// (`None` for `*`).
pub fn parse_output_column(item: &str) -> Option<(usize, Option<&str>)> {
    let (ord, rest) = item.split_once(':')?;
    let ord = ord.parse().ok()?;
    Some((ord, if rest == "*" { None } else { Some(rest) }))
}

/// Alias part of a qualified field.
pub fn field_alias(field: &str) -> &str {
    field.split_once('.').map_or(field, |(a, _)| a)
}
