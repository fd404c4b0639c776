//! Two-step multi-join conversion.
//!
//! Step one walks the plan breadth-first from the root and assigns
//! group-eligible nodes to multi-join groups: a node joins the group shared
//! by all of its consumers, and an ungrouped join starts a new group. Step
//! two rewrites the plan bottom-up, replacing each group root with one
//! `multijoin` node whose inputs are the group's external inputs.
//!
//! The multijoin's inputs come from expanding the group from its root along
//! member edges, breadth-first, one slot per edge that leaves the group. A
//! member reached along two paths is expanded twice, so its external inputs
//! get one slot per path; this keeps the rewritten plan equivalent to the
//! original, where the shared member's result is consumed twice.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::plan::{field_alias, NodeKind, Plan, PlanError, PlanNode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatternConfig {
    /// Also accept a project whose input is a join as a group member.
    pub include_project_nodes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiJoinGroup {
    pub root: String,
    /// Root first, then in breadth-first discovery order.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TscError {
    #[error("node {node}: no input of the group provides {field}")]
    Unresolved { node: String, field: String },
    #[error("node {node}: {field} is provided by more than one group input")]
    Ambiguous { node: String, field: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub plan: Plan,
    pub groups: Vec<MultiJoinGroup>,
    /// Ids of the synthesized multijoin nodes, in creation order.
    pub multijoins: Vec<String>,
}

pub fn can_be_multi_join_group_member(plan: &Plan, node: &PlanNode, config: &PatternConfig) -> bool {
    let input_is_join = || node.inputs.first().and_then(|i| plan.node(i)).is_some_and(|n| n.kind == NodeKind::Join);
    match node.kind {
        NodeKind::Join => true,
        NodeKind::Hash => input_is_join(),
        NodeKind::Project => config.include_project_nodes && input_is_join(),
        NodeKind::Scan | NodeKind::MultiJoin => false,
    }
}

/// The group every consumer of `node` belongs to, if there is exactly one.
pub fn can_be_in_same_group_with_outputs(plan: &Plan, node: &PlanNode) -> Option<usize> {
    let outputs = plan.outputs(&node.id);
    let group = outputs.first()?.group?;
    outputs.iter().all(|o| o.group == Some(group)).then_some(group)
}

/// Annotates `plan` with group ids and returns the groups. Existing
/// annotations are discarded first.
pub fn create_multi_join_groups(plan: &mut Plan, config: &PatternConfig) -> Vec<MultiJoinGroup> {
    let order: Vec<String> = plan.ordered_nodes().iter().map(|n| n.id.clone()).collect();
    for id in &order {
        plan.node_mut(id).expect("listed id").group = None;
    }
    let mut groups: Vec<MultiJoinGroup> = Vec::new();
    for id in order {
        let node = plan.node(&id).expect("listed id");
        if !can_be_multi_join_group_member(plan, node, config) {
            continue;
        }
        let assigned = match can_be_in_same_group_with_outputs(plan, node) {
            Some(g) => {
                groups[g].members.push(id.clone());
                g
            }
            None if node.kind == NodeKind::Join => {
                groups.push(MultiJoinGroup { root: id.clone(), members: vec![id.clone()] });
                groups.len() - 1
            }
            None => continue,
        };
        plan.node_mut(&id).expect("listed id").group = Some(assigned);
    }
    groups
}

pub fn two_step_convert(plan: &Plan, config: &PatternConfig) -> Result<Conversion, TscError> {
    let mut annotated = plan.clone();
    let groups = create_multi_join_groups(&mut annotated, config);
    if groups.is_empty() {
        return Ok(Conversion { plan: plan.clone(), groups, multijoins: Vec::new() });
    }
    let mut rw = Rewriter {
        src: &annotated,
        groups: &groups,
        visited: BTreeMap::new(),
        out: BTreeMap::new(),
        used_ids: plan.nodes().iter().map(|n| n.id.clone()).collect(),
        next_k: 1,
        multijoins: Vec::new(),
    };
    let root = rw.get_multi_join_node(plan.root_id())?;
    let mut nodes = Vec::new();
    let mut seen = BTreeSet::from([root.clone()]);
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(id) = queue.pop_front() {
        let node = rw.out.remove(&id).expect("rewritten node");
        for i in &node.inputs {
            if seen.insert(i.clone()) {
                queue.push_back(i.clone());
            }
        }
        nodes.push(node);
    }
    let multijoins = rw.multijoins;
    Ok(Conversion { plan: Plan::new(root, nodes)?, groups, multijoins })
}

/// Where a member's input edge leads inside a group expansion.
#[derive(Clone, Copy)]
enum Edge {
    Slot(usize),
    Member(usize),
}

struct Expansion<'a> {
    /// Original node of each member instance and its input edges.
    insts: Vec<(&'a PlanNode, Vec<Edge>)>,
    /// Original id of each slot's input node.
    slots: Vec<&'a str>,
}

enum OutColumn<'a> {
    All(usize),
    Field(usize, &'a str),
}

struct Rewriter<'a> {
    src: &'a Plan,
    groups: &'a [MultiJoinGroup],
    /// Original id -> id of its replacement.
    visited: BTreeMap<String, String>,
    out: BTreeMap<String, PlanNode>,
    used_ids: BTreeSet<String>,
    next_k: usize,
    multijoins: Vec<String>,
}

impl<'a> Rewriter<'a> {
    fn get_multi_join_node(&mut self, id: &str) -> Result<String, TscError> {
        if let Some(done) = self.visited.get(id) {
            return Ok(done.clone());
        }
        let original = self.src.node(id).expect("validated id");
        let mut node = PlanNode { group: None, ..original.clone() };
        for input in node.inputs.iter_mut() {
            *input = self.get_multi_join_node(input)?;
        }
        let ret = match original.group {
            Some(g) if self.groups[g].root == id => {
                let mj = self.create_multi_join_node_by_group(g)?;
                let mj_id = mj.id.clone();
                self.out.insert(mj_id.clone(), mj);
                self.multijoins.push(mj_id.clone());
                mj_id
            }
            _ => {
                self.out.insert(node.id.clone(), node);
                String::from(id)
            }
        };
        self.visited.insert(String::from(id), ret.clone());
        Ok(ret)
    }

    fn fresh_id(&mut self) -> String {
        loop {
            let id = format!("multijoin-{}", self.next_k);
            self.next_k += 1;
            if self.used_ids.insert(id.clone()) {
                return id;
            }
        }
    }

    fn expand(&self, g: usize) -> Expansion<'a> {
        let src = self.src;
        let root = src.node(&self.groups[g].root).expect("group root");
        let mut exp = Expansion { insts: vec![(root, Vec::new())], slots: Vec::new() };
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let node = exp.insts[i].0;
            let mut edges = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                let child = src.node(input).expect("validated input");
                if child.group == Some(g) {
                    exp.insts.push((child, Vec::new()));
                    queue.push_back(exp.insts.len() - 1);
                    edges.push(Edge::Member(exp.insts.len() - 1));
                } else {
                    exp.slots.push(input.as_str());
                    edges.push(Edge::Slot(exp.slots.len() - 1));
                }
            }
            exp.insts[i].1 = edges;
        }
        exp
    }

    fn create_multi_join_node_by_group(&mut self, g: usize) -> Result<PlanNode, TscError> {
        let exp = self.expand(g);
        let mut join_keys = Vec::new();
        for (node, edges) in &exp.insts {
            if node.kind != NodeKind::Join {
                continue;
            }
            for ((lo, lf), (ro, rf)) in node.conditions() {
                join_keys.push((self.provider(&exp, edges[*lo], node, lf)?, lf.clone()));
                join_keys.push((self.provider(&exp, edges[*ro], node, rf)?, rf.clone()));
            }
        }
        let mut columns = Vec::new();
        self.out_columns(&exp, Edge::Member(0), &mut columns)?;
        let mut all: Vec<usize> = columns.iter().filter_map(|c| if let OutColumn::All(s) = c { Some(*s) } else { None }).collect();
        all.sort_unstable();
        let plain = all.len() == columns.len() && all == (0..exp.slots.len()).collect::<Vec<_>>();
        let columns = (!plain).then(|| {
            columns
                .iter()
                .map(|c| match c {
                    OutColumn::All(s) => format!("{s}:*"),
                    OutColumn::Field(s, f) => format!("{s}:{f}"),
                })
                .collect()
        });
        let inputs = exp.slots.iter().map(|s| self.visited[*s].clone()).collect();
        Ok(PlanNode { id: self.fresh_id(), kind: NodeKind::MultiJoin, table: None, alias: None, join_keys, columns, inputs, group: None })
    }

    /// The single slot under `edge` whose subtree scans the alias of `field`.
    fn provider(&self, exp: &Expansion<'_>, edge: Edge, node: &PlanNode, field: &str) -> Result<usize, TscError> {
        let mut under = Vec::new();
        slots_under(exp, edge, &mut under);
        let alias = field_alias(field);
        let mut found = under.into_iter().filter(|s| self.src.aliases_under(exp.slots[*s]).contains(&alias));
        let first = found.next().ok_or_else(|| TscError::Unresolved { node: node.id.clone(), field: String::from(field) })?;
        if found.next().is_some() {
            return Err(TscError::Ambiguous { node: node.id.clone(), field: String::from(field) });
        }
        Ok(first)
    }

    fn out_columns(&self, exp: &Expansion<'a>, edge: Edge, out: &mut Vec<OutColumn<'a>>) -> Result<(), TscError> {
        let i = match edge {
            Edge::Slot(s) => {
                out.push(OutColumn::All(s));
                return Ok(());
            }
            Edge::Member(i) => i,
        };
        let (node, edges) = &exp.insts[i];
        match node.kind {
            NodeKind::Project => {
                for c in node.columns.as_deref().unwrap_or_default() {
                    out.push(OutColumn::Field(self.provider(exp, edges[0], node, c)?, c.as_str()));
                }
            }
            _ => {
                for e in edges {
                    self.out_columns(exp, *e, out)?;
                }
            }
        }
        Ok(())
    }
}

fn slots_under(exp: &Expansion<'_>, edge: Edge, out: &mut Vec<usize>) {
    match edge {
        Edge::Slot(s) => out.push(s),
        Edge::Member(i) => exp.insts[i].1.iter().for_each(|e| slots_under(exp, *e, out)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_way() -> Plan {
        // Join1(Hash(Join2(Hash(A), Hash(B))), Hash(C))
        Plan::new(
            "j1",
            vec![
                PlanNode::join("j1", "hj2", "hc", &[("a.k", "c.k")]),
                PlanNode::hash("hj2", "j2"),
                PlanNode::join("j2", "ha", "hb", &[("a.k", "b.k")]),
                PlanNode::hash("ha", "a"),
                PlanNode::hash("hb", "b"),
                PlanNode::hash("hc", "c"),
                PlanNode::scan("a", "ta", Some("a")),
                PlanNode::scan("b", "tb", Some("b")),
                PlanNode::scan("c", "tc", Some("c")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn member_predicate() {
        let p = three_way();
        let cfg = PatternConfig::default();
        assert!(can_be_multi_join_group_member(&p, p.node("j1").unwrap(), &cfg));
        assert!(can_be_multi_join_group_member(&p, p.node("hj2").unwrap(), &cfg));
        assert!(!can_be_multi_join_group_member(&p, p.node("ha").unwrap(), &cfg));
        assert!(!can_be_multi_join_group_member(&p, p.node("a").unwrap(), &cfg));
    }

    #[test]
    fn worked_example_groups_and_inputs() {
        let p = three_way();
        let conv = two_step_convert(&p, &PatternConfig::default()).unwrap();
        assert_eq!(conv.groups, [MultiJoinGroup { root: "j1".into(), members: vec!["j1".into(), "hj2".into(), "j2".into()] }]);
        let root = conv.plan.root();
        assert_eq!((root.id.as_str(), root.kind), ("multijoin-1", NodeKind::MultiJoin));
        assert_eq!(root.inputs, ["hc", "ha", "hb"]);
        assert_eq!(root.join_keys, [(1, "a.k".into()), (0, "c.k".into()), (1, "a.k".into()), (2, "b.k".into())]);
        assert_eq!(root.columns, None);
        assert_eq!(conv.plan.len(), 7);
    }

    #[test]
    fn root_has_no_output_group() {
        let p = three_way();
        assert_eq!(can_be_in_same_group_with_outputs(&p, p.root()), None);
    }

    #[test]
    fn scan_only_plan_is_unchanged() {
        let p = Plan::new("s", vec![PlanNode::scan("s", "t", None)]).unwrap();
        let conv = two_step_convert(&p, &PatternConfig::default()).unwrap();
        assert!(conv.plan.isomorphic(&p));
        assert!(conv.groups.is_empty());
    }

    #[test]
    fn conversion_is_idempotent() {
        let once = two_step_convert(&three_way(), &PatternConfig::default()).unwrap().plan;
        let twice = two_step_convert(&once, &PatternConfig::default()).unwrap();
        assert!(twice.groups.is_empty());
        assert!(twice.plan.isomorphic(&once));
    }

    #[test]
    fn synthesized_ids_skip_taken_ones() {
        let mut nodes = three_way().nodes().to_vec();
        nodes.iter_mut().find(|n| n.id == "c").unwrap().id = "multijoin-1".into();
        nodes.iter_mut().find(|n| n.id == "hc").unwrap().inputs = vec!["multijoin-1".into()];
        let p = Plan::new("j1", nodes).unwrap();
        let conv = two_step_convert(&p, &PatternConfig::default()).unwrap();
        assert_eq!(conv.multijoins, ["multijoin-2"]);
    }

    #[test]
    fn consumers_in_different_groups_split_the_pattern() {
        // j2 feeds two projects, each under its own join: j2 roots its own group.
        let p = Plan::new(
            "top",
            vec![
                PlanNode::join("top", "pl", "pr", &[("a.k", "a.k")]),
                PlanNode::project("pl", "jl", &["a.k", "c.k"]),
                PlanNode::project("pr", "jr", &["a.k", "d.k"]),
                PlanNode::join("jl", "hj2", "c", &[("a.k", "c.k")]),
                PlanNode::join("jr", "hj2", "d", &[("a.k", "d.k")]),
                PlanNode::hash("hj2", "j2"),
                PlanNode::join("j2", "a", "b", &[("a.k", "b.k")]),
                PlanNode::scan("a", "a", None),
                PlanNode::scan("b", "b", None),
                PlanNode::scan("c", "c", None),
                PlanNode::scan("d", "d", None),
            ],
        )
        .unwrap();
        let conv = two_step_convert(&p, &PatternConfig::default()).unwrap();
        let roots: Vec<_> = conv.groups.iter().map(|g| g.root.as_str()).collect();
        assert_eq!(roots, ["top", "jl", "jr", "j2"]);
        // hj2's consumers sit in different groups, so it stays outside both.
        assert!(conv.groups.iter().all(|g| !g.members.contains(&"hj2".into())));
    }

    #[test]
    fn project_members_become_output_columns() {
        let p = Plan::new(
            "top",
            vec![
                PlanNode::join("top", "p", "c", &[("a.k", "c.k")]),
                PlanNode::project("p", "j", &["a.k", "b.v"]),
                PlanNode::join("j", "a", "b", &[("a.k", "b.k")]),
                PlanNode::scan("a", "a", None),
                PlanNode::scan("b", "b", None),
                PlanNode::scan("c", "c", None),
            ],
        )
        .unwrap();
        let plain = two_step_convert(&p, &PatternConfig::default()).unwrap();
        assert_eq!(plain.multijoins.len(), 2);
        let merged = two_step_convert(&p, &PatternConfig { include_project_nodes: true }).unwrap();
        assert_eq!(merged.multijoins.len(), 1);
        let root = merged.plan.root();
        assert_eq!(root.inputs, ["c", "a", "b"]);
        assert_eq!(root.columns.as_deref().unwrap(), ["1:a.k", "2:b.v", "0:*"]);
    }
}
