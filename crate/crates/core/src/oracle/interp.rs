use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use super::multiset::ResultMultiset;
use crate::plan::{parse_output_column, NodeKind, Plan, PlanNode};
use crate::value::{Row, Value};

/// Base table: unqualified column names and rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

/// Intermediate or final result with qualified column names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpretError {
    #[error("node {node}: unknown table {table}")]
    UnknownTable { node: String, table: String },
    #[error("node {node}: unknown column {column}")]
    UnknownColumn { node: String, column: String },
    #[error("node {node}: column {column} is ambiguous")]
    AmbiguousColumn { node: String, column: String },
    #[error("table {table}: row {row} does not match the column count")]
    RowArity { table: String, row: usize },
}

/// `col=value` pairs sorted by column, joined by `|`. Column order in the
/// relation does not matter.
pub fn canonical_line(columns: &[String], row: &[Value]) -> String {
    let mut pairs: Vec<(&str, String)> = columns.iter().map(String::as_str).zip(row.iter().map(ToString::to_string)).collect();
    pairs.sort_unstable();
    let mut out = String::new();
    for (i, (c, v)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push('|');
        }
        out.push_str(c);
        out.push('=');
        out.push_str(v);
    }
    out
}

impl Relation {
    /// Sorted canonical lines, one per row.
    pub fn canonical_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self.rows.iter().map(|r| canonical_line(&self.columns, r)).collect();
        lines.sort_unstable();
        lines
    }

    pub fn to_multiset(&self) -> ResultMultiset {
        let mut out = ResultMultiset::new();
        for r in &self.rows {
            out.insert(canonical_line(&self.columns, r).into_bytes());
        }
        out
    }

    fn column(&self, node: &PlanNode, name: &str) -> Result<usize, InterpretError> {
        let mut hits = self.columns.iter().enumerate().filter(|(_, c)| *c == name).map(|(i, _)| i);
        let first = hits.next().ok_or_else(|| InterpretError::UnknownColumn { node: node.id.clone(), column: name.into() })?;
        if hits.next().is_some() {
            return Err(InterpretError::AmbiguousColumn { node: node.id.clone(), column: name.into() });
        }
        Ok(first)
    }
}

/// Evaluates `plan` bottom-up over `tables`. Hash nodes pass rows through,
/// projects select columns, joins and multijoins are nested-loop equi-joins.
/// A shared node is evaluated once.
pub fn interpret_plan(plan: &Plan, tables: &BTreeMap<String, Table>) -> Result<Relation, InterpretError> {
    let mut memo = BTreeMap::new();
    eval(plan, plan.root_id(), tables, &mut memo)
}

fn eval(
    plan: &Plan,
    id: &str,
    tables: &BTreeMap<String, Table>,
    memo: &mut BTreeMap<String, Relation>,
) -> Result<Relation, InterpretError> {
    if let Some(r) = memo.get(id) {
        return Ok(r.clone());
    }
    let node = plan.node(id).expect("validated id");
    let mut inputs = Vec::with_capacity(node.inputs.len());
    for i in &node.inputs {
        inputs.push(eval(plan, i, tables, memo)?);
    }
    let rel = match node.kind {
        NodeKind::Scan => scan(node, tables)?,
        NodeKind::Hash => inputs.pop().expect("hash has one input"),
        NodeKind::Project => {
            let input = inputs.pop().expect("project has one input");
            let cols = node.columns.as_deref().unwrap_or_default();
            let idx = cols.iter().map(|c| input.column(node, c)).collect::<Result<Vec<_>, _>>()?;
            Relation { columns: cols.to_vec(), rows: input.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect() }
        }
        NodeKind::Join | NodeKind::MultiJoin => multi_join(node, &inputs)?,
    };
    memo.insert(id.into(), rel.clone());
    Ok(rel)
}

fn scan(node: &PlanNode, tables: &BTreeMap<String, Table>) -> Result<Relation, InterpretError> {
    let name = node.table.as_deref().unwrap_or_default();
    let table = tables.get(name).ok_or_else(|| InterpretError::UnknownTable { node: node.id.clone(), table: name.into() })?;
    if let Some(row) = table.rows.iter().position(|r| r.len() != table.columns.len()) {
        return Err(InterpretError::RowArity { table: name.into(), row });
    }
    let alias = node.scan_alias().unwrap_or(name);
    Ok(Relation { columns: table.columns.iter().map(|c| alloc::format!("{alias}.{c}")).collect(), rows: table.rows.clone() })
}

/// Equality between column `.1` of input `.0` on both sides.
type Cond = ((usize, usize), (usize, usize));

fn multi_join(node: &PlanNode, inputs: &[Relation]) -> Result<Relation, InterpretError> {
    let mut conds: Vec<Cond> = Vec::new();
    for ((lo, lf), (ro, rf)) in node.conditions() {
        conds.push(((*lo, inputs[*lo].column(node, lf)?), (*ro, inputs[*ro].column(node, rf)?)));
    }

    // Greedy order: next is the lowest unjoined input sharing a condition
    // with the joined ones, else the lowest unjoined input.
    let m = inputs.len();
    let mut order = alloc::vec![0usize];
    while order.len() < m {
        let unjoined = (0..m).filter(|i| !order.contains(i));
        let connected = (0..m)
            .filter(|i| !order.contains(i))
            .find(|i| conds.iter().any(|((a, _), (b, _))| (a == i && order.contains(b)) || (b == i && order.contains(a))));
        order.push(connected.or_else(|| unjoined.clone().next()).expect("an unjoined input remains"));
    }

    // Partial combinations: row index per input, usize::MAX when not yet joined.
    let mut partials: Vec<Vec<usize>> = alloc::vec![alloc::vec![usize::MAX; m]];
    let mut joined: Vec<usize> = Vec::new();
    for &next in &order {
        joined.push(next);
        let checks: Vec<&Cond> =
            conds.iter().filter(|((a, _), (b, _))| (*a == next || *b == next) && joined.contains(a) && joined.contains(b)).collect();
        let mut extended = Vec::new();
        for p in &partials {
            for r in 0..inputs[next].rows.len() {
                let value = |(input, col): (usize, usize)| {
                    let row = if input == next { r } else { p[input] };
                    &inputs[input].rows[row][col]
                };
                if checks.iter().all(|(l, rr)| value(*l) == value(*rr)) {
                    let mut q = p.clone();
                    q[next] = r;
                    extended.push(q);
                }
            }
        }
        partials = extended;
    }

    let mut select: Vec<(usize, usize)> = Vec::new();
    match (&node.columns, node.kind) {
        (Some(items), NodeKind::MultiJoin) => {
            for item in items {
                let (ord, field) = parse_output_column(item).expect("validated output column");
                match field {
                    None => select.extend((0..inputs[ord].columns.len()).map(|c| (ord, c))),
                    Some(f) => select.push((ord, inputs[ord].column(node, f)?)),
                }
            }
        }
        _ => {
            for (ord, rel) in inputs.iter().enumerate() {
                select.extend((0..rel.columns.len()).map(|c| (ord, c)));
            }
        }
    }
    Ok(Relation {
        columns: select.iter().map(|&(o, c)| inputs[o].columns[c].clone()).collect(),
        rows: partials.iter().map(|p| select.iter().map(|&(o, c)| inputs[o].rows[p[o]][c].clone()).collect()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::PlanNode;
    use alloc::vec;

    fn tables() -> BTreeMap<String, Table> {
        let t = |cols: &[&str], rows: &[&[i64]]| Table {
            columns: cols.iter().map(|c| c.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|&v| Value::Int(v)).collect()).collect(),
        };
        BTreeMap::from([
            ("a".into(), t(&["k", "v"], &[&[1, 10], &[2, 20], &[2, 21]])),
            ("b".into(), t(&["k", "w"], &[&[2, 5], &[2, 6], &[3, 7]])),
        ])
    }

    fn join_plan() -> Vec<PlanNode> {
        vec![PlanNode::join("j", "a", "b", &[("a.k", "b.k")]), PlanNode::scan("a", "a", None), PlanNode::scan("b", "b", None)]
    }

    #[test]
    fn scan_returns_table() {
        let p = Plan::new("a", vec![PlanNode::scan("a", "a", None)]).unwrap();
        let r = interpret_plan(&p, &tables()).unwrap();
        assert_eq!(r.columns, ["a.k", "a.v"]);
        assert_eq!(r.rows.len(), 3);
    }

    #[test]
    fn project_over_join_keeps_multiplicity() {
        let mut nodes = join_plan();
        nodes.push(PlanNode::project("p", "j", &["a.k"]));
        let p = Plan::new("p", nodes).unwrap();
        let r = interpret_plan(&p, &tables()).unwrap();
        assert_eq!(r.canonical_lines(), ["a.k=2", "a.k=2", "a.k=2", "a.k=2"]);
    }

    #[test]
    fn join_lines_are_sorted_by_column() {
        let p = Plan::new("j", join_plan()).unwrap();
        let lines = interpret_plan(&p, &tables()).unwrap().canonical_lines();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "a.k=2|a.v=20|b.k=2|b.w=5");
    }

    #[test]
    fn unknown_and_ambiguous_columns() {
        let bad = Plan::new(
            "j",
            vec![PlanNode::join("j", "a", "b", &[("a.zz", "b.k")]), PlanNode::scan("a", "a", None), PlanNode::scan("b", "b", None)],
        )
        .unwrap();
        assert!(matches!(interpret_plan(&bad, &tables()), Err(InterpretError::UnknownColumn { .. })));
        let self_join = Plan::new(
            "p",
            vec![PlanNode::project("p", "j", &["a.k"]), PlanNode::join("j", "a", "a", &[("a.k", "a.k")]), PlanNode::scan("a", "a", None)],
        )
        .unwrap();
        assert!(matches!(interpret_plan(&self_join, &tables()), Err(InterpretError::AmbiguousColumn { .. })));
        let missing = Plan::new("x", vec![PlanNode::scan("x", "nope", None)]).unwrap();
        assert!(matches!(interpret_plan(&missing, &tables()), Err(InterpretError::UnknownTable { .. })));
    }
}
