//! Front end for `SELECT * FROM t1 a1, t2 a2, .. WHERE a.x = b.y AND ..`.
//!
//! The result is a left-deep binary join plan in `FROM` order with a hash
//! node above every join input. Each equality is attached to the first join
//! at which both of its aliases are in scope.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::plan::{Plan, PlanNode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("sql error at byte {position}: {message}")]
pub struct SqlError {
    pub position: usize,
    pub message: String,
}

fn err<T>(position: usize, message: impl Into<String>) -> Result<T, SqlError> {
    Err(SqlError { position, message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Sym(&'static str),
    Other(String),
    End,
}

fn tokenize(text: &str) -> Vec<(usize, Tok)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        if let Some(sym) = ["<=", ">=", "<>", "!="].into_iter().find(|s| *s == two) {
            out.push((start, Tok::Sym(sym)));
            i += 2;
            continue;
        }
        if let Some(sym) = [",", ".", "=", "*", ";", "<", ">"].into_iter().find(|s| s.as_bytes()[0] == c) {
            out.push((start, Tok::Sym(sym)));
            i += 1;
            continue;
        }
        let ch = text[i..].chars().next().expect("in bounds");
        i += ch.len_utf8();
        out.push((start, Tok::Other(ch.to_string())));
    }
    out.push((text.len(), Tok::End));
    out
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().1, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.is_keyword(kw) {
            self.next();
            Ok(())
        } else {
            err(self.peek().0, format!("expected {kw}"))
        }
    }

    fn sym(&mut self, sym: &str) -> Result<(), SqlError> {
        match self.next() {
            (_, Tok::Sym(s)) if s == sym => Ok(()),
            (p, _) => err(p, format!("expected '{sym}'")),
        }
    }

    fn ident(&mut self) -> Result<(usize, String), SqlError> {
        match self.next() {
            (p, Tok::Ident(s)) if !is_reserved(&s) => Ok((p, s)),
            (p, _) => err(p, "expected identifier"),
        }
    }

    /// `alias.column`
    fn field(&mut self) -> Result<(usize, String, String), SqlError> {
        let (p, alias) = self.ident()?;
        self.sym(".")?;
        let (_, col) = self.ident()?;
        Ok((p, alias, col))
    }
}

fn is_reserved(word: &str) -> bool {
    ["select", "from", "where", "and", "or", "not", "on", "join"].iter().any(|k| word.eq_ignore_ascii_case(k))
}

struct Equality {
    position: usize,
    left: (String, String),
    right: (String, String),
}

/// Parses the query into a left-deep join plan. Node ids are `scan_<alias>`,
/// `hash_<alias>`, `join_<i>` and `hash_join_<i>`; the last join is the root.
pub fn parse_query(text: &str) -> Result<Plan, SqlError> {
    let mut p = Parser { toks: tokenize(text), pos: 0 };
    p.keyword("select")?;
    p.sym("*")?;
    p.keyword("from")?;
    let mut tables: Vec<(usize, String, String)> = Vec::new();
    loop {
        let (pos, table) = p.ident()?;
        let alias = match &p.peek().1 {
            Tok::Ident(s) if !is_reserved(s) => p.ident()?.1,
            _ => table.clone(),
        };
        if tables.iter().any(|(_, _, a)| *a == alias) {
            return err(pos, format!("duplicate alias {alias}"));
        }
        tables.push((pos, table, alias));
        if p.peek().1 == Tok::Sym(",") {
            p.next();
        } else {
            break;
        }
    }
    let mut preds: Vec<Equality> = Vec::new();
    if p.is_keyword("where") {
        p.next();
        loop {
            let (position, la, lc) = p.field()?;
            match p.next() {
                (_, Tok::Sym("=")) => {}
                (q, Tok::Sym(op)) => return err(q, format!("only equality predicates are supported, found '{op}'")),
                (q, _) => return err(q, "expected '='"),
            }
            let (_, ra, rc) = p.field()?;
            preds.push(Equality { position, left: (la, lc), right: (ra, rc) });
            if p.is_keyword("and") {
                p.next();
            } else {
                break;
            }
        }
    }
    if p.peek().1 == Tok::Sym(";") {
        p.next();
    }
    if p.peek().1 != Tok::End {
        return err(p.peek().0, "unexpected trailing input");
    }
    build_plan(&tables, &preds)
}

fn build_plan(tables: &[(usize, String, String)], preds: &[Equality]) -> Result<Plan, SqlError> {
    let slot = |alias: &str, position: usize| -> Result<usize, SqlError> {
        match tables.iter().position(|(_, _, a)| a == alias) {
            Some(i) => Ok(i),
            None => err(position, format!("unknown alias {alias}")),
        }
    };
    // Per join (index i joins table i+1), its (left field, right field) equalities.
    let mut conditions: Vec<Vec<(String, String)>> = vec![Vec::new(); tables.len().saturating_sub(1)];
    for e in preds {
        let (l, r) = (slot(&e.left.0, e.position)?, slot(&e.right.0, e.position)?);
        if l == r {
            return err(e.position, "predicate compares columns of a single table");
        }
        let qualified = |(a, c): &(String, String)| format!("{a}.{c}");
        let (earlier, later) = if l < r { (&e.left, &e.right) } else { (&e.right, &e.left) };
        conditions[l.max(r) - 1].push((qualified(earlier), qualified(later)));
    }
    if let Some(i) = conditions.iter().position(Vec::is_empty) {
        return err(tables[i + 1].0, format!("no equality connects {} to the tables before it", tables[i + 1].2));
    }

    let mut nodes = Vec::new();
    for (_, table, alias) in tables {
        nodes.push(PlanNode::scan(&format!("scan_{alias}"), table, Some(alias)));
        nodes.push(PlanNode::hash(&format!("hash_{alias}"), &format!("scan_{alias}")));
    }
    let mut left = format!("hash_{}", tables[0].2);
    let mut root = format!("scan_{}", tables[0].2);
    for (i, conds) in conditions.iter().enumerate() {
        let id = format!("join_{}", i + 1);
        let pairs: Vec<(&str, &str)> = conds.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        nodes.push(PlanNode::join(&id, &left, &format!("hash_{}", tables[i + 1].2), &pairs));
        if i + 1 < conditions.len() {
            left = format!("hash_{id}");
            nodes.push(PlanNode::hash(&left, &id));
        }
        root = id;
    }
    if tables.len() == 1 {
        nodes.retain(|n| n.id == root);
    }
    Ok(Plan::new(root, nodes).expect("generated plan is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::NodeKind;

    #[test]
    fn two_tables() {
        let p = parse_query("select * from a x, b y where x.k = y.k").unwrap();
        assert_eq!(p.root_id(), "join_1");
        assert_eq!(p.root().inputs, ["hash_x", "hash_y"]);
        assert_eq!(p.len(), 5);
        assert_eq!(p.root().join_keys, [(0, "x.k".into()), (1, "y.k".into())]);
    }

    #[test]
    fn predicates_attach_to_first_join_with_both_aliases() {
        let p = parse_query("SELECT * FROM a, b, c WHERE c.k = a.k AND b.k = a.k;").unwrap();
        assert_eq!(p.node("join_1").unwrap().join_keys, [(0, "a.k".into()), (1, "b.k".into())]);
        assert_eq!(p.node("join_2").unwrap().join_keys, [(0, "a.k".into()), (1, "c.k".into())]);
        assert_eq!(p.node("join_2").unwrap().inputs, ["hash_join_1", "hash_c"]);
        assert_eq!(p.node("hash_join_1").unwrap().kind, NodeKind::Hash);
    }

    #[test]
    fn single_table_is_a_scan() {
        let p = parse_query("select * from t").unwrap();
        assert_eq!(p.root().kind, NodeKind::Scan);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn rejects_non_equi_and_reports_position() {
        let e = parse_query("select * from a, b where a.x < b.y").unwrap_err();
        assert_eq!(e.position, 29);
        assert!(e.message.contains("equality"));
        let e = parse_query("select * from a, b where a.x = z.y").unwrap_err();
        assert!(e.message.contains("unknown alias z"));
        let e = parse_query("select a from t").unwrap_err();
        assert_eq!(e.position, 7);
        let e = parse_query("select * from a, b").unwrap_err();
        assert!(e.message.contains("no equality"));
        let e = parse_query("select * from a where a.x = a.y").unwrap_err();
        assert!(e.message.contains("single table"));
        assert!(parse_query("select * from a, b where a.x = b.y or").is_err());
    }
}
