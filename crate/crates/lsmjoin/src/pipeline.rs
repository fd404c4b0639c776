//! Plan-driven execution: maps a logical plan onto an engine, replays the
//! sources in schedule order and records metrics.
//!
//! Streams are the plan's scans, numbered by alphabetical alias; that order
//! is both the schedule's source numbering and the engine's probe order.
//!
//! - `umjoin` and `capped_hash` need one multijoin whose inputs are scans
//!   (through hash nodes) and whose equalities form key classes that touch
//!   every stream exactly once.
//! - `bjt` builds its tree from the plan's join nodes, or from a left-deep
//!   order over a single key class when one is given.
//!
//! Projects are only supported above the topmost join; they restrict the
//! columns of the output lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::mpsc::{self, Sender};
use std::thread;
use std::time::Instant;

use log::{debug, warn};
use lsmjoin_core::join::{
    BinaryJoinTree, BjtNode, CappedHashJoin, InputEvent, JoinError, JoinTree, KeyRef, Partial, Side, StreamDef, UmJoin,
};
use lsmjoin_core::lsm::{BackendConfig, BackendCounters, LsmBackend, MemStore, StoredTuple};
use lsmjoin_core::oracle::{canonical_line, Table};
use lsmjoin_core::plan::{field_alias, parse_output_column, NodeKind, Plan, PlanNode};
use lsmjoin_core::value::{decode_row, encode_row};
use lsmjoin_core::{Row, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fs_store::{AnyStore, FsStore};
use crate::metrics::{MetricsReport, Sample, Summary};
use crate::schedule::Schedule;

type Backend = LsmBackend<AnyStore>;
/// `(stream, column)`.
type Column = (usize, usize);
type Equality = (Column, Column);
type ResolveColumn<'a> = &'a dyn Fn(&str, &str, &PlanNode) -> Result<Column, RunError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineMode {
    #[serde(rename = "umjoin")]
    UmJoin,
    #[serde(rename = "bjt")]
    Bjt,
    #[serde(rename = "capped_hash")]
    CappedHash,
}

impl FromStr for EngineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "umjoin" => Ok(EngineMode::UmJoin),
            "bjt" => Ok(EngineMode::Bjt),
            "capped_hash" => Ok(EngineMode::CappedHash),
            _ => Err(format!("unknown mode {s:?} (want umjoin, bjt or capped_hash)")),
        }
    }
}

impl fmt::Display for EngineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineMode::UmJoin => "umjoin",
            EngineMode::Bjt => "bjt",
            EngineMode::CappedHash => "capped_hash",
        })
    }
}

/// Where LSM state lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateStore {
    Memory,
    /// One subdirectory per backend; each must be absent or empty.
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: EngineMode,
    pub backend: BackendConfig,
    /// Required in capped_hash mode.
    pub cap_bytes: Option<u64>,
    pub store: StateStore,
    /// Events between samples; 0 records only the summary.
    pub sample_every: u64,
    /// bjt mode: left-deep join order over these aliases instead of the plan's joins.
    pub bjt_order: Option<Vec<String>>,
    /// bjt mode: one thread per join node, connected by FIFO channels.
    pub threaded: bool,
    /// Keep canonical output lines instead of only counting rows.
    pub collect_output: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: EngineMode::UmJoin,
            backend: BackendConfig::default(),
            cap_bytes: None,
            store: StateStore::Memory,
            sample_every: 1000,
            bjt_order: None,
            threaded: false,
            collect_output: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error("state directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(msg.into()))
}

/// One input stream: a scan of the plan and its rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub alias: String,
    pub table: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    /// Sorted canonical output lines, when collected.
    pub lines: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
enum Shape {
    Multi,
    /// Tree plus a label per node in post-order.
    Tree(JoinTree, Vec<String>),
}

/// A plan resolved against its tables, ready to run under one mode.
#[derive(Debug, Clone)]
pub struct Job {
    config: RunConfig,
    sources: Vec<Source>,
    streams: Vec<StreamDef>,
    shape: Shape,
    /// Output columns as (stream, column) with their qualified names.
    select: Vec<(usize, usize)>,
    names: Vec<String>,
}

/// Follows hash nodes down to a scan.
fn scan_below<'p>(plan: &'p Plan, id: &str) -> Option<&'p PlanNode> {
    let mut node = plan.node(id)?;
    loop {
        match node.kind {
            NodeKind::Scan => return Some(node),
            NodeKind::Hash => node = plan.node(&node.inputs[0])?,
            _ => return None,
        }
    }
}

/// The topmost join or multijoin and the projects above it, top first.
fn top_of(plan: &Plan) -> Result<(&PlanNode, Vec<&PlanNode>), RunError> {
    let mut node = plan.root();
    let mut projects = Vec::new();
    loop {
        match node.kind {
            NodeKind::Join | NodeKind::MultiJoin => return Ok((node, projects)),
            NodeKind::Scan => return config_err("plan has no join"),
            NodeKind::Project => projects.push(node),
            NodeKind::Hash => {}
        }
        node = plan.node(&node.inputs[0]).expect("validated plan");
    }
}

/// Union-find over `(stream, column)` equalities; returns the classes, each
/// sorted, ordered by their smallest member.
fn key_classes(pairs: &[Equality]) -> Vec<Vec<Column>> {
    let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (a, b) in pairs {
        for f in [a, b] {
            let next = ids.len();
            ids.entry(*f).or_insert(next);
        }
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in pairs {
        let (ra, rb) = (find(&mut parent, ids[a]), find(&mut parent, ids[b]));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut classes: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (f, id) in &ids {
        let root = find(&mut parent, *id);
        classes.entry(root).or_default().push(*f);
    }
    let mut out: Vec<Vec<(usize, usize)>> = classes.into_values().collect();
    out.iter_mut().for_each(|c| c.sort_unstable());
    out.sort_unstable();
    out
}

impl Job {
    /// Resolves `plan` against `tables` for `config.mode`. Every plan/mode
    /// mismatch is reported here, before any event is consumed.
    pub fn prepare(plan: &Plan, tables: &BTreeMap<String, Table>, config: &RunConfig) -> Result<Job, RunError> {
        config.backend.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if config.mode == EngineMode::CappedHash && !config.cap_bytes.is_some_and(|c| c > 0) {
            return config_err("capped_hash mode needs a positive cap_bytes");
        }
        if config.mode != EngineMode::Bjt && (config.bjt_order.is_some() || config.threaded) {
            return config_err("a join order and threading only apply to bjt mode");
        }
        let (top, projects) = top_of(plan)?;
        let sources = Self::collect_sources(plan, tables)?;
        let alias_index: BTreeMap<&str, usize> = sources.iter().enumerate().map(|(i, s)| (s.alias.as_str(), i)).collect();
        let column = |alias: &str, field: &str, node: &PlanNode| -> Result<(usize, usize), RunError> {
            let Some(&s) = alias_index.get(alias) else {
                return config_err(format!("node {}: {field} does not belong to a scan of the plan", node.id));
            };
            let col = field.strip_prefix(alias).and_then(|c| c.strip_prefix('.')).unwrap_or(field);
            match sources[s].columns.iter().position(|c| c == col) {
                Some(c) => Ok((s, c)),
                None => config_err(format!("node {}: table {} has no column {col}", node.id, sources[s].table)),
            }
        };

        let mut job = Job {
            config: config.clone(),
            sources: Vec::new(),
            streams: Vec::new(),
            shape: Shape::Multi,
            select: Vec::new(),
            names: Vec::new(),
        };
        let mut key_fields: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
        match config.mode {
            EngineMode::UmJoin | EngineMode::CappedHash => {
                if top.kind != NodeKind::MultiJoin {
                    return config_err(format!("{} mode needs a multijoin plan; convert the plan first", config.mode));
                }
                let slots = Self::multijoin_slots(plan, top, &alias_index)?;
                if slots.len() != sources.len() {
                    return config_err("every scan of the plan must be a direct multijoin input");
                }
                let mut pairs = Vec::new();
                for ((lo, lf), (ro, rf)) in top.conditions() {
                    let side = |o: usize, f: &str| {
                        let s = slots[o];
                        if field_alias(f) != sources[s].alias {
                            return config_err(format!("node {}: {f} is not a field of input {o}", top.id));
                        }
                        column(&sources[s].alias, f, top)
                    };
                    pairs.push((side(*lo, lf)?, side(*ro, rf)?));
                }
                for class in key_classes(&pairs) {
                    let streams: Vec<usize> = class.iter().map(|(s, _)| *s).collect();
                    if streams != (0..sources.len()).collect::<Vec<_>>() {
                        return config_err(format!(
                            "{} mode needs every equality class to cover each stream exactly once; class {:?} does not",
                            config.mode,
                            class.iter().map(|(s, c)| format!("{}.{}", sources[*s].alias, sources[*s].columns[*c])).collect::<Vec<_>>()
                        ));
                    }
                    for (s, c) in class {
                        key_fields[s].push(c);
                    }
                }
                if key_fields.iter().any(Vec::is_empty) {
                    return config_err("multijoin has no join condition");
                }
            }
            EngineMode::Bjt => {
                if let Some(order) = &config.bjt_order {
                    let pairs = Self::all_conditions(plan, &column)?;
                    let classes = key_classes(&pairs);
                    let single = classes.len() == 1
                        && classes[0].iter().map(|(s, _)| *s).collect::<Vec<_>>() == (0..sources.len()).collect::<Vec<_>>();
                    if !single {
                        return config_err("a bjt join order needs one key shared by every stream");
                    }
                    for (s, c) in &classes[0] {
                        key_fields[*s].push(*c);
                    }
                    let order = order
                        .iter()
                        .map(|a| {
                            alias_index.get(a.as_str()).copied().ok_or_else(|| RunError::Config(format!("unknown alias {a} in join order")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let mut sorted = order.clone();
                    sorted.sort_unstable();
                    if sorted != (0..sources.len()).collect::<Vec<_>>() {
                        return config_err("join order must list every alias exactly once");
                    }
                    job.streams = Self::stream_defs(&sources, &key_fields)?;
                    let tree = JoinTree::left_deep(&order, &job.streams)?;
                    let labels = (1..order.len()).map(|i| format!("bjt-{i}")).collect();
                    job.shape = Shape::Tree(tree, labels);
                } else {
                    if top.kind != NodeKind::Join {
                        return config_err("bjt mode needs a plan of binary joins (or a join order)");
                    }
                    let mut labels = Vec::new();
                    let tree = Self::tree(plan, top, &column, &alias_index, &mut labels, &mut key_fields)?;
                    job.shape = Shape::Tree(tree, labels);
                }
            }
        }
        if job.streams.is_empty() {
            job.streams = Self::stream_defs(&sources, &key_fields)?;
        }
        job.sources = sources;
        job.select_output(plan, top, &projects)?;
        Ok(job)
    }

    /// Scans reachable from the root, sorted by alias.
    fn collect_sources(plan: &Plan, tables: &BTreeMap<String, Table>) -> Result<Vec<Source>, RunError> {
        let mut by_alias: BTreeMap<String, Source> = BTreeMap::new();
        for node in plan.ordered_nodes().into_iter().filter(|n| n.kind == NodeKind::Scan) {
            let alias = node.scan_alias().expect("scan has a table").to_owned();
            let table_name = node.table.clone().expect("scan has a table");
            if by_alias.contains_key(&alias) {
                return config_err(format!("alias {alias} is scanned by more than one node"));
            }
            let Some(table) = tables.get(&table_name) else {
                return config_err(format!("no data for table {table_name}"));
            };
            by_alias.insert(alias.clone(), Source { alias, table: table_name, columns: table.columns.clone(), rows: table.rows.clone() });
        }
        Ok(by_alias.into_values().collect())
    }

    fn multijoin_slots(plan: &Plan, top: &PlanNode, alias_index: &BTreeMap<&str, usize>) -> Result<Vec<usize>, RunError> {
        let mut slots = Vec::new();
        for input in &top.inputs {
            let Some(scan) = scan_below(plan, input) else {
                return config_err(format!("multijoin input {input} is not a scan (only hash nodes may sit between)"));
            };
            let s = alias_index[scan.scan_alias().expect("scan alias")];
            if slots.contains(&s) {
                return config_err(format!("multijoin reads scan {} twice", scan.id));
            }
            slots.push(s);
        }
        Ok(slots)
    }

    /// Every equality of every join and multijoin, by qualified field name.
    fn all_conditions(plan: &Plan, column: ResolveColumn<'_>) -> Result<Vec<Equality>, RunError> {
        let mut pairs = Vec::new();
        for node in plan.ordered_nodes() {
            for ((_, lf), (_, rf)) in node.conditions() {
                pairs.push((column(field_alias(lf), lf, node)?, column(field_alias(rf), rf, node)?));
            }
        }
        Ok(pairs)
    }

    fn tree(
        plan: &Plan,
        node: &PlanNode,
        column: ResolveColumn<'_>,
        alias_index: &BTreeMap<&str, usize>,
        labels: &mut Vec<String>,
        key_fields: &mut [Vec<usize>],
    ) -> Result<JoinTree, RunError> {
        match node.kind {
            NodeKind::Scan => Ok(JoinTree::Leaf(alias_index[node.scan_alias().expect("scan alias")])),
            NodeKind::Hash => Self::tree(plan, plan.node(&node.inputs[0]).expect("validated"), column, alias_index, labels, key_fields),
            NodeKind::Join => {
                let child = |i: usize| plan.node(&node.inputs[i]).expect("validated");
                let left = Self::tree(plan, child(0), column, alias_index, labels, key_fields)?;
                let right = Self::tree(plan, child(1), column, alias_index, labels, key_fields)?;
                let (ll, rl) = (left.leaves(), right.leaves());
                let (mut left_key, mut right_key) = (Vec::new(), Vec::new());
                for ((lo, lf), (ro, rf)) in node.conditions() {
                    for (o, f) in [(*lo, lf), (*ro, rf)] {
                        let (s, c) = column(field_alias(f), f, node)?;
                        let (leaves, key) = if o == 0 { (&ll, &mut left_key) } else { (&rl, &mut right_key) };
                        if !leaves.contains(&s) {
                            return config_err(format!("node {}: {f} is not produced by input {o}", node.id));
                        }
                        key.push(KeyRef { stream: s, field: c });
                        if key_fields[s].is_empty() {
                            key_fields[s].push(c);
                        }
                    }
                }
                if left_key.is_empty() {
                    return config_err(format!("node {}: join without an equality", node.id));
                }
                labels.push(node.id.clone());
                Ok(JoinTree::Join { left: Box::new(left), right: Box::new(right), left_key, right_key })
            }
            NodeKind::Project | NodeKind::MultiJoin => {
                config_err(format!("node {}: {} nodes below the top join are not executable in bjt mode", node.id, node.kind))
            }
        }
    }

    /// In bjt mode a stream's key is only used to reject malformed rows, so
    /// streams keep the first column they are joined on.
    fn stream_defs(sources: &[Source], key_fields: &[Vec<usize>]) -> Result<Vec<StreamDef>, RunError> {
        sources
            .iter()
            .zip(key_fields)
            .enumerate()
            .map(|(i, (s, keys))| {
                let names: Vec<&str> = keys.iter().map(|&c| s.columns[c].as_str()).collect();
                if names.is_empty() {
                    return config_err(format!("stream {} takes part in no equality", s.alias));
                }
                Ok(StreamDef::new(i, s.alias.clone(), s.columns.clone(), &names)?)
            })
            .collect()
    }

    fn select_output(&mut self, plan: &Plan, top: &PlanNode, projects: &[&PlanNode]) -> Result<(), RunError> {
        let all = |s: usize| (0..self.sources[s].columns.len()).map(move |c| (s, c));
        let mut select: Vec<(usize, usize)> = Vec::new();
        match (&top.columns, top.kind) {
            (Some(items), NodeKind::MultiJoin) => {
                let alias_index: BTreeMap<&str, usize> = self.sources.iter().enumerate().map(|(i, s)| (s.alias.as_str(), i)).collect();
                let slots = Self::multijoin_slots(plan, top, &alias_index)?;
                for item in items {
                    let (ord, field) = parse_output_column(item).expect("validated output column");
                    let s = slots[ord];
                    match field {
                        None => select.extend(all(s)),
                        Some(f) => match self.qualified(s).iter().position(|n| n == f) {
                            Some(c) => select.push((s, c)),
                            None => return config_err(format!("node {}: unknown output column {f}", top.id)),
                        },
                    }
                }
            }
            _ => select.extend((0..self.sources.len()).flat_map(all)),
        }
        for p in projects.iter().rev() {
            let names: Vec<String> = select.iter().map(|&(s, c)| self.qualified(s)[c].clone()).collect();
            let mut next = Vec::new();
            for col in p.columns.as_deref().unwrap_or_default() {
                let mut hits = names.iter().enumerate().filter(|(_, n)| *n == col);
                match (hits.next(), hits.next()) {
                    (Some((i, _)), None) => next.push(select[i]),
                    (None, _) => return config_err(format!("node {}: unknown column {col}", p.id)),
                    (Some(_), Some(_)) => return config_err(format!("node {}: column {col} is ambiguous", p.id)),
                }
            }
            select = next;
        }
        self.names = select.iter().map(|&(s, c)| self.qualified(s)[c].clone()).collect();
        self.select = select;
        Ok(())
    }

    fn qualified(&self, s: usize) -> Vec<String> {
        let src = &self.sources[s];
        src.columns.iter().map(|c| format!("{}.{c}", src.alias)).collect()
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn aliases(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.alias.as_str()).collect()
    }

    pub fn streams(&self) -> &[StreamDef] {
        &self.streams
    }

    pub fn source_counts(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.rows.len()).collect()
    }

    /// Qualified names of the output columns.
    pub fn output_columns(&self) -> &[String] {
        &self.names
    }

    /// State bytes a capped_hash run would charge after every row has
    /// arrived; malformed rows are not charged.
    pub fn full_state_bytes(&self) -> u64 {
        let mut total = 0;
        for (def, src) in self.streams.iter().zip(&self.sources) {
            for row in &src.rows {
                if let Ok(key) = def.key_of(row) {
                    total += CappedHashJoin::charge(key.len(), encode_row(row).len());
                }
            }
        }
        total
    }

    fn backend(&self, label: &str) -> Result<Backend, RunError> {
        let store = match &self.config.store {
            StateStore::Memory => AnyStore::Mem(MemStore::new()),
            StateStore::Dir(root) => {
                let dir = root.join(label.replace('/', "-"));
                let io = |source| RunError::Io { path: dir.clone(), source };
                if dir.exists() && std::fs::read_dir(&dir).map_err(io)?.next().is_some() {
                    return config_err(format!("state directory {} is not empty", dir.display()));
                }
                AnyStore::Fs(FsStore::open(&dir).map_err(io)?)
            }
        };
        LsmBackend::new(self.config.backend.clone(), store).map_err(|e| RunError::Config(e.to_string()))
    }

    fn line(&self, row: &[&StoredTuple]) -> String {
        let decoded: Vec<Row> = row.iter().map(|t| decode_row(&t.payload).expect("engine payloads are encoded rows")).collect();
        let values: Vec<Value> = self.select.iter().map(|&(s, c)| decoded[s][c].clone()).collect();
        canonical_line(&self.names, &values)
    }

    /// Replays `schedule` through the engine.
    pub fn run(&self, schedule: &Schedule) -> Result<RunOutcome, RunError> {
        schedule.validate(&self.source_counts()).map_err(|e| RunError::Config(e.to_string()))?;
        let mut sink = Sink { job: self, outputs: 0, lines: self.config.collect_output.then(Vec::new) };
        let start = Instant::now();
        let mut rec = Recorder { start, samples: Vec::new(), every: self.config.sample_every };
        let mut state_bytes = None;
        let Tally { events, rejected, aborted, intermediate_rows, per_stream } = match &self.shape {
            Shape::Tree(_, labels) if self.config.threaded => self.run_threaded(labels, schedule, &mut sink, &mut rec)?,
            _ => {
                let mut engine = self.engine()?;
                let mut cursors = vec![0usize; self.sources.len()];
                let (mut rejected, mut aborted, mut events) = (0, false, 0);
                for (ordinal, &s) in schedule.0.iter().enumerate() {
                    let row = self.sources[s].rows[cursors[s]].clone();
                    cursors[s] += 1;
                    let ts = ordinal as u64;
                    let event = InputEvent { stream: s, row, ts };
                    events += 1;
                    match engine.process(&event, ts, &mut |r| sink.push(r)) {
                        Ok(_) => {}
                        Err(e) if e.is_rejected_event() => {
                            warn!("event {ordinal}: {e}");
                            rejected += 1;
                        }
                        Err(JoinError::OutOfMemory { used_bytes, cap_bytes }) => {
                            warn!("event {ordinal}: state of {used_bytes} bytes exceeds cap of {cap_bytes}; aborting");
                            aborted = true;
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    }
                    engine.maintain()?;
                    rec.tick(events, sink.outputs, || engine.per_stream(self));
                }
                if let Engine::Capped(c) = &engine {
                    state_bytes = Some(c.used_bytes());
                }
                Tally { events, rejected, aborted, intermediate_rows: engine.intermediate_rows(), per_stream: engine.per_stream(self) }
            }
        };
        let total = per_stream.values().fold(BackendCounters::default(), |acc, c| acc.merged(c));
        let summary = Summary {
            is_final: true,
            mode: self.config.mode,
            events,
            outputs: sink.outputs,
            rejected,
            intermediate_rows,
            aborted,
            elapsed_ms: start.elapsed().as_millis() as u64,
            state_bytes,
            cap_bytes: (self.config.mode == EngineMode::CappedHash).then_some(self.config.cap_bytes).flatten(),
            per_stream,
            total,
        };
        debug!("run finished: {} events, {} outputs", summary.events, summary.outputs);
        let mut lines = sink.lines;
        if let Some(l) = lines.as_mut() {
            l.sort_unstable();
        }
        Ok(RunOutcome { report: MetricsReport { samples: rec.samples, summary }, lines })
    }

    fn engine(&self) -> Result<Engine, RunError> {
        Ok(match (&self.shape, self.config.mode) {
            (_, EngineMode::CappedHash) => {
                Engine::Capped(CappedHashJoin::new(self.streams.clone(), self.config.cap_bytes.expect("checked in prepare"))?)
            }
            (Shape::Tree(tree, labels), _) => {
                let mut backends = BTreeMap::new();
                for (i, l) in labels.iter().enumerate() {
                    for side in [Side::Left, Side::Right] {
                        backends.insert((i, side_index(side)), self.backend(&side_label(l, side))?);
                    }
                }
                let mut take = |i, side| backends.remove(&(i, side_index(side))).expect("one backend per node side");
                Engine::Bjt(BinaryJoinTree::new(self.streams.clone(), tree, &mut take)?, labels.clone())
            }
            (Shape::Multi, _) => {
                let backends = self.sources.iter().map(|s| self.backend(&s.alias)).collect::<Result<Vec<_>, _>>()?;
                Engine::Um(UmJoin::new(self.streams.clone(), backends)?)
            }
        })
    }

    fn run_threaded(&self, labels: &[String], schedule: &Schedule, sink: &mut Sink<'_>, rec: &mut Recorder) -> Result<Tally, RunError> {
        let Engine::Bjt(bjt, _) = self.engine()? else { unreachable!("tree shapes build a bjt engine") };
        let (streams, nodes, topology) = bjt.into_parts();
        let root = topology.root();
        let (senders, receivers): (Vec<Sender<Msg>>, Vec<_>) = nodes.iter().map(|_| mpsc::channel::<Msg>()).unzip();
        let (out_tx, out_rx) = mpsc::channel::<Partial>();
        let (mut events, mut rejected) = (0u64, 0u64);
        let results = thread::scope(|scope| {
            let mut handles = Vec::new();
            for ((i, node), rx) in nodes.into_iter().enumerate().zip(receivers) {
                let downstream = match topology.parents[i] {
                    Some((p, side)) => Downstream::Node(senders[p].clone(), side),
                    None => Downstream::Sink(out_tx.clone()),
                };
                handles.push(scope.spawn(move || node_loop(node, rx, downstream)));
            }
            drop(out_tx);
            let leaves: Vec<(Sender<Msg>, Side)> = topology.leaf_slots.iter().map(|&(n, side)| (senders[n].clone(), side)).collect();
            drop(senders);
            let mut cursors = vec![0usize; self.sources.len()];
            for (ordinal, &s) in schedule.0.iter().enumerate() {
                let row = &self.sources[s].rows[cursors[s]];
                cursors[s] += 1;
                events += 1;
                if let Err(e) = streams[s].key_of(row) {
                    warn!("event {ordinal}: {e}");
                    rejected += 1;
                    continue;
                }
                let ts = ordinal as u64;
                let tuple = StoredTuple::new(ts + 1, ts, encode_row(row));
                let (tx, side) = &leaves[s];
                if tx.send(Msg { side: *side, partial: Partial(vec![(s, tuple)]), ts }).is_err() {
                    break;
                }
                for p in out_rx.try_iter() {
                    sink.push_partial(&p);
                }
                rec.tick(events, sink.outputs, BTreeMap::new);
            }
            drop(leaves);
            for p in out_rx.iter() {
                sink.push_partial(&p);
            }
            handles.into_iter().map(|h| h.join().expect("join node thread panicked")).collect::<Vec<_>>()
        });
        let mut per_stream = BTreeMap::new();
        let mut intermediate = 0;
        for (i, r) in results.into_iter().enumerate() {
            let (node, emitted) = r?;
            if i != root {
                intermediate += emitted;
            }
            let [l, r] = node.counters();
            per_stream.insert(side_label(&labels[i], Side::Left), l);
            per_stream.insert(side_label(&labels[i], Side::Right), r);
        }
        Ok(Tally { events, rejected, aborted: false, intermediate_rows: intermediate, per_stream })
    }
}

fn side_index(side: Side) -> u8 {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

fn side_label(label: &str, side: Side) -> String {
    match side {
        Side::Left => format!("{label}/left"),
        Side::Right => format!("{label}/right"),
    }
}

struct Tally {
    events: u64,
    rejected: u64,
    aborted: bool,
    intermediate_rows: u64,
    per_stream: BTreeMap<String, BackendCounters>,
}

struct Msg {
    side: Side,
    partial: Partial,
    ts: u64,
}

enum Downstream {
    Node(Sender<Msg>, Side),
    Sink(Sender<Partial>),
}

/// Processes messages in arrival order until every upstream sender is gone.
/// A closed downstream means a later node failed; this node then stops and
/// leaves the error to that node.
fn node_loop(mut node: BjtNode<Backend>, rx: mpsc::Receiver<Msg>, downstream: Downstream) -> Result<(BjtNode<Backend>, u64), JoinError> {
    let mut out = Vec::new();
    let mut emitted = 0;
    for msg in rx {
        node.process(msg.side, &msg.partial, msg.ts, msg.ts, &mut out)?;
        node.maintain()?;
        emitted += out.len() as u64;
        for p in out.drain(..) {
            let sent = match &downstream {
                Downstream::Node(tx, side) => tx.send(Msg { side: *side, partial: p, ts: msg.ts }).is_ok(),
                Downstream::Sink(tx) => tx.send(p).is_ok(),
            };
            if !sent {
                return Ok((node, emitted));
            }
        }
    }
    Ok((node, emitted))
}

struct Recorder {
    start: Instant,
    samples: Vec<Sample>,
    every: u64,
}

impl Recorder {
    fn tick(&mut self, events: u64, outputs: u64, per_stream: impl FnOnce() -> BTreeMap<String, BackendCounters>) {
        if self.every > 0 && events % self.every == 0 {
            let t_ms = self.start.elapsed().as_millis() as u64;
            self.samples.push(Sample { t_ms, events, outputs, per_stream: per_stream() });
        }
    }
}

struct Sink<'a> {
    job: &'a Job,
    outputs: u64,
    lines: Option<Vec<String>>,
}

impl Sink<'_> {
    fn push(&mut self, row: &[&StoredTuple]) {
        self.outputs += 1;
        if let Some(lines) = self.lines.as_mut() {
            lines.push(self.job.line(row));
        }
    }

    fn push_partial(&mut self, p: &Partial) {
        let refs: Vec<&StoredTuple> = p.0.iter().map(|(_, t)| t).collect();
        self.push(&refs);
    }
}

enum Engine {
    Um(UmJoin<Backend>),
    Capped(CappedHashJoin),
    Bjt(BinaryJoinTree<Backend>, Vec<String>),
}

impl Engine {
    fn process(&mut self, event: &InputEvent, now_ms: u64, emit: &mut dyn FnMut(&[&StoredTuple])) -> Result<u64, JoinError> {
        match self {
            Engine::Um(e) => e.process_with(event, now_ms, emit),
            Engine::Capped(e) => e.process_with(event, now_ms, emit),
            Engine::Bjt(e, _) => e.process_with(event, now_ms, emit),
        }
    }

    fn maintain(&mut self) -> Result<(), JoinError> {
        match self {
            Engine::Um(e) => e.maintain(),
            Engine::Capped(_) => Ok(()),
            Engine::Bjt(e, _) => e.maintain(),
        }
    }

    fn intermediate_rows(&self) -> u64 {
        match self {
            Engine::Um(e) => e.intermediate_rows(),
            Engine::Capped(_) => 0,
            Engine::Bjt(e, _) => e.intermediate_rows(),
        }
    }

    fn per_stream(&self, job: &Job) -> BTreeMap<String, BackendCounters> {
        match self {
            Engine::Um(e) => job.aliases().into_iter().map(String::from).zip(e.counters()).collect(),
            Engine::Capped(_) => job.aliases().into_iter().map(|a| (a.to_owned(), BackendCounters::default())).collect(),
            Engine::Bjt(e, labels) => {
                labels.iter().flat_map(|l| [side_label(l, Side::Left), side_label(l, Side::Right)]).zip(e.counters()).collect()
            }
        }
    }
}

/// Resolves `plan` and replays `schedule` in one step.
pub fn run_pipeline(
    plan: &Plan,
    tables: &BTreeMap<String, Table>,
    schedule: &Schedule,
    config: &RunConfig,
) -> Result<RunOutcome, RunError> {
    Job::prepare(plan, tables, config)?.run(schedule)
}

/// Scans of `plan` by table name, for loading data.
pub fn plan_tables(plan: &Plan) -> BTreeSet<String> {
    plan.nodes().iter().filter_map(|n| n.table.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use lsmjoin_core::oracle::interpret_plan;
    use lsmjoin_core::tsc::{two_step_convert, PatternConfig};

    fn tables() -> BTreeMap<String, Table> {
        let t = |cols: &[&str], rows: &[&[i64]]| Table {
            columns: cols.iter().map(|c| c.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|&v| Value::Int(v)).collect()).collect(),
        };
        BTreeMap::from([
            ("ta".into(), t(&["id", "k"], &[&[1, 1], &[2, 2], &[3, 2]])),
            ("tb".into(), t(&["id", "k"], &[&[4, 2], &[5, 2], &[6, 1]])),
            ("tc".into(), t(&["id", "k", "x"], &[&[7, 2, 0], &[8, 1, 0], &[9, 3, 1]])),
        ])
    }

    fn three_way() -> Plan {
        Plan::new(
            "top",
            vec![
                PlanNode::project("top", "j1", &["a.id", "c.x"]),
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

    fn config(mode: EngineMode) -> RunConfig {
        RunConfig {
            mode,
            cap_bytes: (mode == EngineMode::CappedHash).then_some(1 << 20),
            backend: BackendConfig { memtable_capacity_entries: 2, block_bytes: 64, ..Default::default() },
            sample_every: 2,
            collect_output: true,
            ..Default::default()
        }
    }

    #[test]
    fn every_mode_matches_the_interpreter() {
        let plan = three_way();
        let converted = two_step_convert(&plan, &PatternConfig::default()).unwrap().plan;
        let expected = interpret_plan(&plan, &tables()).unwrap().canonical_lines();
        assert_eq!(expected.len(), 5);
        let schedule = Schedule::random(&[3, 3, 3], 4);
        for (p, mode, threaded) in [
            (&converted, EngineMode::UmJoin, false),
            (&converted, EngineMode::CappedHash, false),
            (&plan, EngineMode::Bjt, false),
            (&plan, EngineMode::Bjt, true),
        ] {
            let out = run_pipeline(p, &tables(), &schedule, &RunConfig { threaded, ..config(mode) }).unwrap();
            assert_eq!(out.lines.as_deref(), Some(expected.as_slice()), "{mode} threaded={threaded}");
            assert_eq!(out.report.summary.outputs, 5);
            out.report.check().unwrap();
        }
    }

    #[test]
    fn bjt_counts_intermediate_rows_and_labels_node_sides() {
        let out = run_pipeline(&three_way(), &tables(), &Schedule::sequential(&[3, 3, 3]), &config(EngineMode::Bjt)).unwrap();
        let s = &out.report.summary;
        assert_eq!(s.intermediate_rows, 5);
        assert_eq!(s.per_stream.keys().collect::<Vec<_>>(), ["j1/left", "j1/right", "j2/left", "j2/right"]);
        assert_eq!(out.report.samples.len(), 4);
    }

    #[test]
    fn mode_mismatches_fail_before_running() {
        let plan = three_way();
        let err = Job::prepare(&plan, &tables(), &config(EngineMode::UmJoin)).unwrap_err();
        assert!(matches!(err, RunError::Config(ref m) if m.contains("convert")), "{err}");
        let converted = two_step_convert(&plan, &PatternConfig::default()).unwrap().plan;
        assert!(Job::prepare(&converted, &tables(), &config(EngineMode::Bjt)).is_err());
        let no_cap = RunConfig { cap_bytes: None, ..config(EngineMode::CappedHash) };
        assert!(Job::prepare(&converted, &tables(), &no_cap).is_err());
        let mut missing = tables();
        missing.remove("tb");
        assert!(Job::prepare(&plan, &missing, &config(EngineMode::Bjt)).is_err());
    }

    #[test]
    fn chain_keys_are_not_a_single_multijoin_key() {
        let plan = Plan::new(
            "j1",
            vec![
                PlanNode::join("j1", "j2", "c", &[("b.id", "c.id")]),
                PlanNode::join("j2", "a", "b", &[("a.k", "b.k")]),
                PlanNode::scan("a", "ta", Some("a")),
                PlanNode::scan("b", "tb", Some("b")),
                PlanNode::scan("c", "tc", Some("c")),
            ],
        )
        .unwrap();
        let converted = two_step_convert(&plan, &PatternConfig::default()).unwrap().plan;
        let err = Job::prepare(&converted, &tables(), &config(EngineMode::UmJoin)).unwrap_err().to_string();
        assert!(err.contains("equality class"), "{err}");
        let out = run_pipeline(&plan, &tables(), &Schedule::random(&[3, 3, 3], 1), &config(EngineMode::Bjt)).unwrap();
        assert_eq!(out.lines.unwrap(), interpret_plan(&plan, &tables()).unwrap().canonical_lines());
    }

    #[test]
    fn empty_schedule_and_rejected_rows() {
        let converted = two_step_convert(&three_way(), &PatternConfig::default()).unwrap().plan;
        let out = run_pipeline(&converted, &tables(), &Schedule(Vec::new()), &config(EngineMode::UmJoin)).unwrap();
        assert_eq!((out.report.summary.outputs, out.report.summary.events), (0, 0));
        let mut t = tables();
        t.get_mut("ta").unwrap().rows.push(vec![Value::Int(1)]);
        let job = Job::prepare(&converted, &t, &config(EngineMode::UmJoin)).unwrap();
        let out = job.run(&Schedule::sequential(&job.source_counts())).unwrap();
        assert_eq!(out.report.summary.rejected, 1);
        assert_eq!(out.report.summary.outputs, 5);
    }

    #[test]
    fn capped_hash_aborts_over_budget() {
        let converted = two_step_convert(&three_way(), &PatternConfig::default()).unwrap().plan;
        let job = Job::prepare(&converted, &tables(), &config(EngineMode::CappedHash)).unwrap();
        let full = job.full_state_bytes();
        let cfg = RunConfig { cap_bytes: Some(full / 2), ..config(EngineMode::CappedHash) };
        let out = run_pipeline(&converted, &tables(), &Schedule::sequential(&[3, 3, 3]), &cfg).unwrap();
        let s = &out.report.summary;
        assert!(s.aborted && s.outputs < 5, "{s:?}");
        assert!(s.state_bytes.unwrap() > full / 2);
    }

    #[test]
    fn state_directories_are_per_backend_and_must_be_empty() {
        let dir = tempfile::tempdir().unwrap();
        let converted = two_step_convert(&three_way(), &PatternConfig::default()).unwrap().plan;
        let cfg = RunConfig { store: StateStore::Dir(dir.path().into()), ..config(EngineMode::UmJoin) };
        let out = run_pipeline(&converted, &tables(), &Schedule::random(&[3, 3, 3], 2), &cfg).unwrap();
        assert_eq!(out.report.summary.outputs, 5);
        assert!(out.report.summary.total.flush_count > 0);
        assert!(dir.path().join("a").read_dir().unwrap().next().is_some());
        let again = run_pipeline(&converted, &tables(), &Schedule::random(&[3, 3, 3], 2), &cfg).unwrap_err();
        assert!(again.to_string().contains("not empty"), "{again}");
    }
}
