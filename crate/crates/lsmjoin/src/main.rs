use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use lsmjoin::data::{load_tables, write_dataset, Manifest, MANIFEST_FILE};
use lsmjoin::gen::{generate, tpch_tables, GenSpec, KeyDist};
use lsmjoin::metrics::Summary;
use lsmjoin::pipeline::{plan_tables, EngineMode, Job, RunConfig, RunError, RunOutcome, StateStore};
use lsmjoin::schedule::Schedule;
use lsmjoin_core::lsm::BackendConfig;
use lsmjoin_core::oracle::{interpret_plan, InterpretError, Table};
use lsmjoin_core::plan::{Plan, PlanError};
use lsmjoin_core::sql::{parse_query, SqlError};
use lsmjoin_core::tsc::{two_step_convert, PatternConfig, TscError};
use serde::Serialize;

const EXIT_CONFIG: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_ABORTED: u8 = 4;

#[derive(Parser)]
#[command(name = "lsmjoin", version, about = "Multi-way stream joins over LSM-tree state")]
struct Cli {
    /// Seed for data generation and random schedules.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate CSV tables and a manifest.
    Gen(GenArgs),
    /// Parse a SELECT query into a binary plan.
    Sql(SqlArgs),
    /// Rewrite binary join groups into multijoins.
    Convert(ConvertArgs),
    /// Execute a plan over a data directory.
    Run(RunArgs),
    /// Evaluate a plan in batch and write its canonical output.
    Oracle(OracleArgs),
    /// Repeat a run over several values of one parameter.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Star,
    TpcdsReturns,
    Tpch,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "star")]
    preset: Preset,
    /// Star preset: number of streams.
    #[arg(long, default_value_t = 4)]
    streams: usize,
    /// Star preset: tuples per stream.
    #[arg(long, default_value_t = 1000)]
    tuples: u64,
    /// Key domain size.
    #[arg(long, default_value_t = 50)]
    keys: u64,
    /// `uniform` or `zipf:<s>`.
    #[arg(long, default_value = "uniform")]
    dist: KeyDist,
    #[arg(long, default_value_t = 16)]
    payload_bytes: usize,
    /// Returns preset: fraction of the full-size tuple counts.
    #[arg(long, default_value_t = 0.0002)]
    scale: f64,
}

#[derive(Args)]
struct SqlArgs {
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    query: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    /// Plan JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Accept projects over joins as group members.
    #[arg(long)]
    with_project_pattern: bool,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "umjoin")]
    mode: EngineMode,
    /// `random` (seeded by `--seed`) or a schedule file.
    #[arg(long, default_value = "random")]
    schedule: String,
    /// Parent of the per-backend state directories; a temporary directory when absent.
    #[arg(long, conflicts_with = "in_memory")]
    state_dir: Option<PathBuf>,
    /// Keep LSM files in memory.
    #[arg(long)]
    in_memory: bool,
    #[arg(long)]
    memtable_entries: Option<usize>,
    #[arg(long)]
    block_cache_bytes: Option<usize>,
    #[arg(long)]
    block_bytes: Option<usize>,
    #[arg(long)]
    l0_trigger: Option<usize>,
    #[arg(long)]
    fanout: Option<usize>,
    /// Retention in event ticks; each event advances the clock by one.
    #[arg(long)]
    ttl_ms: Option<u64>,
    /// capped_hash state budget in bytes.
    #[arg(long, conflicts_with = "cap_fraction")]
    cap_bytes: Option<u64>,
    /// capped_hash state budget as a fraction of the full state size.
    #[arg(long)]
    cap_fraction: Option<f64>,
    /// bjt mode: comma-separated aliases of a left-deep join order.
    #[arg(long, value_delimiter = ',')]
    bjt_order: Option<Vec<String>>,
    /// bjt mode: run each join node on its own thread.
    #[arg(long)]
    threads: bool,
    /// Events between metric samples.
    #[arg(long, default_value_t = 1000)]
    sample_every: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Metrics JSONL destination.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Sorted canonical output lines.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare the output with the batch evaluation of the plan.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Engine output file to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    BlockCacheBytes,
    MemtableEntries,
    BjtOrder,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// One value per run; bjt orders are comma-separated alias lists.
    #[arg(long, num_args = 1.., required = true)]
    values: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let config = error.chain().any(|e| {
            e.is::<PlanError>()
                || e.is::<SqlError>()
                || e.is::<TscError>()
                || e.is::<InterpretError>()
                || matches!(e.downcast_ref::<RunError>(), Some(RunError::Config(_)))
        });
        Failure { code: if config { EXIT_CONFIG } else { 1 }, error }
    }
}

fn config_failure(msg: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_CONFIG, error: anyhow!("{msg}") }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let result = match cli.command {
        Command::Gen(a) => gen(a, cli.seed).map_err(Failure::from),
        Command::Sql(a) => sql(a).map_err(Failure::from),
        Command::Convert(a) => convert(a).map_err(Failure::from),
        Command::Run(a) => run(a, cli.seed),
        Command::Oracle(a) => oracle(a),
        Command::Sweep(a) => sweep(a, cli.seed).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn gen(a: GenArgs, seed: u64) -> Result<()> {
    let tables = match a.preset {
        Preset::Star => generate(&GenSpec::star(a.streams, a.tuples, a.keys, a.dist, a.payload_bytes, seed))?,
        Preset::TpcdsReturns => generate(&GenSpec::tpcds_returns(a.scale, a.keys, a.dist, a.payload_bytes, seed))?,
        Preset::Tpch => tpch_tables(seed),
    };
    let manifest = write_dataset(&a.out, seed, &tables)?;
    for (name, rows) in &manifest.tables {
        println!("{name}: {rows} rows");
    }
    Ok(())
}

fn sql(a: SqlArgs) -> Result<()> {
    let text = match (a.query, a.file) {
        (Some(q), _) => q,
        (None, Some(f)) => fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let json = parse_query(&text)?.to_json();
    match a.out {
        Some(out) => fs::write(&out, json + "\n").with_context(|| format!("writing {}", out.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn read_plan(path: &Path) -> Result<Plan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Plan::parse(&text).with_context(|| format!("plan {}", path.display()))
}

fn convert(a: ConvertArgs) -> Result<()> {
    let plan = read_plan(&a.input)?;
    let config = PatternConfig { include_project_nodes: a.with_project_pattern };
    let conversion = two_step_convert(&plan, &config)?;
    fs::write(&a.out, conversion.plan.to_json() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    println!("groups={} multijoins={}", conversion.groups.len(), conversion.multijoins.len());
    Ok(())
}

/// Loads the tables `plan` scans; counts must agree with the manifest when
/// one is present.
fn load_data(plan: &Plan, dir: &Path) -> Result<BTreeMap<String, Table>> {
    let names = plan_tables(plan);
    let tables = load_tables(dir, names.iter().map(String::as_str))?;
    if dir.join(MANIFEST_FILE).exists() {
        let manifest = Manifest::read(dir)?;
        for (name, table) in &tables {
            if let Some(&n) = manifest.tables.get(name) {
                if n != table.rows.len() as u64 {
                    bail!(RunError::Config(format!("{name}.csv has {} rows, manifest says {n}", table.rows.len())));
                }
            }
        }
    }
    Ok(tables)
}

struct Prepared {
    plan: Plan,
    tables: BTreeMap<String, Table>,
    job: Job,
    schedule: Schedule,
    /// Keeps a temporary state directory alive for the run.
    _state: Option<tempfile::TempDir>,
}

impl EngineArgs {
    fn backend(&self) -> BackendConfig {
        let mut b = BackendConfig::default();
        if let Some(v) = self.memtable_entries {
            b.memtable_capacity_entries = v;
        }
        if let Some(v) = self.block_cache_bytes {
            b.block_cache_bytes = v;
        }
        if let Some(v) = self.block_bytes {
            b.block_bytes = v;
        }
        if let Some(v) = self.l0_trigger {
            b.l0_file_trigger = v;
        }
        if let Some(v) = self.fanout {
            b.level_fanout = v;
        }
        b.ttl_ms = self.ttl_ms;
        b
    }

    fn store(&self) -> Result<(StateStore, Option<tempfile::TempDir>)> {
        Ok(match (&self.state_dir, self.in_memory) {
            (_, true) => (StateStore::Memory, None),
            (Some(d), false) => (StateStore::Dir(d.clone()), None),
            (None, false) => {
                let tmp = tempfile::tempdir().context("creating a temporary state directory")?;
                (StateStore::Dir(tmp.path().to_owned()), Some(tmp))
            }
        })
    }

    fn prepare(&self, seed: u64, collect_output: bool) -> Result<Prepared> {
        let plan = read_plan(&self.plan)?;
        let tables = load_data(&plan, &self.data)?;
        let (store, state) = self.store()?;
        let mut config = RunConfig {
            mode: self.mode,
            backend: self.backend(),
            cap_bytes: self.cap_bytes,
            store,
            sample_every: self.sample_every,
            bjt_order: self.bjt_order.clone(),
            threaded: self.threads,
            collect_output,
        };
        if let Some(f) = self.cap_fraction {
            if f.is_nan() || f <= 0.0 {
                bail!(RunError::Config(format!("cap fraction {f} must be positive")));
            }
            // Any positive cap passes preparation; the real one needs the resolved sources.
            let probe = Job::prepare(&plan, &tables, &RunConfig { cap_bytes: Some(1), ..config.clone() })?;
            config.cap_bytes = Some(((probe.full_state_bytes() as f64 * f) as u64).max(1));
        }
        let job = Job::prepare(&plan, &tables, &config)?;
        let schedule = if self.schedule == "random" {
            Schedule::random(&job.source_counts(), seed)
        } else {
            let path = Path::new(&self.schedule);
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Schedule::parse(&text).map_err(|e| RunError::Config(format!("{e:#}")))?
        };
        schedule.validate(&job.source_counts()).map_err(|e| RunError::Config(format!("{e:#}")))?;
        info!("sources {:?}, {} events", job.aliases(), schedule.len());
        Ok(Prepared { plan, tables, job, schedule, _state: state })
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect();
    lines.sort_unstable();
    Ok(lines)
}

/// Reports the first difference between two sorted line lists.
fn compare_lines(engine: &[String], oracle: &[String]) -> Result<(), Failure> {
    if engine == oracle {
        println!("oracle: match ({} rows)", oracle.len());
        return Ok(());
    }
    let first = engine.iter().zip(oracle).position(|(a, b)| a != b).unwrap_or(engine.len().min(oracle.len()));
    Err(Failure {
        code: EXIT_MISMATCH,
        error: anyhow!(
            "output differs from the oracle: {} rows vs {} expected; first difference at sorted row {first}",
            engine.len(),
            oracle.len()
        ),
    })
}

fn print_summary(s: &Summary) {
    println!(
        "mode={} events={} outputs={} rejected={} intermediate_rows={} aborted={} blocks_read={} flushes={} compactions={}",
        s.mode,
        s.events,
        s.outputs,
        s.rejected,
        s.intermediate_rows,
        s.aborted,
        s.total.blocks_read_from_disk,
        s.total.flush_count,
        s.total.compaction_count
    );
}

fn run(a: RunArgs, seed: u64) -> Result<(), Failure> {
    let p = a.engine.prepare(seed, a.out.is_some() || a.verify)?;
    if a.verify && p.schedule.len() != p.job.source_counts().iter().sum::<usize>() {
        return Err(config_failure("--verify needs a schedule that delivers every row"));
    }
    if a.verify && a.engine.ttl_ms.is_some() {
        return Err(config_failure("--verify compares against a batch join and cannot model a TTL"));
    }
    let RunOutcome { report, lines } = p.job.run(&p.schedule).map_err(anyhow::Error::from)?;
    if let Some(m) = &a.metrics {
        report.write(m)?;
    }
    print_summary(&report.summary);
    if let (Some(out), Some(lines)) = (&a.out, &lines) {
        write_lines(out, lines)?;
    }
    if report.summary.aborted {
        return Err(Failure {
            code: EXIT_ABORTED,
            error: anyhow!("state exceeded the cap of {} bytes; run aborted", report.summary.cap_bytes.unwrap_or_default()),
        });
    }
    if a.verify {
        let expected = interpret_plan(&p.plan, &p.tables).map_err(anyhow::Error::from)?.canonical_lines();
        compare_lines(lines.as_deref().unwrap_or_default(), &expected)?;
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let plan = read_plan(&a.plan)?;
    let tables = load_data(&plan, &a.data)?;
    let lines = interpret_plan(&plan, &tables).map_err(anyhow::Error::from)?.canonical_lines();
    write_lines(&a.out, &lines)?;
    println!("rows={}", lines.len());
    if let Some(engine) = &a.compare {
        compare_lines(&read_lines(engine)?, &lines)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    param: &'a str,
    value: &'a str,
    summary: &'a Summary,
}

fn sweep(a: SweepArgs, seed: u64) -> Result<()> {
    let base = tempfile::tempdir().context("creating a temporary state directory")?;
    let root = a.engine.state_dir.clone().unwrap_or_else(|| base.path().to_owned());
    let param = match a.param {
        SweepParam::BlockCacheBytes => "block-cache-bytes",
        SweepParam::MemtableEntries => "memtable-entries",
        SweepParam::BjtOrder => "bjt-order",
    };
    let mut out = String::new();
    let mut best: Option<(u64, &str)> = None;
    for (i, value) in a.values.iter().enumerate() {
        let mut e = a.engine.clone();
        if !e.in_memory {
            e.state_dir = Some(root.join(format!("run-{i}")));
        }
        let number = || value.parse::<usize>().map_err(|_| RunError::Config(format!("{param} value {value:?} is not a number")));
        match a.param {
            SweepParam::BlockCacheBytes => e.block_cache_bytes = Some(number()?),
            SweepParam::MemtableEntries => e.memtable_entries = Some(number()?),
            SweepParam::BjtOrder => {
                e.mode = EngineMode::Bjt;
                e.bjt_order = Some(value.split(',').map(|s| s.trim().to_owned()).collect());
            }
        }
        let p = e.prepare(seed, false)?;
        let report = p.job.run(&p.schedule)?.report;
        let s = &report.summary;
        println!(
            "{param}={value} outputs={} blocks_read={} flushes={} compactions={} intermediate_rows={}",
            s.outputs, s.total.blocks_read_from_disk, s.total.flush_count, s.total.compaction_count, s.intermediate_rows
        );
        if best.is_none_or(|(rows, _)| s.intermediate_rows < rows) {
            best = Some((s.intermediate_rows, value));
        }
        out += &serde_json::to_string(&SweepRecord { param, value, summary: s })?;
        out.push('\n');
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    if let (SweepParam::BjtOrder, Some((rows, order))) = (a.param, best) {
        println!("best bjt order: {order} ({rows} intermediate rows)");
    }
    Ok(())
}
