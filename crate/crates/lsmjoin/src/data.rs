//! CSV tables and the data-directory manifest.
//!
//! A data directory holds one `<table>.csv` per table (header line first) and
//! optionally a `manifest.json` with the row count of every table.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lsmjoin_core::oracle::Table;
use lsmjoin_core::Value;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// Data rows per table, header excluded.
    pub tables: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads a CSV file; every field goes through [`Value::parse`]. Rows whose
/// field count differs from the header are kept as they are, so the engine
/// can reject them.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let columns = reader.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        rows.push(record.iter().map(Value::parse).collect());
    }
    Ok(Table { columns, rows })
}

pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(&table.columns)?;
    for row in &table.rows {
        writer.write_record(row.iter().map(Value::to_string))?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads `<dir>/<name>.csv` for every name.
pub fn load_tables<'a>(dir: &Path, names: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, Table>> {
    let mut out = BTreeMap::new();
    for name in names {
        if out.contains_key(name) {
            continue;
        }
        let path = dir.join(format!("{name}.csv"));
        if !path.exists() {
            bail!("table {name}: {} does not exist", path.display());
        }
        out.insert(name.to_owned(), read_table(&path)?);
    }
    Ok(out)
}

/// Writes every table plus a manifest into `dir`.
pub fn write_dataset(dir: &Path, seed: u64, tables: &BTreeMap<String, Table>) -> Result<Manifest> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = Manifest { seed, tables: BTreeMap::new() };
    for (name, table) in tables {
        write_table(&dir.join(format!("{name}.csv")), table)?;
        manifest.tables.insert(name.clone(), table.rows.len() as u64);
    }
    manifest.write(dir)?;
    Ok(manifest)
}
