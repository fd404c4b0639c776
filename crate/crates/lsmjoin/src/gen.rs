//! Deterministic synthetic data.
//!
//! Stream tables have three columns: a serial id, a join key drawn from
//! `0..key_domain`, and an alphanumeric pad of `payload_bytes`. Every table
//! gets its own ChaCha stream of the run seed, so adding a table never
//! changes the others.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lsmjoin_core::oracle::Table;
use lsmjoin_core::{Row, Value};
use rand::distr::{Alphanumeric, SampleString};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDist {
    Uniform,
    /// Zipf with exponent `s`; key 0 is the most frequent.
    Zipf(f64),
}

impl FromStr for KeyDist {
    type Err = anyhow::Error;

    /// `uniform` or `zipf:<s>`.
    fn from_str(s: &str) -> Result<KeyDist> {
        if s == "uniform" {
            return Ok(KeyDist::Uniform);
        }
        let Some(exp) = s.strip_prefix("zipf:") else { bail!("unknown key distribution {s:?} (want uniform or zipf:<s>)") };
        let exp: f64 = exp.parse().with_context(|| format!("zipf exponent {exp:?}"))?;
        if !(exp.is_finite() && exp > 0.0) {
            bail!("zipf exponent must be positive, got {exp}");
        }
        Ok(KeyDist::Zipf(exp))
    }
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDist::Uniform => f.write_str("uniform"),
            KeyDist::Zipf(s) => write!(f, "zipf:{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub name: String,
    /// Names of the id, key and pad columns.
    pub columns: [String; 3],
    pub tuple_count: u64,
    pub key_domain: u64,
    pub dist: KeyDist,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub streams: Vec<StreamSpec>,
    pub seed: u64,
}

/// Tuple counts of the four returns-query tables at full size.
pub const TPCDS_RETURNS_COUNTS: [(&str, u64); 4] =
    [("customer", 986_546), ("catalog_returns", 2_879_498), ("store_returns", 5_750_864), ("web_returns", 1_438_434)];

/// The four-table returns query over the generated `tpcds-returns` tables.
pub const TPCDS_RETURNS_QUERY: &str = "SELECT *
FROM store_returns sr, customer cu, web_returns wr, catalog_returns cr
WHERE cu.c_current_addr_sk = cr.cr_refunded_addr_sk
AND cu.c_current_addr_sk = sr.sr_addr_sk
AND cu.c_current_addr_sk = wr.wr_refunded_addr_sk;
";

impl GenSpec {
    /// `n` streams `s0..s<n-1>` with columns `id, k, pad`.
    pub fn star(n: usize, tuples: u64, key_domain: u64, dist: KeyDist, payload_bytes: usize, seed: u64) -> GenSpec {
        let streams = (0..n)
            .map(|i| StreamSpec {
                name: format!("s{i}"),
                columns: ["id".into(), "k".into(), "pad".into()],
                tuple_count: tuples,
                key_domain,
                dist,
                payload_bytes,
            })
            .collect();
        GenSpec { streams, seed }
    }

    /// The returns-query tables with their full-size count ratios, each
    /// count multiplied by `scale` (rounded, at least 1).
    pub fn tpcds_returns(scale: f64, key_domain: u64, dist: KeyDist, payload_bytes: usize, seed: u64) -> GenSpec {
        let cols = |id: &str, key: &str, pad: &str| [id.to_owned(), key.to_owned(), pad.to_owned()];
        let streams = TPCDS_RETURNS_COUNTS
            .iter()
            .map(|&(name, full)| StreamSpec {
                name: name.into(),
                columns: match name {
                    "customer" => cols("c_customer_sk", "c_current_addr_sk", "c_pad"),
                    "catalog_returns" => cols("cr_order_number", "cr_refunded_addr_sk", "cr_pad"),
                    "store_returns" => cols("sr_ticket_number", "sr_addr_sk", "sr_pad"),
                    _ => cols("wr_order_number", "wr_refunded_addr_sk", "wr_pad"),
                },
                tuple_count: ((full as f64 * scale).round() as u64).max(1),
                key_domain,
                dist,
                payload_bytes,
            })
            .collect();
        GenSpec { streams, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.streams {
            if s.key_domain == 0 {
                bail!("stream {}: key domain must be positive", s.name);
            }
        }
        Ok(())
    }
}

fn table_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates every stream table of `spec`.
pub fn generate(spec: &GenSpec) -> Result<BTreeMap<String, Table>> {
    spec.validate()?;
    let mut out = BTreeMap::new();
    for (i, s) in spec.streams.iter().enumerate() {
        let mut rng = table_rng(spec.seed, i);
        let zipf = match s.dist {
            KeyDist::Uniform => None,
            KeyDist::Zipf(exp) => Some(Zipf::new(s.key_domain as f64, exp).context("zipf parameters")?),
        };
        let mut rows = Vec::with_capacity(s.tuple_count as usize);
        for id in 0..s.tuple_count {
            let key = match &zipf {
                None => rng.random_range(0..s.key_domain),
                Some(z) => z.sample(&mut rng) as u64 - 1,
            };
            let pad = Alphanumeric.sample_string(&mut rng, s.payload_bytes);
            rows.push(vec![Value::Int(id as i64), Value::Int(key as i64), Value::Str(pad)]);
        }
        out.insert(s.name.clone(), Table { columns: s.columns.to_vec(), rows });
    }
    Ok(out)
}

fn table(columns: &[&str], rows: Vec<Row>) -> Table {
    Table { columns: columns.iter().map(|c| (*c).to_owned()).collect(), rows }
}

/// Small TPC-H-like tables (20 to 100 rows) whose foreign keys all resolve:
/// region, nation, supplier, customer, part, partsupp, orders, lineitem.
pub fn tpch_tables(seed: u64) -> BTreeMap<String, Table> {
    const SEGMENTS: [&str; 5] = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"];
    const TYPES: [&str; 4] = ["BRASS", "COPPER", "NICKEL", "STEEL"];
    const STATUS: [&str; 3] = ["F", "O", "P"];
    let mut rng = table_rng(seed, 0);
    let int = |v: i64| Value::Int(v);
    let s = |v: &str| Value::Str(v.to_owned());

    let region = (0..20).map(|i| vec![int(i), Value::Str(format!("REGION{i:02}"))]).collect();
    let nation = (0..25).map(|i| vec![int(i), int(rng.random_range(0..20)), Value::Str(format!("NATION{i:02}"))]).collect();
    let supplier = (1..=20).map(|i| vec![int(i), int(rng.random_range(0..25)), int(rng.random_range(-999..10_000))]).collect();
    let customer = (1..=30).map(|i| vec![int(i), int(rng.random_range(0..25)), s(SEGMENTS.choose(&mut rng).unwrap())]).collect();
    let part = (1..=20).map(|i| vec![int(i), int(rng.random_range(1..51)), s(TYPES.choose(&mut rng).unwrap())]).collect();
    let mut partsupp: Vec<Row> = Vec::new();
    for p in 1..=20 {
        let first = rng.random_range(1..=20);
        let second = (first + rng.random_range(0..19)) % 20 + 1;
        for supp in [first, second] {
            partsupp.push(vec![int(p), int(supp), int(rng.random_range(1..1000))]);
        }
    }
    let orders = (1..=50).map(|i| vec![int(i), int(rng.random_range(1..=30)), s(STATUS.choose(&mut rng).unwrap())]).collect();
    let lineitem = (0..100)
        .map(|_| {
            let ps = partsupp.choose(&mut rng).unwrap();
            vec![int(rng.random_range(1..=50)), ps[0].clone(), ps[1].clone(), int(rng.random_range(1..51))]
        })
        .collect();

    BTreeMap::from([
        ("region".into(), table(&["r_regionkey", "r_name"], region)),
        ("nation".into(), table(&["n_nationkey", "n_regionkey", "n_name"], nation)),
        ("supplier".into(), table(&["s_suppkey", "s_nationkey", "s_acctbal"], supplier)),
        ("customer".into(), table(&["c_custkey", "c_nationkey", "c_mktsegment"], customer)),
        ("part".into(), table(&["p_partkey", "p_size", "p_type"], part)),
        ("partsupp".into(), table(&["ps_partkey", "ps_suppkey", "ps_supplycost"], partsupp)),
        ("orders".into(), table(&["o_orderkey", "o_custkey", "o_orderstatus"], orders)),
        ("lineitem".into(), table(&["l_orderkey", "l_partkey", "l_suppkey", "l_quantity"], lineitem)),
    ])
}
