use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use lsmjoin::data::{load_tables, write_dataset, Manifest};
use lsmjoin::gen::{tpch_tables, TPCDS_RETURNS_QUERY};
use lsmjoin::pipeline::{run_pipeline, EngineMode, RunConfig};
use lsmjoin::schedule::Schedule;
use lsmjoin_core::lsm::BackendConfig;
use lsmjoin_core::oracle::{interpret_plan, Table};
use lsmjoin_core::plan::{NodeKind, Plan};
use lsmjoin_core::sql::parse_query;
use lsmjoin_core::tsc::{two_step_convert, PatternConfig};

/// Fixture name and group count without and with the project pattern.
const FIXTURES: [(&str, usize, usize); 12] = [
    ("q2", 2, 2),
    ("q3", 1, 1),
    ("q5", 1, 1),
    ("q7", 1, 1),
    ("q8", 1, 1),
    ("q9", 1, 1),
    ("q10", 1, 1),
    ("q11", 2, 2),
    ("q15", 1, 1),
    ("q18", 1, 1),
    ("q21", 2, 1),
    ("diamond", 1, 1),
];

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn plan(name: &str) -> Plan {
    Plan::parse(&fs::read_to_string(fixtures().join("plans").join(format!("{name}.json"))).unwrap()).unwrap()
}

fn tpch() -> BTreeMap<String, Table> {
    let manifest = Manifest::read(&fixtures().join("tpch")).unwrap();
    load_tables(&fixtures().join("tpch"), manifest.tables.keys().map(String::as_str)).unwrap()
}

#[test]
fn tpch_fixture_tables_are_the_seeded_generator_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), 7, &tpch_tables(7)).unwrap();
    assert_eq!(manifest, Manifest::read(&fixtures().join("tpch")).unwrap());
    for name in manifest.tables.keys() {
        let file = format!("{name}.csv");
        assert_eq!(fs::read(dir.path().join(&file)).unwrap(), fs::read(fixtures().join("tpch").join(&file)).unwrap(), "{file}");
    }
    for (name, t) in tpch() {
        assert!((20..=100).contains(&t.rows.len()), "{name} has {} rows", t.rows.len());
    }
}

#[test]
fn every_fixture_converts_to_an_equivalent_plan() {
    let tables = tpch();
    for (name, groups, with_project) in FIXTURES {
        let original = plan(name);
        let expected = interpret_plan(&original, &tables).unwrap().to_multiset();
        assert!(!expected.is_empty(), "{name} has an empty result");
        for (include_project_nodes, want) in [(false, groups), (true, with_project)] {
            let config = PatternConfig { include_project_nodes };
            let conv = two_step_convert(&original, &config).unwrap();
            assert_eq!(conv.groups.len(), want, "{name} project={include_project_nodes}");
            assert_eq!(conv.multijoins.len(), want);
            assert!(conv.plan.nodes().iter().all(|n| n.kind != NodeKind::Join), "{name} keeps a binary join");
            assert_eq!(interpret_plan(&conv.plan, &tables).unwrap().to_multiset(), expected, "{name} project={include_project_nodes}");
            let again = two_step_convert(&conv.plan, &config).unwrap();
            assert!(again.groups.is_empty(), "{name}: second conversion found groups");
            assert_eq!(again.plan, conv.plan, "{name}: conversion is not idempotent");
        }
    }
}

#[test]
fn converted_fixtures_survive_a_json_round_trip() {
    for (name, ..) in FIXTURES {
        let conv = two_step_convert(&plan(name), &PatternConfig::default()).unwrap().plan;
        let back = Plan::parse(&conv.to_json()).unwrap();
        assert!(back.isomorphic(&conv), "{name}");
    }
}

#[test]
fn returns_query_parses_to_the_golden_plan() {
    let parsed = parse_query(TPCDS_RETURNS_QUERY).unwrap();
    assert!(parsed.isomorphic(&plan("returns")));
    let conv = two_step_convert(&parsed, &PatternConfig::default()).unwrap();
    assert_eq!(conv.multijoins.len(), 1);
    let mj = conv.plan.node(&conv.multijoins[0]).unwrap();
    assert_eq!(mj.inputs.len(), 4);
}

#[test]
fn binary_fixtures_run_in_bjt_mode_like_the_interpreter() {
    let tables = tpch();
    let config = RunConfig {
        mode: EngineMode::Bjt,
        backend: BackendConfig { memtable_capacity_entries: 16, block_bytes: 256, ..Default::default() },
        collect_output: true,
        ..Default::default()
    };
    for name in ["q3", "q5", "q7", "q8", "q9", "q10"] {
        let p = plan(name);
        let job = lsmjoin::pipeline::Job::prepare(&p, &tables, &config).unwrap();
        let out = run_pipeline(&p, &tables, &Schedule::random(&job.source_counts(), 3), &config).unwrap();
        assert_eq!(out.lines.unwrap(), interpret_plan(&p, &tables).unwrap().canonical_lines(), "{name}");
    }
}
