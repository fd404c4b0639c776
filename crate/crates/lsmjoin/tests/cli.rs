use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lsmjoin::metrics::MetricsReport;

fn lsmjoin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsmjoin")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A three-stream star dataset with its binary and converted plans.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let gen = lsmjoin(p, &["--seed", "5", "gen", "--out", "data", "--streams", "3", "--tuples", "300", "--keys", "30"]);
    assert_eq!(code(&gen), 0, "{}", stderr(&gen));
    let sql = lsmjoin(p, &["sql", "--query", "SELECT * FROM s0 a, s1 b, s2 c WHERE a.k = b.k AND a.k = c.k", "--out", "plan.json"]);
    assert_eq!(code(&sql), 0, "{}", stderr(&sql));
    let conv = lsmjoin(p, &["convert", "--in", "plan.json", "--out", "multi.json"]);
    assert_eq!(code(&conv), 0, "{}", stderr(&conv));
    assert_eq!(stdout(&conv).trim(), "groups=1 multijoins=1");
    dir
}

#[test]
fn gen_is_deterministic_and_the_manifest_counts_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["one", "two"] {
        let o = lsmjoin(p, &["--seed", "9", "gen", "--out", out, "--streams", "2", "--tuples", "40", "--dist", "zipf:1.2"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in ["s0.csv", "s1.csv", "manifest.json"] {
        assert_eq!(fs::read(p.join("one").join(name)).unwrap(), fs::read(p.join("two").join(name)).unwrap(), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(p.join("one/manifest.json")).unwrap()).unwrap();
    let lines = fs::read_to_string(p.join("one/s0.csv")).unwrap().lines().count() as u64;
    assert_eq!(manifest["tables"]["s0"].as_u64(), Some(lines - 1));
    let empty = lsmjoin(p, &["gen", "--out", "empty", "--streams", "2", "--tuples", "0"]);
    assert_eq!(code(&empty), 0);
    assert_eq!(fs::read_to_string(p.join("empty/s1.csv")).unwrap(), "id,k,pad\n");
}

#[test]
fn run_verifies_against_the_oracle_in_every_mode() {
    let dir = workspace();
    let p = dir.path();
    let runs: [&[&str]; 3] = [
        &[
            "run",
            "--plan",
            "multi.json",
            "--data",
            "data",
            "--memtable-entries",
            "32",
            "--metrics",
            "m.jsonl",
            "--out",
            "o.txt",
            "--verify",
        ],
        &["run", "--plan", "plan.json", "--data", "data", "--mode", "bjt", "--in-memory", "--verify"],
        &["run", "--plan", "plan.json", "--data", "data", "--mode", "bjt", "--threads", "--bjt-order", "c,a,b", "--verify"],
    ];
    for args in runs {
        let o = lsmjoin(p, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        assert!(stdout(&o).contains("oracle: match"), "{}", stdout(&o));
    }
    let report = MetricsReport::read(&p.join("m.jsonl")).unwrap();
    report.check().unwrap();
    assert_eq!(report.summary.events, 900);
    let oracle = lsmjoin(p, &["oracle", "--plan", "plan.json", "--data", "data", "--out", "expected.txt", "--compare", "o.txt"]);
    assert_eq!(code(&oracle), 0, "{}", stderr(&oracle));
    let mut tampered = fs::read_to_string(p.join("o.txt")).unwrap();
    tampered.push_str("a.id=0\n");
    fs::write(p.join("bad.txt"), tampered).unwrap();
    let mismatch = lsmjoin(p, &["oracle", "--plan", "plan.json", "--data", "data", "--out", "expected.txt", "--compare", "bad.txt"]);
    assert_eq!(code(&mismatch), 3, "{}", stderr(&mismatch));
}

#[test]
fn capped_hash_abort_exits_4_and_still_writes_metrics() {
    let dir = workspace();
    let p = dir.path();
    let o = lsmjoin(
        p,
        &["run", "--plan", "multi.json", "--data", "data", "--mode", "capped_hash", "--cap-fraction", "0.5", "--metrics", "m.jsonl"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let report = MetricsReport::read(&p.join("m.jsonl")).unwrap();
    assert!(report.summary.aborted);
    assert!(report.summary.events < 900);
    let full = lsmjoin(p, &["run", "--plan", "multi.json", "--data", "data", "--mode", "capped_hash", "--cap-fraction", "1.0", "--verify"]);
    assert_eq!(code(&full), 0, "{}", stderr(&full));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("short.txt"), "0\n0\n1\n3\n").unwrap();
    let cases: [&[&str]; 6] = [
        &["run", "--plan", "plan.json", "--data", "data"],
        &["run", "--plan", "multi.json", "--data", "data", "--mode", "capped_hash"],
        &["run", "--plan", "multi.json", "--data", "data", "--schedule", "short.txt"],
        &["run", "--plan", "multi.json", "--data", "data", "--memtable-entries", "0"],
        &["sql", "--query", "SELECT * FROM s0 a, s1 b WHERE a.k < b.k"],
        &["run", "--plan", "plan.json", "--data", "data", "--mode", "warp"],
    ];
    for args in cases {
        let o = lsmjoin(p, args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let sql = lsmjoin(p, &["sql", "--query", "SELECT * FROM s0 a, s1 b WHERE a.k < b.k"]);
    assert!(stderr(&sql).contains("at byte"), "{}", stderr(&sql));
    let used = tempfile::tempdir().unwrap();
    fs::create_dir(used.path().join("a")).unwrap();
    fs::write(used.path().join("a/junk"), "x").unwrap();
    let o = lsmjoin(p, &["run", "--plan", "multi.json", "--data", "data", "--state-dir", used.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn sweeps_write_one_record_per_value() {
    let dir = workspace();
    let p = dir.path();
    let o = lsmjoin(
        p,
        &[
            "sweep",
            "--plan",
            "multi.json",
            "--data",
            "data",
            "--memtable-entries",
            "16",
            "--block-bytes",
            "256",
            "--param",
            "block-cache-bytes",
            "--values",
            "1024",
            "4096",
            "16384",
            "--out",
            "sweep.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records: Vec<serde_json::Value> =
        fs::read_to_string(p.join("sweep.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    let reads: Vec<u64> = records.iter().map(|r| r["summary"]["total"]["blocks_read_from_disk"].as_u64().unwrap()).collect();
    assert!(reads.windows(2).all(|w| w[0] >= w[1]), "{reads:?}");
    let orders = lsmjoin(
        p,
        &[
            "sweep",
            "--plan",
            "plan.json",
            "--data",
            "data",
            "--in-memory",
            "--param",
            "bjt-order",
            "--values",
            "a,b,c",
            "c,b,a",
            "--out",
            "orders.jsonl",
        ],
    );
    assert_eq!(code(&orders), 0, "{}", stderr(&orders));
    assert!(stdout(&orders).contains("best bjt order"), "{}", stdout(&orders));
}
