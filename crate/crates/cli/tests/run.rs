use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levyforest_cli::ReportFile;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_levyforest"));
    c.env_remove("LEVYFOREST_SEED");
    c
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

const SAMPLE: &str = r#"{"name":"one","kind":"sample","seed":42,"mechanism":{"beta":1.0},"n":60,"samples":1}"#;

#[test]
fn sample_run_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SAMPLE);
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|s| dir.path().join(s)).collect();
    assert!(run(&cfg, &outs[0], &[]).status.success());
    assert!(run(&cfg, &outs[1], &["--workers", "1"]).status.success());
    assert!(run(&cfg, &outs[2], &["--workers", "3"]).status.success());
    for file in ["one.ndjson", "one.report.json"] {
        let first = fs::read(outs[0].join(file)).unwrap();
        assert!(!first.is_empty());
        for o in &outs[1..] {
            assert_eq!(first, fs::read(o.join(file)).unwrap(), "{file} differs");
        }
    }
    let ndjson = fs::read_to_string(outs[0].join("one.ndjson")).unwrap();
    assert_eq!(ndjson.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(ndjson.lines().next().unwrap()).unwrap();
    for key in ["seed", "mechanism", "n", "conditioning", "height", "zeta", "stats", "config_digest"] {
        assert!(rec.get(key).is_some(), "record lacks {key}");
    }
}

#[test]
fn multi_tree_sample_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"name":"many","kind":"sample","seed":5,"mechanism":{"normalized_stable":1.5},"n":30,"samples":6}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &["--workers", "1"]).status.success());
    assert!(run(&cfg, &b, &["--workers", "4"]).status.success());
    assert_eq!(fs::read(a.join("many.ndjson")).unwrap(), fs::read(b.join("many.ndjson")).unwrap());
}

#[test]
fn dims_run_emits_a_regression_table_with_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"name":"d","kind":"dims","seed":8,"mechanism":{"beta":1.0},"n":80,"samples":2,"params":{"j_lo":1,"j_hi":5}}"#,
    );
    let out = run(&cfg, dir.path(), &[]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
    let report = ReportFile::read(&dir.path().join("d.report.json")).unwrap();
    let text = fs::read_to_string(dir.path().join("d.regression.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_digest={}", report.config_digest));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"slope"));
    let slope_col = header.iter().position(|h| *h == "slope").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 trees x 5 octaves, then the summary
    assert_eq!(rows.len(), 11);
    let summary = rows.last().unwrap();
    assert_eq!(summary[0], "summary");
    let slope: f64 = summary[slope_col].parse().unwrap();
    assert_eq!(slope, report.checks[0].statistic);
    assert_eq!(report.pass, out.status.code() == Some(0));
}

#[test]
fn unknown_kind_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"name":"x","kind":"teleport","seed":1,"mechanism":{"beta":1.0}}"#);
    let out = run(&cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema error") && err.contains("teleport") && err.contains("level-dims"), "{err}");
    assert!(!dir.path().join("x.report.json").exists());
}

#[test]
fn infrastructure_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&missing, dir.path(), &[]).status.code(), Some(2));
    let bad_params = write_config(
        dir.path(),
        r#"{"name":"x","kind":"dims","seed":1,"mechanism":{"beta":1.0},"params":{"tolerence":0.1}}"#,
    );
    let out = run(&bad_params, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerence"));
    let cfg = write_config(dir.path(), SAMPLE);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path()).env("LEVYFOREST_SEED", "abc").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SAMPLE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&b).env("LEVYFOREST_SEED", "43").output().unwrap();
    assert!(out.status.success());
    let (ra, rb) = (ReportFile::read(&a.join("one.report.json")).unwrap(), ReportFile::read(&b.join("one.report.json")).unwrap());
    assert_eq!((ra.seed, rb.seed), (42, 43));
    assert_ne!(ra.config_digest, rb.config_digest);
    assert!(rb.checks.iter().all(|c| c.config_digest.as_deref() == Some(rb.config_digest.as_str())));
}

#[test]
fn failing_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // an impossible expectation for the slope
    let cfg = write_config(
        dir.path(),
        r#"{"name":"f","kind":"dims","seed":8,"mechanism":{"beta":1.0},"n":40,"samples":1,
            "params":{"j_lo":1,"j_hi":5,"expected":50.0,"tolerance":0.1}}"#,
    );
    let out = run(&cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL dims.box_slope"));
    assert!(!ReportFile::read(&dir.path().join("f.report.json")).unwrap().pass);
}

#[test]
fn plotdata_header_is_stable() {
    let out = bin().arg("emit-plotdata").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "report,kind,config_digest,series,sample_id,x,y\n");
}

#[test]
fn plotdata_has_one_row_per_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"name":"d","kind":"dims","seed":8,"mechanism":{"beta":1.0},"n":60,"samples":2,"params":{"j_lo":1,"j_hi":5}}"#,
    );
    assert_ne!(run(&cfg, dir.path(), &[]).status.code(), Some(2));
    let bundle = dir.path().join("plot.csv");
    let report = dir.path().join("d.report.json");
    let out = bin().arg("emit-plotdata").arg(&report).arg(&report).arg("--out").arg(&bundle).output().unwrap();
    assert!(out.status.success());
    let text = fs::read_to_string(&bundle).unwrap();
    let r = ReportFile::read(&report).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * r.observations.len());
    let counts: Vec<&Vec<&str>> = rows.iter().filter(|row| row[3] == "packing_count").collect();
    assert_eq!(counts.len(), 2 * 2 * 5);
    for row in counts {
        assert_eq!((row[0], row[1], row[2]), ("d", "dims", r.config_digest.as_str()));
        let (delta, count): (f64, f64) = (row[5].parse().unwrap(), row[6].parse().unwrap());
        assert!(delta > 0.0 && count >= 1.0 && count.fract() == 0.0);
    }
    let missing = bin().arg("emit-plotdata").arg(dir.path().join("absent.report.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
