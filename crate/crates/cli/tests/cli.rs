use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bsl");

const MINIMAL: &str = r#"
seed = 1

[problem]
kind = "quadratic"
d1 = 2
d2 = 2

[solver]
algorithm = "ssgd"
k = 10

[stability]
trials = 1

[sweep]
m1 = [20]
m2 = [20]

[gap]
n_mc = 200
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn bsl(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BSL_OUT_DIR")
        .output()
        .expect("bsl runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// results.csv with the timing column removed.
fn untimed(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !bsl::pipeline::TIMING_COLUMNS.contains(h))
        .map(|(i, _)| i)
        .collect();
    let mut out = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.unwrap();
        out.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    out
}

#[test]
fn minimal_config_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MINIMAL);
    let out = dir.path().join("out");
    let o = bsl(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = untimed(&out.join("results.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], bsl::pipeline::COLUMNS.iter().filter(|c| **c != "wall_time_ms").map(|c| c.to_string()).collect::<Vec<_>>());
    assert!(out.join("manifest.json").exists());
    assert!(out.join("stability.json").exists());
}

#[test]
fn numeric_cells_are_finite_or_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &MINIMAL.replace("algorithm = \"ssgd\"", "algorithm = \"ud\"\nt = 3"));
    let out = dir.path().join("out");
    let o = bsl(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = untimed(&out.join("results.csv"));
    let err_col = rows[0].iter().position(|h| h == "error").unwrap();
    for row in &rows[1..] {
        let any_empty = row.iter().enumerate().any(|(i, c)| i != err_col && c.is_empty());
        if any_empty {
            assert!(!row[err_col].is_empty(), "{row:?}");
        }
        for (i, c) in row.iter().enumerate() {
            if i > 7 && i != err_col && !c.is_empty() {
                assert!(c.parse::<f64>().unwrap().is_finite());
            }
        }
    }
    // UD has no stability bound.
    assert!(rows[1][err_col].contains("beta_bound"));
}

#[test]
fn rerun_is_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("trials = 1", "trials = 3").replace("m1 = [20]", "m1 = [10, 20]");
    let cfg = write(dir.path(), "c.toml", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(bsl(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(bsl(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--workers", "1"]).status.success());
    assert_eq!(untimed(&a.join("results.csv")), untimed(&b.join("results.csv")));
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn seed_override_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MINIMAL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(bsl(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(bsl(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed-override", "2"])
        .status
        .success());
    assert_ne!(untimed(&a.join("results.csv")), untimed(&b.join("results.csv")));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MINIMAL);
    let out = dir.path().join("env-out");
    let o = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap()])
        .env("BSL_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("results.csv").exists());
}

#[test]
fn validate_accepts_a_valid_config_and_prints_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MINIMAL);
    let o = bsl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("eta_x"));
}

#[test]
fn validate_rejects_an_infeasible_window() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(
        "d2 = 2\n",
        "d2 = 2\np = { kind = \"spectrum\", lo = 0.001, hi = 2.0 }\n",
    );
    let cfg = write(dir.path(), "c.toml", &text);
    let o = bsl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("infeasible step-size window"), "{err}");
    assert!(err.contains("c.toml:"), "{err}");
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &MINIMAL.replace("seed = 1", ""));
    for cmd in ["validate", "run"] {
        let o = bsl(&[cmd, cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cmd}: {}", stderr(&o));
        assert!(stderr(&o).contains("seed"));
    }
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("k = 10", "k = 10\nbogus = 3");
    let cfg = write(dir.path(), "c.toml", &text);
    let o = bsl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.starts_with("bogus")).unwrap() + 1;
    let err = stderr(&o);
    assert!(err.contains(&format!("c.toml:{line}:")) || err.contains(&format!("c.toml:{}:", line - 1)), "{err}");

    let text = MINIMAL.replace("m1 = [20]", "m1 = []");
    let cfg = write(dir.path(), "d.toml", &text);
    let o = bsl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = text.lines().position(|l| l.starts_with("m1")).unwrap() + 1;
    assert!(stderr(&o).contains(&format!("d.toml:{line}:")), "{}", stderr(&o));
}

fn synthetic_results(dir: &Path, gap_above_bound: bool) {
    let mut text = String::from("grid_index,trial,algorithm,m1,m2,k,t,beta_l1,gap,gap_se,gen_bound_l1,gen_bound_l1_se,error\n");
    for (i, m1) in [50usize, 100, 200, 400, 800].iter().enumerate() {
        let beta = 3.0 / *m1 as f64;
        let bound = 2.0 * beta;
        let gap = if gap_above_bound && i == 2 { 10.0 * bound } else { 0.5 * bound };
        text.push_str(&format!("{i},0,ssgd,{m1},100,500,1,{beta:.16e},{gap:.16e},0,{bound:.16e},0,\n"));
    }
    std::fs::write(dir.join("results.csv"), text).unwrap();
}

#[test]
fn report_recovers_an_exact_slope() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_results(dir.path(), false);
    let o = bsl(&["report", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("slope of beta_l1 vs m1")).unwrap();
    let slope: f64 = line.split("): ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((slope + 1.0).abs() <= 0.01, "{line}");
    assert!(line.contains("PASS"));
    assert!(text.contains("gap-vs-bound check: PASS"), "{text}");
}

#[test]
fn report_flags_a_gap_above_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_results(dir.path(), true);
    let o = bsl(&["report", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("gap-vs-bound check: FAIL"));
}

#[test]
fn report_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_results(dir.path(), false);
    let o = bsl(&["report", dir.path().to_str().unwrap(), "--long"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(dir.path().join("long.csv")).unwrap();
    let n = r.records().filter(|rec| &rec.as_ref().unwrap()[6] == "beta_l1").count();
    assert_eq!(n, 5);
}

#[test]
fn report_fails_on_missing_empty_or_corrupt_results() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bsl(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));

    std::fs::write(dir.path().join("results.csv"), "").unwrap();
    assert_eq!(bsl(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));

    std::fs::write(
        dir.path().join("results.csv"),
        bsl::pipeline::COLUMNS.join(",") + "\n",
    )
    .unwrap();
    assert_eq!(bsl(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));

    std::fs::write(dir.path().join("results.csv"), "grid_index,m1,m2,k,t,beta_l1\nzero,1,1,1,1,x\n").unwrap();
    assert_eq!(bsl(&["report", dir.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = bsl(&["validate", p.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}: {}", p.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 1);
}
