use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cecsub(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cecsub"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[test]
fn nominal_trajectory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = cecsub(dir.path(), &["solve-nominal", "--x", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("nominal_x1.csv"));
    assert_eq!(header, "stage,x,u");
    assert_eq!(rows.len(), 11);
    assert_eq!(rows.iter().filter(|r| !r[2].is_empty()).count(), 10);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("nominal_x1.json")).unwrap()).unwrap();
    assert_eq!(json["converged"], true);
}

#[test]
fn unpenalized_origin_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[benchmark]\nrho = 0.0\n");
    let out = cecsub(dir.path(), &["solve-nominal", "--config", &cfg, "--x", "0"]);
    assert!(out.status.success());
    let (_, rows) = csv_rows(&dir.path().join("nominal_x0.csv"));
    for r in rows {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
        assert!(r[2].is_empty() || r[2].parse::<f64>().unwrap() == 0.0);
    }
}

#[test]
fn bad_config_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "benchmark.r = 0.0\n");
    let target = dir.path().join("never");
    let out = cecsub(&target, &["solve-nominal", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r must be positive"));
    assert!(!target.exists());

    let out = cecsub(dir.path(), &["scaling-study", "--sigma", ""]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = config(dir.path(), "solver.grad_toll = 1e-9\n");
    assert_eq!(cecsub(dir.path(), &["solve-tree", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn tree_layout_and_zero_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let out = cecsub(dir.path(), &["solve-tree", "--x", "1", "--sigma", "0.2,0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&dir.path().join("tree_x1_sigma0.2.csv"));
    assert_eq!(header, "stage,node,x,u,probability");
    assert_eq!(rows.len(), 2047);
    let (_, flat) = csv_rows(&dir.path().join("tree_x1_sigma0.csv"));
    for k in 0..=10 {
        let stage: Vec<&Vec<String>> = flat.iter().filter(|r| r[0] == k.to_string()).collect();
        assert_eq!(stage.len(), 1 << k);
        assert!(stage.iter().all(|r| r[2] == stage[0][2] && r[3] == stage[0][3]));
    }
}

#[test]
fn node_budget_is_a_clean_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "tree.node_budget = 100\n");
    let out = cecsub(dir.path(), &["solve-tree", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("node budget"));
}

#[test]
fn cec_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = cecsub(dir.path(), &["evaluate-cec", "--x", "0.5", "--sigma", "0.1"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&dir.path().join("cec_x0.5_sigma0.1.csv"));
    assert_eq!(header, "stage,node,x,u,cost,probability");
    assert_eq!(rows.len(), 2047);
}

#[test]
fn single_point_study_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, workers: &str| {
        let out = cecsub(dir, &["scaling-study", "--x", "1", "--sigma", "0.03,0.05", "--workers", workers, "--seedless"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.join("scaling_records.csv")).unwrap()
    };
    let one = run(a.path(), "1");
    assert_eq!(one, run(b.path(), "3"));
    let (header, rows) = csv_rows(&a.path().join("scaling_records.csv"));
    assert_eq!(header, "x,sigma,v_star,v_cec,delta_v,u_star_root,u_cec_root,control_gap");
    assert_eq!(rows.len(), 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("study_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"], 2);
    assert_eq!(summary["nonnegativity"]["passed"], true);
    // two levels: too few for a fit, reported rather than fatal
    assert!(summary["fits"][0]["delta_v"]["slope"].is_null());
}

#[test]
fn dp_tables_at_zero_sigma_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[grid]\npoints = 201\n");
    let out = cecsub(dir.path(), &["dp-tables", "--config", &cfg, "--sigma", "0", "--plot"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let star = fs::read_to_string(dir.path().join("dp_optimal_sigma0.csv")).unwrap();
    let cec = fs::read_to_string(dir.path().join("dp_cec_sigma0.csv")).unwrap();
    assert!(star.starts_with("x,V,π,stage,σ,kind\n"));
    let values = |t: &str| t.lines().skip(1).map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect::<Vec<_>>();
    assert_eq!(values(&star), values(&cec));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dp_summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["tables_identical"], true);
    assert!(fs::read_to_string(dir.path().join("dp_sigma0.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn two_point_grid_skips_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[grid]\npoints = 2\n");
    let out = cecsub(dir.path(), &["dp-tables", "--config", &cfg, "--sigma", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dp_summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["refinement"]["status"], "skipped");
}

#[test]
fn verify_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = cecsub(dir.path(), &["verify", "--criteria", "3,5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("criterion 3 [PASS]") && stdout.contains("criterion 5 [PASS]"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], 2);
    assert_eq!(cecsub(dir.path(), &["verify", "--criteria", "10"]).status.code(), Some(1));
}
