use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn asls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asls"))
        .args(args)
        .env_remove("ASLS_OUT_DIR")
        .output()
        .expect("spawn asls")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run_ring3(out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["run", "--scenario", "ring3", "--steps", "25", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = asls(&args);
    assert!(o.status.success(), "run failed: {}", stderr(&o));
    let csv = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("trace   ").map(PathBuf::from))
        .expect("trace path printed");
    assert!(csv.exists());
    csv
}

#[test]
fn run_writes_trace_sidecar_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = asls(&["run", "--scenario", "ring3", "--seed", "7", "--steps", "20", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("final lambda"));
    assert!(text.contains("first mu < 1"));
    assert!(text.contains("max |x|"));
    for ext in ["csv", "json", "summary.json"] {
        assert!(dir.path().join(format!("ring3-dlar-s7.{ext}")).exists(), "missing {ext}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ring3-dlar-s7.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 20);
    assert_eq!(summary["final_lambda"].as_array().unwrap().len(), 3);
}

#[test]
fn output_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_asls"))
        .args(["run", "--scenario", "ring3", "--steps", "5"])
        .env("ASLS_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("ring3-dlar-s0.csv").exists());
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = run_ring3(a.path(), &["--seed", "3"]);
    let cb = run_ring3(b.path(), &["--seed", "3"]);
    // every column except the wall-clock synthesis time
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&ca), strip(&cb));
    assert_eq!(
        std::fs::read(ca.with_extension("json")).unwrap(),
        std::fs::read(cb.with_extension("json")).unwrap()
    );
}

#[test]
fn exact_knowledge_run_is_stable_from_the_start() {
    let dir = tempfile::tempdir().unwrap();
    let o = asls(&[
        "run",
        "--scenario",
        "ring3",
        "--true-alpha",
        "exact",
        "--steps",
        "15",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ring3-dlar-exact-s0.summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["first_stable_step"], 0);
    assert_eq!(summary["stays_stable"], true);
}

#[test]
fn check_passes_on_fresh_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = run_ring3(dir.path(), &[]);
    let o = asls(&["check", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("PASS plant-recursion")));
    assert!(text.lines().any(|l| l.starts_with("PASS ground-truth")));
}

#[test]
fn check_names_corrupted_step() {
    let dir = tempfile::tempdir().unwrap();
    let csv = run_ring3(dir.path(), &[]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // row for t = 10; the first state column follows the step column
    let mut cells: Vec<String> = lines[11].split(',').map(String::from).collect();
    assert_eq!(cells[0], "10");
    cells[1] = format!("{:?}", cells[1].parse::<f64>().unwrap() + 0.5);
    lines[11] = cells.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let o = asls(&["check", csv.to_str().unwrap()]);
    assert!(!o.status.success());
    let out = stdout(&o);
    let line = out
        .lines()
        .find(|l| l.contains("plant-recursion"))
        .expect("plant-recursion line");
    assert!(line.starts_with("FAIL"), "{line}");
    assert!(line.contains("step 10"), "{line}");
}

#[test]
fn check_rejects_missing_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = run_ring3(dir.path(), &[]);
    std::fs::remove_file(csv.with_extension("json")).unwrap();
    let o = asls(&["check", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_scenario_reports_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(data("scalar.json")).unwrap().replace("\"eta\"", "\"etta\"");
    std::fs::write(&path, text).unwrap();
    let o = asls(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("etta"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn invalid_json_syntax_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ \"model\": ").unwrap();
    let o = asls(&["synth", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_scalar_exact_is_deadbeat() {
    let o = asls(&["synth", "--scenario", &data("scalar.json"), "--at", "point"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("node 0")).unwrap().to_string();
    let lambda: f64 = line.split_whitespace().nth(5).unwrap().parse().unwrap();
    assert!(lambda.abs() < 1e-9, "{line}");
}

#[test]
fn synth_chain5_exact_margin_below_one() {
    let o = asls(&["synth", "--scenario", "chain5", "--at", "point"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let max: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max lambda "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(max < 1.0, "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("node ")).count(), 5);
}

#[test]
fn synth_reports_program_size() {
    let o = asls(&["synth", "--scenario", "ring3", "--algorithm", "central"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("vars") && text.contains("rows") && text.contains("phase"), "{text}");
}
