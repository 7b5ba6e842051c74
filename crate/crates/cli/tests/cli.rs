use std::path::Path;
use std::process::{Command, Output};

fn wlmargin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wlmargin")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn mutag_dir() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn separator_pair_check_reports_distances() {
    let o = wlmargin(&["check", "--construction", "separator-pair", "--n", "16"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("normalized WL distance: 0\n"), "{s}");
    assert!(s.contains("normalized WL_F distance: 1.4142135623730951\n"), "{s}");
    assert!(s.contains("pattern condition: true"), "{s}");
}

#[test]
fn triangle_does_not_separate_long_cycles() {
    // C8 plus C8 against 2 C8 is invisible to triangles
    let o = wlmargin(&["check", "--construction", "separator-pair", "--n", "16", "--patterns", "c3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("normalized WL_F distance: 0\n"));
}

#[test]
fn circulant_check_has_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("check.json");
    let o = wlmargin(&["check", "--construction", "circulant8", "--n", "8", "--out", arg(&out)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["data"]["wloa"]["preserved"], false);
    assert!(v["data"]["wloa"]["witness"].is_object());
}

#[test]
fn identical_graph_kernel_is_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pair.json");
    assert!(wlmargin(&["generate", "--construction", "separator-pair", "--n", "6", "--out", arg(&data)])
        .status
        .success());
    let o = wlmargin(&["kernel", "--input", arg(&data), "--t", "2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "1,1\n1,1\n");
    let o = wlmargin(&["kernel", "--input", arg(&data), "--t", "2", "--patterns", "c3"]);
    assert_eq!(stdout(&o), "1,0\n0,1\n");
}

#[test]
fn pattern_file_matches_named_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("tri.txt");
    std::fs::write(&f, "# triangle\n0 1\n1, 2\n0 2\n").unwrap();
    let named = wlmargin(&["kernel", "--construction", "separator-pair", "--n", "6", "--patterns", "c3"]);
    let file = wlmargin(&["kernel", "--construction", "separator-pair", "--n", "6", "--patterns", arg(&f)]);
    assert!(file.status.success());
    assert_eq!(stdout(&named), stdout(&file));
}

#[test]
fn bad_input_exits_with_two() {
    let o = wlmargin(&["kernel", "--construction", "separator-pair", "--patterns", "zz"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wlmargin(&["kernel", "--construction", "separator-pair", "--er-p", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wlmargin(&["check", "--construction", "shrink-pair", "--n", "6"]);
    assert_eq!(o.status.code(), Some(2));
    let o = wlmargin(&["margin", "--tudataset", "/nonexistent", "--name", "X"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("cv{i}.csv"));
            let o = wlmargin(&[
                "cv", "--er-p", "0.15", "--n", "12", "--count", "40", "--seed", "5", "--folds", "4",
                "--repetitions", "2", "--t-grid", "1,2", "--out", arg(&out),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert!(text.starts_with("# schema_version=1 kind=cv-report"));
    assert_eq!(text.lines().count(), 2 + 8);
}

#[test]
fn separability_set_cv_with_patterns() {
    let o = wlmargin(&[
        "cv", "--construction", "separability", "--n", "16", "--count", "40", "--patterns", "c12", "--folds", "4",
        "--repetitions", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("test 100.0 ± 0.0"), "{s}");
}

#[test]
fn tudataset_round_trip_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ER");
    assert!(wlmargin(&["generate", "--er-p", "0.2", "--n", "10", "--count", "15", "--format", "tudataset", "--out", arg(&out)])
        .status
        .success());
    let a = wlmargin(&["kernel", "--tudataset", arg(&out), "--name", "ER", "--t", "2"]);
    let b = wlmargin(&["kernel", "--er-p", "0.2", "--n", "10", "--count", "15", "--t", "2"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn mutag_margin_runs() {
    let o = wlmargin(&["margin", "--tudataset", mutag_dir(), "--name", "MUTAG", "--t", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("class 1 vs rest:"));
}

#[test]
fn flow_is_deterministic_and_aligns() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<_> = (0..2).map(|i| dir.path().join(format!("flow{i}.csv"))).collect();
    for f in &files {
        let o = wlmargin(&["flow", "--toy", "separable", "--steps", "20000", "--seed", "1", "--out", arg(f)]);
        assert!(o.status.success());
        let s = stdout(&o);
        let line = s.lines().find(|l| l.starts_with("final alignment")).unwrap();
        let a: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(a > 0.99, "{s}");
    }
    assert_eq!(std::fs::read(&files[0]).unwrap(), std::fs::read(&files[1]).unwrap());
}
