use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ast-hslw"));
    c.env_remove(ast_hslw::cli::OUT_ENV);
    c
}

#[test]
fn usage_error_exits_2() {
    let o = bin().arg("masks").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_error_is_json_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let prompt = tmp.path().join("p.prompt");
    std::fs::write(&prompt, "d_c = 6\nsub = \"a\" 0 3\nsub = \"b\" 2 5\n").unwrap();
    let sketch = tmp.path().join("s.txt");
    std::fs::write(&sketch, "1 0\n0 0\n").unwrap();
    let o = bin()
        .args(["masks", "--prompt"])
        .arg(&prompt)
        .arg("--sketch")
        .arg(&sketch)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "OverlapError");
    assert_eq!(v["module"], "prompt_model");
}

#[test]
fn bad_sketch_ids_report_sketch_error() {
    let tmp = tempfile::tempdir().unwrap();
    let prompt = tmp.path().join("p.prompt");
    std::fs::write(&prompt, "d_c = 3\nsub = \"a dog\" 0 3\n").unwrap();
    let sketch = tmp.path().join("s.txt");
    std::fs::write(&sketch, "2 0\n0 0\n").unwrap();
    let o = bin()
        .args(["masks", "--latent", "2x2", "--prompt"])
        .arg(&prompt)
        .arg("--sketch")
        .arg(&sketch)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "NonContiguousIds");
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env_out");
    let o = bin().arg("curve").env(ast_hslw::cli::OUT_ENV, &out).output().unwrap();
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.as_bytes(), &o.stdout[..]);
    let row = csv.lines().nth(21).unwrap();
    let (a, v) = row.split_once(',').unwrap();
    assert_eq!(a, "0.2");
    assert!((v.parse::<f64>().unwrap() - 0.2 * 3.2f64.exp()).abs() < 1e-12);
}

#[test]
fn help_documents_precedence() {
    let o = bin().arg("--help").output().unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("override"));
}
