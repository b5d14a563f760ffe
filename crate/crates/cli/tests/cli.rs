use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn polyglot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyglot")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identify_names_a_forged_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.gif");
    let o = polyglot(&["forge", "--covert", "rar", "--overt", "gif", "-o", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = polyglot(&["identify", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("GIF"), "{}", stdout(&o));
    let o = polyglot(&["identify", "--labels", path(&out)]);
    assert!(stdout(&o).contains("GIF") && stdout(&o).contains("RAR"), "{}", stdout(&o));
}

#[test]
fn usage_and_config_errors_exit_two() {
    assert_eq!(polyglot(&["frobnicate"]).status.code(), Some(2));
    let o = polyglot(&["--set", "nope=1", "scan", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_CONFIG"));
    let o = polyglot(&["identify", "/nonexistent/file"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_IO"));
}

#[test]
fn scan_and_sanitize() {
    let dir = tempfile::tempdir().unwrap();
    let poly = dir.path().join("p.png");
    let clean = dir.path().join("c.png");
    let o = polyglot(&["forge", "--covert", "zip", "--overt", "png", "-o", path(&poly)]);
    assert!(o.status.success());

    let o = polyglot(&["scan", path(&poly)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("SUSPECT"), "{}", stdout(&o));

    let o = polyglot(&["sanitize", path(&poly), "-o", path(&clean)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::metadata(&clean).unwrap().len() < fs::metadata(&poly).unwrap().len());
    assert_eq!(polyglot(&["scan", path(&clean)]).status.code(), Some(0));

    let text = dir.path().join("t.js");
    fs::write(&text, "console.log(1);\n").unwrap();
    let o = polyglot(&["sanitize", path(&text), "-o", path(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("E_NOT_SANITIZABLE"));
}

#[test]
fn dataset_build_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let small = ["--set", "dataset.monoglots_per_format=4", "--set", "dataset.polyglots_per_pair=2", "--set", "dataset.donors_per_format=4"];
    let mut args = small.to_vec();
    args.extend(["dataset", "build", "-o", path(&data)]);
    let o = polyglot(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.jsonl").exists());
    assert!(stdout(&o).contains("\"polyglots\":60"), "{}", stdout(&o));

    let o = polyglot(&["dataset", "verify", path(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
}
