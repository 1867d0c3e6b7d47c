use std::process::{Command, Output};

fn cheatlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cheatlab")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn print_config_dumps_every_key_and_reloads() {
    let o = cheatlab(&["print-config"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("evo.population = 64"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, &text).unwrap();
    let again = cheatlab(&["print-config", "--config", path.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn unknown_key_is_a_usage_error_naming_it() {
    let o = cheatlab(&["print-config", "--set", "popsize=64"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("popsize"));
}

#[test]
fn file_errors_report_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "# comment\nseed = 3\nvae.lr = -1\n").unwrap();
    let o = cheatlab(&["print-config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("vae.lr") && err.contains("line 3"), "{err}");
}

#[test]
fn override_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "seed = 3\n").unwrap();
    let o = cheatlab(&["print-config", "--config", path.to_str().unwrap(), "--set", "seed=7"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("\nseed = 7\n"));
}

#[test]
fn bad_invocations_are_usage_errors() {
    assert_eq!(cheatlab(&["train-everything"]).status.code(), Some(1));
    assert_eq!(cheatlab(&[]).status.code(), Some(1));
    assert_eq!(cheatlab(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(cheatlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_before_training_names_the_controller() {
    let dir = tempfile::tempdir().unwrap();
    let out = format!("out_dir={}", dir.path().display());
    let o = cheatlab(&["eval", "--set", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("controller.lclb"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let o = cheatlab(&["print-config", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(3));
}
