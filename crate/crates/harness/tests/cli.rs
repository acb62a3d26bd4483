use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_twist");

fn twist(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str], stdin: &str) -> String {
    let out = twist(args, stdin);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    twist(args, "").status.code().unwrap()
}

fn synth(kind: &str, dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    ok(&["synth", "--scenario", kind, "--out", d, "--test", "6", "--dev", "4", "--train", "80"], "").trim().to_string()
}

fn path(p: &Path) -> String {
    p.to_str().unwrap().replace('\\', "/")
}

#[test]
fn decode_through_a_served_model_matches_the_local_one() {
    let dir = tempfile::tempdir().unwrap();
    synth("copy", dir.path());
    let corpus = path(&dir.path().join("train.txt"));
    let (f_dir, g_dir) = (path(&dir.path().join("f.model")), path(&dir.path().join("g.model")));
    ok(&["train", "--corpus", &corpus, "--out", &f_dir, "--copy-bonus", "2"], "");
    ok(&["train", "--corpus", &corpus, "--out", &g_dir, "--scheme", "bpe", "--merges", "30", "--order", "r2l"], "");

    let test = path(&dir.path().join("test.src"));
    let data = format!("[data.test]\nsource = \"{test}\"\nreferences = [\"{test}\"]\n");
    let local = dir.path().join("local.toml");
    fs::write(
        &local,
        format!(
            "methods = [\"twist-fg\"]\n[models.f]\nkind = \"saved\"\npath = \"{f_dir}\"\n\
             [models.g]\nkind = \"saved\"\npath = \"{g_dir}\"\n{data}"
        ),
    )
    .unwrap();
    let remote = dir.path().join("remote.toml");
    fs::write(
        &remote,
        format!(
            "methods = [\"twist-fg\"]\n[models.f]\nkind = \"saved\"\npath = \"{f_dir}\"\n\
             [models.g]\nkind = \"remote\"\ncommand = [\"{}\", \"serve\", \"--stdio\", \"--model\", \"{g_dir}\"]\n{data}",
            path(Path::new(BIN))
        ),
    )
    .unwrap();

    let input = fs::read_to_string(dir.path().join("test.src")).unwrap();
    for method in ["isolation-g", "rerank-fg", "twist-fg", "twist-gf"] {
        let a = ok(&["decode", "--config", local.to_str().unwrap(), "--method", method], &input);
        let b = ok(&["decode", "--config", remote.to_str().unwrap(), "--method", method], &input);
        assert_eq!(a, b, "{method}");
        assert_eq!(a.lines().count(), input.lines().count());
    }
}

#[test]
fn experiment_and_tune_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth("complementary", dir.path());
    let out = path(&dir.path().join("run"));
    let report = ok(&["experiment", "--config", &config, "--out", &out, "--workers", "2"], "");
    assert_eq!(report.lines().count(), 7);
    assert!(report.starts_with("method\tdataset"));
    let selected = ok(&["tune", "--config", &config, "--out", &out], "");
    assert_eq!(selected.lines().count(), 3);
    assert!(dir.path().join("run/grid.tsv").is_file());
    let bench = ok(&["bench", "--config", &config, "--out", &out], "");
    assert!(bench.lines().nth(1).unwrap().starts_with("isolation-f"));
}

#[test]
fn structured_lines_on_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth("complementary", dir.path());
    let plain = ok(&["decode", "--config", &config, "--method", "twist-fg"], "s0\ns1\n");
    let json =
        ok(&["decode", "--config", &config, "--method", "twist-fg"], "{\"source\":\"s0\"}\n{\"source\":\"s1\"}\n");
    assert_eq!(plain, json);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth("complementary", dir.path());
    assert_eq!(code(&["experiment", "--config", "/nonexistent/experiment.toml"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["decode", "--config", &config, "--method", "fusion"]), 1);
    assert_eq!(code(&["decode", "--config", &config, "--method", "beam"]), 1);
    assert_eq!(code(&["--help"]), 0);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "methods = []\n").unwrap();
    assert_eq!(code(&["experiment", "--config", bad.to_str().unwrap()]), 1);

    let broken = dir.path().join("broken.toml");
    let text = fs::read_to_string(&config).unwrap().replace("f.table.json", "missing.table.json");
    fs::write(&broken, text).unwrap();
    assert_ne!(code(&["experiment", "--config", broken.to_str().unwrap()]), 0);
}
