use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swarm-odom"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SHORT_ROOM: &str = "seed = 3\nduration = 5.0\ndrone_count = 2\n\n[world]\npreset = \"room\"\n\n[output]\ncapture_msgs = true\n";

#[test]
fn run_report_and_dump_messages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_ROOM);
    let out = dir.path().join("run");
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(&out).args(["--seed", "9", "--mode", "solo"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("seed 9"));
    for f in ["run.csv", "summary.json", "messages.jsonl"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "solo");
    assert_eq!(summary["drones"].as_array().unwrap().len(), 2);

    let o = bin().arg("report").arg(&out).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("drone 1: rmse"));

    let o = bin().arg("dump-msgs").arg(out.join("messages.jsonl")).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.trim_end().ends_with("records round-trip"));
    assert!(!text.starts_with('0'));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT_ROOM);
    let csv = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = bin().arg("run").arg(&cfg).arg("--out").arg(&out).args(["--threads", threads]).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("run.csv")).unwrap()
    };
    let a = csv("a", "0");
    assert_eq!(a, csv("b", "0"));
    assert_eq!(a, csv("c", "2"));
}

#[test]
fn corrupted_capture_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    std::fs::write(
        &p,
        "{\"send_time\":0.1,\"arrival\":0.12,\"receiver\":2,\"sender\":1,\"seq\":0,\"kind\":\"obs\",\"hex\":\"00ff\"}\n",
    )
    .unwrap();
    let o = bin().arg("dump-msgs").arg(&p).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.jsonl:1"), "{}", stderr(&o));
}

#[test]
fn fuzz_wire_survives() {
    let o = bin().args(["fuzz-wire", "--iterations", "20000", "--seed", "5"]).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("20000 inputs"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nduration = 5.0\n\n[channel]\ndrop_prob = 1.5\n");
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("x")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("channel: drop_prob"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "seed = 1\nduration = 5.0\nbogus = 3\n");
    let o = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let o = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read"));
}
