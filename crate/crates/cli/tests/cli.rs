use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Stdio};

fn demo(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

fn dabxml(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dabxml")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn broadcast_demo(out: &std::path::Path) {
    let scenario = demo("campus.scenario");
    let run = dabxml(&["broadcast", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stderr).trim(), "120 frames, 2 messages, 21000 bytes");
}

#[test]
fn broadcast_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.dabs"), dir.path().join("b.dabs"));
    broadcast_demo(&a);
    broadcast_demo(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn inspect_lists_objects() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("campus.dabs");
    broadcast_demo(&path);
    let run = dabxml(&["inspect", "--in", path.to_str().unwrap()]);
    assert!(run.status.success());
    let report = String::from_utf8(run.stdout).unwrap();
    let objects: Vec<&str> = report.lines().map(str::trim).filter(|l| l.starts_with("sub ") && l.contains("MOT object")).collect();
    assert_eq!(objects.len(), 2, "{report}");
    assert!(objects.iter().all(|l| l.contains("TEXT/XML")));
    assert!(objects[0].starts_with("sub 1:") && objects[0].contains("audioContent"));
    assert!(objects[1].starts_with("sub 2:") && objects[1].contains("dataContent"));
    assert_eq!(report.lines().last(), Some("120 frames, 2 MOT objects, 0 errors"));
}

#[test]
fn inspect_from_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dabxml"))
        .args(["inspect", "--in", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0 frames, 0 MOT objects, 0 errors");
}

#[test]
fn errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    std::fs::write(&bad, "ensemble Campus\nsubchannel 1 Radio\nmessage frame=0 subchannel=1 file=missing.xml\n").unwrap();
    let run = dabxml(&["broadcast", "--scenario", bad.to_str().unwrap(), "--out", "-"]);
    assert!(!run.status.success());
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("dabxml: "), "{stderr}");

    let run = dabxml(&["serve", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(String::from_utf8(run.stderr).unwrap().starts_with("dabxml: "));
}

#[test]
fn serve_answers_state_requests() {
    let dir = tempfile::tempdir().unwrap();
    let capture = dir.path().join("campus.dabs");
    broadcast_demo(&capture);
    let mut child = Command::new(env!("CARGO_BIN_EXE_dabxml"))
        .args(["serve", "--config", demo("server.toml").to_str().unwrap(), "--port", "0"])
        .arg("--input")
        .arg(format!("file:{}", capture.display()))
        .arg("--output-dir")
        .arg(dir.path())
        .env("RUST_LOG", "warn")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_owned();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /state HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("Campus DAB"), "{response}");
}
