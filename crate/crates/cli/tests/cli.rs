use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use qsign_core::backend::PipelineRequest;
use qsign_core::backend::DEFAULT_TIMEOUT;
use qsign_core::pipeline::{issue_badge, nonce_from_seed};
use qsign_core::store::SignatureStatus;
use qsign_core::{MessageRecord, QuantumBackend, Store};

fn qsign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsign"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn qsign")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn badge_is_identical_across_processes() {
    let a = qsign(&["badge", "alice", "hi", "--seed", "7"]);
    let b = qsign(&["badge", "alice", "hi", "--seed", "7"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);

    let out = stdout(&a);
    let (json, rendered) = out.trim_end().rsplit_once('\n').unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(
        rendered,
        format!("Q#{} | {}", v["q_num"], v["pk_hash"].as_str().unwrap())
    );
    assert_eq!(v["device"], "SV1-embedded");
    assert_eq!(v["nonce_hex"], hex::encode(nonce_from_seed(7)));
}

#[test]
fn badge_with_explicit_nonce_and_fallback() {
    let nonce = "00".repeat(32);
    let o = qsign(&[
        "badge",
        "alice",
        "hi",
        "--nonce",
        &nonce,
        "--timestamp",
        "1700000000000",
        "--backend",
        "always-fail",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let json = out.trim_end().rsplit_once('\n').unwrap().0;
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["device"], "local-fallback");
    assert_eq!(v["algorithm"], "ToyLWE-local-fallback");
    assert_eq!(v["q_num"], 343);
    assert_eq!(v["hist_a"], serde_json::Value::Null);
}

#[test]
fn stats_are_reproducible() {
    let args = [
        "stats",
        "--shots",
        "5000",
        "--seed",
        "3",
        "--qnum-runs",
        "50",
    ];
    let a = qsign(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, qsign(&args).stdout);
    assert!(stdout(&a).contains("chi-square"));

    let j = qsign(&[
        "stats",
        "--shots",
        "5000",
        "--seed",
        "3",
        "--qnum-runs",
        "50",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(v["rng_uniformity"]["dof"], 15);
    assert_eq!(v["bell"]["cross_mass"], 0.0);
}

fn record_file(dir: &Path, text: &str) -> PathBuf {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let req = PipelineRequest {
        username: "alice".into(),
        rng_seed: 9,
        nonce: nonce_from_seed(9),
        timestamp_ms: 1_700_000_000_000,
    };
    let issued = rt.block_on(issue_badge(
        &req,
        text,
        &QuantumBackend::LocalSimulator,
        DEFAULT_TIMEOUT,
    ));
    let store = Store::open(dir).unwrap();
    let rec = MessageRecord::generating("g1", "42", req.timestamp_ms, "Alice", "alice", text);
    store.put_phase1(rec).unwrap();
    let provenance = issued.provenance();
    store
        .complete_signature("g1", "42", issued.badge, provenance)
        .unwrap();
    assert_eq!(
        store.get("g1", "42").unwrap().signature_status,
        SignatureStatus::Completed
    );
    std::fs::read_dir(dir.join("messages").join("GROUP#g1"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
}

#[test]
fn verify_untampered_record_matches() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_file(dir.path(), "hello @qsign_bot");
    let o = qsign(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("match: 42\n"));
}

#[test]
fn verify_altered_text_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_file(dir.path(), "hello @qsign_bot");
    let mut rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    rec["text"] = "hello @qsign_bot!".into();
    std::fs::write(&path, serde_json::to_vec(&rec).unwrap()).unwrap();
    let o = qsign(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).ends_with("mismatch: 42\n"));
}

#[test]
fn exit_codes() {
    assert_eq!(qsign(&["badge"]).status.code(), Some(2));
    assert_eq!(qsign(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        qsign(&["verify", "/nonexistent/record.json"]).status.code(),
        Some(1)
    );
    assert_eq!(
        qsign(&["badge", "a", "b", "--nonce", "abcd"]).status.code(),
        Some(1)
    );
    assert_eq!(
        qsign(&["badge", "a", "b", "--backend", "remote"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn serve_answers_health() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_qsign"))
        .args([
            "serve",
            "--port",
            &port.to_string(),
            "--bot-handle",
            "qsign_bot",
        ])
        .arg("--data-dir")
        .arg(dir.path())
        .env("QSIGN_WEBHOOK_SECRET", "s")
        .env("QSIGN_ADMIN_PASSWORD", "p")
        .env("RUST_LOG", "off")
        .spawn()
        .unwrap();
    let mut body = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            use std::io::{Read, Write};
            s.write_all(b"GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
                .unwrap();
            s.read_to_string(&mut body).unwrap();
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains(r#""backend":"local_simulator""#), "{body}");
}
