use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use fieldsync::imaging::{save_pnm, synth, to_monochrome};
use fieldsync::netsim::canonical_scenario;
use fieldsync::{CoreStub, Image, Queue, Status, Strategy};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fieldsync"));
    c.env_remove("FIELDSYNC_DATA_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.samples());
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn process_full_size_capture() {
    let dir = tempfile::tempdir().unwrap();
    let img = synth::document(7, synth::CAPTURE_WIDTH, synth::CAPTURE_HEIGHT);
    let input = ppm(&img);
    std::fs::write(dir.path().join("in.ppm"), &input).unwrap();
    let o = run(&[
        "process",
        &p(dir.path(), "in.ppm"),
        &p(dir.path(), "out.fsq1"),
        "--report",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = std::fs::read(dir.path().join("out.fsq1")).unwrap();
    assert!(out.len() * 3 < input.len(), "{} vs {}", out.len(), input.len());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("psnr") && text.contains("container"), "{text}");
}

#[test]
fn lossless_round_trip_through_decode() {
    let dir = tempfile::tempdir().unwrap();
    let img = synth::document(3, 160, 120);
    std::fs::write(dir.path().join("in.ppm"), ppm(&img)).unwrap();
    let o = run(&[
        "process",
        &p(dir.path(), "in.ppm"),
        &p(dir.path(), "x.fsq1"),
        "--quality",
        "1.0",
        "--alpha",
        "0",
    ]);
    assert_eq!(code(&o), 0);
    let o = run(&["decode", &p(dir.path(), "x.fsq1"), &p(dir.path(), "x.pgm")]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(dir.path().join("x.pgm")).unwrap(),
        save_pnm(&to_monochrome(&img))
    );
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("in.ppm"), ppm(&synth::document(1, 16, 16))).unwrap();
    let out = p(dir.path(), "o.fsq1");
    let input = p(dir.path(), "in.ppm");
    assert_eq!(code(&run(&["process", &input, &out, "--quality", "1.5"])), 1);
    assert_eq!(code(&run(&["process", &input, &out, "--edge-k", "-1"])), 1);
    assert_eq!(code(&run(&["process", &input, &out, "--bogus"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    std::fs::write(dir.path().join("bad.ppm"), b"P6\n2 2\n255\n\x00").unwrap();
    let o = run(&["process", &p(dir.path(), "bad.ppm"), &out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
    assert_eq!(code(&run(&["decode", &input, &out])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(data: &Path) -> Server {
    let mut child = bin()
        .args(["serve", "--listen", "127.0.0.1:0", "--core-interval-ms", "20"])
        .env("FIELDSYNC_DATA_DIR", data)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect(&line).to_owned();
    Server { child, addr }
}

fn client(data: &Path, args: &[&str]) -> Output {
    bin().args(args).env("FIELDSYNC_DATA_DIR", data).output().unwrap()
}

const APP: &str = "1b4e28ba-2fa1-41d2-883f-0016d3cca427";

fn enqueue_with_doc(data: &Path) {
    let img = synth::document(11, 200, 150);
    std::fs::write(data.join("id.ppm"), ppm(&img)).unwrap();
    let fsq = p(data, "id.fsq1");
    assert_eq!(code(&run(&["process", &p(data, "id.ppm"), &fsq])), 0);
    let o = client(
        data,
        &[
            "enqueue",
            "--customer",
            "Meena",
            "--region",
            "R1",
            "--amount",
            "40000",
            "--app-id",
            APP,
            "--doc",
            &format!("identity-proof={fsq}"),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), APP);
}

#[test]
fn enqueue_sync_status_against_running_server() {
    let client_dir = tempfile::tempdir().unwrap();
    let server_dir = tempfile::tempdir().unwrap();
    enqueue_with_doc(client_dir.path());
    let server = start_server(server_dir.path());

    let o = client(client_dir.path(), &["sync", "--server", &server.addr]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("sent 2 acked 2 retried 0"), "{text}");
    assert!(text.contains("pending 0"), "{text}");

    let expected = CoreStub::decision_for(APP);
    let mut last = String::new();
    for _ in 0..100 {
        let o = client(client_dir.path(), &["status", "--server", &server.addr]);
        assert_eq!(code(&o), 0);
        last = String::from_utf8(o.stdout).unwrap();
        if last.contains(&expected.to_string()) {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(30));
    }
    assert_eq!(last.trim(), format!("{APP}\t{expected}"));
    assert!(matches!(expected, Status::Approved | Status::Rejected));

    let o = client(
        client_dir.path(),
        &[
            "status",
            "--server",
            &server.addr,
            "00000000-0000-4000-8000-000000000000",
        ],
    );
    assert!(String::from_utf8(o.stdout).unwrap().contains("unknown"));
}

#[test]
fn sync_with_server_down_exits_two_and_keeps_items() {
    let dir = tempfile::tempdir().unwrap();
    enqueue_with_doc(dir.path());
    // Bind and drop a listener to get a port nobody is serving.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let o = client(
        dir.path(),
        &["sync", "--server", &format!("127.0.0.1:{port}"), "--timeout-ms", "300"],
    );
    assert_eq!(code(&o), 2);
    let q = Queue::open(dir.path().join("queue")).unwrap();
    assert_eq!(q.pending_count(), 2);
    assert!(q.items().iter().all(|i| i.attempts == 0));
}

fn shipped_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/canonical.json")
}

#[test]
fn shipped_scenario_is_the_canonical_one() {
    let text = std::fs::read_to_string(shipped_scenario()).unwrap();
    assert_eq!(text, canonical_scenario(Strategy::PerRegionBest).to_json_pretty());
}

#[test]
fn simulate_is_reproducible_and_reports_full_delivery() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = shipped_scenario();
    let scenario = scenario.to_str().unwrap();
    for name in ["a.json", "b.json"] {
        let o = run(&["simulate", "--scenario", scenario, "--out", &p(dir.path(), name)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let table = String::from_utf8(o.stdout).unwrap();
        assert!(table.contains("per-region-best"), "{table}");
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["strategy"], "per-region-best");
    assert_eq!(report["delivery_fraction"], 1.0);
    assert_eq!(report["core_frames_from_clients"], 0);
}

#[test]
fn simulate_rejects_incomplete_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = canonical_scenario(Strategy::PerRegionBest);
    sc.profiles.pop();
    std::fs::write(dir.path().join("s.json"), sc.to_json_pretty()).unwrap();
    let o = run(&["simulate", "--scenario", &p(dir.path(), "s.json")]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("R3") && err.contains("P2"), "{err}");

    std::fs::write(dir.path().join("t.json"), b"{\"seed\": \"x\"}").unwrap();
    let o = run(&["simulate", "--scenario", &p(dir.path(), "t.json")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8(o.stderr).unwrap().contains("seed"));
}
