//! End-to-end runs of the `nnaccel` binary: outputs, files and exit codes.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use nnaccel_cli::{start_node_sim, NodeSimArgs};
use tempfile::TempDir;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn nnaccel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnaccel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn translate(out: &Path, model: &str, extra: &[&str]) -> Output {
    let model = fixture(&format!("models/{model}.json"));
    let mut args = vec!["translate", "--model", s(&model), "--fixed", "16.8", "--out", s(out)];
    args.extend_from_slice(extra);
    nnaccel(&args)
}

fn sim_args(tamper: bool) -> NodeSimArgs {
    NodeSimArgs {
        bind: "127.0.0.1".into(),
        port: 0,
        power_profile: fixture("profiles/measured.json"),
        noise_mw: 0.0,
        seed: 0,
        configure_us: 1000,
        wall_clock: false,
        tamper,
    }
}

struct NodeProcess(Child);

impl Drop for NodeProcess {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_node_sim() -> (NodeProcess, String) {
    let profile = fixture("profiles/measured.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_nnaccel"))
        .args(["node-sim", "--port", "0", "--power-profile", s(&profile)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    (NodeProcess(child), addr)
}

#[test]
fn translate_writes_six_files_for_a_linear_model() {
    let tmp = TempDir::new().unwrap();
    let o = translate(tmp.path(), "tiny_linear", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut files: Vec<String> = fs::read_dir(tmp.path().join("tiny_linear"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        ["linear0.vhd", "manifest.json", "rom_linear0.vhd", "synth.tcl", "tb_top.vhd", "top.vhd"]
    );
    assert!(tmp.path().join("tiny_linear.quantization.json").is_file());
}

#[test]
fn retranslating_replaces_stale_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("tiny_linear");
    assert_eq!(code(&translate(tmp.path(), "tiny_linear", &[])), 0);
    fs::write(dir.join("linear7.vhd"), "stale").unwrap();
    let before = fs::read(dir.join("top.vhd")).unwrap();
    assert_eq!(code(&translate(tmp.path(), "tiny_linear", &[])), 0);
    assert!(!dir.join("linear7.vhd").exists());
    assert_eq!(fs::read(dir.join("top.vhd")).unwrap(), before);
}

#[test]
fn malformed_model_exits_2() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"name\": \"x\", \"layers\": [").unwrap();
    let o = nnaccel(&["translate", "--model", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("MalformedDocument"), "{}", stderr(&o));
}

#[test]
fn bad_format_and_parallelism_are_rejected() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&translate(tmp.path(), "mlp", &["--p", "0"])), 2);
    let model = fixture("models/mlp.json");
    let o = nnaccel(&["translate", "--model", s(&model), "--fixed", "8.9", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn overflowing_device_exits_3_unless_forced() {
    let tmp = TempDir::new().unwrap();
    let devices = fixture("devices.json");
    let args = ["--devices", s(&devices), "--device", "tiny"];
    let o = translate(tmp.path(), "mlp", &args);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("ResourceOverflow"));
    assert!(!tmp.path().join("mlp").exists());

    let mut forced = args.to_vec();
    forced.push("--force");
    let o = translate(tmp.path(), "mlp", &forced);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));
    assert!(tmp.path().join("mlp/manifest.json").is_file());
}

#[test]
fn mse_threshold_fails_translate() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t.json");
    fs::write(&t, r#"{"max_quant_mse": 0.0}"#).unwrap();
    let o = translate(tmp.path(), "mlp", &["--thresholds", s(&t)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("ThresholdExceeded"));
}

#[test]
fn estimate_without_manifest_exits_2() {
    let tmp = TempDir::new().unwrap();
    let profile = fixture("profiles/estimated.json");
    let o = nnaccel(&["estimate", "--build", s(tmp.path()), "--power-profile", s(&profile)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("MissingManifest"));
}

#[test]
fn estimate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&translate(tmp.path(), "lstm_3x134", &["--p", "6"])), 0);
    let build = tmp.path().join("lstm_3x134");
    let profile = fixture("profiles/estimated.json");
    let run = || nnaccel(&["estimate", "--build", s(&build), "--power-profile", s(&profile)]);
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let on_disk = fs::read(build.join("report_estimated.json")).unwrap();
    assert_eq!(on_disk, a.stdout);
    let v: serde_json::Value = serde_json::from_slice(&on_disk).unwrap();
    assert_eq!(v["time_per_inference_us"], 53.32);
    assert_eq!(v["ops"], 18811);
}

#[test]
fn measure_without_node_exits_4() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&translate(tmp.path(), "tiny_linear", &[])), 0);
    // Bind and drop to find a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let build = tmp.path().join("tiny_linear");
    let o = nnaccel(&["measure", "--addr", &addr, "--build", s(&build), "--runs", "3"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("ConnectionFailed"));
}

#[test]
fn tampered_node_output_exits_5() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&translate(tmp.path(), "tiny_linear", &[])), 0);
    let server = start_node_sim(&sim_args(true)).unwrap();
    let addr = server.local_addr().to_string();
    let build = tmp.path().join("tiny_linear");
    let o = nnaccel(&["measure", "--addr", &addr, "--build", s(&build), "--runs", "5"]);
    server.shutdown();
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("OutputMismatch"));
    assert!(!build.join("report_measured.json").exists());
}

fn write_report(dir: &Path, name: &str, power: f64, time: f64, ops: u64) -> PathBuf {
    let energy = power * time / 1000.0;
    let report = serde_json::json!({
        "source": if name.starts_with("est") { "estimated" } else { "measured" },
        "power_mw": power,
        "time_per_inference_us": time,
        "ops": ops,
        "energy_uj": energy,
        "gop_per_j": ops as f64 / energy / 1000.0,
    });
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    path
}

#[test]
fn compare_verdicts_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let est = write_report(tmp.path(), "est", 70.0, 53.32, 18811);
    let same = write_report(tmp.path(), "meas", 70.0, 53.32, 18811);
    let o = nnaccel(&["compare", s(&est), s(&same)]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("Verdict: PASS"), "{table}");
    assert!(table.contains("From Estimation") && table.contains("From Node"));

    let t = tmp.path().join("t.json");
    fs::write(&t, r#"{"max_time_us": 50}"#).unwrap();
    let o = nnaccel(&["compare", s(&est), s(&same), "--thresholds", s(&t)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Verdict: FAIL"));

    let other = write_report(tmp.path(), "meas_ops", 71.0, 57.25, 21663);
    let o = nnaccel(&["compare", s(&est), s(&other)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("OpsMismatch"));
    let o = nnaccel(&["compare", s(&est), s(&other), "--allow-ops-mismatch"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("+1.43%") && table.contains("+7.37%"), "{table}");

    fs::write(&t, r#"{"max_time": 50}"#).unwrap();
    assert_eq!(code(&nnaccel(&["compare", s(&est), s(&same), "--thresholds", s(&t)])), 2);
}

#[test]
fn full_workflow_against_node_sim_process() {
    let tmp = TempDir::new().unwrap();
    let o = translate(tmp.path(), "lstm_8x27", &["--p", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let build = tmp.path().join("lstm_8x27");
    let profile = fixture("profiles/measured.json");
    let o = nnaccel(&["estimate", "--build", s(&build), "--power-profile", s(&profile)]);
    assert_eq!(code(&o), 0);

    let (_node, addr) = spawn_node_sim();
    let o = nnaccel(&["measure", "--addr", &addr, "--build", s(&build), "--runs", "100"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["power_mw"], 71.0);
    assert_eq!(m["time_per_inference_us"], 57.25);
    assert_eq!(m["channels"].as_array().unwrap().len(), 8);

    let o = nnaccel(&[
        "compare",
        s(&build.join("report_estimated.json")),
        s(&build.join("report_measured.json")),
    ]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("Verdict: PASS"), "{table}");
}
