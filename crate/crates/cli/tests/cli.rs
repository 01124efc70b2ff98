use std::path::Path;
use std::process::{Command, Output};

use vqforge::codec::container::save_quantized;
use vqforge::codec::{Codebook, PackedCodes, QuantizedTensor, Sharing, VQConfig};
use vqforge::sim::SimReport;

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .output()
        .expect("forge runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_preset_exits_2() {
    let o = forge(&[
        "bench", "--vq", "nope", "--op", "gemv", "--n", "64", "--m", "64",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(forge(&["run", "--variant", "o9"]).status.code(), Some(2));
    assert_eq!(forge(&["frobnicate"]).status.code(), Some(2));
    let o = forge(&[
        "run", "--vq", "cq2", "--op", "gemv", "--n", "64", "--m", "62",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_runs_only_requested_variants() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let json = dir.path().join("b.json");
    let o = forge(&[
        "bench",
        "--vq",
        "cq2",
        "--op",
        "attn-decode",
        "--heads",
        "2",
        "--seq",
        "64",
        "--variant",
        "o4",
        "--variant",
        "gc",
        "--csv",
        p(&csv),
        "--report",
        p(&json),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("O4,") && rows[1].starts_with("GC,"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_defaults_to_the_full_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("b.json");
    let o = forge(&[
        "bench",
        "--vq",
        "cq2",
        "--op",
        "attn",
        "--batch",
        "2",
        "--heads",
        "2",
        "--seq",
        "128",
        "--report",
        p(&json),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let labels: Vec<&str> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["report"]["variant"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["GC", "SC", "O1", "O2", "O3", "O4"]);
}

#[test]
fn run_report_matches_library() {
    use vqforge::dataflow::ComputeOp;
    use vqforge::pipeline::{run, RunSpec};
    use vqforge::sim::Variant;

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let o = forge(&[
        "run",
        "--vq",
        "cq2",
        "--op",
        "attn-decode",
        "--variant",
        "o3",
        "--heads",
        "2",
        "--seq",
        "64",
        "--model",
        "rtx4090",
        "--report",
        p(&out),
    ]);
    assert!(o.status.success());
    let cli = SimReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let spec = RunSpec::new("cq2", ComputeOp::attention(1, 2, 64, 128));
    let lib = run(&spec, Variant::O3).unwrap().report;
    assert_eq!(cli, lib);
}

#[test]
fn quantize_profile_and_verify_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let (t, q, r) = (
        dir.path().join("t.bin"),
        dir.path().join("t.vq"),
        dir.path().join("r.vq"),
    );
    assert!(
        forge(&["synth", "--shape", "64x32", "--seed", "3", "--out", p(&t)])
            .status
            .success()
    );
    let o = forge(&[
        "quantize",
        "--config",
        "gptvq2",
        "--in",
        p(&t),
        "--out",
        p(&q),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hot = dir.path().join("h.csv");
    let o = forge(&[
        "profile",
        "--in",
        p(&q),
        "--tiles",
        "32x16",
        "--hotness",
        p(&hot),
        "--reorder",
        p(&r),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("codebook 0"));
    // 2 x 2 tiles plus the header.
    assert_eq!(std::fs::read_to_string(&hot).unwrap().lines().count(), 5);
    for f in [&q, &r] {
        let o = forge(&["verify", "--in", p(f)]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
}

#[test]
fn corrupted_code_stream_fails_verification() {
    // Four-entry codebooks under 4-bit codes leave room for invalid codes.
    let config = VQConfig::new(2, 4, 1, Sharing::WholeTensor).unwrap();
    let cb = Codebook::new((0..8).map(|i| i as f32).collect(), 2, 0, 0).unwrap();
    let mut codes = PackedCodes::zeroed(4, 8);
    for i in 0..8 {
        codes.set(i, (i % 4) as u32).unwrap();
    }
    let q = QuantizedTensor::from_parts(codes, vec![4, 4], config, vec![cb]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.vq");
    save_quantized(&path, &q).unwrap();
    assert_eq!(forge(&["verify", "--in", p(&path)]).status.code(), Some(0));

    // The code stream closes the file: raise the last code to 15.
    let mut bytes = std::fs::read(&path).unwrap();
    *bytes.last_mut().unwrap() |= 0xF0;
    std::fs::write(&path, bytes).unwrap();
    let o = forge(&["verify", "--in", p(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("code out of range"), "{}", stdout(&o));
}

#[test]
fn verify_one_preset() {
    let o = forge(&["verify", "--vq", "gptvq2", "--op", "gemv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}

#[test]
fn plans_are_json() {
    for args in [
        &[
            "plan-cache",
            "--model",
            "rtx4090",
            "--vq",
            "cq2",
            "--kernel",
            "attn-decode",
        ][..],
        &[
            "plan-dataflow",
            "--vq",
            "cq2",
            "--op",
            "attn-decode",
            "--seq",
            "1024",
            "--batch",
            "8",
        ],
        &["plan-fusion", "--vq", "aqlm3", "--op", "gemm"],
    ] {
        let o = forge(args);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).expect("valid JSON");
    }
    let o = forge(&["plan-fusion", "--vq", "aqlm3", "--op", "gemm"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["n_shuffle"], 3);
    let schedule = &v[0]["tiles"][0]["plan"]["schedule"];
    assert_eq!(schedule["remap"].as_array().unwrap().len(), 32);
}

#[test]
fn model_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../models/a40.toml"
    ))
    .unwrap()
    .replace("name = \"a40\"", "name = \"lab\"");
    std::fs::write(dir.path().join("lab.toml"), text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["plan-cache", "--model", "lab", "--vq", "cq2"])
        .env("FORGE_MODEL_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\"model\": \"lab\""));
}
