mod common;

use bpmf::cli::{parse_config, CliError, ClampMode, TransportKind};
use bpmf::data::{write_matrix_market, RatingTriplet};
use bpmf::sampler::{Engine, SamplerConfig};
use common::synthetic;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bpmf");

fn bpmf(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_problem(dir: &Path, m: usize, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let p = synthetic(m, n, 3, 0.25, 0.1, seed);
    let (train, test) = (dir.join("train.mm"), dir.join("test.mm"));
    write_matrix_market(fs::File::create(&train).unwrap(), m, n, &p.train.triplets()).unwrap();
    write_matrix_market(fs::File::create(&test).unwrap(), m, n, &p.test).unwrap();
    (train, test)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn parses_flags_and_defaults() {
    let c = parse_config(["bpmf", "--train", "r.mm", "--k", "16", "--iters", "50", "--burnin", "10", "--seed", "1"]).unwrap();
    assert_eq!((c.k, c.iterations, c.burn_in, c.seed), (16, 50, 10, 1));
    assert_eq!(c.alpha, 2.0);
    assert_eq!((c.threshold, c.parallel_chunk, c.buffer_capacity), (1000, 256, 1024));
    assert_eq!((c.p, c.node_id, c.transport), (1, 0, TransportKind::Loopback));
    assert!(c.reorder);
    assert_eq!(c.clamp, ClampMode::Auto);
    assert!(c.threads >= 1);
    let d = parse_config(["bpmf", "--train", "r.mm"]).unwrap();
    assert_eq!((d.k, d.iterations, d.burn_in), (32, 100, 20));
}

#[test]
fn rejects_inconsistent_flags() {
    let usage = |args: &[&str]| match parse_config(args.iter().copied()) {
        Err(CliError::Usage(msg)) => msg,
        other => panic!("expected a usage error, got {other:?}"),
    };
    assert!(usage(&["bpmf", "--train", "r.mm", "--burnin", "60", "--iters", "50"]).contains("--burnin"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--p", "4", "--node-id", "4", "--hostfile", "h"]).contains("--node-id"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--frobnicate"]).contains("--frobnicate"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--k", "0"]).contains("--k"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--clamp", "5,1"]).contains("--clamp"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--test", "t.mm", "--holdout", "0.2"]).contains("--holdout"));
    assert!(usage(&["bpmf", "--train", "r.mm", "--transport", "tcp", "--p", "2"]).contains("--hostfile"));
}

#[test]
fn help_lists_every_flag() {
    let out = bpmf(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--train", "--test", "--holdout", "--k", "--iters", "--burnin", "--alpha", "--threads", "--threshold", "--seed", "--p",
        "--node-id", "--hostfile", "--buffer-capacity", "--reorder", "--clamp", "--metrics", "--model-dir",
    ] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn toy_run_writes_records_and_shaped_model() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("toy.mm");
    let t = [RatingTriplet::new(0, 0, 1.0), RatingTriplet::new(0, 1, 2.0), RatingTriplet::new(1, 1, 3.0)];
    write_matrix_market(fs::File::create(&train).unwrap(), 2, 2, &t).unwrap();
    let metrics = dir.path().join("m.txt");
    let json = dir.path().join("m.jsonl");
    let model = dir.path().join("model");
    let out = bpmf(&[
        "--train", s(&train), "--holdout", "0", "--k", "3", "--iters", "2", "--burnin", "0", "--threads", "1",
        "--metrics", s(&metrics), "--metrics-json", s(&json), "--model-dir", s(&model),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = fs::read_to_string(&metrics).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        let keys: Vec<&str> = l.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["iter", "rmse_sample", "rmse_avg", "updates_per_sec", "compute_s", "comm_s", "both_s"]);
        assert!(l.starts_with(&format!("iter={} ", i + 1)));
        assert!(l.contains("comm_s=0.000000 both_s=0.000000"));
    }
    let records: Vec<serde_json::Value> = fs::read_to_string(&json).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1]["iter"], 2);
    for (name, rows) in [("U.mm", 2), ("V.mm", 2)] {
        let text = fs::read_to_string(model.join(name)).unwrap();
        let mut it = text.lines().filter(|l| !l.starts_with('%'));
        assert_eq!(it.next().unwrap(), format!("{rows} 3"));
        let values: Vec<f64> = it.map(|l| l.parse().unwrap()).collect();
        assert_eq!(values.len(), rows * 3);
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(model.join("meta.json")).unwrap()).unwrap();
    assert_eq!((meta["k"].as_u64(), meta["seed"].as_u64(), meta["iterations"].as_u64()), (Some(3), Some(0), Some(2)));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = write_problem(dir.path(), 60, 40, 1);
    let run = |tag: &str, threads: &str| {
        let (m, model) = (dir.path().join(format!("{tag}.txt")), dir.path().join(tag));
        let out = bpmf(&[
            "--train", s(&train), "--test", s(&test), "--k", "4", "--iters", "5", "--burnin", "2", "--alpha", "25",
            "--threads", threads, "--reproducible", "--metrics", s(&m), "--model-dir", s(&model),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(m).unwrap(), fs::read(model.join("U.mm")).unwrap(), fs::read(model.join("V.mm")).unwrap())
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

fn rmse_avg(metrics: &str) -> Vec<String> {
    metrics.lines().map(|l| l.split(' ').find(|kv| kv.starts_with("rmse_avg=")).unwrap().to_string()).collect()
}

#[test]
fn node_count_does_not_change_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = write_problem(dir.path(), 60, 40, 2);
    let base = ["--train", s(&train), "--test", s(&test), "--k", "4", "--iters", "5", "--burnin", "2", "--alpha", "25", "--threads", "1"];
    let one = bpmf(&base);
    let two = bpmf(&[&base[..], &["--p", "2", "--transport", "loopback"]].concat());
    assert!(one.status.success() && two.status.success());
    let (a, b) = (String::from_utf8(one.stdout).unwrap(), String::from_utf8(two.stdout).unwrap());
    assert_eq!(rmse_avg(&a).len(), 5);
    assert_eq!(rmse_avg(&a), rmse_avg(&b));

    // Two processes over TCP.
    let ports: Vec<u16> = (0..2).map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()).collect();
    let hosts = dir.path().join("hosts");
    fs::write(&hosts, format!("127.0.0.1:{}\n127.0.0.1:{}\n", ports[0], ports[1])).unwrap();
    let node = |id: &str| {
        Command::new(BIN)
            .args(base)
            .args(["--p", "2", "--hostfile", s(&hosts), "--node-id", id, "--connect-timeout", "20"])
            .stdout(std::process::Stdio::piped())
            .spawn()
            .unwrap()
    };
    let (n1, n0) = (node("1"), node("0"));
    for child in [n0, n1] {
        let out = child.wait_with_output().unwrap();
        assert!(out.status.success());
        assert_eq!(rmse_avg(&String::from_utf8(out.stdout).unwrap()), rmse_avg(&a));
    }
}

#[test]
fn exit_codes_by_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bpmf(&["--train"]).status.code(), Some(1));
    assert_eq!(bpmf(&["--train", "missing.mm"]).status.code(), Some(2));
    let bad = dir.path().join("bad.mm");
    fs::write(&bad, "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 3\n").unwrap();
    let out = bpmf(&["--train", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let (train, _) = write_problem(dir.path(), 20, 20, 3);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let hosts = dir.path().join("hosts");
    fs::write(&hosts, format!("127.0.0.1:{port}\n127.0.0.1:1\n")).unwrap();
    let out = bpmf(&["--train", s(&train), "--k", "2", "--p", "2", "--hostfile", s(&hosts), "--node-id", "1", "--connect-timeout", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn timing_fields_are_bounded_by_wall_time() {
    let p = synthetic(80, 60, 3, 0.25, 0.1, 4);
    let cfg = SamplerConfig { iterations: 4, burn_in: 1, alpha: 25.0, ..SamplerConfig::new(4) };
    let mut e = Engine::new(cfg, &p.train, &p.test).unwrap();
    while !e.is_done() {
        let r = e.step().unwrap();
        assert_eq!((r.timing.comm_s, r.timing.both_s), (0.0, 0.0));
        assert!(r.timing.total() <= r.wall_s);
        assert!((r.updates_per_sec - 140.0 / r.wall_s).abs() <= 1e-6 * r.updates_per_sec);
    }
}
