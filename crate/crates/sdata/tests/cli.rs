use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(name: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("corpus");
    p.push(name);
    p.display().to_string()
}

fn sdata(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdata")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    sdata(args).status.code().expect("exit code")
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["check", &corpus("downsampler.sdf")]), 0);
    assert_eq!(code(&["check", &corpus("reject/polarity.sdf")]), 1);
    assert_eq!(code(&["check", &corpus("reject/syntax.sdf")]), 1);
    assert_eq!(code(&["schedule", &corpus("pipeline2.sdf")]), 0);
    assert_eq!(code(&["schedule", &corpus("reject/undelayed_cycle.sdf")]), 2);
    assert_eq!(code(&["run", &corpus("reject/undelayed_cycle.sdf")]), 3);
    assert_eq!(code(&["conform", &corpus("pipeline2.sdf")]), 0);
    assert_eq!(code(&["conform", &corpus("pipeline2.sdf"), "--drop", "2"]), 4);
    assert_eq!(code(&["run", "--bogus"]), 64);
    assert_eq!(code(&["run", &corpus("downsampler.sdf"), "--firings", "0"]), 64);
    assert_eq!(code(&["run", &corpus("downsampler.sdf"), "--size", "nope=3"]), 64);
    assert_eq!(code(&["check", &corpus("no_such_file.sdf")]), 64);
}

#[test]
fn downsampler_trace_counts() {
    let out = sdata(&["run", &corpus("downsampler.sdf"), "--size", "s=8", "--scheduler", "roundRobin", "--format", "json"]);
    assert!(out.status.success());
    let trace: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    let count = |k: &str| trace.iter().filter(|t| t["label"]["kind"] == k).count();
    assert_eq!(count("recv"), 8);
    assert_eq!(count("send"), 4);
    for (i, t) in trace.iter().enumerate() {
        assert_eq!(t["step"], i);
        assert!(t["bufferSizes"].is_object());
    }
}

#[test]
fn random_runs_are_reproducible() {
    let args = ["run", &corpus("scatter_gather.sdf"), "--scheduler", "random", "--seed", "17", "--format", "json"];
    let a = sdata(&args);
    let b = sdata(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn check_json_names_the_rule() {
    let out = sdata(&["check", &corpus("reject/two_writers.sdf"), "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["ok"], false);
    assert_eq!(v["diagnostics"][0]["rule"], "FS Det Par");
}

#[test]
fn repeated_firings_scale_the_trace() {
    let run = |f: &str| {
        let out = sdata(&["run", &corpus("pipeline2.sdf"), "--size", "n=3", "--firings", f, "--format", "json"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let t: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
        t.iter().filter(|s| s["label"]["kind"] != "tau").count()
    };
    assert_eq!(run("3"), 3 * run("1"));
}
