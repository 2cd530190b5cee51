use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use airtime::Scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_airtime"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

const SMALL: &str = "[sim]\nscheduler = tbr\nduration_us = 3000000\nseed = 4\n\n[node a]\nrate_mbps = 1\n\n[node b]\nrate_mbps = 11\ndirection = uplink\n";

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.ini");
    fs::write(&file, SMALL).unwrap();
    let out = dir.path().join("out");
    let (code, stdout, err) = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    for name in ["events.csv", "windows.csv", "snapshots.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with(
        "time_us,node_id,direction,bytes,rate_mbps,attempts,occupancy_us,delivered\n"
    ));
    let snaps = fs::read_to_string(out.join("snapshots.csv")).unwrap();
    assert!(snaps.starts_with("time_us,node_id,rate_share,tokens_us,actual_us,queue_len,drops\n"));
    let windows = fs::read_to_string(out.join("windows.csv")).unwrap();
    assert_eq!(windows.lines().count(), 1 + 3 * 2);
    assert!(stdout.contains("scheduler tbr"));
    assert!(stdout.lines().any(|l| l.starts_with("total ")));

    // DCF runs have no regulator snapshots
    let dcf = dir.path().join("dcf");
    let (code, _, _) = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--scheduler",
        "dcf",
        "--format",
        "csv",
        "--out",
        dcf.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(!dcf.join("snapshots.csv").exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.ini");
    fs::write(&file, SMALL).unwrap();
    let outputs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|d| {
            let out = dir.path().join(d);
            let (code, _, _) = run(&[
                "simulate",
                file.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0);
            ["events.csv", "windows.csv", "snapshots.csv"]
                .iter()
                .flat_map(|f| fs::read(out.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn malformed_scenario_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.ini");
    fs::write(&file, "[sim]\nscheduler = dcf\nduration_us = soon\n").unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("duration_us"), "{err}");
    assert!(!out.exists());
}

#[test]
fn invalid_scenario_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("dup.ini");
    fs::write(
        &file,
        "[sim]\nduration_us = 1000\n[node a]\nrate_mbps = 1\n[node a]\nrate_mbps = 2\n",
    )
    .unwrap();
    let (code, _, _) = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
    let (code, _, _) = run(&[
        "calibrate",
        "--rates",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}

#[test]
fn usage_errors_exit_2() {
    let (code, _, err) = run(&["trace", "x.csv", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"), "{err}");
    let (code, _, _) = run(&["simulate"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["--format", "xml", "analytic", "--nodes", "1"]);
    assert_eq!(code, 2);
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("simulate"));
}

#[test]
fn analytic_edge_cases() {
    let (code, out, _) = run(&["analytic", "--nodes", "11", "--format", "summary"]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = out.lines().filter(|l| l.contains(",n1,")).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(
        rows[0].trim_start_matches("RF"),
        rows[1].trim_start_matches("TF")
    );

    let (code, out, _) = run(&["analytic", "--nodes", "2,2", "--format", "summary"]);
    assert_eq!(code, 0);
    assert!(out.contains("improvement 0.0%"), "{out}");

    let table = scenarios_dir().join("baseline_80211b.csv");
    let (code, out, _) = run(&[
        "analytic",
        "--table",
        table.to_str().unwrap(),
        "--nodes",
        "1,2,11,11",
        "--format",
        "summary",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("RF,n1,1,0.5404,0.4356"), "{out}");
    assert!(out.contains("improvement 81.9%"), "{out}");

    // rate missing from the table
    let (code, _, err) = run(&["analytic", "--nodes", "6", "--format", "summary"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn calibrate_writes_ordered_table() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "calibrate",
        "--duration-us",
        "5000000",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("baseline.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rate_mbps,packet_bytes,gamma_mbps"));
    let g: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(g.len(), 4);
    assert!(g.windows(2).all(|w| w[0].1 < w[1].1));
    let g11 = g[3].1;
    assert!((4.5..=6.5).contains(&g11), "{g11}");
    // per-frame overhead hurts the fast rate more
    assert!(g[0].1 / 1.0 > g11 / 11.0);
}

#[test]
fn trace_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let mut text = String::from("timestamp_us,node_id,direction,bytes,rate_mbps,retries\n");
    for i in 0..500u64 {
        let (node, rate) = if i % 4 == 0 { ("b", "1") } else { ("a", "11") };
        text.push_str(&format!("{},{node},downlink,1500,{rate},0\n", i * 2000));
    }
    fs::write(&trace, text).unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = run(&[
        "trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read_to_string(out.join("rate_distribution.csv")).unwrap(),
        "rate_mbps,byte_fraction\n1,0.250000\n11,0.750000\n"
    );
    assert_eq!(
        fs::read_to_string(out.join("busy_intervals.csv")).unwrap(),
        "start_us,end_us,throughput_mbps\n0,1000000,6.0000\n"
    );
    assert_eq!(
        fs::read_to_string(out.join("heaviest_user.csv")).unwrap(),
        "start_us,end_us,node_id,heaviest_fraction\n0,1000000,a,0.750000\n"
    );

    let only = dir.path().join("only");
    let (code, _, _) = run(&[
        "trace",
        trace.to_str().unwrap(),
        "--rate-dist",
        "--out",
        only.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(only.join("rate_distribution.csv").exists());
    assert!(!only.join("busy_intervals.csv").exists());

    let broken = dir.path().join("broken.csv");
    fs::write(&broken, "timestamp_us,node_id\n1,a\n").unwrap();
    let (code, _, _) = run(&[
        "trace",
        broken.to_str().unwrap(),
        "--out",
        only.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn shipped_scenarios_are_valid() {
    let mut count = 0;
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("ini") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let s = Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        s.validate().unwrap();
        count += 1;
    }
    assert_eq!(count, 12);
}

#[test]
fn shipped_task_scenario_runs_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenarios_dir().join("task_1vs11.ini");
    let (code, out, err) = run(&[
        "simulate",
        file.to_str().unwrap(),
        "--format",
        "summary",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("final task time"), "{out}");
}
