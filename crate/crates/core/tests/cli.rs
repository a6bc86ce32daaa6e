use std::path::Path;
use std::process::Command;

use expofront::harness::experiment::read_front_rows;
use expofront::harness::instances_from_json;

fn expofront(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_expofront"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &std::process::Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_front_aggregate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&expofront(
        &[
            "synth", "--kind", "ds", "--count", "4", "--seed", "9", "--out", "q.json",
        ],
        d,
    ));
    let instances =
        instances_from_json(&std::fs::read_to_string(d.join("q.json")).unwrap()).unwrap();
    assert_eq!(instances.len(), 4);

    ok(&expofront(
        &[
            "front",
            "sphere",
            "--input",
            "q.json",
            "--k",
            "2",
            "--n-sample",
            "3",
            "--out",
            "f.csv",
            "--runtime",
            "r.json",
        ],
        d,
    ));
    let rows = read_front_rows(d.join("f.csv")).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.method == "sphere" && r.param == "K=2"));
    let runtime: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(runtime["queries"], 4);
    assert!(runtime["phases"]["front"].as_f64().unwrap() >= 0.0);

    ok(&expofront(
        &["aggregate", "f.csv", "--grid", "11", "--out", "agg.csv"],
        d,
    ));
    let agg = std::fs::read_to_string(d.join("agg.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "grid,meanUtility,count");
    assert_eq!(lines.len(), 12);
}

#[test]
fn fronts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a.csv", "b.csv"] {
        ok(&expofront(
            &[
                "front",
                "qp-sweep",
                "--synthetic",
                "ds",
                "--count",
                "3",
                "--seed",
                "5",
                "--out",
                name,
            ],
            d,
        ));
    }
    assert_eq!(
        std::fs::read(d.join("a.csv")).unwrap(),
        std::fs::read(d.join("b.csv")).unwrap()
    );
}

#[test]
fn parse_writes_instances_and_drop_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = "\
2 qid:1 132:7.2
0 qid:1 132:1.0
1 qid:1 132:12.0
3 qid:1 132:3.0
1 qid:2 132:2.0
";
    std::fs::write(d.join("train.txt"), text).unwrap();
    ok(&expofront(
        &[
            "parse",
            "train.txt",
            "--bin-edges",
            "5,10",
            "--out",
            "q.json",
            "--drops",
            "drops.json",
        ],
        d,
    ));
    let kept = instances_from_json(&std::fs::read_to_string(d.join("q.json")).unwrap()).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].relevance, vec![0.5, 0.0, 0.25, 0.75]);
    let drops: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("drops.json")).unwrap()).unwrap();
    assert_eq!(drops["singleDocument"], 1);
}

#[test]
fn decompose_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("p.json"),
        r#"{"gamma": [1.0, 0.63093, 0.5], "exposure": [0.92062, 0.5, 0.71031]}"#,
    )
    .unwrap();
    let out = expofront(
        &[
            "decompose",
            "caratheodory",
            "--input",
            "p.json",
            "--format",
            "csv",
        ],
        d,
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("weight,ranking\n"));
    let total: f64 = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);

    std::fs::write(d.join("m.json"), r#"{"matrix": [[0.5, 0.5], [0.5, 0.5]]}"#).unwrap();
    let out = expofront(&["decompose", "bvn", "--input", "m.json"], d);
    ok(&out);
    let dist: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(dist["atoms"].as_array().unwrap().len(), 2);
}

#[test]
fn ctrl_trajectory_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = expofront(
        &[
            "ctrl",
            "--synthetic",
            "ds",
            "--count",
            "1",
            "--lambda-grid",
            "0,5",
            "--t",
            "10",
            "--trajectory",
            "--format",
            "json",
        ],
        d,
    );
    ok(&out);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 20);

    std::fs::write(d.join("m.json"), r#"{"matrix": [[0.9, 0.5], [0.1, 0.5]]}"#).unwrap();
    let out = expofront(&["decompose", "bvn", "--input", "m.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not bistochastic"));
}
