use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn msarea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msarea")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config(dir: &Path, name: &str, extra: Value) -> std::path::PathBuf {
    let mut cfg = serde_json::json!({
        "units": {"length": "km", "time": "week"},
        "window": {"spatial": {"rectangle": {"xmin": 0, "xmax": 1, "ymin": 0, "ymax": 1}}, "tmin": 0, "tmax": 1},
        "intensity": {"constant": {"value": 50}},
        "ladder": [{"r": 0.03, "t": 0.03}, {"r": 0.05, "t": 0.05}],
        "theta_scaled": [-5.0, 5.0],
        "sampler": {"mh": {"iterations": 4000, "trace_every": 500}},
        "quadrature": {"nx": 10, "ny": 10, "nt": 10},
        "seed": 3
    });
    for (k, v) in extra.as_object().unwrap() {
        if v.is_null() {
            cfg.as_object_mut().unwrap().remove(k);
        } else {
            cfg[k] = v.clone();
        }
    }
    let path = dir.join(name);
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({}));
    let pattern = d.join("x.csv");
    let out = msarea(&[
        "simulate",
        "--config",
        p(&cfg),
        "--out",
        p(&pattern),
        "--trace",
        p(&d.join("t.csv")),
        "--meta",
        p(&d.join("m.json")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&pattern).unwrap();
    assert!(text.starts_with("x,y,t\n"));
    let trace = fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(trace.starts_with("iteration,n,logdens,accepted,proposal,sojourn\n"));
    assert_eq!(trace.lines().count(), 1 + 9);
    let meta: Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["seed"], 3);
    assert!(meta["elapsed_seconds"].as_f64().is_some());
    assert!(meta.get("poisson_check").is_none());

    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&pattern)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in [
        "scales",
        "theta_scaled",
        "gamma",
        "ci_low",
        "ci_high",
        "intercept",
        "logPL",
        "quadrature",
        "resolution",
        "seed",
    ] {
        assert!(fit.get(key).is_some(), "missing {key}");
    }
    assert_eq!(fit["quadrature"]["n_dummy"], 1000);
    assert_eq!(fit["theta_scaled"].as_array().unwrap().len(), 2);
}

#[test]
fn poisson_simulation_reports_a_count_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({"theta_scaled": null, "eta": [0.0, 0.0]}));
    let out = msarea(&[
        "simulate",
        "--config",
        p(&cfg),
        "--out",
        p(&d.join("x.csv")),
        "--meta",
        p(&d.join("m.json")),
        "--no-timing",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta: Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert!(meta.get("elapsed_seconds").is_none());
    assert!((meta["poisson_check"]["expected_count"].as_f64().unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let zero = config(d, "zero.json", serde_json::json!({"sampler": {"mh": {"iterations": 0}}}));
    let out = msarea(&["simulate", "--config", p(&zero)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let unknown = config(d, "unknown.json", serde_json::json!({"bogus": 1}));
    let out = msarea(&["simulate", "--config", p(&unknown)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"));

    let both = config(d, "both.json", serde_json::json!({"eta": [0.0, 0.0]}));
    assert_eq!(msarea(&["simulate", "--config", p(&both)]).status.code(), Some(2));

    let out = msarea(&["simulate", "--config", p(&d.join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = config(d, "c.json", serde_json::json!({}));
    let bad = d.join("bad.csv");
    fs::write(&bad, "x,y,t\n0.1,0.2,0.3\n0.5,oops,0.5\n").unwrap();
    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    fs::write(&bad, "x,y,t\n0.1,0.2,0.3\n1.5,0.2,0.3\n").unwrap();
    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("outside the window at lines 3"));

    let empty = d.join("empty.csv");
    fs::write(&empty, "x,y,t\n").unwrap();
    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no data rows"));

    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&empty), "--rescale", "1", "0", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({"intensity": {"constant": {"value": 0}}}));
    let x = d.join("x.csv");
    fs::write(&x, "x,y,t\n0.1,0.2,0.3\n0.5,0.5,0.5\n").unwrap();
    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&x)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn suffstats_of_an_empty_pattern_lists_the_dummies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({}));
    let empty = d.join("empty.csv");
    fs::write(&empty, "# nothing observed\nx,y,t\n").unwrap();
    let out = msarea(&["suffstats", "--config", p(&cfg), "--pattern", p(&empty)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,t,z,w,S1,S2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("0")));
}

#[test]
fn summary_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(
        d,
        "c.json",
        serde_json::json!({"candidates": [[{"r": 0.03, "t": 0.03}], [{"r": 0.05, "t": 0.05}], [{"r": 0.03, "t": 0.03}, {"r": 0.05, "t": 0.05}]]}),
    );
    let x = d.join("x.csv");
    assert!(msarea(&["simulate", "--config", p(&cfg), "--out", p(&x)]).status.success());
    let out = msarea(&["fit", "--profile", "--config", p(&cfg), "--pattern", p(&x)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let prof: Value = serde_json::from_slice(&out.stdout).unwrap();
    let ranked = prof["ranked"].as_array().unwrap();
    assert_eq!(ranked.len() + prof["failures"].as_array().unwrap().len(), 3);
    let pls: Vec<f64> = ranked.iter().map(|e| e["logPL"].as_f64().unwrap()).collect();
    assert!(pls.windows(2).all(|w| w[0] >= w[1]));

    let out = msarea(&[
        "summary",
        "--config",
        p(&cfg),
        "--pattern",
        p(&x),
        "--bin-width",
        "0.1",
        "--pcf",
        p(&d.join("pcf.csv")),
        "--acf",
        p(&d.join("acf.csv")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_bins"], 10);
    assert!(fs::read_to_string(d.join("pcf.csv")).unwrap().starts_with("r,g\n"));
    assert_eq!(fs::read_to_string(d.join("acf.csv")).unwrap().lines().count(), 1 + 10);
}

#[test]
fn summary_jitters_coincident_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({}));
    let x = d.join("x.csv");
    fs::write(&x, "x,y,t\n0.5,0.5,0.1\n0.5,0.5,0.1\n0.2,0.7,0.6\n").unwrap();
    let out = msarea(&["summary", "--config", p(&cfg), "--pattern", p(&x), "--r-max", "0.2", "--bin-width", "0.25"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let jittered = d.join("j.csv");
    let out = msarea(&[
        "summary",
        "--config",
        p(&cfg),
        "--pattern",
        p(&x),
        "--r-max",
        "0.2",
        "--bin-width",
        "0.25",
        "--jitter-radius",
        "0.01",
        "--jittered-out",
        p(&jittered),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    // the jittered file is a valid pattern: distinct points inside the window
    let out = msarea(&["suffstats", "--config", p(&cfg), "--pattern", p(&jittered)]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn intensity_from_sections_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "units": {"length": "km", "time": "week"},
            "window": {"spatial": {"rectangle": {"xmin": 0, "xmax": 9, "ymin": 0, "ymax": 9}}, "tmin": 0, "tmax": 52},
            "seed": 4
        })
        .to_string(),
    )
    .unwrap();
    let sections = d.join("sections.json");
    fs::write(
        &sections,
        r#"[{"window": {"rectangle": {"xmin": 0, "xmax": 9, "ymin": 0, "ymax": 9}}, "count": 500},
            {"window": {"rectangle": {"xmin": 2, "xmax": 4, "ymin": 2, "ymax": 4}}, "count": 500}]"#,
    )
    .unwrap();
    let counts = d.join("counts.csv");
    let mut text = String::from("t,count\n");
    for k in 0..52 {
        let t = k as f64;
        text.push_str(&format!("{t},{}\n", 20.0 + 8.0 * (2.0 * std::f64::consts::PI * t / 52.0).cos()));
    }
    fs::write(&counts, text).unwrap();
    let surface = d.join("surface.json");
    let meta = d.join("meta.json");
    let out = msarea(&[
        "intensity",
        "--config",
        p(&cfg),
        "--sections",
        p(&sections),
        "--counts",
        p(&counts),
        "--out",
        p(&surface),
        "--meta",
        p(&meta),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m: Value = serde_json::from_str(&fs::read_to_string(&meta).unwrap()).unwrap();
    assert_eq!(m["bandwidth_rule"], "scott");
    assert!(m["harmonic_fit"]["r_squared"].as_f64().unwrap() > 0.999);
    let s: Value = serde_json::from_str(&fs::read_to_string(&surface).unwrap()).unwrap();
    assert!(s.get("product").is_some());

    // the written surface drives a simulation through `intensity_file`
    let sim = d.join("sim.json");
    fs::write(
        &sim,
        serde_json::json!({
            "units": {"length": "km", "time": "week"},
            "window": {"spatial": {"rectangle": {"xmin": 0, "xmax": 9, "ymin": 0, "ymax": 9}}, "tmin": 0, "tmax": 52},
            "intensity_file": "surface.json",
            "ladder": [{"r": 0.5, "t": 5.0}],
            "eta": [0.0],
            "sampler": {"mh": {"iterations": 2000}}
        })
        .to_string(),
    )
    .unwrap();
    let out = msarea(&["simulate", "--config", p(&sim), "--out", p(&d.join("x.csv"))]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn rescale_and_version() {
    let out = msarea(&["--version"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("msarea 0.1.0"));
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(d, "c.json", serde_json::json!({}));
    let x = d.join("x.csv");
    fs::write(&x, "x,y,t\n64,32,0.5\n96,64,0.25\n").unwrap();
    let out = msarea(&["fit", "--config", p(&cfg), "--pattern", p(&x)]);
    assert_eq!(out.status.code(), Some(2));
    let out =
        msarea(&["suffstats", "--config", p(&cfg), "--pattern", p(&x), "--rescale", "0.0078125", "0.0078125", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\n0.5,0.25,0.5,1,"));
}
