use std::path::Path;
use std::process::{Command, Output};

fn quadjump(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadjump")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_subcommands() {
    let o = quadjump(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for cmd in ["inspect", "jump", "primitive", "gridsearch", "train", "eval", "config"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn inspect_reports_design_mass() {
    let o = quadjump(&["inspect", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = v["total_mass"].as_f64().unwrap();
    assert!((m - 13.8).abs() < 0.05, "{m}");
}

#[test]
fn dumped_defaults_check_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = quadjump(&["config", "--dump-defaults"]);
    assert!(o.status.success());
    let p = dir.path().join("c.toml");
    std::fs::write(&p, &o.stdout).unwrap();
    let o2 = quadjump(&["config", "--check", p.to_str().unwrap()]);
    assert!(o2.status.success());
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(quadjump(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(quadjump(&["config", "--check", "/definitely/not/here.toml"]).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[flight]\nphysics_hz = 100.0\n").unwrap();
    assert_eq!(quadjump(&["config", "--check", bad.to_str().unwrap()]).status.code(), Some(3));
    std::fs::write(&bad, "seed = [").unwrap();
    assert_eq!(quadjump(&["jump", "vertical", "--config", bad.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(quadjump(&["eval", "--checkpoint", "/nope.json", "--free-float", "1"]).status.code(), Some(4));
}

#[test]
fn jump_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j");
    let o = quadjump(&["jump", "forward", "--lean", "30", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("jump.json")).unwrap()).unwrap();
    assert!(v["d_max"].as_f64().unwrap() > 0.0);
    let cfg = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(cfg.contains("lean_deg = 30.0"));
    assert!(std::fs::read_to_string(out.join("flight.csv")).unwrap().starts_with("time,x,z,pitch"));
}

fn grid_run(out: &Path) {
    let grid = out.with_extension("toml");
    std::fs::write(&grid, "l_body = [0.5, 0.7]\nw_body_f = 0.3\nw_body_b = 0.3\n").unwrap();
    let o = quadjump(&[
        "gridsearch",
        "--grid",
        grid.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gridsearch_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    grid_run(&a);
    grid_run(&b);
    for f in ["grid_results.csv", "heatmap_roll.csv", "heatmap_pitch.csv", "heatmap_yaw.csv", "config.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("grid_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
