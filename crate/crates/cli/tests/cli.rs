use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
dt_min = 0.1
t_end_min = 60.0

[population]
n = 200
mean_C = 3.0
mean_R = 2.0
mean_P = 14.0
rel_sigma = 0.07
theta_amb_C = 32.0
setpoint_C = 20.0
delta_band_C = 1.0
noise_sigma = 0.052
seed = 3

[[events]]
t_min = 20.0
command = { kind = "sp3", direction = "down", width_min = 3.0 }

[outputs]
device_probe_ids = [0, 5]
"#;

fn tclsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tclsim")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tclsim(&["validate", "fig8_sp1_down"]).status.code(), Some(0));
    assert_eq!(tclsim(&["validate", &write(dir.path(), "ok.toml", SMALL)]).status.code(), Some(0));

    let bad = SMALL.replace("width_min = 3.0", "width_min = -1.0");
    let out = tclsim(&["validate", &write(dir.path(), "bad.toml", &bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("events[0]"));

    assert_eq!(tclsim(&["validate", "no_such_scenario"]).status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_guards_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out_arg = out_dir.to_string_lossy().into_owned();

    let first = tclsim(&["run", &scenario, "--out", &out_arg, "--svg"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(String::from_utf8_lossy(&first.stdout).contains("sp3"));
    for f in ["scenario.toml", "trace.csv", "summary.json", "trace.svg", "probe_0.csv", "probe_5.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let trace = std::fs::read(out_dir.join("trace.csv")).unwrap();

    let again = tclsim(&["run", &scenario, "--out", &out_arg]);
    assert_eq!(again.status.code(), Some(1));

    let forced = tclsim(&["run", &scenario, "--out", &out_arg, "--force"]);
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(std::fs::read(out_dir.join("trace.csv")).unwrap(), trace);

    // The echoed scenario validates and reproduces the same trace.
    let echo = out_dir.join("scenario.toml").to_string_lossy().into_owned();
    let rerun = dir.path().join("rerun").to_string_lossy().into_owned();
    assert_eq!(tclsim(&["run", &echo, "--out", &rerun]).status.code(), Some(0));
    assert_eq!(std::fs::read(Path::new(&rerun).join("trace.csv")).unwrap(), trace);
}

#[test]
fn batch_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    std::fs::create_dir(&scenarios).unwrap();
    write(&scenarios, "a.toml", SMALL);
    write(&scenarios, "b.toml", &SMALL.replace("seed = 3", "seed = 4"));
    let out = dir.path().join("runs").to_string_lossy().into_owned();
    let r = tclsim(&["batch", &scenarios.to_string_lossy(), "--out", &out]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(Path::new(&out).join("a/trace.csv").is_file());
    assert!(Path::new(&out).join("b/trace.csv").is_file());

    write(&scenarios, "c.toml", "dt_min = 0.1\n");
    assert_eq!(tclsim(&["batch", &scenarios.to_string_lossy(), "--out", &out, "--force"]).status.code(), Some(2));

    let list = tclsim(&["list"]);
    let text = String::from_utf8_lossy(&list.stdout);
    assert_eq!(text.lines().count(), 10);
    assert!(text.contains("fig12_sp3_3min"));
}
