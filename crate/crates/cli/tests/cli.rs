use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aggalign::{SimConfig, SweepConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aggalign"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run_cli(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Bundled config text with single-line `key = value` replacements.
fn edited(name: &str, replacements: &[(&str, &str)]) -> String {
    let text = fs::read_to_string(bundled(name)).unwrap();
    text.lines()
        .map(|line| {
            for (key, value) in replacements {
                if line.split('=').next().map(str::trim) == Some(*key) {
                    return format!("{key} = {value}");
                }
            }
            line.to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn diagnostics(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("diagnostics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn example1_run_writes_artifacts_and_reaches_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = bundled("example1_s05.toml");
    let out = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let snapshots: Vec<_> = fs::read_dir(tmp.path().join("snapshots")).unwrap().collect();
    assert!(snapshots.len() >= 10, "{} snapshots", snapshots.len());
    let first = fs::read_to_string(tmp.path().join("snapshots/snapshot_t0.000000.csv")).unwrap();
    assert!(first.starts_with("x,rho,u_x\n"));

    let records = diagnostics(tmp.path());
    assert_eq!(records.len(), 2001);
    let last = records.last().unwrap();
    for key in ["t", "mass", "momentum", "com", "support_radius", "support_bound", "clamped_mass", "error_to_target"] {
        assert!(last.get(key).is_some(), "missing {key}");
    }
    assert!(last["error_to_target"].as_f64().unwrap() <= 0.05);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["wall_time_s"].as_f64().unwrap() > 0.0);

    // The directory holds the exact config that produced it.
    let echoed: SimConfig = toml::from_str(&fs::read_to_string(tmp.path().join("config.toml")).unwrap()).unwrap();
    let mut original: SimConfig = toml::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    original.output_dir = Some(tmp.path().to_path_buf());
    assert_eq!(echoed, original);
}

#[test]
fn identical_runs_give_identical_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, edited("example2_morse.toml", &[("t_final", "0.5")])).unwrap();
    let mut streams = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let out = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        streams.push(fs::read(dir.join("diagnostics.jsonl")).unwrap());
    }
    assert_eq!(streams[0], streams[1]);
}

#[test]
fn fast_flag_doubles_resolution_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, edited("example1_s15.toml", &[("t_final", "0.5")])).unwrap();
    let dir = tmp.path().join("fast");
    let out = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--fast"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let echoed: SimConfig = toml::from_str(&fs::read_to_string(dir.join("config.toml")).unwrap()).unwrap();
    assert_eq!((echoed.h, echoed.dt), (0.04, 0.01));
    assert_eq!(diagnostics(&dir).len(), 51);
}

#[test]
fn nonpositive_dt_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, edited("example1_s05.toml", &[("dt", "0.0")])).unwrap();
    let out = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`dt`"), "{}", stderr(&out));
}

#[test]
fn unknown_potential_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, edited("example1_s05.toml", &[("kind", "\"lennard_jones\"")])).unwrap();
    let out = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn escaping_mass_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tight.toml");
    let replacements = [
        ("domain_lower", "[-1.0]"),
        ("domain_upper", "[1.0]"),
        ("h", "0.04"),
        ("dt", "0.01"),
        ("t_final", "40.0"),
    ];
    fs::write(&cfg, edited("example2_morse.toml", &replacements)).unwrap();
    let out = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("mass collapsed"), "{}", stderr(&out));
}

#[test]
fn validate_passes_and_detects_inflated_eta() {
    let out = run_cli(&["validate"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("two_point_closed_form"));
    assert!(!table.contains("FAIL"));

    let out = run_cli(&["validate", "--break-eta", "--configs", "20"]);
    assert_eq!(code(&out), 1);
    let table = String::from_utf8_lossy(&out.stdout);
    let dominance = table.lines().find(|l| l.starts_with("diagonal_dominance")).unwrap();
    assert!(dominance.contains("FAIL"));
}

#[test]
fn convergence_default_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&["convergence", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,max_pos_err,max_vel_err,fluct_final,fluct_over_eps2");
    assert_eq!(lines.len(), 4);
    let pos: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[1] < w[0]));
    let echoed: SweepConfig = toml::from_str(&fs::read_to_string(tmp.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.eps_list, vec![0.2, 0.1, 0.05]);
}

#[test]
fn convergence_single_epsilon_skips_monotonicity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("single.toml");
    fs::write(&cfg, edited("sweep_morse.toml", &[("eps_list", "[0.1]")])).unwrap();
    let out = run_cli(&["convergence", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn convergence_rejects_increasing_eps_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, edited("sweep_morse.toml", &[("eps_list", "[0.05, 0.1]")])).unwrap();
    let out = run_cli(&["convergence", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn convergence_seed_flag_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&["convergence", "--seed", "3", "--out", tmp.path().to_str().unwrap()]);
    assert!(matches!(code(&out), 0 | 1), "{}", stderr(&out));
    let echoed: SweepConfig = toml::from_str(&fs::read_to_string(tmp.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 3);
}
