use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bfd_cli::commands::{self, EpsilonList};
use bfd_cli::config::from_toml;

const BASE: &str = r#"
seed = 3

[grid]
half_width = 4.0
points = 8

[kernel]
gamma = -0.5
nu = 0.75
angular = { model = "constant", b0 = 0.08 }

[physics]
epsilon_fraction = 0.3

[initial]
family = "two_maxwellian_mixture"
rho = [0.5, 0.5]
u = [[0.8, 0.0, 0.0], [-0.8, 0.0, 0.0]]
theta = [0.5, 0.5]

[time]
t_end = 0.5
output_stride = 0.25
"#;

fn bfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfd")).args(args).output().expect("spawn bfd")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = bfd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("final_state.ckpt").is_file());
        assert!(out.join("summary.json").is_file());
        csvs.push(fs::read(out.join("timeseries.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);

    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/timeseries.schema.json")).unwrap()).unwrap();
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(schema["column_count"].as_u64().unwrap() as usize, header.len());
    let names: Vec<&str> = schema["columns"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, header);
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn single_member_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = from_toml(BASE).unwrap();
    cfg.output_dir = tmp.path().join("run");
    let eps = cfg.epsilon().unwrap();
    let run = commands::run(&cfg).unwrap();
    assert!(run.summary.violations.is_empty(), "{:?}", run.summary.violations);

    cfg.output_dir = tmp.path().join("sweep");
    let sweep = commands::sweep(&cfg, &EpsilonList::Absolute(vec![eps])).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    let member = cfg.output_dir.join(&sweep.rows[0].dir).join("timeseries.csv");
    assert_eq!(fs::read(member).unwrap(), fs::read(run.dir.join("timeseries.csv")).unwrap());
}

#[test]
fn equilibrium_datum_barely_moves() {
    let text = BASE.replace(
        "family = \"two_maxwellian_mixture\"\nrho = [0.5, 0.5]\nu = [[0.8, 0.0, 0.0], [-0.8, 0.0, 0.0]]\ntheta = [0.5, 0.5]",
        "family = \"fermi_dirac\"\nrho = 1.0\ntheta = 0.8",
    );
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = from_toml(&text).unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let out = commands::run(&cfg).unwrap();
    let s = &out.summary;
    // The sampled equilibrium is not a discrete equilibrium; it drifts by the
    // grid residual of Q, which also leaves room for tiny entropy decreases.
    let (h0, h1) = (s.h_rel_initial.unwrap(), s.h_rel_final.unwrap());
    assert!(h0.abs() < 1e-2 && (h1 - h0).abs() < 1e-4, "{h0} -> {h1}");
    assert!(s.entropy.delta_s.abs() < 1e-4, "{:?}", s.entropy);
    let (first, last) = (&out.series.records[0], out.series.records.last().unwrap());
    assert!((first.mass - last.mass).abs() <= 1e-11 * first.mass);
    assert!((first.energy - last.energy).abs() <= 1e-11 * first.energy);
}

#[test]
fn invalid_configs_exit_with_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &BASE.replace("epsilon_fraction = 0.3", "epsilon = -0.1"));
    let o = bfd(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("physics.epsilon"));

    let cfg = write_config(tmp.path(), &BASE.replace("points = 8", "points = 7"));
    let o = bfd(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.points"));
}

#[test]
fn corrupted_projection_is_caught() {
    let o = bfd(&["verify", "--profile", "quick", "--only", "7,9", "--corrupt-projection"]);
    assert_eq!(o.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[FAIL]")).count(), 2, "{stdout}");
}
