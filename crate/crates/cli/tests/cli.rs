use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use homog_core::io::write_grid;
use homog_core::linalg::*;
use homog_core::periodic::{Field, Grid};
use serde_json::Value;
use tempfile::TempDir;

fn homog(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homog"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("HOMOG_THREADS")
        .output()
        .unwrap()
}

fn setup(config: &str) -> (TempDir, std::path::PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn cell_solve_harmonic_mean() {
    let (dir, cfg) = setup("[problem]\npreset = \"harmonic_mean_1d\"\ncutoff = 32\n\n[cell_solve]\nexpect_g0 = [[1.7320508]]\ntol = 1e-7\n");
    let out = dir.path().join("out");
    let o = homog("cell-solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let cell: Value = serde_json::from_str(&fs::read_to_string(out.join("cell.json")).unwrap()).unwrap();
    let g0 = cell["g0"]["re"][0][0].as_f64().unwrap();
    assert!((g0 - 1.7320508).abs() < 1e-7, "{g0}");
    let s = summary(&out);
    assert_eq!(s["metadata"]["truncation"], 32);
    assert_eq!(s["metadata"]["config_sha256"].as_str().unwrap().len(), 64);
    assert!(s["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn converge_constant_is_exact() {
    let (dir, cfg) = setup("[problem]\npreset = \"constant\"\nd = 1\nvalue = 2.0\ncutoff = 4\n\n[converge]\neps = [0.25, 0.125, 0.0625]\n");
    let out = dir.path().join("out");
    let o = homog("converge", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["results"]["principal_fit"], "ExactAgreement");
    assert_eq!(s["results"]["corrected_fit"], "ExactAgreement");
    assert!(s["results"].get("corrected_slope").is_none());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("eps,s,err_principal,err_corrected,envelope_principal,envelope_corrected,slope_running\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn converge_is_deterministic() {
    let (dir, cfg) = setup("seed = 11\n[problem]\npreset = \"oscillatory_1d\"\ncutoff = 4\n\n[converge]\neps = [0.25, 0.125, 0.0625]\nprobes = 8\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(homog("converge", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(homog("converge", &cfg, &b, &["--threads", "1"]).status.code(), Some(0));
    for f in ["sweep.csv", "principal.dat", "corrected.dat"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn failed_slope_range_exits_one() {
    let (dir, cfg) = setup("[problem]\npreset = \"oscillatory_1d\"\ncutoff = 4\n\n[converge]\neps = [0.25, 0.125, 0.0625]\nslope_principal = [3.0, 4.0]\n");
    let out = dir.path().join("out");
    assert_eq!(homog("converge", &cfg, &out, &[]).status.code(), Some(1));
    let s = summary(&out);
    let check = s["checks"].as_array().unwrap().iter().find(|c| c["name"] == "principal_slope").unwrap().clone();
    assert_eq!(check["pass"], false);
    assert!(check["value"].as_f64().unwrap() < 3.0);
}

#[test]
fn config_errors_exit_two() {
    for text in [
        "[problem]\npreset = \"missing\"\n",
        "[problem]\npreset = \"oscillatory_1d\"\ncutoff = 3\n",
        "[problem]\npreset = \"oscillatory_1d\"\n[converge]\neps = [1.5, 0.75, 0.375]\n",
        "[problem]\npreset = \"oscillatory_1d\"\n[problem.grid]\ng = \"absent.phom\"\n",
        "unknown_key = 1\n",
        "not toml at all [",
    ] {
        let (dir, cfg) = setup(text);
        let o = homog("cell-solve", &cfg, &dir.path().join("out"), &[]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn non_dyadic_eps_is_config_error() {
    let (dir, cfg) = setup("[problem]\npreset = \"oscillatory_1d\"\ncutoff = 4\n[converge]\neps = [0.25, 0.2, 0.1]\n");
    assert_eq!(homog("converge", &cfg, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn corrupt_grid_file_exits_two() {
    let (dir, cfg) = setup("[problem]\npreset = \"constant\"\nd = 1\n[problem.grid]\ng = \"g.phom\"\n");
    fs::write(dir.path().join("g.phom"), b"XXXX0000").unwrap();
    let o = homog("cell-solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data error"));
}

#[test]
fn grid_file_overrides_preset() {
    // 1D coefficient 2 + cos: g0 is its harmonic mean √3.
    let grid = Grid::new(vec![64]);
    let g = Field::from_fn(&grid, 1, 1, |y| CMat::from_fn(1, 1, |_, _| cr(2.0 + (2.0 * std::f64::consts::PI * y[0]).cos())));
    let (dir, cfg) = setup("[problem]\npreset = \"constant\"\nd = 1\ncutoff = 16\n[problem.grid]\ng = \"g.phom\"\n[cell_solve]\nexpect_g0 = [[1.7320508075688772]]\ntol = 1e-8\n");
    write_grid(fs::File::create(dir.path().join("g.phom")).unwrap(), &g).unwrap();
    let out = dir.path().join("out");
    let o = homog("cell-solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn scalar_example_passes() {
    let (dir, cfg) = setup("[scalar]\ncutoff = 4\neps = 0.25\ncells = 2\ntimes = [1.0]\n");
    let out = dir.path().join("out");
    let o = homog("scalar-example", &cfg, &out, &["--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(summary(&out)["metadata"]["seed"], 3);
    assert!(out.join("scalar.json").is_file());
}

#[test]
fn abstract_check_small() {
    let (dir, cfg) = setup("seed = 5\n[abstract_check]\ninstances = 3\nmax_dim = 10\nmax_n = 2\n");
    let out = dir.path().join("out");
    let o = homog("abstract-check", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("abstract.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 6);
}

#[test]
fn fiber_check_writes_table() {
    let (dir, cfg) = setup("[problem]\npreset = \"oscillatory_1d\"\ncutoff = 4\n[fiber_check]\nkgrid = 4\neps = 0.25\ns = [0.5, 2.0]\nspread = 1e6\n");
    let out = dir.path().join("out");
    let o = homog("fiber-check", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("fiber_check.csv")).unwrap();
    assert!(csv.starts_with("k1,s,remainder_principal,remainder,ratio,max_ratio\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
}

#[test]
fn evolve_without_source() {
    let (dir, cfg) = setup("[problem]\npreset = \"oscillatory_1d\"\ncutoff = 4\n[evolve]\neps = 0.25\ncells = 4\ns = [0.5]\n");
    let out = dir.path().join("out");
    let o = homog("evolve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(fs::read_to_string(out.join("evolve.csv")).unwrap().lines().count(), 2);
}
