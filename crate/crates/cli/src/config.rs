//! Experiment configuration (TOML). The schema is documented in
//! docs/config.md.

use std::path::{Path, PathBuf};

use homog_core::io::read_grid;
use homog_core::linalg::{eye, rscaled};
use homog_core::periodic::{Coef, PeriodicProblem};
use homog_core::scalar::{build_scalar_problem, ScalarAmplitudes, ScalarInput};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub problem: Option<ProblemConfig>,
    pub cell_solve: Option<CellSolveConfig>,
    pub fiber_check: Option<FiberCheckConfig>,
    pub abstract_check: Option<AbstractCheckConfig>,
    pub converge: Option<ConvergeConfig>,
    pub evolve: Option<EvolveConfig>,
    pub scalar: Option<ScalarConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: String,
    /// Fourier cutoff N: modes {−N..N}^d.
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    /// Overrides the preset's λ.
    pub lambda: Option<f64>,
    /// random_smooth and constant presets.
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub harmonics: Option<usize>,
    pub random_seed: Option<u64>,
    /// constant preset: g = value · I.
    pub value: Option<f64>,
    /// scalar_schrodinger preset.
    pub scalar: Option<ScalarAmplitudes>,
    pub grid: Option<GridFiles>,
}

/// PHOM grid files replacing preset coefficients.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFiles {
    pub g: Option<PathBuf>,
    pub f: Option<PathBuf>,
    pub a: Option<Vec<PathBuf>>,
    pub qdens: Option<PathBuf>,
}

fn default_cutoff() -> usize {
    8
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSolveConfig {
    pub expect_g0: Option<Vec<Vec<f64>>>,
    #[serde(default = "tol_8")]
    pub tol: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberCheckConfig {
    pub kgrid: usize,
    pub eps: f64,
    pub s: Vec<f64>,
    pub spread: f64,
}

impl Default for FiberCheckConfig {
    fn default() -> Self {
        FiberCheckConfig { kgrid: 8, eps: 0.25, s: vec![0.25, 1.0, 4.0], spread: 10.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbstractCheckConfig {
    pub instances: usize,
    pub max_dim: usize,
    pub max_n: usize,
    pub levels: usize,
    pub min_orders: [f64; 4],
    pub m_tol: f64,
    pub n_star_tol: f64,
}

impl Default for AbstractCheckConfig {
    fn default() -> Self {
        AbstractCheckConfig { instances: 10, max_dim: 24, max_n: 3, levels: 6, min_orders: [0.9, 1.8, 2.8, 3.7], m_tol: 1e-9, n_star_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub eps: Vec<f64>,
    pub s: f64,
    pub cells_factor: f64,
    pub probes: usize,
    pub probe_band: i64,
    /// "auto", "on" or "off".
    pub smoothing: String,
    pub slope_principal: Option<[f64; 2]>,
    pub slope_corrected: Option<[f64; 2]>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig {
            eps: vec![0.25, 0.125, 0.0625, 0.03125, 0.015625],
            s: 0.5,
            cells_factor: 4.0,
            probes: 32,
            probe_band: 4,
            smoothing: "auto".into(),
            slope_principal: None,
            slope_corrected: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub eps: f64,
    pub cells: usize,
    pub s: Vec<f64>,
    /// Largest |frequency| of the random band-limited initial field.
    pub band: i64,
    /// "none" or "constant".
    pub source: String,
    pub source_amplitude: f64,
    pub p_norm: f64,
    pub steps: usize,
    pub rel_tol: f64,
    /// Largest accepted error / envelope ratio.
    pub max_ratio: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            eps: 0.125,
            cells: 8,
            s: vec![0.25, 0.5, 1.0],
            band: 2,
            source: "none".into(),
            source_amplitude: 1.0,
            p_norm: f64::INFINITY,
            steps: 64,
            rel_tol: 1e-4,
            max_ratio: 10.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarConfig {
    pub amplitudes: ScalarAmplitudes,
    pub cutoff: usize,
    pub eps: f64,
    pub cells: usize,
    pub times: Vec<f64>,
    pub tol_coefficients: f64,
    pub tol_corrector: f64,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        ScalarConfig {
            amplitudes: ScalarAmplitudes::default(),
            cutoff: 6,
            eps: 0.25,
            cells: 3,
            times: vec![0.5, 2.0, 8.0],
            tol_coefficients: 1e-8,
            tol_corrector: 1e-9,
        }
    }
}

fn tol_8() -> f64 {
    1e-8
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> Result<(Config, Vec<u8>), Failure> {
        let bytes = std::fs::read(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| config_err(format!("config is not UTF-8: {e}")))?;
        let mut cfg: Config = toml::from_str(text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    fn validate(&self) -> Result<(), Failure> {
        if let Some(p) = &self.problem {
            if p.cutoff < 4 {
                return Err(config_err(format!("problem.cutoff must be at least 4, got {}", p.cutoff)));
            }
            if let Some(g) = &p.grid {
                for f in g.g.iter().chain(&g.f).chain(g.a.iter().flatten()).chain(&g.qdens) {
                    let full = self.base_dir.join(f);
                    if !full.is_file() {
                        return Err(config_err(format!("grid file {} does not exist", full.display())));
                    }
                }
            }
        }
        let eps_ok = |e: f64| e > 0.0 && e <= 1.0;
        if let Some(c) = &self.converge {
            if let Some(e) = c.eps.iter().find(|&&e| !eps_ok(e)) {
                return Err(config_err(format!("converge.eps values must lie in (0, 1], got {e}")));
            }
            if !["auto", "on", "off"].contains(&c.smoothing.as_str()) {
                return Err(config_err(format!("converge.smoothing must be auto, on or off, got {:?}", c.smoothing)));
            }
        }
        if let Some(f) = &self.fiber_check {
            if !eps_ok(f.eps) {
                return Err(config_err(format!("fiber_check.eps must lie in (0, 1], got {}", f.eps)));
            }
        }
        if let Some(e) = &self.evolve {
            if !eps_ok(e.eps) {
                return Err(config_err(format!("evolve.eps must lie in (0, 1], got {}", e.eps)));
            }
            if !["none", "constant"].contains(&e.source.as_str()) {
                return Err(config_err(format!("evolve.source must be none or constant, got {:?}", e.source)));
            }
        }
        if let Some(s) = &self.scalar {
            if !eps_ok(s.eps) {
                return Err(config_err(format!("scalar.eps must lie in (0, 1], got {}", s.eps)));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<(PeriodicProblem, usize), Failure> {
        let pc = self.problem.as_ref().ok_or_else(|| config_err("missing [problem] section"))?;
        let mut p = match pc.preset.as_str() {
            "harmonic_mean_1d" => PeriodicProblem::harmonic_mean_1d(),
            "oscillatory_1d" => PeriodicProblem::oscillatory_1d(),
            "zero_corrector_2d" => PeriodicProblem::zero_corrector_2d(),
            "constant" => {
                let d = pc.d.unwrap_or(1);
                if d == 0 || d > 3 {
                    return Err(config_err(format!("constant preset needs d in 1..=3, got {d}")));
                }
                PeriodicProblem::constant(d, rscaled(&eye(d), pc.value.unwrap_or(1.0)), pc.lambda.unwrap_or(1.0))
            }
            "random_smooth" => {
                let d = pc.d.unwrap_or(2);
                let (n, m) = (pc.n.unwrap_or(1), pc.m.unwrap_or(d));
                if d == 0 || d > 3 || n == 0 || m == 0 {
                    return Err(config_err("random_smooth needs d in 1..=3 and positive n, m"));
                }
                PeriodicProblem::random_smooth(d, n, m, pc.harmonics.unwrap_or(3), pc.random_seed.unwrap_or(1))
            }
            "scalar_schrodinger" => {
                let amp = pc.scalar.clone().unwrap_or_default();
                let inp = ScalarInput::preset(&amp).map_err(|e| Failure::Data(e.to_string()))?;
                build_scalar_problem(&inp).map_err(|e| Failure::Data(e.to_string()))?
            }
            other => return Err(config_err(format!("unknown preset {other:?}"))),
        };
        if let Some(l) = pc.lambda {
            p.lambda = l;
        }
        if let Some(g) = &pc.grid {
            let d = p.d();
            let load = |f: &PathBuf| -> Result<Coef, Failure> {
                let full = self.base_dir.join(f);
                let file = std::fs::File::open(&full).map_err(|e| Failure::Data(format!("{}: {e}", full.display())))?;
                let field = read_grid(std::io::BufReader::new(file)).map_err(|e| Failure::Data(format!("{}: {e}", full.display())))?;
                if field.grid.d() != d {
                    return Err(Failure::Data(format!("{}: grid is {}-dimensional, problem has d = {}", full.display(), field.grid.d(), d)));
                }
                Ok(Coef::Samples(field))
            };
            let check = |c: &Coef, want: (usize, usize), name: &str| -> Result<(), Failure> {
                if c.shape() != want {
                    return Err(Failure::Data(format!("{name} grid has block {:?}, expected {want:?}", c.shape())));
                }
                Ok(())
            };
            if let Some(f) = &g.g {
                let c = load(f)?;
                check(&c, (p.m, p.m), "g")?;
                p.g = c;
            }
            if let Some(f) = &g.f {
                let c = load(f)?;
                check(&c, (p.n, p.n), "f")?;
                p.f = c;
            }
            if let Some(fs) = &g.a {
                if fs.len() != p.d() {
                    return Err(Failure::Data(format!("need {} a_j grid files, got {}", p.d(), fs.len())));
                }
                p.a = fs.iter().map(load).collect::<Result<_, _>>()?;
                for c in &p.a {
                    check(c, (p.n, p.n), "a_j")?;
                }
            }
            if let Some(f) = &g.qdens {
                let c = load(f)?;
                check(&c, (p.n, p.n), "qdens")?;
                p.qdens = c;
            }
            p.validate().map_err(|e| Failure::Data(e.to_string()))?;
        }
        Ok((p, pc.cutoff))
    }
}
