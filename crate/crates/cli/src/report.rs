//! Run reports: summary.json, CSV tables and two-column plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub command: String,
    pub config_sha256: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub truncation: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    pub version: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Meta {
    pub fn new(command: &str, config: &[u8], seed: u64, threads: usize) -> Meta {
        let hash = Sha256::digest(config).iter().map(|b| format!("{b:02x}")).collect();
        Meta {
            command: command.into(),
            config_sha256: hash,
            started_unix: now(),
            finished_unix: 0,
            truncation: None,
            seed,
            threads,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// One invariant check with its measured value and accepted range.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// A sweep point or instance that raised an error.
#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub point: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    metadata: &'a Meta,
    results: &'a BTreeMap<String, Value>,
    checks: Vec<&'a Check>,
    failed_points: &'a [PointFailure],
}

pub struct Report {
    pub meta: Meta,
    pub dir: PathBuf,
    pub checks: Vec<Check>,
    pub results: BTreeMap<String, Value>,
    pub failures: Vec<PointFailure>,
}

impl Report {
    pub fn new(meta: Meta, dir: PathBuf) -> Report {
        Report { meta, dir, checks: vec![], results: BTreeMap::new(), failures: vec![] }
    }

    pub fn ensure_dir(&self) -> Result<(), Failure> {
        fs::create_dir_all(&self.dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", self.dir.display())))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn range(&mut self, name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) {
        let pass = value.is_finite() && lower.map_or(true, |l| value >= l) && upper.map_or(true, |u| value <= u);
        self.checks.push(Check { name: name.into(), value, lower, upper, pass, detail: None });
    }

    pub fn at_most(&mut self, name: &str, value: f64, upper: f64) {
        self.range(name, value, None, Some(upper));
    }

    pub fn at_least(&mut self, name: &str, value: f64, lower: f64) {
        self.range(name, value, Some(lower), None);
    }

    pub fn fail(&mut self, name: &str, value: f64, detail: String) {
        self.checks.push(Check { name: name.into(), value, lower: None, upper: None, pass: false, detail: Some(detail) });
    }

    pub fn point_failed(&mut self, point: String, error: String) {
        self.failures.push(PointFailure { point, error });
    }

    pub fn all_pass(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn write_summary(&mut self) -> Result<(), Failure> {
        self.ensure_dir()?;
        self.meta.finished_unix = now();
        let mut checks: Vec<&Check> = self.checks.iter().collect();
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        let mut failures = self.failures.clone();
        failures.sort_by(|a, b| a.point.cmp(&b.point));
        let summary = Summary { metadata: &self.meta, results: &self.results, checks, failed_points: &failures };
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Data(e.to_string()))?;
        fs::write(self.path("summary.json"), text + "\n")?;
        Ok(())
    }

    pub fn print(&self) {
        let mut checks: Vec<&Check> = self.checks.iter().collect();
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        for c in checks {
            let bound = match (c.lower, c.upper) {
                (Some(l), Some(u)) => format!("in [{l}, {u}]"),
                (Some(l), None) => format!(">= {l:e}"),
                (None, Some(u)) => format!("<= {u:e}"),
                (None, None) => c.detail.clone().unwrap_or_default(),
            };
            println!("{} {}: {:.6e} {bound}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
        }
        for f in &self.failures {
            println!("FAIL point {}: {}", f.point, f.error);
        }
        println!("outputs in {}", self.dir.display());
    }
}

/// Writes a CSV table; rows are written as given.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Two-column `x y` text file; non-positive values are skipped so the
/// series stays plottable on log axes.
pub fn write_dat(path: &Path, series: &[(f64, f64)]) -> Result<(), Failure> {
    let mut f = fs::File::create(path)?;
    for &(x, y) in series.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0) {
        writeln!(f, "{x:.17e} {y:.17e}")?;
    }
    Ok(())
}

/// Log-log line chart of named series.
pub fn write_svg(path: &Path, title: &str, series: &[(&str, &[(f64, f64)])]) -> Result<(), Failure> {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.log10(), p.1.log10())).collect();
    let (w, h, m) = (480.0, 360.0, 48.0);
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<text x=\"{m}\" y=\"24\" font-size=\"14\">{title}</text>\n");
    if !pts.is_empty() {
        let lo = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = |f: fn(&(f64, f64)) -> f64| pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let (x0, x1) = (lo(|p| p.0), hi(|p| p.0).max(lo(|p| p.0) + 1e-9));
        let (y0, y1) = (lo(|p| p.1), hi(|p| p.1).max(lo(|p| p.1) + 1e-9));
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        out += &format!("<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", w - 2.0 * m, h - 2.0 * m);
        out += &format!("<text x=\"{m}\" y=\"{}\" font-size=\"10\">log10 eps [{x0:.2}, {x1:.2}], log10 error [{y0:.2}, {y1:.2}]</text>\n", h - 16.0);
        for (i, (name, s)) in series.iter().enumerate() {
            let colour = ["#1f77b4", "#d62728", "#2ca02c"][i % 3];
            let line: Vec<String> = s.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| format!("{:.2},{:.2}", sx(p.0.log10()), sy(p.1.log10()))).collect();
            out += &format!("<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n", line.join(" "));
            out += &format!("<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{name}</text>\n", w - m - 90.0, m + 16.0 * (i as f64 + 1.0));
        }
    }
    out += "</svg>\n";
    fs::write(path, out)?;
    Ok(())
}
