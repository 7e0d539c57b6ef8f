use std::path::Path;

use anyhow::{Context, Result};
use catenet_core::gluing::BoxSample;
use catenet_core::RejectionReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub kind: String,
    pub lines: usize,
    pub segments: usize,
    /// Minimal neck spacing; absent when no line carries two necks.
    pub d: Option<f64>,
    pub eta: Option<f64>,
    /// Topology predicted from the graph.
    pub genus: Option<usize>,
    pub ends: Option<usize>,
    /// Network metrics; infinite gaps appear as `null`.
    pub metrics: Option<serde_json::Value>,
    pub rejection: Option<RejectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub vertices: usize,
    pub triangles: usize,
    pub h: f64,
    pub r_max: f64,
    pub genus: i64,
    pub ends: usize,
    pub euler_characteristic: i64,
    pub library_sup_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub kappa: f64,
    pub tol: f64,
    pub iterations: usize,
    pub sup_h_before: f64,
    pub sup_h_after: Option<f64>,
    /// `‖u‖_{2,κ}` of the final correction.
    pub u_norm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    /// Sum of interior angle defects.
    pub angle_defect: f64,
    /// `∫ K dA` from the second fundamental form.
    pub integrated: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub negative: usize,
    /// Parities under `R_t`, `R_s`, `R_o` (catenoid only).
    pub parities: Vec<String>,
    pub min_abs_even: Option<f64>,
    pub nondegenerate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRow {
    pub field: String,
    pub loop_index: usize,
    pub loop_length: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    /// `end` for a catenoid end graph, `boxes` for gluing-strip boxes.
    pub kind: String,
    pub rate: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub residual_rate: Option<f64>,
    pub outside_sup: Option<f64>,
    pub boxes: Vec<BoxSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub d: Option<f64>,
    pub eta: Option<f64>,
    pub vertices: Option<usize>,
    pub sup_h_before: Option<f64>,
    pub sup_h_after: Option<f64>,
    pub u_norm: Option<f64>,
    pub iterations: Option<usize>,
    pub box_slope: Option<f64>,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    /// Slope of `ln ‖u‖` against `D` over the successful rows.
    pub norm_slope: Option<f64>,
    /// Slope of `ln(sup|H| r^{1/2})` against `r` over all rows' boxes.
    pub box_slope: Option<f64>,
}

/// Everything a run reports. Contains no wall-clock data, so identical
/// configurations give identical files; timings go to `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub verb: String,
    pub seed: u64,
    pub network: NetworkSummary,
    pub mesh: Option<MeshSummary>,
    pub solve: Option<SolveSummary>,
    pub total_curvature: Option<CurvatureSummary>,
    pub spectrum: Option<SpectrumSummary>,
    pub flux: Vec<FluxRow>,
    pub decay: Option<DecaySummary>,
    pub sweep: Option<SweepSummary>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

impl RunReport {
    pub fn new(verb: &str, seed: u64, network: NetworkSummary) -> Self {
        RunReport {
            verb: verb.to_string(),
            seed,
            network,
            mesh: None,
            solve: None,
            total_curvature: None,
            spectrum: None,
            flux: Vec::new(),
            decay: None,
            sweep: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            passed: true,
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.passed &= passed;
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), text + "\n").with_context(|| format!("cannot write report in {}", dir.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed report {}", path.display()))
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{} on {} network ({} lines, {} segments)\n", self.verb, self.network.kind, self.network.lines, self.network.segments);
        if let (Some(g), Some(k)) = (self.network.genus, self.network.ends) {
            s += &format!("  predicted topology: genus {g}, {k} ends\n");
        }
        if let Some(m) = &self.mesh {
            s += &format!(
                "  mesh: {} vertices, genus {}, {} ends, euler {}\n",
                m.vertices, m.genus, m.ends, m.euler_characteristic
            );
        }
        if let Some(v) = &self.solve {
            s += &format!("  solve: sup|H| {:.3e}", v.sup_h_before);
            if let (Some(a), Some(u)) = (v.sup_h_after, v.u_norm) {
                s += &format!(" -> {a:.3e} in {} iterations, |u| = {u:.4e} (kappa {})", v.iterations, v.kappa);
            }
            s += "\n";
        }
        if let Some(k) = &self.total_curvature {
            s += &format!("  total curvature {:.6} (expected {:.6})\n", k.integrated, k.expected);
        }
        if let Some(sw) = &self.sweep {
            s += &format!("  sweep over {}: {} rows\n", sw.parameter, sw.rows.len());
        }
        for c in &self.checks {
            s += &format!("  [{}] {}: {}\n", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        s += if self.passed { "all checks passed\n" } else { "some checks failed\n" };
        s
    }
}

/// Wall-clock time per stage, kept apart from the report.
#[derive(Debug, Default, Clone)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = std::time::Instant::now();
        let v = f();
        self.0.push((stage.to_string(), t.elapsed().as_secs_f64()));
        v
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::from("stage,seconds\n");
        for (k, v) in &self.0 {
            s += &format!("{k},{v:.6}\n");
        }
        std::fs::write(dir.join("timings.csv"), s)?;
        Ok(())
    }
}
