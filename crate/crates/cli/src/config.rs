use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use catenet_core::hyperbolic::Geodesic;
use catenet_core::network::symmetric_ring;
use catenet_core::{GeodesicNetwork, PlaneIsometry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub network: NetworkSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub checks: Checks,
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Two lines at separation `eta` with one connecting segment.
    Catenoid { eta: f64 },
    /// `j` rotationally symmetric lines; give either `eta` or `separation`
    /// (the neck spacing `D` along each line).
    SymmetricRing { j: usize, eta: Option<f64>, separation: Option<f64> },
    /// Lines by ideal endpoint angles, segments by line index.
    Lines { lines: Vec<[f64; 2]>, segments: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn default_h() -> f64 {
    0.25
}

fn default_r_max() -> f64 {
    8.0
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec { h: default_h(), r_max: default_r_max() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Target sup |H|; chosen from the surface when absent.
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_kappa() -> f64 {
    -0.5
}

fn default_max_iter() -> usize {
    20
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec { kappa: default_kappa(), tol: None, max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default)]
    pub topology: bool,
    #[serde(default)]
    pub total_curvature: bool,
    #[serde(default)]
    pub decay: bool,
    #[serde(default)]
    pub spectrum: bool,
    #[serde(default)]
    pub flux: bool,
    #[serde(default)]
    pub embedded: bool,
    /// Neck spacings for a ring solve sweep.
    #[serde(default)]
    pub d_sweep: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Eta,
    Separation,
    J,
    H,
    RMax,
    Kappa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "yes")]
    pub solve: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_dir() }
    }
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: JobConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    fn check(&self) -> Result<()> {
        if !(self.mesh.h > 0.0) {
            bail!("config: key `mesh.h` must be positive, got {}", self.mesh.h);
        }
        if !(self.mesh.r_max > 0.0) {
            bail!("config: key `mesh.r_max` must be positive, got {}", self.mesh.r_max);
        }
        if let Some(t) = self.solve.tol {
            if !(t > 0.0) {
                bail!("config: key `solve.tol` must be positive, got {t}");
            }
        }
        if let NetworkSpec::SymmetricRing { eta, separation, .. } = &self.network {
            if eta.is_some() == separation.is_some() {
                bail!("config: table `network` needs exactly one of `eta` and `separation`");
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                bail!("config: key `sweep.values` is empty");
            }
        }
        Ok(())
    }
}

/// Separation of adjacent lines in a `j`-ring whose necks are `d` apart.
pub fn ring_eta(j: usize, d: f64) -> f64 {
    2.0 * ((std::f64::consts::PI / j as f64).cos() / (d / 2.0).sinh()).asinh()
}

/// The lines `x = ±η/2` about the real axis with their common perpendicular.
pub fn catenoid_network(eta: f64) -> GeodesicNetwork {
    let v = Geodesic::from_angles(-FRAC_PI_2, FRAC_PI_2).expect("distinct endpoints");
    GeodesicNetwork::new(
        vec![PlaneIsometry::translation_x(-0.5 * eta).apply_geodesic(&v), PlaneIsometry::translation_x(0.5 * eta).apply_geodesic(&v)],
        vec![(0, 1)],
    )
}

impl NetworkSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            NetworkSpec::Catenoid { .. } => "catenoid",
            NetworkSpec::SymmetricRing { .. } => "symmetric_ring",
            NetworkSpec::Lines { .. } => "lines",
        }
    }

    pub fn build(&self) -> Result<GeodesicNetwork> {
        match self {
            NetworkSpec::Catenoid { eta } => Ok(catenoid_network(*eta)),
            NetworkSpec::SymmetricRing { j, eta, separation } => {
                let eta = match (eta, separation) {
                    (Some(e), _) => *e,
                    (None, Some(d)) => ring_eta(*j, *d),
                    (None, None) => unreachable!(),
                };
                Ok(symmetric_ring(*j, eta)?)
            }
            NetworkSpec::Lines { lines, segments } => {
                let ls = lines
                    .iter()
                    .enumerate()
                    .map(|(i, [a, b])| Geodesic::from_angles(*a, *b).with_context(|| format!("network: line {i}")))
                    .collect::<Result<Vec<_>>>()?;
                Ok(GeodesicNetwork::new(ls, segments.iter().map(|[a, b]| (*a, *b)).collect()))
            }
        }
    }

    /// Separation of the single catenoid, if this is one.
    pub fn catenoid_eta(&self) -> Option<f64> {
        match self {
            NetworkSpec::Catenoid { eta } => Some(*eta),
            _ => None,
        }
    }
}
