use std::f64::consts::PI;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use catenet_core::catenoid::{self, homologous_loop, loop_length, neck_loop};
use catenet_core::gluing::{self, linear_fit, mean_curvature_report, BoxSample, H_FLOOR};
use catenet_core::mesh::{self, second_fundamental_norm_sq, vertex_areas, write_fields_csv, write_obj, WeightedNormParams};
use catenet_core::network::{compute_topology, validate};
use catenet_core::solver::{assemble_jacobi, contraction_solve, is_embedded, nondegeneracy_check};
use catenet_core::{CatenoidLibrary, ContractionParams, KillingField, KillingTag, SolverError, SurfaceMesh};
use rayon::prelude::*;

use crate::config::{JobConfig, NetworkSpec, SweepParameter, SweepSpec};
use crate::report::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verb {
    Validate,
    Build,
    Solve,
    Spectrum,
    Flux,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Validate => "validate",
            Verb::Build => "build",
            Verb::Solve => "solve",
            Verb::Spectrum => "spectrum",
            Verb::Flux => "flux",
        }
    }
}

/// A built surface: the plain catenoid keeps its full symmetry group.
struct Built {
    mesh: SurfaceMesh,
    glued: Option<gluing::AssembledSurface>,
    eta: Option<f64>,
}

fn stage<T, E: std::fmt::Display>(name: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow!("stage {name}: {e}"))
}

fn write_artifact(report: &mut RunReport, out: Option<&Path>, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = out {
        f(&dir.join(name)).with_context(|| format!("stage output: cannot write {name}"))?;
        report.artifacts.push(name.to_string());
    }
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// `∫ K dA` with `K = -⟨N, ∂t⟩² - |A|²/2` and lumped areas.
pub fn integrated_curvature(m: &SurfaceMesh) -> Result<f64> {
    let a2 = second_fundamental_norm_sq(m)?;
    let area = vertex_areas(m);
    Ok((0..m.len()).map(|i| area[i] * (-m.normals[i][2].powi(2) - 0.5 * a2[i])).sum())
}

/// Decay window on a catenoid end truncated at `r_max`.
fn end_window(r_max: f64) -> (f64, f64) {
    (0.5 * r_max - 1.0, r_max - 2.0)
}

pub fn run(cfg: &JobConfig, verb: Verb, seed: u64, out: Option<&Path>, t: &mut Timings) -> Result<RunReport> {
    let net = stage("network", cfg.network.build())?;
    let mut summary = NetworkSummary {
        kind: cfg.network.kind().to_string(),
        lines: net.lines.len(),
        segments: net.segments.len(),
        d: None,
        eta: None,
        genus: None,
        ends: None,
        metrics: None,
        rejection: None,
    };
    let metrics = t.time("validate", || validate(&net));
    let rejection = match metrics {
        Ok(m) => {
            summary.d = finite(m.d);
            summary.eta = Some(m.eta);
            let topo = compute_topology(&net).ok();
            summary.genus = topo.map(|p| p.0);
            summary.ends = topo.map(|p| p.1);
            summary.metrics = serde_json::to_value(&m).ok();
            gluing::decompose(&net).err().map(|e| e.to_string())
        }
        Err(rej) => {
            let msg = rej.to_string();
            summary.rejection = Some(rej);
            Some(msg)
        }
    };
    let mut report = RunReport::new(verb.name(), seed, summary.clone());
    if let Some(detail) = rejection {
        report.check("network", false, detail);
        return Ok(report);
    }
    report.check("network", true, format!("D = {:?}, eta = {:.6}", summary.d, summary.eta.unwrap_or(0.0)));
    if verb == Verb::Validate {
        return Ok(report);
    }

    let mut lib = CatenoidLibrary::new(cfg.mesh.h, cfg.mesh.r_max);
    let built = t.time("assemble", || -> Result<Built> {
        match cfg.network.catenoid_eta() {
            Some(eta) => {
                let e = stage("assemble", lib.get(eta))?;
                Ok(Built { mesh: e.mesh.clone(), glued: None, eta: Some(eta) })
            }
            None => {
                let s = stage("assemble", gluing::assemble(&net, &mut lib))?;
                Ok(Built { mesh: s.mesh.clone(), glued: Some(s), eta: None })
            }
        }
    })?;
    let m = &built.mesh;
    let h_field = stage("assemble", mesh::mean_curvature(m))?;
    write_artifact(&mut report, out, "mesh.obj", |p| Ok(write_obj(m, p)?))?;
    write_artifact(&mut report, out, "fields.csv", |p| Ok(write_fields_csv(m, p, &[("H", &h_field)])?))?;
    let (genus, ends) = (m.genus(), m.boundary_loops().len());
    let chi = m.euler_characteristic();
    let sup_h0 = h_field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    report.mesh = Some(MeshSummary {
        vertices: m.len(),
        triangles: m.triangles.len(),
        h: cfg.mesh.h,
        r_max: cfg.mesh.r_max,
        genus,
        ends,
        euler_characteristic: chi,
        library_sup_h: lib.entries().iter().map(|e| e.sup_h).fold(0.0, f64::max),
    });

    if cfg.checks.topology {
        let want = (summary.genus.unwrap_or(0) as i64, summary.ends.unwrap_or(0));
        let ok = (genus, ends) == want && chi == 2 - 2 * genus - ends as i64;
        report.check("topology", ok, format!("mesh (g, k) = ({genus}, {ends}), predicted {want:?}, euler {chi}"));
    }
    if cfg.checks.total_curvature {
        let k = t.time("curvature", || integrated_curvature(m))?;
        let expected = -4.0 * PI * net.segments.len() as f64;
        let defect = mesh::total_curvature(m).interior;
        let rel = (k / expected - 1.0).abs();
        report.total_curvature = Some(CurvatureSummary { angle_defect: defect, integrated: k, expected });
        report.check("total_curvature", rel <= 0.05, format!("{k:.6} vs {expected:.6} (relative error {rel:.4})"));
    }

    // gluing error boxes; also fixes the solve tolerance floor
    let mut floor = sup_h0;
    if let Some(s) = &built.glued {
        let r = t.time("decay", || mean_curvature_report(s));
        let r = stage("decay", r)?;
        if r.outside_vertices > 0 {
            floor = r.outside_sup;
        }
        let slope = r.fit.as_ref().map(|f| f.slope);
        report.decay = Some(DecaySummary {
            kind: "boxes".into(),
            rate: slope,
            window: None,
            residual_rate: None,
            outside_sup: Some(r.outside_sup),
            boxes: r.boxes.clone(),
        });
        write_artifact(&mut report, out, "boxes.csv", |p| write_boxes(p, &[(0, &r.boxes)]))?;
        if cfg.checks.decay {
            let ok = slope.is_some_and(|s| (s + 1.0).abs() <= 0.15);
            report.check("decay", ok, format!("box slope {slope:?} (target -1 +- 0.15), outside sup|H| {:.3e}", r.outside_sup));
        }
    } else if cfg.checks.decay {
        let eta = built.eta.unwrap();
        let w = end_window(cfg.mesh.r_max);
        let d = t.time("decay", || catenoid::end_decay(m, eta, w));
        let d = stage("decay", d)?;
        let ok = (d.rate + 1.0).abs() <= 0.1 && d.residual_rate <= -0.7;
        report.decay = Some(DecaySummary {
            kind: "end".into(),
            rate: Some(d.rate),
            window: Some(w),
            residual_rate: finite(d.residual_rate),
            outside_sup: None,
            boxes: Vec::new(),
        });
        report.check("decay", ok, format!("end rate {:.4} (target -1 +- 0.1), residual exponent {:.3}", d.rate, d.residual_rate));
    }

    if verb == Verb::Spectrum || cfg.checks.spectrum {
        t.time("spectrum", || spectrum_stage(&built, cfg.mesh.h, seed, &mut report))?;
    }
    if verb == Verb::Flux || cfg.checks.flux {
        t.time("flux", || flux_stage(&built, out, &mut report))?;
    }
    if verb == Verb::Solve {
        let tol = cfg.solve.tol.unwrap_or_else(|| (1e-2 * sup_h0).max(4.0 * floor).min(1e-3));
        let p = ContractionParams { kappa: cfg.solve.kappa, tol, max_iter: cfg.solve.max_iter, check_embedded: false };
        let res = t.time("solve", || contraction_solve(m, p));
        let mut sv =
            SolveSummary { kappa: p.kappa, tol, iterations: 0, sup_h_before: sup_h0, sup_h_after: None, u_norm: None, error: None };
        match res {
            Ok((u, solved, st)) => {
                sv.iterations = st.iterations;
                sv.sup_h_after = st.sup_h_history.last().copied();
                sv.u_norm = Some(stage("solve", mesh::weighted_norm(m, &u, WeightedNormParams { kappa: p.kappa, mu: 0.5 }, 2))?);
                let after = sv.sup_h_after.unwrap_or(f64::INFINITY);
                report.check("converged", after <= tol, format!("sup|H| {after:.3e} <= {tol:.3e} in {} iterations", st.iterations));
                if cfg.checks.embedded {
                    let e = t.time("embedded", || is_embedded(&solved));
                    report.check("embedded", e, "solved surface".into());
                }
                write_artifact(&mut report, out, "solved.obj", |q| Ok(write_obj(&solved, q)?))?;
                write_artifact(&mut report, out, "solved_fields.csv", |q| Ok(write_fields_csv(&solved, q, &[("u", &u)])?))?;
                write_artifact(&mut report, out, "contraction.csv", |q| Ok(std::fs::write(q, st.to_csv())?))?;
            }
            Err(e @ (SolverError::NotConverged { .. } | SolverError::Diverged { .. })) => {
                sv.error = Some(e.to_string());
                report.check("converged", false, e.to_string());
            }
            Err(e) => bail!("stage solve: {e}"),
        }
        report.solve = Some(sv);
        if !cfg.checks.d_sweep.is_empty() {
            let NetworkSpec::SymmetricRing { .. } = cfg.network else {
                bail!("stage d_sweep: requires a symmetric_ring network");
            };
            let spec = SweepSpec { parameter: SweepParameter::Separation, values: cfg.checks.d_sweep.clone(), solve: true };
            let (sw, _) = t.time("d_sweep", || sweep_rows(cfg, &spec, seed));
            let norms: Vec<Option<f64>> = sw.rows.iter().map(|r| r.u_norm).collect();
            let ok = norms.iter().all(|n| n.is_some()) && norms.windows(2).all(|w| w[1] < w[0]);
            report.check("d_sweep", ok, format!("|u| by D: {norms:?}, log slope {:?}", sw.norm_slope));
            report.sweep = Some(sw);
        }
    } else if cfg.checks.embedded {
        let e = t.time("embedded", || is_embedded(m));
        report.check("embedded", e, "assembled surface".into());
    }
    Ok(report)
}

fn spectrum_stage(b: &Built, h: f64, seed: u64, report: &mut RunReport) -> Result<()> {
    let m = &b.mesh;
    if b.glued.is_none() {
        let s = stage("spectrum", catenoid::spectrum(m, 4))?;
        let negative = s.eigenvalues.iter().filter(|&&l| l < 0.0).count();
        // the second mode is the discretised translation field, zero up to O(h² ‖V‖)
        let v = stage("spectrum", assemble_jacobi(m))?.potential.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let band = 5.0 * h * h * v;
        let l = &s.eigenvalues;
        let ok = l.len() >= 3 && l[0] < 0.0 && l[0] < -l[1].abs() && l[1].abs() <= band && l[2] > 0.0;
        report.check("spectrum", ok, format!("eigenvalues {l:?}, {negative} negative, near-zero band {band:.3e}"));
        report.spectrum = Some(SpectrumSummary {
            eigenvalues: s.eigenvalues.clone(),
            negative,
            parities: s.parities.iter().map(|p| format!("{:?}/{:?}/{:?}", p[0], p[1], p[2])).collect(),
            min_abs_even: None,
            nondegenerate: None,
        });
        return Ok(());
    }
    let sys = stage("spectrum", assemble_jacobi(m))?;
    let (vals, _) = stage("spectrum", sys.lowest_eigenpairs(4, seed))?;
    let nd = stage("spectrum", nondegeneracy_check(m))?;
    let negative = vals.iter().filter(|&&l| l < 0.0).count();
    report.check(
        "spectrum",
        nd.nondegenerate,
        format!("even min |lambda| {:.4e} (threshold {:.1e}), lowest {vals:?}", nd.min_abs_eigenvalue, nd.threshold),
    );
    report.spectrum = Some(SpectrumSummary {
        eigenvalues: vals,
        negative,
        parities: Vec::new(),
        min_abs_even: Some(nd.min_abs_eigenvalue),
        nondegenerate: Some(nd.nondegenerate),
    });
    Ok(())
}

const FLUX_FIELDS: [(KillingTag, &str); 4] =
    [(KillingTag::Xt, "X_t"), (KillingTag::XR, "X_R"), (KillingTag::XGamma0, "X_gamma0"), (KillingTag::XGamma, "X_Gamma")];

fn flux_stage(b: &Built, out: Option<&Path>, report: &mut RunReport) -> Result<()> {
    if b.glued.is_some() {
        bail!("stage flux: requires a catenoid network");
    }
    let m = &b.mesh;
    let mut loops = vec![stage("flux", neck_loop(m))?];
    for d in [3, 6] {
        if let Ok(l) = homologous_loop(m, d) {
            loops.push(l);
        }
    }
    let mut ok = true;
    let mut worst = 0.0f64;
    for (i, l) in loops.iter().enumerate() {
        let len = loop_length(m, l);
        let mut small = 0.0f64;
        let mut big = 0.0;
        for (tag, name) in FLUX_FIELDS {
            let f = stage("flux", catenoid::flux(m, l, &KillingField::new(tag)))?;
            if tag == KillingTag::XGamma {
                big = f.abs();
            } else {
                small = small.max(f.abs());
            }
            report.flux.push(FluxRow { field: name.into(), loop_index: i, loop_length: len, flux: f });
        }
        ok &= small <= 1e-6 * len && big >= 1e3 * small;
        worst = worst.max(small / len);
    }
    let rows = report.flux.clone();
    write_artifact(report, out, "flux.csv", |p| {
        let mut s = String::from("loop,field,loop_length,flux\n");
        for r in &rows {
            s += &format!("{},{},{:.9},{:.9e}\n", r.loop_index, r.field, r.loop_length, r.flux);
        }
        Ok(std::fs::write(p, s)?)
    })?;
    report.check("flux", ok, format!("{} loops, worst vanishing flux / length {worst:.3e}", loops.len()));
    Ok(())
}

fn write_boxes(p: &Path, sets: &[(usize, &[BoxSample])]) -> Result<()> {
    let mut s = String::from("row,strip,t,r,r_centre,sup_h,vertices\n");
    for (row, boxes) in sets {
        for b in *boxes {
            s += &format!("{row},{},{:.6},{:.9},{:.9},{:.9e},{}\n", b.strip, b.t, b.r, b.r_centre, b.sup_h, b.vertices);
        }
    }
    Ok(std::fs::write(p, s)?)
}

fn with_value(cfg: &JobConfig, p: SweepParameter, v: f64) -> Result<JobConfig> {
    let mut c = cfg.clone();
    c.sweep = None;
    c.checks.d_sweep.clear();
    match (p, &mut c.network) {
        (SweepParameter::Eta, NetworkSpec::Catenoid { eta }) => *eta = v,
        (SweepParameter::Eta, NetworkSpec::SymmetricRing { eta, separation, .. }) => {
            *eta = Some(v);
            *separation = None;
        }
        (SweepParameter::Separation, NetworkSpec::SymmetricRing { eta, separation, .. }) => {
            *eta = None;
            *separation = Some(v);
        }
        (SweepParameter::J, NetworkSpec::SymmetricRing { j, .. }) => {
            if v.fract() != 0.0 || v < 3.0 {
                bail!("sweep value {v} is not a line count");
            }
            *j = v as usize;
        }
        (SweepParameter::H, _) => c.mesh.h = v,
        (SweepParameter::RMax, _) => c.mesh.r_max = v,
        (SweepParameter::Kappa, _) => c.solve.kappa = v,
        (p, n) => bail!("sweep parameter {p:?} does not apply to a {} network", n.kind()),
    }
    Ok(c)
}

fn sweep_row(cfg: &JobConfig, spec: &SweepSpec, v: f64, seed: u64) -> (SweepRow, Vec<BoxSample>) {
    let mut row = SweepRow {
        value: v,
        d: None,
        eta: None,
        vertices: None,
        sup_h_before: None,
        sup_h_after: None,
        u_norm: None,
        iterations: None,
        box_slope: None,
        passed: false,
        error: None,
    };
    let verb = if spec.solve { Verb::Solve } else { Verb::Build };
    let res = with_value(cfg, spec.parameter, v).and_then(|c| run(&c, verb, seed, None, &mut Timings::default()));
    match res {
        Ok(r) => {
            row.d = r.network.d;
            row.eta = r.network.eta;
            row.vertices = r.mesh.as_ref().map(|m| m.vertices);
            if let Some(s) = &r.solve {
                row.sup_h_before = Some(s.sup_h_before);
                row.sup_h_after = s.sup_h_after;
                row.u_norm = s.u_norm;
                row.iterations = Some(s.iterations);
            }
            row.box_slope = r.decay.as_ref().filter(|d| d.kind == "boxes").and_then(|d| d.rate);
            row.passed = r.passed;
            if !r.passed {
                let failed: Vec<String> = r.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
                row.error = Some(failed.join("; "));
            }
            let boxes = r.decay.map(|d| d.boxes).unwrap_or_default();
            (row, boxes)
        }
        Err(e) => {
            row.error = Some(format!("{e:#}"));
            (row, Vec::new())
        }
    }
}

/// One independent run per value; rows come back in input order.
pub fn sweep_rows(cfg: &JobConfig, spec: &SweepSpec, seed: u64) -> (SweepSummary, Vec<Vec<BoxSample>>) {
    let res: Vec<(SweepRow, Vec<BoxSample>)> = spec.values.par_iter().map(|&v| sweep_row(cfg, spec, v, seed)).collect();
    let (rows, boxes): (Vec<SweepRow>, Vec<Vec<BoxSample>>) = res.into_iter().unzip();
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.d?, r.u_norm.filter(|&u| u > 0.0)?.ln()))).collect();
    let norm_slope = (pts.len() >= 2).then(|| linear_fit(&pts)).flatten().map(|f| f.slope);
    let bpts: Vec<(f64, f64)> =
        boxes.iter().flatten().filter(|b| b.sup_h > H_FLOOR).map(|b| (b.r, (b.sup_h * b.r.sqrt()).ln())).collect();
    let box_slope = (bpts.len() >= 2).then(|| linear_fit(&bpts)).flatten().map(|f| f.slope);
    let parameter = serde_json::to_value(spec.parameter).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    (SweepSummary { parameter, rows, norm_slope, box_slope }, boxes)
}

pub fn sweep(cfg: &JobConfig, seed: u64, out: Option<&Path>, t: &mut Timings) -> Result<RunReport> {
    let spec = cfg.sweep.clone().ok_or_else(|| anyhow!("config: table `sweep` is required by the sweep verb"))?;
    let base = run(cfg, Verb::Validate, seed, None, t).ok().map(|r| r.network);
    let network = base.unwrap_or(NetworkSummary {
        kind: cfg.network.kind().to_string(),
        lines: 0,
        segments: 0,
        d: None,
        eta: None,
        genus: None,
        ends: None,
        metrics: None,
        rejection: None,
    });
    let mut report = RunReport::new("sweep", seed, network);
    let (sw, boxes) = t.time("sweep", || sweep_rows(cfg, &spec, seed));
    let table = sweep_csv(&sw);
    write_artifact(&mut report, out, "sweep.csv", |p| Ok(std::fs::write(p, &table)?))?;
    let sets: Vec<(usize, &[BoxSample])> = boxes.iter().enumerate().map(|(i, b)| (i, b.as_slice())).collect();
    write_artifact(&mut report, out, "boxes.csv", |p| write_boxes(p, &sets))?;
    let failed = sw.rows.iter().filter(|r| !r.passed).count();
    report.check("rows", failed == 0, format!("{} of {} rows passed", sw.rows.len() - failed, sw.rows.len()));
    if spec.parameter == SweepParameter::J {
        let ds: Vec<Option<f64>> = sw.rows.iter().map(|r| r.d).collect();
        let ok = ds.iter().all(|d| d.is_some()) && ds.windows(2).all(|w| w[1] > w[0]);
        report.check("d_increasing", ok, format!("D by j: {ds:?}"));
    }
    report.sweep = Some(sw);
    Ok(report)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9e}")).unwrap_or_default()
}

pub fn sweep_csv(sw: &SweepSummary) -> String {
    let mut s = format!("{},d,eta,vertices,sup_h_before,sup_h_after,u_norm,iterations,box_slope,passed,error\n", sw.parameter);
    for r in &sw.rows {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},\"{}\"\n",
            r.value,
            opt(r.d),
            opt(r.eta),
            r.vertices.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.sup_h_before),
            opt(r.sup_h_after),
            opt(r.u_norm),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.box_slope),
            r.passed,
            r.error.clone().unwrap_or_default().replace('"', "'"),
        );
    }
    s
}
