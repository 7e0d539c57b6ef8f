//! Horizontal catenoids: ring-mesh ansatz bridging two vertical planes,
//! Newton refinement in the symmetric quotient, and the verification
//! quantities (necksize, Killing Jacobi fields, spectrum, fluxes, end decay).

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{eta0, fermi_coords, fermi_point, real_axis_fermi, Geodesic, HPoint, PlaneIsometry};
use crate::linalg::LuSolver;
use crate::mesh::{
    ambient_log, check_angles, dot, mean_curvature_trace, normal_graph_bounded, MeshError, Region, ScalarField, SurfaceMesh, Symmetries,
    V3,
};
use crate::model::{decay_fit_samples, k0, DecayFit, ModelError};
use crate::solver::{assemble_jacobi, linearize, nondegeneracy_check, Quotient, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatenoidError {
    #[error("separation {0} outside (0, η₀)")]
    Separation(f64),
    #[error("truncation radius {0} below 6")]
    Truncation(f64),
    #[error("mesh spacing {0} outside (0, 0.25]")]
    Spacing(f64),
    #[error("no neck waist matches separation {0}")]
    NoWaist(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("refinement did not converge in {iterations} steps; sup|H| history {history:?}")]
    NotConverged { iterations: usize, history: Vec<f64> },
    #[error("mesh lacks the reflection pairings of a catenoid")]
    MissingSymmetry,
    #[error("ansatz is horizontally degenerate (min |λ| = {0:.3e})")]
    Degenerate(f64),
    #[error("neck section is not a single closed loop ({0} pieces)")]
    NeckSection(usize),
    #[error("loop is not closed")]
    OpenLoop,
    #[error("loop edge {0}-{1} is not a mesh edge")]
    NotAnEdge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatenoidSpec {
    pub eta: f64,
    pub r_max: f64,
    pub h: f64,
    /// End graph amplitude; `None` picks the value matched to the neck model.
    pub a0: Option<f64>,
}

impl CatenoidSpec {
    pub fn new(eta: f64, r_max: f64, h: f64) -> Result<Self, CatenoidError> {
        let s = CatenoidSpec { eta, r_max, h, a0: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CatenoidError> {
        if !(self.eta > 0.0 && self.eta < eta0()) {
            return Err(CatenoidError::Separation(self.eta));
        }
        if !(self.r_max >= 6.0) {
            return Err(CatenoidError::Truncation(self.r_max));
        }
        if !(self.h > 0.0 && self.h <= 0.25) {
            return Err(CatenoidError::Spacing(self.h));
        }
        Ok(())
    }

    /// Waist of the small-neck model `η/2 = a (ln 2 + K₀(a))`.
    pub fn matched_waist(&self) -> Result<f64, CatenoidError> {
        let f = |a: f64| a * (2f64.ln() + k0(a)) - 0.5 * self.eta;
        bisect_increasing(f, 1e-6, 0.8).ok_or(CatenoidError::NoWaist(self.eta))
    }

    pub fn amplitude(&self) -> Result<f64, CatenoidError> {
        match self.a0 {
            Some(a) => Ok(a),
            None => Ok((PI / 2.0).sqrt() * self.matched_waist()?),
        }
    }
}

fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

pub(crate) fn smoothstep(x: f64) -> f64 {
    let s = x.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// The plane `P₊ = {x = η/2}`, oriented so that its Fermi arclength is the
/// signed distance `y` from `Γ` and positive signed distance points towards
/// the other plane.
pub fn end_plane(eta: f64) -> Geodesic {
    let g = PlaneIsometry::translation_x(0.5 * eta).apply_geodesic(&Geodesic::from_angles(-0.5 * PI, 0.5 * PI).unwrap());
    if axis_coords(&fermi_point(&g, 1.0, 0.0)).1 < 0.0 {
        g.reversed()
    } else {
        g
    }
}

/// Along-axis and distance coordinates `(x, y)` about `Γ` (the real axis).
fn axis_coords(p: &HPoint) -> (f64, f64) {
    fermi_coords(&Geodesic::real_axis(), p)
}

/// Ansatz profile parameters derived from a spec.
#[derive(Debug, Clone, Copy)]
struct Profile {
    eta: f64,
    a: f64,
    a0: f64,
}

impl Profile {
    fn new(spec: &CatenoidSpec) -> Result<Self, CatenoidError> {
        let a0 = spec.amplitude()?;
        let target = 0.5 * spec.eta - a0 * 1.5f64.powf(-0.5) * (-1.5f64).exp();
        let f = |a: f64| a * (1.5 / a).acosh() - target;
        // increasing branch of a ↦ a·acosh(1.5/a)
        let a = bisect_increasing(f, 1e-6, 0.9).ok_or(CatenoidError::NoWaist(spec.eta))?;
        Ok(Profile { eta: spec.eta, a, a0 })
    }

    fn graph(&self, r: f64) -> f64 {
        self.a0 * r.powf(-0.5) * (-r).exp()
    }

    /// Reference meridian `x` over `ρ ≥ a`, independent of the angle.
    fn reference_x(&self, rho: f64) -> f64 {
        let xn = self.a * (rho / self.a).max(1.0).acosh();
        let xe = 0.5 * self.eta - self.graph(rho);
        let c = smoothstep(rho - 1.0);
        (1.0 - c) * xn + c * xe
    }

    /// Ambient point of the `x ≥ 0` half at meridian data `(ρ, w)` and angle
    /// `θ` in the `(y, t)` plane; `w` is the catenoid parameter used below
    /// `ρ = 1`.
    fn point(&self, plane: &Geodesic, rho: f64, w: Option<f64>, theta: f64) -> (HPoint, f64) {
        let (ct, st) = (theta.cos(), theta.sin());
        if let Some(w) = w {
            return (real_axis_fermi(self.a * w, rho * ct), rho * st);
        }
        let xn = self.a * (rho / self.a).max(1.0).acosh();
        let pe = fermi_point(plane, rho * ct, self.graph(rho));
        let c = smoothstep(rho - 1.0);
        if c >= 1.0 {
            return (pe, rho * st);
        }
        let (xe, ye) = axis_coords(&pe);
        let x = (1.0 - c) * xn + c * xe;
        let y = (1.0 - c) * rho * ct + c * ye;
        (real_axis_fermi(x, y), rho * st)
    }
}

/// Ring layout: per ring the meridian data and the angular count.
#[derive(Debug, Clone)]
struct Ring {
    rho: f64,
    w: Option<f64>,
    n: usize,
}

fn ring_layout(spec: &CatenoidSpec, prof: &Profile) -> Vec<Ring> {
    let h = spec.h;
    let a = prof.a;
    // dense reference meridian: (τ, ρ, w)
    let mut table: Vec<(f64, f64, Option<f64>)> = Vec::new();
    let w1 = (1.0 / a).acosh();
    let nw = 4000;
    let mut tau = 0.0;
    let mut last = (0.0, a);
    for k in 0..=nw {
        let w = w1 * k as f64 / nw as f64;
        let (x, rho) = (a * w, a * w.cosh());
        tau += (x - last.0).hypot(rho - last.1);
        last = (x, rho);
        table.push((tau, rho, Some(w)));
    }
    let nr = 20000;
    for k in 1..=nr {
        let rho = 1.0 + (spec.r_max - 1.0) * k as f64 / nr as f64;
        let x = prof.reference_x(rho);
        tau += (x - last.0).hypot(rho - last.1);
        last = (x, rho);
        table.push((tau, rho, None));
    }
    let tau_max = tau;
    let lookup = |t: f64| -> (f64, Option<f64>) {
        let k = table.partition_point(|e| e.0 < t).clamp(1, table.len() - 1);
        let (t0, r0, w0) = table[k - 1];
        let (t1, r1, w1) = table[k];
        let s = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        let rho = r0 + s * (r1 - r0);
        match (w0, w1) {
            (Some(a0), Some(a1)) => (rho, Some(a0 + s * (a1 - a0))),
            _ => (rho, None),
        }
    };
    let n0 = {
        let by_h = 4 * ((TAU * a / (4.0 * h)).ceil() as usize).max(1);
        let floor = 4 * ((6.0 * 0.1 / h).round() as usize);
        by_h.max(floor)
    };
    // march outwards
    let mut taus = vec![0.0];
    let mut ns = vec![n0];
    let mut rho = a;
    let mut n = n0;
    loop {
        let c = TAU * rho / n as f64;
        let step = c.min(h);
        let t = taus.last().unwrap() + step;
        if t >= tau_max - 0.5 * step {
            break;
        }
        let (r, _) = lookup(t);
        rho = r;
        if TAU * rho / (2 * n) as f64 >= 0.75 * h {
            n *= 2;
        }
        taus.push(t);
        ns.push(n);
    }
    // rescale so the last ring sits exactly at the truncation radius
    let scale = tau_max / *taus.last().unwrap();
    let mut rings: Vec<Ring> = taus
        .iter()
        .zip(&ns)
        .map(|(&t, &n)| {
            let (rho, w) = lookup(t * scale);
            Ring { rho, w, n }
        })
        .collect();
    rings[0] = Ring { rho: a, w: Some(0.0), n: n0 };
    let last = rings.len() - 1;
    rings[last].rho = spec.r_max;
    rings[last].w = None;
    rings
}

/// Triangles between an inner ring (offset `oi`, count `ni`) and an outer
/// ring (`oo`, `no` = `ni` or `2 ni`), counter-clockwise in `(θ, k)`.
fn band(oi: usize, ni: usize, oo: usize, no: usize, tris: &mut Vec<[usize; 3]>) {
    if no == ni {
        for i in 0..ni {
            let j = (i + 1) % ni;
            let (a, b, c, d) = (oi + i, oi + j, oo + i, oo + j);
            let quadrant = 4 * i / ni;
            if quadrant % 2 == 0 {
                tris.push([a, b, d]);
                tris.push([a, d, c]);
            } else {
                tris.push([a, b, c]);
                tris.push([b, d, c]);
            }
        }
    } else {
        debug_assert_eq!(no, 2 * ni);
        for i in 0..ni {
            let j = (i + 1) % ni;
            let (a, b) = (oi + i, oi + j);
            let (c, d, e) = (oo + 2 * i, oo + 2 * i + 1, oo + (2 * i + 2) % no);
            tris.push([a, d, c]);
            tris.push([a, b, d]);
            tris.push([d, b, e]);
        }
    }
}

/// Initial surface: neck, blend annuli and planar ends, with the three
/// reflection pairings exact by construction.
pub fn build_ansatz(spec: &CatenoidSpec) -> Result<SurfaceMesh, CatenoidError> {
    spec.validate()?;
    let prof = Profile::new(spec)?;
    let plane = end_plane(spec.eta);
    let rings = ring_layout(spec, &prof);
    let kmax = rings.len() - 1;
    // vertex block of signed ring index k ∈ [-kmax, kmax]
    let mut offset = vec![0usize; 2 * kmax + 2];
    for idx in 0..=2 * kmax {
        let k = idx as i64 - kmax as i64;
        offset[idx + 1] = offset[idx] + rings[k.unsigned_abs() as usize].n;
    }
    let off = |k: i64| offset[(k + kmax as i64) as usize];
    let total = offset[2 * kmax + 1];
    let mut base = vec![HPoint::ORIGIN; total];
    let mut height = vec![0.0; total];
    let mut region = vec![Region::End; total];
    let mut weight = vec![0.0; total];
    for (k, ring) in rings.iter().enumerate() {
        let pts: Vec<(HPoint, f64)> =
            (0..ring.n).map(|i| prof.point(&plane, ring.rho, ring.w, TAU * i as f64 / ring.n as f64)).collect();
        let reg = if ring.rho < 1.0 {
            Region::Neck
        } else if ring.rho < 2.0 {
            Region::Transition
        } else {
            Region::End
        };
        for (i, (p, t)) in pts.iter().enumerate() {
            for sgn in [1i64, -1] {
                if k == 0 && sgn < 0 {
                    continue;
                }
                let v = off(sgn * k as i64) + i;
                base[v] = if sgn > 0 { *p } else { HPoint { z: -p.z.conj(), lam: p.lam } };
                height[v] = *t;
                region[v] = reg;
                weight[v] = ring.rho;
            }
        }
        // exact symmetry on fixed sets
        for sgn in [1i64, -1] {
            let o = off(sgn * k as i64);
            let n = ring.n;
            for &i in &[0, n / 4, n / 2, 3 * n / 4] {
                if i == 0 || i == n / 2 {
                    height[o + i] = 0.0;
                } else {
                    base[o + i].z.im = 0.0;
                }
            }
        }
    }
    for i in 0..rings[0].n {
        base[i + off(0)].z.re = 0.0;
    }
    let mut tris = Vec::new();
    for k in 0..kmax {
        let (ni, no) = (rings[k].n, rings[k + 1].n);
        band(off(k as i64), ni, off(k as i64 + 1), no, &mut tris);
        let mut mirrored = Vec::new();
        band(off(-(k as i64)), ni, off(-(k as i64) - 1), no, &mut mirrored);
        tris.extend(mirrored.into_iter().map(|t| [t[0], t[2], t[1]]));
    }
    let mut m = SurfaceMesh::new(base, height, tris)?;
    m.region = region;
    m.weight = weight;
    // index symmetries
    let mut rt = vec![0; total];
    let mut rs = vec![0; total];
    let mut ro = vec![0; total];
    for idx in 0..=2 * kmax {
        let k = idx as i64 - kmax as i64;
        let n = rings[k.unsigned_abs() as usize].n;
        for i in 0..n {
            let v = off(k) + i;
            rt[v] = off(k) + (n - i) % n;
            rs[v] = off(k) + (n + n / 2 - i) % n;
            ro[v] = off(-k) + i;
        }
    }
    m.sym = Symmetries { rt: Some(rt), rs: Some(rs), ro: Some(ro) };
    orient_inward(&mut m);
    symmetrize(&mut m)?;
    Ok(m)
}

/// Flips the triangle orientation if needed so that normals point towards
/// the axis `Γ × {0}` at the waist (down at its top), hence away from the
/// other plane on each end.
fn orient_inward(m: &mut SurfaceMesh) {
    let top = (0..m.len()).filter(|&i| m.region[i] == Region::Neck).max_by(|&a, &b| m.height[a].partial_cmp(&m.height[b]).unwrap());
    if let Some(v) = top {
        if m.normals[v][2] > 0.0 {
            for t in &mut m.triangles {
                t.swap(1, 2);
            }
            m.topo = crate::mesh::Topology::build(m.len(), &m.triangles).expect("reoriented topology");
            m.recompute_normals();
        }
    }
}

/// The eight elements of the reflection group as (index map, point map).
fn group(m: &SurfaceMesh) -> Result<Vec<(Vec<usize>, [bool; 3])>, CatenoidError> {
    let (rt, rs, ro) = match (&m.sym.rt, &m.sym.rs, &m.sym.ro) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(CatenoidError::MissingSymmetry),
    };
    let n = m.len();
    let mut out = Vec::with_capacity(8);
    for bits in 0..8u8 {
        let flags = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
        let map: Vec<usize> = (0..n)
            .map(|mut v| {
                if flags[0] {
                    v = ro[v];
                }
                if flags[1] {
                    v = rs[v];
                }
                if flags[2] {
                    v = rt[v];
                }
                v
            })
            .collect();
        out.push((map, flags));
    }
    Ok(out)
}

fn reflect_point(p: &HPoint, t: f64, flags: [bool; 3]) -> (HPoint, f64) {
    let mut z = p.z;
    if flags[0] {
        z = -z.conj();
    }
    if flags[1] {
        z = z.conj();
    }
    (HPoint { z, lam: p.lam }, if flags[2] { -t } else { t })
}

/// Projects vertex positions onto the symmetric configurations by averaging
/// over the reflection group.
pub fn symmetrize(m: &mut SurfaceMesh) -> Result<(), CatenoidError> {
    let g = group(m)?;
    let n = m.len();
    let mut base = vec![HPoint::ORIGIN; n];
    let mut height = vec![0.0; n];
    for v in 0..n {
        let mut z = Complex64::new(0.0, 0.0);
        let mut lam = 0.0;
        let mut t = 0.0;
        for (map, flags) in &g {
            let w = map[v];
            let (p, tt) = reflect_point(&m.base[w], m.height[w], *flags);
            z += p.z;
            lam += p.lam;
            t += tt;
        }
        base[v] = HPoint { z: z / 8.0, lam: lam / 8.0 };
        height[v] = t / 8.0;
    }
    m.base = base;
    m.height = height;
    m.recompute_normals();
    Ok(())
}

/// Largest deviation of vertex positions from exact symmetry.
pub fn symmetry_defect(m: &SurfaceMesh) -> Result<f64, CatenoidError> {
    let g = group(m)?;
    let mut worst = 0.0f64;
    for (map, flags) in &g {
        for v in 0..m.len() {
            let (p, t) = reflect_point(&m.base[map[v]], m.height[map[v]], *flags);
            worst = worst.max((p.z - m.base[v].z).norm()).max((t - m.height[v]).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RefineParams {
    /// Required sup |H|.
    pub tol_h: f64,
    /// Newton keeps going down to this level while it still converges.
    pub newton_tol: f64,
    pub max_iter: usize,
    pub check_nondegenerate: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams { tol_h: 1e-3, newton_tol: 1e-10, max_iter: 40, check_nondegenerate: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    pub iterations: usize,
    pub sup_h_history: Vec<f64>,
    pub steps: Vec<f64>,
}

fn sup_h_interior(m: &SurfaceMesh) -> f64 {
    let n = mean_curvature_trace(m);
    0.5 * n.iter().zip(m.boundary()).filter(|(_, b)| !**b).fold(0.0f64, |a, (v, _)| a.max(v.abs()))
}

/// Newton iteration on normal graphs, one unknown per symmetry orbit of
/// interior vertices; the outer rings stay fixed.
pub fn refine(m0: &SurfaceMesh, p: RefineParams) -> Result<(SurfaceMesh, RefineReport), CatenoidError> {
    check_angles(m0)?;
    if p.check_nondegenerate {
        let nd = nondegeneracy_check(m0)?;
        if !nd.nondegenerate {
            return Err(CatenoidError::Degenerate(nd.min_abs_eigenvalue));
        }
    }
    let g = group(m0)?;
    let free: Vec<bool> = m0.boundary().iter().map(|b| !b).collect();
    let gens: Vec<&[usize]> = g[1..].iter().map(|(map, _)| map.as_slice()).collect();
    let q = Quotient::new(m0.len(), &free, &gens);
    let mut m = m0.clone();
    let mut hist = vec![sup_h_interior(&m)];
    let mut steps = Vec::new();
    let mut it = 0;
    while *hist.last().unwrap() > p.newton_tol && it < p.max_iter {
        let cur = *hist.last().unwrap();
        let n = mean_curvature_trace(&m);
        let lin = linearize(&m, &q);
        let lu = LuSolver::new(&lin.j).map_err(SolverError::from)?;
        let rhs: Vec<f64> = q.sample(&n).iter().map(|v| -v).collect();
        let du = q.lift(&lu.solve(&rhs));
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let u: Vec<f64> = du.iter().map(|v| alpha * v).collect();
            if let Ok(mut cand) = normal_graph_bounded(&m, &u, 1.0) {
                symmetrize(&mut cand)?;
                if check_angles(&cand).is_ok() {
                    let s = sup_h_interior(&cand);
                    if s < cur {
                        accepted = Some((cand, s));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        it += 1;
        match accepted {
            Some((cand, s)) => {
                m = cand;
                hist.push(s);
                steps.push(alpha);
            }
            None => break,
        }
        let k = hist.len();
        if k >= 3 && hist[k - 1] <= p.tol_h && hist[k - 1] > 0.5 * hist[k - 2] {
            break;
        }
    }
    let last = *hist.last().unwrap();
    if last > p.tol_h {
        return Err(CatenoidError::NotConverged { iterations: it, history: hist });
    }
    Ok((m, RefineReport { iterations: it, sup_h_history: hist, steps }))
}

/// Builds and refines `K_η`.
pub fn catenoid(spec: &CatenoidSpec, p: RefineParams) -> Result<(SurfaceMesh, RefineReport), CatenoidError> {
    let m = build_ansatz(spec)?;
    refine(&m, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KillingTag {
    /// Vertical translation.
    Xt,
    /// Rotation about the centre `o = γ₀ ∩ Γ`.
    XR,
    /// Dilation along `γ₀`, towards its endpoint `-i`.
    XGamma0,
    /// Dilation along `Γ`, towards `+1`.
    XGamma,
}

/// A Killing field of H² × ℝ. Horizontal fields are conjugated by `frame`,
/// which places the catenoid's centre and axis (identity for the model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillingField {
    pub tag: KillingTag,
    pub frame: PlaneIsometry,
}

impl KillingField {
    pub fn new(tag: KillingTag) -> Self {
        KillingField { tag, frame: PlaneIsometry::identity() }
    }

    /// Value at `p` in the orthonormal frame of `p`.
    pub fn at(&self, p: &HPoint) -> V3 {
        if self.tag == KillingTag::Xt {
            return [0.0, 0.0, 1.0];
        }
        let inv = self.frame.inverse();
        let q = inv.apply(p);
        let z = q.z;
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let v = match self.tag {
            KillingTag::XR => i * z,
            KillingTag::XGamma0 => -i * (one + z * z) * 0.5,
            KillingTag::XGamma => (one - z * z) * 0.5,
            KillingTag::Xt => unreachable!(),
        };
        let w = [2.0 * v.re / q.lam, 2.0 * v.im / q.lam];
        let out = self.frame.push_tangent(&q, w);
        [out[0], out[1], 0.0]
    }
}

/// `⟨X, N⟩` per vertex.
pub fn killing_jacobi_field(m: &SurfaceMesh, x: &KillingField) -> ScalarField {
    (0..m.len()).map(|i| dot(&x.at(&m.base[i]), &m.normals[i])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

impl Parity {
    pub fn classify(c: f64) -> Parity {
        if c >= 0.95 {
            Parity::Even
        } else if c <= -0.95 {
            Parity::Odd
        } else {
            Parity::Mixed
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    /// Per eigenfunction: parity under `R_t`, `R_s`, `R_o`.
    pub parities: Vec<[Parity; 3]>,
    pub correlations: Vec<[f64; 3]>,
    /// `‖(-L - λ) φ‖_M / ‖φ‖_M`.
    pub residuals: Vec<f64>,
    /// Eigenfunctions as full vertex fields (zero on the boundary).
    #[serde(skip)]
    pub vectors: Vec<ScalarField>,
}

fn mass_inner(mass: &[f64], a: &[f64], b: &[f64]) -> f64 {
    mass.iter().zip(a).zip(b).map(|((m, x), y)| m * x * y).sum()
}

/// Mass-weighted correlation of `u` with `u ∘ map`.
pub fn parity_correlation(mass: &[f64], u: &[f64], map: &[usize]) -> f64 {
    let v: Vec<f64> = map.iter().map(|&j| u[j]).collect();
    mass_inner(mass, u, &v) / mass_inner(mass, u, u).max(1e-300)
}

pub fn spectrum(m: &SurfaceMesh, count: usize) -> Result<SpectrumReport, CatenoidError> {
    let (rt, rs, ro) = match (&m.sym.rt, &m.sym.rs, &m.sym.ro) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(CatenoidError::MissingSymmetry),
    };
    let sys = assemble_jacobi(m)?;
    let (vals, vecs) = sys.lowest_eigenpairs(count, 7)?;
    let mass_full = crate::mesh::vertex_areas(m);
    let mut parities = Vec::new();
    let mut correlations = Vec::new();
    let mut residuals = Vec::new();
    let mut fields = Vec::new();
    for (lam, x) in vals.iter().zip(&vecs) {
        let u = sys.quotient.lift(x);
        let c = [parity_correlation(&mass_full, &u, rt), parity_correlation(&mass_full, &u, rs), parity_correlation(&mass_full, &u, ro)];
        correlations.push(c);
        parities.push([Parity::classify(c[0]), Parity::classify(c[1]), Parity::classify(c[2])]);
        let lx = sys.apply_reduced(x);
        let r: Vec<f64> = lx.iter().zip(x).map(|(a, b)| -a - lam * b).collect();
        residuals.push((mass_inner(&sys.mass, &r, &r) / mass_inner(&sys.mass, x, x)).sqrt());
        fields.push(u);
    }
    Ok(SpectrumReport { eigenvalues: vals, parities, correlations, residuals, vectors: fields })
}

/// Ring of vertices closest to `γ₀ × ℝ`, as the neck loop ordered so that the
/// flux conormal points towards `x > 0`.
pub fn neck_loop(m: &SurfaceMesh) -> Result<Vec<usize>, CatenoidError> {
    let ro = m.sym.ro.as_ref().ok_or(CatenoidError::MissingSymmetry)?;
    let fixed: Vec<usize> = (0..m.len()).filter(|&v| ro[v] == v).collect();
    order_cycle(m, &fixed).ok_or(CatenoidError::NeckSection(0)).map(|mut l| {
        if loop_side_sign(m, &l) < 0.0 {
            l.reverse();
        }
        l
    })
}

/// Orders a set of vertices forming a simple cycle of mesh edges.
fn order_cycle(m: &SurfaceMesh, set: &[usize]) -> Option<Vec<usize>> {
    let inset: std::collections::HashSet<usize> = set.iter().copied().collect();
    let start = *set.first()?;
    let mut l = vec![start];
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        let next = m.topo.neighbors(cur).iter().copied().find(|&w| inset.contains(&w) && w != prev && (w != start || l.len() > 2))?;
        if next == start {
            break;
        }
        if l.len() > set.len() {
            return None;
        }
        l.push(next);
        prev = cur;
        cur = next;
    }
    (l.len() == set.len()).then_some(l)
}

/// Triangle containing the directed edge `a → b`.
fn left_triangle(m: &SurfaceMesh, a: usize, b: usize) -> Option<usize> {
    m.topo.faces(a).iter().copied().find(|&f| {
        let t = m.triangles[f];
        (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b)
    })
}

/// Unit component of `w` orthogonal to `e`.
fn perp(e: &V3, w: &V3) -> V3 {
    let k = dot(w, e) / dot(e, e);
    let nu = [w[0] - k * e[0], w[1] - k * e[1], w[2] - k * e[2]];
    let n = dot(&nu, &nu).sqrt();
    [nu[0] / n, nu[1] / n, nu[2] / n]
}

/// Conormal at `p` of the edge `p → q` towards the right side: the average
/// of the direction away from the left triangle (third vertex `l`) and the
/// direction into the right triangle (third vertex `r`).
fn conormal(m: &SurfaceMesh, p: usize, q: usize, l: usize, r: Option<usize>) -> V3 {
    let at = |v: usize| ambient_log(&m.base[p], m.height[p], &m.base[v], m.height[v]);
    let e = at(q);
    let away = perp(&e, &at(l));
    let mut nu = [-away[0], -away[1], -away[2]];
    if let Some(r) = r {
        let into = perp(&e, &at(r));
        nu = [nu[0] + into[0], nu[1] + into[1], nu[2] + into[2]];
    }
    let n = dot(&nu, &nu).sqrt();
    [nu[0] / n, nu[1] / n, nu[2] / n]
}

/// Sign of the average `x`-component of the loop conormal.
fn loop_side_sign(m: &SurfaceMesh, l: &[usize]) -> f64 {
    let x = KillingField::new(KillingTag::XGamma);
    flux(m, l, &x).unwrap_or(0.0).signum()
}

/// `∫ ⟨X, ν⟩ ds` along a closed vertex loop, `ν` the conormal pointing to
/// the right of the loop direction, centred across each edge; trapezoid
/// rule per edge.
pub fn flux(m: &SurfaceMesh, l: &[usize], x: &KillingField) -> Result<f64, CatenoidError> {
    if l.len() < 3 {
        return Err(CatenoidError::OpenLoop);
    }
    let mut total = 0.0;
    for k in 0..l.len() {
        let (a, b) = (l[k], l[(k + 1) % l.len()]);
        if !m.topo.neighbors(a).contains(&b) {
            return Err(if k + 1 == l.len() { CatenoidError::OpenLoop } else { CatenoidError::NotAnEdge(a, b) });
        }
        let third = |f: usize| m.triangles[f].iter().copied().find(|&v| v != a && v != b).unwrap();
        let l = third(left_triangle(m, a, b).ok_or(CatenoidError::NotAnEdge(a, b))?);
        let r = left_triangle(m, b, a).map(third);
        let nu_a = conormal(m, a, b, l, r);
        let nu_b = conormal(m, b, a, l, r);
        let len = m.edge_length(a, b);
        let fa = dot(&x.at(&m.base[a]), &nu_a);
        let fb = dot(&x.at(&m.base[b]), &nu_b);
        total += 0.5 * (fa + fb) * len;
    }
    Ok(total)
}

/// Ambient length of a vertex loop.
pub fn loop_length(m: &SurfaceMesh, l: &[usize]) -> f64 {
    (0..l.len()).map(|k| m.edge_length(l[k], l[(k + 1) % l.len()])).sum()
}

/// Rings of vertices at fixed combinatorial distance `d` from the neck loop
/// on the `x > 0` side, as loops homologous to it.
pub fn homologous_loop(m: &SurfaceMesh, d: usize) -> Result<Vec<usize>, CatenoidError> {
    let neck = neck_loop(m)?;
    let mut level = vec![usize::MAX; m.len()];
    let mut frontier = neck.clone();
    for &v in &neck {
        level[v] = 0;
    }
    for step in 1..=d {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in m.topo.neighbors(v) {
                let (x, _) = axis_coords(&m.base[w]);
                if level[w] == usize::MAX && x > 0.0 {
                    level[w] = step;
                    next.push(w);
                }
            }
        }
        frontier = next;
    }
    let mut l = order_cycle(m, &frontier).ok_or(CatenoidError::NeckSection(frontier.len()))?;
    if loop_side_sign(m, &l) < 0.0 {
        l.reverse();
    }
    Ok(l)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Necksize {
    pub length: f64,
    pub upper: f64,
    pub lower: f64,
}

/// Length of `M ∩ (γ₀ × ℝ)` from the zero set of the along-axis coordinate.
pub fn necksize(m: &SurfaceMesh) -> Result<Necksize, CatenoidError> {
    let xs: Vec<f64> = m.base.iter().map(|p| axis_coords(p).0).collect();
    let zero = |v: usize| xs[v].abs() < 1e-12;
    // section points keyed by edge or vertex
    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    enum Key {
        V(usize),
        E(usize, usize),
    }
    let mut segs: Vec<(Key, Key)> = Vec::new();
    for t in &m.triangles {
        let mut pts = Vec::new();
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if zero(a) {
                pts.push(Key::V(a));
            } else if !zero(b) && xs[a] * xs[b] < 0.0 {
                pts.push(Key::E(a.min(b), a.max(b)));
            }
        }
        pts.sort();
        pts.dedup();
        if pts.len() == 2 {
            segs.push((pts[0].min(pts[1]), pts[0].max(pts[1])));
        }
    }
    segs.sort();
    segs.dedup();
    let point = |k: Key| -> (HPoint, f64) {
        match k {
            Key::V(v) => (m.base[v], m.height[v]),
            Key::E(a, b) => {
                let s = xs[a] / (xs[a] - xs[b]);
                let l = m.base[a].log(&m.base[b]);
                (m.base[a].exp([s * l[0], s * l[1]]), m.height[a] + s * (m.height[b] - m.height[a]))
            }
        }
    };
    // closed-loop check: every section point has degree 2 and one component
    let mut adj: std::collections::HashMap<Key, Vec<Key>> = std::collections::HashMap::new();
    for (a, b) in &segs {
        adj.entry(*a).or_default().push(*b);
        adj.entry(*b).or_default().push(*a);
    }
    if adj.is_empty() || adj.values().any(|v| v.len() != 2) {
        return Err(CatenoidError::NeckSection(adj.values().filter(|v| v.len() != 2).count().max(1)));
    }
    let start = *adj.keys().min().unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![start];
    while let Some(k) = stack.pop() {
        if seen.insert(k) {
            stack.extend(adj[&k].iter().copied());
        }
    }
    if seen.len() != adj.len() {
        return Err(CatenoidError::NeckSection(2));
    }
    let mut upper = 0.0;
    let mut lower = 0.0;
    for (a, b) in &segs {
        let (pa, ta) = point(*a);
        let (pb, tb) = point(*b);
        let len = crate::mesh::ambient_dist(&pa, ta, &pb, tb);
        let tm = 0.5 * (ta + tb);
        if tm > 0.0 {
            upper += len;
        } else if tm < 0.0 {
            lower += len;
        } else {
            upper += 0.5 * len;
            lower += 0.5 * len;
        }
    }
    Ok(Necksize { length: upper + lower, upper, lower })
}

/// Samples `(s, t, u)` of the `x > 0` end as a normal graph over `P₊`: `s` the
/// arclength along `P₊`, `u` the distance towards the other plane.
pub fn end_graph_samples(m: &SurfaceMesh, eta: f64) -> Vec<(f64, f64, f64)> {
    let plane = end_plane(eta);
    (0..m.len())
        .filter(|&v| m.region[v] == Region::End && axis_coords(&m.base[v]).0 > 0.0 && !m.boundary()[v])
        .map(|v| {
            let (s, d) = fermi_coords(&plane, &m.base[v]);
            (s, m.height[v], d)
        })
        .collect()
}

/// Decay of the `x > 0` end over the radial window.
pub fn end_decay(m: &SurfaceMesh, eta: f64, window: (f64, f64)) -> Result<DecayFit, CatenoidError> {
    Ok(decay_fit_samples(&end_graph_samples(m, eta), window, 16)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse(eta: f64) -> CatenoidSpec {
        CatenoidSpec { eta, r_max: 6.0, h: 0.25, a0: None }
    }

    #[test]
    fn spec_validation() {
        assert!(CatenoidSpec::new(0.0, 12.0, 0.1).is_err());
        assert!(CatenoidSpec::new(eta0(), 12.0, 0.1).is_err());
        assert!(CatenoidSpec::new(1.0, 5.0, 0.1).is_err());
        assert!(CatenoidSpec::new(1.0, 12.0, 0.3).is_err());
        assert!(CatenoidSpec::new(1.0, 12.0, 0.1).is_ok());
    }

    #[test]
    fn end_plane_orientation() {
        let eta = 1.0;
        let g = end_plane(eta);
        for s in [-3.0, 0.0, 2.0] {
            let p = fermi_point(&g, s, 0.0);
            let (x, y) = axis_coords(&p);
            assert!((x - 0.5).abs() < 1e-12 && (y - s).abs() < 1e-12);
            let q = fermi_point(&g, s, 0.1);
            assert!(axis_coords(&q).0 < 0.5);
        }
    }

    #[test]
    fn ansatz_is_symmetric_and_closed() {
        let m = build_ansatz(&coarse(1.0)).unwrap();
        assert!(symmetry_defect(&m).unwrap() < 1e-12);
        m.check_pairing(1e-12).unwrap();
        for p in [m.sym.rs.as_ref().unwrap(), m.sym.ro.as_ref().unwrap()] {
            m.check_involution(p, 0.0, false).unwrap();
        }
        // annulus: two boundary loops, Euler characteristic 0
        assert_eq!(m.euler_characteristic(), 0);
        assert_eq!(m.boundary_loops().len(), 2);
        check_angles(&m).unwrap();
    }

    #[test]
    fn killing_fields_are_odd_or_positive() {
        let m = build_ansatz(&coarse(1.0)).unwrap();
        let rt = m.sym.rt.as_ref().unwrap();
        let phi_t = killing_jacobi_field(&m, &KillingField::new(KillingTag::Xt));
        for v in 0..m.len() {
            assert!((phi_t[v] + phi_t[rt[v]]).abs() < 1e-10);
        }
        let phi_o = killing_jacobi_field(&m, &KillingField::new(KillingTag::XGamma));
        let ro = m.sym.ro.as_ref().unwrap();
        for v in 0..m.len() {
            let x = axis_coords(&m.base[v]).0;
            if x > 1e-9 && ro[v] != v {
                assert!(phi_o[v] > 0.0, "{v} {x} {}", phi_o[v]);
            }
        }
        let phi_s = killing_jacobi_field(&m, &KillingField::new(KillingTag::XGamma0));
        let rs = m.sym.rs.as_ref().unwrap();
        for v in 0..m.len() {
            if m.base[v].z.im > 1e-9 && rs[v] != v {
                assert!(phi_s[v] > 0.0, "{v} {}", phi_s[v]);
            }
        }
    }

    #[test]
    fn killing_field_matches_flow_derivative() {
        // X_Γ is the velocity of translation along the real axis
        let p = HPoint::polar(0.8, 1.1);
        let d = 1e-6;
        let q = PlaneIsometry::translation_x(d).apply(&p);
        let v = p.log(&q);
        let x = KillingField::new(KillingTag::XGamma).at(&p);
        assert!((v[0] / d - x[0]).abs() < 1e-5 && (v[1] / d - x[1]).abs() < 1e-5);
        let q = PlaneIsometry::rotation(d).apply(&p);
        let v = p.log(&q);
        let x = KillingField::new(KillingTag::XR).at(&p);
        assert!((v[0] / d - x[0]).abs() < 1e-5 && (v[1] / d - x[1]).abs() < 1e-5);
        // conjugated frame
        let frame = PlaneIsometry::rotation(0.4);
        let k = KillingField { tag: KillingTag::XGamma, frame };
        let iso = frame.compose(&PlaneIsometry::translation_x(d)).compose(&frame.inverse());
        let v = p.log(&iso.apply(&p));
        let x = k.at(&p);
        assert!((v[0] / d - x[0]).abs() < 1e-5 && (v[1] / d - x[1]).abs() < 1e-5);
    }

    #[test]
    fn necksize_of_ansatz_is_symmetric() {
        let m = build_ansatz(&coarse(1.0)).unwrap();
        let n = necksize(&m).unwrap();
        assert!(n.length > 0.0);
        assert!((n.upper - n.lower).abs() < 1e-8);
        let l = neck_loop(&m).unwrap();
        assert!((loop_length(&m, &l) - n.length).abs() < 1e-9);
    }
}
