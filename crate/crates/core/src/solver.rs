//! Discrete Jacobi operators, symmetric quotients, linear solves and the
//! fixed-point iteration that drives a surface to discrete minimality.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{translation_to, HPoint};
use crate::linalg::{distance2_colouring, lanczos_largest, CholSolver, Csr, LinalgError, LuSolver};
use crate::mesh::{
    check_angles, displace, mean_curvature, normal_graph_bounded, ricci_normal, second_fundamental_norm_sq, vertex_areas,
    vertex_geometry, weighted_norm, MeshError, ScalarField, SurfaceMesh, WeightedNormParams, GRAPH_BOUND,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("horizontally degenerate at this resolution (min |λ| = {0:.3e})")]
    Degenerate(f64),
    #[error("symmetry pairing defect: {0}")]
    Pairing(String),
    #[error("iteration diverged after {iterations} steps; residuals {history:?}")]
    Diverged { iterations: usize, history: Vec<f64> },
    #[error("no convergence in {iterations} steps; residuals {history:?}")]
    NotConverged { iterations: usize, history: Vec<f64> },
    #[error("surface is not embedded: triangles {0} and {1} intersect")]
    NotEmbedded(usize, usize),
    #[error("kappa must lie in (-1, 0), got {0}")]
    BadKappa(f64),
}

/// Vertex orbits of a finite group of vertex involutions, restricted to the
/// free (non-Dirichlet) vertices.
#[derive(Debug, Clone)]
pub struct Quotient {
    pub orbits: Vec<Vec<usize>>,
    /// Orbit index per vertex, `usize::MAX` on fixed vertices.
    pub orbit_of: Vec<usize>,
}

impl Quotient {
    pub fn new(n: usize, free: &[bool], generators: &[&[usize]]) -> Quotient {
        let mut orbit_of = vec![usize::MAX; n];
        let mut orbits = Vec::new();
        for v in 0..n {
            if !free[v] || orbit_of[v] != usize::MAX {
                continue;
            }
            let id = orbits.len();
            let mut orbit = vec![v];
            orbit_of[v] = id;
            let mut k = 0;
            while k < orbit.len() {
                let w = orbit[k];
                for g in generators {
                    let x = g[w];
                    if orbit_of[x] == usize::MAX {
                        orbit_of[x] = id;
                        orbit.push(x);
                    }
                }
                k += 1;
            }
            orbit.sort_unstable();
            orbits.push(orbit);
        }
        Quotient { orbits, orbit_of }
    }

    pub fn trivial(free: &[bool]) -> Quotient {
        Quotient::new(free.len(), free, &[])
    }

    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn rep(&self, o: usize) -> usize {
        self.orbits[o][0]
    }

    /// Orbit-constant extension; fixed vertices get 0.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.orbit_of.len()];
        for (o, vs) in self.orbits.iter().enumerate() {
            for &v in vs {
                u[v] = x[o];
            }
        }
        u
    }

    /// Values at orbit representatives.
    pub fn sample(&self, u: &[f64]) -> Vec<f64> {
        self.orbits.iter().map(|o| u[o[0]]).collect()
    }

    /// Orbit averages.
    pub fn average(&self, u: &[f64]) -> Vec<f64> {
        self.orbits.iter().map(|o| o.iter().map(|&v| u[v]).sum::<f64>() / o.len() as f64).collect()
    }
}

/// `L = M⁻¹ S` on the free vertices, `S` symmetric: cotangent stiffness plus
/// the lumped potential `(|A|² + Ric(N,N)) A_i`.
#[derive(Debug, Clone)]
pub struct JacobiSystem {
    pub stiffness: Csr,
    pub mass: Vec<f64>,
    pub quotient: Quotient,
    pub potential: ScalarField,
    /// Whether the system has been reduced modulo `t ↦ -t`.
    pub even: bool,
}

/// Cotangent weights `½(cot α + cot β)` for every interior edge and the
/// lumped areas.
pub fn cotangent_weights(m: &SurfaceMesh) -> (BTreeMap<(usize, usize), f64>, Vec<f64>) {
    let mut w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for t in &m.triangles {
        let l = [m.edge_length(t[1], t[2]), m.edge_length(t[0], t[2]), m.edge_length(t[0], t[1])];
        let area = crate::mesh::heron(l[0], l[1], l[2]);
        for k in 0..3 {
            let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            let cot = (l[(k + 1) % 3].powi(2) + l[(k + 2) % 3].powi(2) - l[k].powi(2)) / (4.0 * area);
            *w.entry((a.min(b), a.max(b))).or_insert(0.0) += 0.5 * cot;
        }
    }
    (w, vertex_areas(m))
}

pub fn assemble_jacobi(m: &SurfaceMesh) -> Result<JacobiSystem, SolverError> {
    check_angles(m)?;
    let a2 = second_fundamental_norm_sq(m)?;
    let ric = ricci_normal(m);
    let potential: Vec<f64> = a2.iter().zip(&ric).map(|(a, r)| a + r).collect();
    let free: Vec<bool> = m.boundary().iter().map(|b| !b).collect();
    let q = Quotient::trivial(&free);
    assemble_on(m, &potential, q, false)
}

fn assemble_on(m: &SurfaceMesh, potential: &[f64], q: Quotient, even: bool) -> Result<JacobiSystem, SolverError> {
    let (w, area) = cotangent_weights(m);
    let mut trip = Vec::with_capacity(4 * w.len() + m.len());
    let mut diag = vec![0.0; q.len()];
    let mut mass = vec![0.0; q.len()];
    for v in 0..m.len() {
        let o = q.orbit_of[v];
        if o != usize::MAX {
            diag[o] += potential[v] * area[v];
            mass[o] += area[v];
        }
    }
    for (&(a, b), &wij) in &w {
        let (oa, ob) = (q.orbit_of[a], q.orbit_of[b]);
        if oa != usize::MAX {
            diag[oa] -= wij;
        }
        if ob != usize::MAX {
            diag[ob] -= wij;
        }
        if oa != usize::MAX && ob != usize::MAX {
            trip.push((oa, ob, wij));
            trip.push((ob, oa, wij));
        }
    }
    for (o, d) in diag.into_iter().enumerate() {
        trip.push((o, o, d));
    }
    let stiffness = Csr::from_triplets(q.len(), trip);
    Ok(JacobiSystem { stiffness, mass, quotient: q, potential: potential.to_vec(), even })
}

impl JacobiSystem {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// `L u` for a full vertex field, zero on fixed vertices.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let x = self.reduce(u);
        let y = self.apply_reduced(&x);
        self.quotient.lift(&y)
    }

    /// Reduced coordinates of a full field (orbit averages).
    pub fn reduce(&self, u: &[f64]) -> Vec<f64> {
        self.quotient.average(u)
    }

    pub fn apply_reduced(&self, x: &[f64]) -> Vec<f64> {
        let s = self.stiffness.matvec(x);
        s.iter().zip(&self.mass).map(|(a, m)| a / m).collect()
    }

    /// `L u` at every vertex for the full (unreduced) mesh field, without
    /// averaging; only meaningful on the trivial quotient.
    pub fn max_asymmetry(&self) -> f64 {
        self.stiffness.asymmetry()
    }

    /// Solves `L u = f` with zero Dirichlet data.
    pub fn solve_reduced(&self, f: &[f64]) -> Result<Vec<f64>, SolverError> {
        let rhs: Vec<f64> = f.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
        let lu = LuSolver::new(&self.stiffness)?;
        let x = lu.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Degenerate(0.0));
        }
        Ok(x)
    }

    /// `-S - σ M`.
    fn shifted(&self, sigma: f64) -> Csr {
        let mut trip: Vec<(usize, usize, f64)> = self.stiffness.triplets().into_iter().map(|(i, j, v)| (i, j, -v)).collect();
        for (i, mi) in self.mass.iter().enumerate() {
            trip.push((i, i, -sigma * mi));
        }
        Csr::from_triplets(self.dim(), trip)
    }

    /// Bracket `[lo, hi]` of the lowest eigenvalue of `-L`: `-S - σM` is
    /// positive definite exactly when `σ < λ_min`.
    pub fn lowest_eigenvalue_bracket(&self, iterations: usize) -> (f64, f64) {
        let sup_v = self.potential.iter().fold(0.0f64, |a, v| a.max(*v));
        let mut lo = -sup_v - 1.0;
        let one = vec![1.0; self.dim()];
        let s1 = self.stiffness.matvec(&one);
        let mut hi = -s1.iter().sum::<f64>() / self.mass.iter().sum::<f64>();
        for _ in 0..iterations {
            let mid = 0.5 * (lo + hi);
            if CholSolver::new(&self.shifted(mid)).is_ok() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, hi)
    }

    /// Lowest eigenvalues of `-L` (generalized with the lumped mass) and
    /// their M-normalised eigenvectors in reduced coordinates.
    pub fn lowest_eigenpairs(&self, m: usize, seed: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>), SolverError> {
        let n = self.dim();
        let (lo, hi) = self.lowest_eigenvalue_bracket(30);
        // shift just below the spectrum so the wanted end is well separated
        let shift = lo - 0.05 - 0.01 * lo.abs().max(hi.abs());
        let ch = CholSolver::new(&self.shifted(shift))?;
        let sq: Vec<f64> = self.mass.iter().map(|m| m.sqrt()).collect();
        let op = |x: &[f64]| {
            let b: Vec<f64> = x.iter().zip(&sq).map(|(a, s)| a * s).collect();
            let y = ch.solve(&b);
            y.iter().zip(&sq).map(|(a, s)| a * s).collect::<Vec<f64>>()
        };
        let eig = lanczos_largest(op, n, m, 400.min(n), 1e-10, seed)?;
        let vals: Vec<f64> = eig.values.iter().map(|mu| shift + 1.0 / mu).collect();
        let vecs = eig.vectors.into_iter().map(|v| v.iter().zip(&sq).map(|(a, s)| a / s).collect()).collect();
        Ok((vals, vecs))
    }

    /// Smallest-magnitude eigenvalue of `-L` via inversion at zero shift.
    pub fn min_abs_eigenvalue(&self, seed: u64) -> Result<f64, SolverError> {
        let n = self.dim();
        let lu = LuSolver::new(&self.stiffness)?;
        let sq: Vec<f64> = self.mass.iter().map(|m| m.sqrt()).collect();
        let op = |x: &[f64]| {
            let b: Vec<f64> = x.iter().zip(&sq).map(|(a, s)| a * s).collect();
            let y = lu.solve(&b);
            y.iter().zip(&sq).map(|(a, s)| a * s).collect::<Vec<f64>>()
        };
        // squaring the inverse makes the largest magnitude the largest value
        let op2 = |x: &[f64]| op(&op(x));
        let eig = lanczos_largest(op2, n, 1, 200.min(n), 1e-9, seed)?;
        Ok(1.0 / eig.values[0].sqrt())
    }
}

/// Quotient by `t ↦ -t`: functions even in `t`, i.e. zero normal derivative
/// across the symmetry plane.
pub fn even_restrict(m: &SurfaceMesh, sys: &JacobiSystem) -> Result<JacobiSystem, SolverError> {
    m.check_pairing(1e-9).map_err(|e| SolverError::Pairing(e.to_string()))?;
    let p = m.sym.rt.as_ref().unwrap();
    let free: Vec<bool> = m.boundary().iter().map(|b| !b).collect();
    let q = Quotient::new(m.len(), &free, &[p]);
    assemble_on(m, &sys.potential, q, true)
}

/// Quotient by an arbitrary set of vertex involutions.
pub fn restrict_to(m: &SurfaceMesh, sys: &JacobiSystem, generators: &[&[usize]]) -> Result<JacobiSystem, SolverError> {
    let free: Vec<bool> = m.boundary().iter().map(|b| !b).collect();
    let q = Quotient::new(m.len(), &free, generators);
    assemble_on(m, &sys.potential, q, true)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub u: ScalarField,
    pub relative_residual: f64,
    /// `‖u‖_{0,κ} / ‖f‖_{0,κ}`.
    pub norm_ratio: f64,
}

/// Solves `L u = f` on the given system; `f` is a full vertex field.
pub fn solve(m: &SurfaceMesh, sys: &JacobiSystem, f: &[f64], kappa: f64) -> Result<SolveReport, SolverError> {
    m.check_field(f)?;
    let fr = sys.reduce(f);
    let fnorm = fr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if fnorm == 0.0 {
        return Ok(SolveReport { u: vec![0.0; m.len()], relative_residual: 0.0, norm_ratio: 0.0 });
    }
    let x = sys.solve_reduced(&fr)?;
    let back = sys.apply_reduced(&x);
    let res = back.iter().zip(&fr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / fnorm;
    let u = sys.quotient.lift(&x);
    let p = WeightedNormParams { kappa, mu: 0.5 };
    let fl = sys.quotient.lift(&fr);
    let nf = weighted_norm(m, &fl, p, 0)?;
    let nu = weighted_norm(m, &u, p, 0)?;
    let ratio = if nf > 0.0 { nu / nf } else { 0.0 };
    if !(res < 1e-6) || !ratio.is_finite() || ratio > 1e10 {
        return Err(SolverError::Degenerate(if ratio > 0.0 { 1.0 / ratio } else { 0.0 }));
    }
    Ok(SolveReport { u, relative_residual: res, norm_ratio: ratio })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub min_abs_eigenvalue: f64,
    pub threshold: f64,
    pub nondegenerate: bool,
}

/// Default floor for min |λ| of the even-restricted operator.
pub const DEGENERACY_THRESHOLD: f64 = 1e-3;

pub fn nondegeneracy_check(m: &SurfaceMesh) -> Result<Nondegeneracy, SolverError> {
    let sys = assemble_jacobi(m)?;
    let even = even_restrict(m, &sys)?;
    let lam = even.min_abs_eigenvalue(11)?;
    Ok(Nondegeneracy { min_abs_eigenvalue: lam, threshold: DEGENERACY_THRESHOLD, nondegenerate: lam > DEGENERACY_THRESHOLD })
}

/// Trace mean curvature `N` at the listed vertices for a displaced copy of the
/// mesh positions.
fn n_at(m: &SurfaceMesh, base: &[HPoint], height: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            let g = vertex_geometry(base, height, &m.triangles, &m.topo, r);
            crate::mesh::dot(&g.hvec, &g.normal)
        })
        .collect()
}

/// Exact linearization of `u ↦ N(u)` at `u = 0` in reduced coordinates:
/// row `a` is the equation at the representative of orbit `a`, column `b`
/// the orbit-constant displacement of orbit `b`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub j: Csr,
    pub quotient: Quotient,
}

/// Finite-difference step for the linearization.
const FD_STEP: f64 = 1e-6;

pub fn linearize(m: &SurfaceMesh, q: &Quotient) -> Linearization {
    let classes = distance2_colouring(&q.orbits, |v| m.topo.neighbors(v).to_vec(), m.len());
    let is_rep: Vec<bool> = {
        let mut r = vec![false; m.len()];
        for o in &q.orbits {
            r[o[0]] = true;
        }
        r
    };
    let trip: Vec<(usize, usize, f64)> = classes
        .par_iter()
        .flat_map_iter(|class| {
            let mut base = m.base.clone();
            let mut height = m.height.clone();
            let mut out = Vec::new();
            // rows touched by each group
            let mut rows_of: Vec<Vec<usize>> = Vec::with_capacity(class.len());
            for &g in class {
                let mut rows = Vec::new();
                for &v in &q.orbits[g] {
                    if is_rep[v] {
                        rows.push(v);
                    }
                    for &w in m.topo.neighbors(v) {
                        if is_rep[w] {
                            rows.push(w);
                        }
                    }
                }
                rows.sort_unstable();
                rows.dedup();
                rows_of.push(rows);
            }
            let all_rows: Vec<usize> = rows_of.iter().flatten().copied().collect();
            let mut vals = [Vec::new(), Vec::new()];
            for (k, sgn) in [1.0, -1.0].iter().enumerate() {
                for &g in class {
                    for &v in &q.orbits[g] {
                        let (p, t) = displace(&m.base[v], m.height[v], &m.normals[v], sgn * FD_STEP);
                        base[v] = p;
                        height[v] = t;
                    }
                }
                vals[k] = n_at(m, &base, &height, &all_rows);
                for &g in class {
                    for &v in &q.orbits[g] {
                        base[v] = m.base[v];
                        height[v] = m.height[v];
                    }
                }
            }
            let mut k = 0;
            for (gi, &g) in class.iter().enumerate() {
                for &r in &rows_of[gi] {
                    let d = (vals[0][k] - vals[1][k]) / (2.0 * FD_STEP);
                    out.push((q.orbit_of[r], g, d));
                    k += 1;
                }
            }
            out
        })
        .collect();
    Linearization { j: Csr::from_triplets(q.len(), trip), quotient: q.clone() }
}

/// `N(u)`: trace mean curvature of the normal graph, at every vertex.
pub fn nonlinear_n(m: &SurfaceMesh, u: &[f64], bound: f64) -> Result<ScalarField, SolverError> {
    let g = normal_graph_bounded(m, u, bound)?;
    Ok(crate::mesh::mean_curvature_trace(&g))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionState {
    pub u: ScalarField,
    pub iterations: usize,
    /// `‖N(u)‖_{0,κ}` per iterate.
    pub residual_history: Vec<f64>,
    /// `‖u‖_{2,κ}` per iterate.
    pub norm_history: Vec<f64>,
    pub sup_h_history: Vec<f64>,
    pub kappa: f64,
    pub tol: f64,
    pub monotone: bool,
}

impl ContractionState {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual,norm_u,sup_h\n");
        for i in 0..self.residual_history.len() {
            s += &format!("{i},{:.9e},{:.9e},{:.9e}\n", self.residual_history[i], self.norm_history[i], self.sup_h_history[i]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContractionParams {
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub check_embedded: bool,
}

impl ContractionParams {
    /// Default tolerance `max(1e-3, 10 h²)` and 50 iterations.
    pub fn for_spacing(kappa: f64, h: f64) -> Self {
        ContractionParams { kappa, tol: (10.0 * h * h).max(1e-3), max_iter: 50, check_embedded: true }
    }
}

fn sup_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Fixed-point iteration `u ← u - J⁻¹ N(u)` on `t`-even functions, with `J`
/// the exact linearization at the input surface.
pub fn contraction_solve(m: &SurfaceMesh, p: ContractionParams) -> Result<(ScalarField, SurfaceMesh, ContractionState), SolverError> {
    if !(p.kappa > -1.0 && p.kappa < 0.0) {
        return Err(SolverError::BadKappa(p.kappa));
    }
    m.check_pairing(1e-9).map_err(|e| SolverError::Pairing(e.to_string()))?;
    check_angles(m)?;
    let rt = m.sym.rt.clone().unwrap();
    let free: Vec<bool> = m.boundary().iter().map(|b| !b).collect();
    let q = Quotient::new(m.len(), &free, &[&rt]);
    let lin = linearize(m, &q);
    let lu = LuSolver::new(&lin.j)?;
    let wp = WeightedNormParams { kappa: p.kappa, mu: 0.5 };
    let mut u = vec![0.0; m.len()];
    let mut st = ContractionState {
        u: u.clone(),
        iterations: 0,
        residual_history: Vec::new(),
        norm_history: Vec::new(),
        sup_h_history: Vec::new(),
        kappa: p.kappa,
        tol: p.tol,
        monotone: true,
    };
    let interior = |f: &mut Vec<f64>| {
        for (i, b) in m.boundary().iter().enumerate() {
            if *b {
                f[i] = 0.0;
            }
        }
    };
    loop {
        let mut nu = nonlinear_n(m, &u, GRAPH_BOUND)?;
        interior(&mut nu);
        let sup_h = 0.5 * sup_abs(&nu);
        st.residual_history.push(weighted_norm(m, &nu, wp, 0)?);
        st.norm_history.push(weighted_norm(m, &u, wp, 2)?);
        st.sup_h_history.push(sup_h);
        let k = st.residual_history.len();
        if k >= 3 && st.residual_history[k - 1] > st.residual_history[k - 2] {
            st.monotone = false;
        }
        if sup_h <= p.tol {
            break;
        }
        if st.iterations >= p.max_iter {
            st.u = u;
            return Err(SolverError::NotConverged { iterations: st.iterations, history: st.residual_history });
        }
        if k >= 2 && (st.residual_history[k - 1] > 10.0 * st.residual_history[0] || !sup_h.is_finite()) {
            return Err(SolverError::Diverged { iterations: st.iterations, history: st.residual_history });
        }
        let rhs = q.sample(&nu);
        let du = lu.solve(&rhs);
        let du = q.lift(&du);
        for i in 0..m.len() {
            u[i] -= du[i];
        }
        st.iterations += 1;
    }
    let out = normal_graph_bounded(m, &u, GRAPH_BOUND)?;
    if p.check_embedded {
        if let Some((a, b)) = first_intersection(&out) {
            return Err(SolverError::NotEmbedded(a, b));
        }
    }
    st.u = u.clone();
    Ok((u, out, st))
}

/// Graph distance (in edges) from every vertex to the boundary.
pub fn hops_to_boundary(m: &SurfaceMesh) -> Vec<usize> {
    let mut d = vec![usize::MAX; m.len()];
    let mut queue = std::collections::VecDeque::new();
    for (i, b) in m.boundary().iter().enumerate() {
        if *b {
            d[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in m.topo.neighbors(v) {
            if d[w] == usize::MAX {
                d[w] = d[v] + 1;
                queue.push_back(w);
            }
        }
    }
    d
}

/// Smooth band-limited random field: a few low-frequency modes in the
/// vertices' disk coordinates, tapered smoothly to zero at the boundary and
/// symmetrised under `t ↦ -t` when the mesh carries that pairing.
pub fn smooth_random_field(m: &SurfaceMesh, seed: u64, scale: f64) -> ScalarField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<(f64, f64, f64, f64, f64)> = (0..6)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3), rng.gen_range(-1.0..1.0)))
        .collect();
    let hops = hops_to_boundary(m);
    let far = hops.iter().filter(|h| **h != usize::MAX).max().copied().unwrap_or(0);
    let width = (far as f64 * 0.5).max(3.0);
    let mut u: Vec<f64> = (0..m.len())
        .map(|i| {
            let (x, y, t) = (m.base[i].z.re, m.base[i].z.im, m.height[i]);
            let mut v = 0.0;
            for &(a, b, c, ph, amp) in &modes {
                v += amp * ((a * x + b * y) * 3.0 / scale + c * t / scale + ph).sin();
            }
            let s = (hops[i] as f64 / width).min(1.0);
            v * s * s * s * (10.0 - 15.0 * s + 6.0 * s * s) * (-0.1 * m.weight[i] * m.weight[i]).exp()
        })
        .collect();
    if let Some(rt) = &m.sym.rt {
        let w = u.clone();
        for i in 0..m.len() {
            u[i] = 0.5 * (w[i] + w[rt[i]]);
        }
    }
    let s = sup_abs(&u).max(1e-300);
    u.iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearizationCheck {
    /// `‖(N(εφ) - N(0))/ε - Jφ‖ / ‖φ‖` at ε = 1e-2 and 1e-3.
    pub errors: [f64; 2],
    pub error_ratio: f64,
    /// `‖Q(εφ)‖` at the two ε.
    pub remainders: [f64; 2],
    pub remainder_ratio: f64,
}

pub fn linearization_check(m: &SurfaceMesh, phi: &[f64]) -> Result<LinearizationCheck, SolverError> {
    m.check_field(phi)?;
    let free: Vec<bool> = m.boundary().iter().map(|b| !b).collect();
    let q = Quotient::trivial(&free);
    let lin = linearize(m, &q);
    let x = q.sample(phi);
    let jphi = q.lift(&lin.j.matvec(&x));
    let n0 = nonlinear_n(m, &vec![0.0; m.len()], f64::INFINITY)?;
    let nphi = sup_abs(phi).max(1e-300);
    let mut errors = [0.0; 2];
    let mut rem = [0.0; 2];
    for (k, eps) in [1e-2, 1e-3].iter().enumerate() {
        let ue: Vec<f64> = phi.iter().map(|p| eps * p).collect();
        let ne = nonlinear_n(m, &ue, f64::INFINITY)?;
        let mut e = 0.0f64;
        let mut r = 0.0f64;
        for i in 0..m.len() {
            if !free[i] {
                continue;
            }
            let d = ne[i] - n0[i];
            e = e.max((d / eps - jphi[i]).abs());
            r = r.max((d - eps * jphi[i]).abs());
        }
        errors[k] = e / nphi;
        rem[k] = r;
    }
    Ok(LinearizationCheck { errors, error_ratio: errors[1] / errors[0], remainders: rem, remainder_ratio: rem[1] / rem[0] })
}

/// Disk-model coordinates `(x, y, t)` of a vertex after recentering at `c`.
fn chart(iso: &crate::hyperbolic::PlaneIsometry, p: &HPoint, t: f64) -> [f64; 3] {
    let q = iso.apply(p);
    [q.z.re, q.z.im, t]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn orient(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3], d: &[f64; 3]) -> f64 {
    let (u, v, w) = (sub(b, a), sub(c, a), sub(d, a));
    crate::mesh::dot(&u, &crate::mesh::cross(&v, &w))
}

/// Whether segment `pq` properly crosses triangle `abc`.
fn segment_hits_triangle(p: &[f64; 3], q: &[f64; 3], a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> bool {
    let s1 = orient(a, b, c, p);
    let s2 = orient(a, b, c, q);
    if s1 * s2 >= 0.0 {
        return false;
    }
    let o1 = orient(p, q, a, b);
    let o2 = orient(p, q, b, c);
    let o3 = orient(p, q, c, a);
    (o1 > 0.0 && o2 > 0.0 && o3 > 0.0) || (o1 < 0.0 && o2 < 0.0 && o3 < 0.0)
}

/// Exact-predicate triangle pair test in a chart centred on the first triangle.
fn triangles_intersect(m: &SurfaceMesh, ta: &[usize; 3], tb: &[usize; 3]) -> bool {
    let iso = translation_to(&m.base[ta[0]]).inverse();
    let a: Vec<[f64; 3]> = ta.iter().map(|&v| chart(&iso, &m.base[v], m.height[v])).collect();
    let b: Vec<[f64; 3]> = tb.iter().map(|&v| chart(&iso, &m.base[v], m.height[v])).collect();
    for k in 0..3 {
        if segment_hits_triangle(&a[k], &a[(k + 1) % 3], &b[0], &b[1], &b[2]) {
            return true;
        }
        if segment_hits_triangle(&b[k], &b[(k + 1) % 3], &a[0], &a[1], &a[2]) {
            return true;
        }
    }
    false
}

/// First pair of non-adjacent intersecting triangles, if any. Broad phase:
/// bounding boxes hashed on a grid in intrinsic coordinates `(x, y, t)`.
pub fn first_intersection(m: &SurfaceMesh) -> Option<(usize, usize)> {
    let pts: Vec<[f64; 3]> = (0..m.len()).map(|i| [m.base[i].z.re, m.base[i].z.im, m.height[i]]).collect();
    let boxes: Vec<([f64; 3], [f64; 3])> = m
        .triangles
        .iter()
        .map(|t| {
            let mut lo = pts[t[0]];
            let mut hi = pts[t[0]];
            for &v in &t[1..] {
                for k in 0..3 {
                    lo[k] = lo[k].min(pts[v][k]);
                    hi[k] = hi[k].max(pts[v][k]);
                }
            }
            (lo, hi)
        })
        .collect();
    let cell = {
        let mut ext: Vec<f64> = boxes.iter().map(|(l, h)| (h[0] - l[0]).max(h[1] - l[1]).max(h[2] - l[2])).collect();
        ext.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (ext[ext.len() / 2] * 2.0).max(1e-12)
    };
    let key = |x: f64| (x / cell).floor() as i64;
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (f, (lo, hi)) in boxes.iter().enumerate() {
        // very large boxes are only registered at their corner cells; they are
        // caught by the pairwise check from the smaller partner's side
        let span = (key(hi[0]) - key(lo[0]) + 1) * (key(hi[1]) - key(lo[1]) + 1) * (key(hi[2]) - key(lo[2]) + 1);
        if span > 512 {
            continue;
        }
        for i in key(lo[0])..=key(hi[0]) {
            for j in key(lo[1])..=key(hi[1]) {
                for k in key(lo[2])..=key(hi[2]) {
                    grid.entry((i, j, k)).or_default().push(f);
                }
            }
        }
    }
    let overlap = |a: usize, b: usize| {
        let (la, ha) = &boxes[a];
        let (lb, hb) = &boxes[b];
        (0..3).all(|k| la[k] <= hb[k] && lb[k] <= ha[k])
    };
    let mut cells: Vec<&Vec<usize>> = grid.values().collect();
    cells.sort_by_key(|c| c[0]);
    cells.par_iter().find_map_first(|c| {
        for (x, &a) in c.iter().enumerate() {
            for &b in &c[x + 1..] {
                let ta = &m.triangles[a];
                let tb = &m.triangles[b];
                if ta.iter().any(|v| tb.contains(v)) || !overlap(a, b) {
                    continue;
                }
                if triangles_intersect(m, ta, tb) {
                    return Some((a.min(b), a.max(b)));
                }
            }
        }
        None
    })
}

pub fn is_embedded(m: &SurfaceMesh) -> bool {
    first_intersection(m).is_none()
}

/// Sup of `|H|` (average convention) over interior vertices.
pub fn sup_mean_curvature(m: &SurfaceMesh) -> Result<f64, SolverError> {
    let h = mean_curvature(m)?;
    Ok(h.iter().zip(m.boundary()).filter(|(_, b)| !**b).map(|(h, _)| h.abs()).fold(0.0, f64::max))
}
