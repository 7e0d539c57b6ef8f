//! Triangulated surfaces in H²×ℝ.
//!
//! Every per-vertex quantity is computed in geodesic normal coordinates of
//! the ambient space at that vertex: horizontal offsets come from the
//! hyperbolic logarithm, vertical offsets are height differences. Triangles
//! are treated as flat with their exact ambient edge lengths.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{DiskPoint, HPoint, PlaneIsometry};

pub type ScalarField = Vec<f64>;
pub type V3 = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} has minimum angle {angle_deg:.3}° (vertices {vertices:?})")]
    Degenerate { triangle: usize, vertices: [usize; 3], angle_deg: f64 },
    #[error("triangle {0} references a missing vertex")]
    BadIndex(usize),
    #[error("inconsistent orientation across edge ({0}, {1})")]
    Orientation(usize, usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifold(usize, usize),
    #[error("vertex {vertex} has valence {valence}; the curvature fit needs at least 5")]
    Underdetermined { vertex: usize, valence: usize },
    #[error("field has length {got}, mesh has {want} vertices")]
    FieldLength { got: usize, want: usize },
    #[error("|u| = {value} at vertex {vertex} exceeds the normal-graph bound {bound}")]
    GraphTooLarge { vertex: usize, value: f64, bound: f64 },
    #[error("symmetry pairing invalid: {0}")]
    Pairing(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Neck,
    Strip,
    Transition,
    End,
}

impl Region {
    pub fn name(&self) -> &'static str {
        match self {
            Region::Neck => "neck",
            Region::Strip => "strip",
            Region::Transition => "transition",
            Region::End => "end",
        }
    }
}

/// A point `(z, t)` of H²×ℝ in the disk model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientPoint {
    pub base: DiskPoint,
    pub t: f64,
}

#[inline]
pub fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: &V3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(acc: &mut V3, s: f64, x: &V3) {
    acc[0] += s * x[0];
    acc[1] += s * x[1];
    acc[2] += s * x[2];
}

/// Product-metric distance.
#[inline]
pub fn ambient_dist(p: &HPoint, tp: f64, q: &HPoint, tq: f64) -> f64 {
    p.dist(q).hypot(tq - tp)
}

/// Normal-coordinate offset of `(q, tq)` as seen from `(p, tp)`.
#[inline]
pub fn ambient_log(p: &HPoint, tp: f64, q: &HPoint, tq: f64) -> V3 {
    let l = p.log(q);
    [l[0], l[1], tq - tp]
}

/// Triangle area from side lengths (Kahan's ordering).
pub fn heron(a: f64, b: f64, c: f64) -> f64 {
    let mut s = [a, b, c];
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let [a, b, c] = s;
    let v = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    0.25 * v.max(0.0).sqrt()
}

/// Vertex adjacency derived from the triangle list.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    pub vf_start: Vec<usize>,
    pub vf: Vec<usize>,
    pub nb_start: Vec<usize>,
    pub nb: Vec<usize>,
    pub boundary: Vec<bool>,
    pub edges: Vec<[usize; 2]>,
    pub boundary_edges: Vec<[usize; 2]>,
}

impl Topology {
    pub fn build(n: usize, tris: &[[usize; 3]]) -> Result<Self, MeshError> {
        let mut count = vec![0usize; n + 1];
        for (f, t) in tris.iter().enumerate() {
            for &v in t {
                if v >= n {
                    return Err(MeshError::BadIndex(f));
                }
                count[v + 1] += 1;
            }
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut fill = count.clone();
        let mut vf = vec![0usize; count[n]];
        for (f, t) in tris.iter().enumerate() {
            for &v in t {
                vf[fill[v]] = f;
                fill[v] += 1;
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * tris.len());
        for t in tris {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let e = directed.entry((a, b)).or_insert(0);
                *e += 1;
                if *e > 1 {
                    return Err(MeshError::Orientation(a, b));
                }
            }
        }
        let mut boundary = vec![false; n];
        let mut edges = Vec::new();
        let mut boundary_edges = Vec::new();
        let mut nbs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in directed.keys() {
            let rev = directed.contains_key(&(b, a));
            if !rev {
                boundary[a] = true;
                boundary[b] = true;
                boundary_edges.push([a, b]);
            }
            if a < b || !rev {
                edges.push([a.min(b), a.max(b)]);
            }
            nbs[a].push(b);
            nbs[b].push(a);
        }
        edges.sort_unstable();
        edges.dedup();
        boundary_edges.sort_unstable();
        let mut nb_start = vec![0usize; n + 1];
        let mut nb = Vec::new();
        for (i, l) in nbs.iter_mut().enumerate() {
            l.sort_unstable();
            l.dedup();
            nb.extend_from_slice(l);
            nb_start[i + 1] = nb.len();
        }
        Ok(Topology { vf_start: count, vf, nb_start, nb, boundary, edges, boundary_edges })
    }

    #[inline]
    pub fn faces(&self, v: usize) -> &[usize] {
        &self.vf[self.vf_start[v]..self.vf_start[v + 1]]
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nb[self.nb_start[v]..self.nb_start[v + 1]]
    }
}

/// Vertex involutions realising the reflections of a model catenoid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Symmetries {
    /// `t ↦ -t`.
    pub rt: Option<Vec<usize>>,
    /// Reflection across the vertical plane through the neck axis.
    pub rs: Option<Vec<usize>>,
    /// Reflection across the midplane between the two ends.
    pub ro: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub base: Vec<HPoint>,
    pub height: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
    /// Unit normals in the frame `((λ/2)∂x, (λ/2)∂y, ∂t)` of each vertex.
    pub normals: Vec<V3>,
    pub region: Vec<Region>,
    pub weight: Vec<f64>,
    pub sym: Symmetries,
    pub topo: Topology,
}

impl SurfaceMesh {
    pub fn new(base: Vec<HPoint>, height: Vec<f64>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n = base.len();
        if height.len() != n {
            return Err(MeshError::FieldLength { got: height.len(), want: n });
        }
        let topo = Topology::build(n, &triangles)?;
        let mut m = SurfaceMesh {
            base,
            height,
            triangles,
            normals: vec![[0.0, 0.0, 1.0]; n],
            region: vec![Region::End; n],
            weight: vec![1.0; n],
            sym: Symmetries::default(),
            topo,
        };
        m.recompute_normals();
        Ok(m)
    }

    pub fn from_ambient(points: &[AmbientPoint], triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let base = points.iter().map(|p| HPoint::from_disk(p.base)).collect();
        let height = points.iter().map(|p| p.t).collect();
        SurfaceMesh::new(base, height, triangles)
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn point(&self, i: usize) -> AmbientPoint {
        AmbientPoint { base: self.base[i].disk(), t: self.height[i] }
    }

    pub fn boundary(&self) -> &[bool] {
        &self.topo.boundary
    }

    pub fn check_field(&self, u: &[f64]) -> Result<(), MeshError> {
        if u.len() != self.len() {
            return Err(MeshError::FieldLength { got: u.len(), want: self.len() });
        }
        Ok(())
    }

    pub fn recompute_normals(&mut self) {
        let normals: Vec<V3> =
            (0..self.len()).into_par_iter().map(|i| vertex_normal(&self.base, &self.height, &self.triangles, &self.topo, i)).collect();
        self.normals = normals;
    }

    /// Ambient edge length.
    pub fn edge_length(&self, a: usize, b: usize) -> f64 {
        ambient_dist(&self.base[a], self.height[a], &self.base[b], self.height[b])
    }

    /// Checks the stored `t ↦ -t` pairing: an involution negating heights,
    /// preserving the triangle set, with even weights.
    pub fn check_pairing(&self, tol: f64) -> Result<(), MeshError> {
        let p = self.sym.rt.as_ref().ok_or_else(|| MeshError::Pairing("no t-pairing stored".into()))?;
        self.check_involution(p, tol, true)?;
        for i in 0..self.len() {
            if (self.weight[p[i]] - self.weight[i]).abs() > tol {
                return Err(MeshError::Pairing(format!("weight not even at {i}")));
            }
        }
        Ok(())
    }

    /// Checks that `p` is an involution mapping triangles to triangles and,
    /// when `negate_t`, `t ↦ -t` with fixed base; otherwise only that it is
    /// an involution of the triangle set.
    pub fn check_involution(&self, p: &[usize], tol: f64, negate_t: bool) -> Result<(), MeshError> {
        if p.len() != self.len() {
            return Err(MeshError::Pairing("length mismatch".into()));
        }
        for i in 0..self.len() {
            if p[i] >= self.len() || p[p[i]] != i {
                return Err(MeshError::Pairing(format!("not an involution at {i}")));
            }
            if negate_t {
                let j = p[i];
                if (self.height[j] + self.height[i]).abs() > tol || self.base[i].dist(&self.base[j]) > tol {
                    return Err(MeshError::Pairing(format!("vertex {i} does not map to its mirror")));
                }
            }
        }
        let key = |t: &[usize; 3]| {
            let mut k = *t;
            k.sort_unstable();
            k
        };
        let set: std::collections::HashSet<[usize; 3]> = self.triangles.iter().map(key).collect();
        for t in &self.triangles {
            if !set.contains(&key(&[p[t[0]], p[t[1]], p[t[2]]])) {
                return Err(MeshError::Pairing(format!("triangle {t:?} has no image")));
            }
        }
        Ok(())
    }

    /// Finds the `t ↦ -t` pairing by matching mirrored vertices.
    pub fn detect_pairing(&self, tol: f64) -> Option<Vec<usize>> {
        let q = |x: f64| (x / tol).round() as i64;
        let mut map: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(self.len());
        for i in 0..self.len() {
            map.insert((q(self.base[i].z.re), q(self.base[i].z.im), q(self.height[i])), i);
        }
        let mut p = vec![0; self.len()];
        for i in 0..self.len() {
            let k = (q(self.base[i].z.re), q(self.base[i].z.im), q(-self.height[i]));
            p[i] = *map.get(&k)?;
        }
        Some(p)
    }

    /// Euler characteristic `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.len() as i64 - self.topo.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Boundary loops as vertex cycles following the boundary orientation.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for e in &self.topo.boundary_edges {
            next.insert(e[0], e[1]);
        }
        let mut seen = std::collections::HashSet::new();
        let mut loops = Vec::new();
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        for s in starts {
            if seen.contains(&s) {
                continue;
            }
            let mut l = vec![s];
            seen.insert(s);
            let mut c = next[&s];
            while c != s {
                if !seen.insert(c) {
                    break;
                }
                l.push(c);
                match next.get(&c) {
                    Some(&n) => c = n,
                    None => break,
                }
            }
            loops.push(l);
        }
        loops
    }

    /// Genus from the Euler characteristic and the number of boundary loops.
    pub fn genus(&self) -> i64 {
        let b = self.boundary_loops().len() as i64;
        (2 - self.euler_characteristic() - b) / 2
    }

    /// Applies an ambient isometry to every vertex and normal.
    pub fn transformed(&self, iso: &PlaneIsometry) -> SurfaceMesh {
        let mut m = self.clone();
        for i in 0..self.len() {
            let n = self.normals[i];
            let h = iso.push_tangent(&self.base[i], [n[0], n[1]]);
            m.base[i] = iso.apply(&self.base[i]);
            m.height[i] = iso.apply_t(self.height[i]);
            m.normals[i] = [h[0], h[1], iso.t_sign * n[2]];
        }
        let orientation_flips = iso.reflect != (iso.t_sign < 0.0);
        if orientation_flips {
            for t in &mut m.triangles {
                t.swap(1, 2);
            }
            m.topo = Topology::build(m.len(), &m.triangles).expect("relabelled topology");
            // keep the stored normal field pointing the same way relative to the surface
            m.recompute_normals();
        }
        m
    }
}

/// Corner angles of a flat triangle with side lengths opposite each corner.
#[inline]
fn corner_cots(a: f64, b: f64, c: f64, area: f64) -> [f64; 3] {
    // a opposite corner 0, etc.
    let q = 0.25 / area;
    [(b * b + c * c - a * a) * q, (a * a + c * c - b * b) * q, (a * a + b * b - c * c) * q]
}

#[inline]
fn corner_angles(a: f64, b: f64, c: f64) -> [f64; 3] {
    let ang = |x: f64, y: f64, z: f64| ((y * y + z * z - x * x) / (2.0 * y * z)).clamp(-1.0, 1.0).acos();
    [ang(a, b, c), ang(b, a, c), ang(c, a, b)]
}

/// Per-vertex first-variation data.
#[derive(Debug, Clone, Copy, Default)]
pub struct VertexGeometry {
    /// Barycentric lumped area.
    pub area: f64,
    /// Mean curvature vector (trace convention) `-∇A / A_i` in local coordinates.
    pub hvec: V3,
    pub normal: V3,
    pub angle_sum: f64,
    pub min_angle: f64,
}

/// Rotates face `t` so that `i` comes first, keeping orientation.
#[inline]
fn rotate_to(t: &[usize; 3], i: usize) -> (usize, usize) {
    if t[0] == i {
        (t[1], t[2])
    } else if t[1] == i {
        (t[2], t[0])
    } else {
        (t[0], t[1])
    }
}

/// First-variation geometry of vertex `i`.
pub fn vertex_geometry(base: &[HPoint], height: &[f64], tris: &[[usize; 3]], topo: &Topology, i: usize) -> VertexGeometry {
    let p = &base[i];
    let tp = height[i];
    let mut g = VertexGeometry { min_angle: PI, ..Default::default() };
    let mut nacc = [0.0; 3];
    for &f in topo.faces(i) {
        let (j, k) = rotate_to(&tris[f], i);
        let xj = ambient_log(p, tp, &base[j], height[j]);
        let xk = ambient_log(p, tp, &base[k], height[k]);
        let lij = norm(&xj);
        let lik = norm(&xk);
        let ljk = ambient_dist(&base[j], height[j], &base[k], height[k]);
        let area = heron(ljk, lik, lij);
        g.area += area / 3.0;
        let ang = corner_angles(ljk, lik, lij);
        g.angle_sum += ang[0];
        g.min_angle = g.min_angle.min(ang[0]).min(ang[1]).min(ang[2]);
        if area > 0.0 {
            let cots = corner_cots(ljk, lik, lij, area);
            // -∇_i A_f = ½(cot θ_k x_j + cot θ_j x_k)
            axpy(&mut g.hvec, 0.5 * cots[2], &xj);
            axpy(&mut g.hvec, 0.5 * cots[1], &xk);
        }
        let c = cross(&xj, &xk);
        axpy(&mut nacc, 1.0, &c);
    }
    if g.area > 0.0 {
        let s = 1.0 / g.area;
        g.hvec = [g.hvec[0] * s, g.hvec[1] * s, g.hvec[2] * s];
    }
    let n = norm(&nacc);
    g.normal = if n > 0.0 { [nacc[0] / n, nacc[1] / n, nacc[2] / n] } else { [0.0, 0.0, 1.0] };
    g
}

fn vertex_normal(base: &[HPoint], height: &[f64], tris: &[[usize; 3]], topo: &Topology, i: usize) -> V3 {
    let p = &base[i];
    let mut nacc = [0.0; 3];
    for &f in topo.faces(i) {
        let (j, k) = rotate_to(&tris[f], i);
        let xj = ambient_log(p, height[i], &base[j], height[j]);
        let xk = ambient_log(p, height[i], &base[k], height[k]);
        axpy(&mut nacc, 1.0, &cross(&xj, &xk));
    }
    let n = norm(&nacc);
    if n > 0.0 {
        [nacc[0] / n, nacc[1] / n, nacc[2] / n]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Minimum corner angle threshold for curvature evaluation.
pub const MIN_ANGLE: f64 = 5.0 * PI / 180.0;

pub fn check_angles(m: &SurfaceMesh) -> Result<(), MeshError> {
    let bad = m.triangles.par_iter().enumerate().find_first(|(_, t)| {
        let a = m.edge_length(t[1], t[2]);
        let b = m.edge_length(t[0], t[2]);
        let c = m.edge_length(t[0], t[1]);
        let ang = corner_angles(a, b, c);
        ang.iter().any(|x| !(*x > MIN_ANGLE))
    });
    if let Some((f, t)) = bad {
        let a = m.edge_length(t[1], t[2]);
        let b = m.edge_length(t[0], t[2]);
        let c = m.edge_length(t[0], t[1]);
        let ang = corner_angles(a, b, c);
        let mn = ang.iter().cloned().fold(PI, f64::min);
        return Err(MeshError::Degenerate { triangle: f, vertices: *t, angle_deg: mn.to_degrees() });
    }
    Ok(())
}

/// `⟨H⃗, N⟩` per vertex in the trace convention (sum of principal curvatures),
/// positive when the surface bends towards the stored normal. Boundary
/// vertices get 0.
pub fn mean_curvature_trace(m: &SurfaceMesh) -> ScalarField {
    (0..m.len())
        .into_par_iter()
        .map(|i| {
            if m.topo.boundary[i] {
                return 0.0;
            }
            let g = vertex_geometry(&m.base, &m.height, &m.triangles, &m.topo, i);
            dot(&g.hvec, &g.normal)
        })
        .collect()
}

/// Discrete mean curvature: the average of the principal curvatures.
pub fn mean_curvature(m: &SurfaceMesh) -> Result<ScalarField, MeshError> {
    check_angles(m)?;
    Ok(mean_curvature_trace(m).into_iter().map(|h| 0.5 * h).collect())
}

/// Lumped (barycentric) vertex areas.
pub fn vertex_areas(m: &SurfaceMesh) -> Vec<f64> {
    let mut a = vec![0.0; m.len()];
    for t in &m.triangles {
        let ar = triangle_area(m, t) / 3.0;
        for &v in t {
            a[v] += ar;
        }
    }
    a
}

pub fn triangle_area(m: &SurfaceMesh, t: &[usize; 3]) -> f64 {
    heron(m.edge_length(t[1], t[2]), m.edge_length(t[0], t[2]), m.edge_length(t[0], t[1]))
}

pub fn total_area(m: &SurfaceMesh) -> f64 {
    m.triangles.iter().map(|t| triangle_area(m, t)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalCurvature {
    /// Sum of interior angle defects.
    pub interior: f64,
    /// Sum of `π - Σ angles` over boundary vertices (discrete geodesic curvature).
    pub boundary: f64,
    pub euler_characteristic: i64,
}

/// Per-vertex angle defect: `2π - Σθ` inside, `π - Σθ` on the boundary.
pub fn angle_defects(m: &SurfaceMesh) -> Vec<f64> {
    let mut sums = vec![0.0; m.len()];
    for t in &m.triangles {
        let a = m.edge_length(t[1], t[2]);
        let b = m.edge_length(t[0], t[2]);
        let c = m.edge_length(t[0], t[1]);
        let ang = corner_angles(a, b, c);
        for k in 0..3 {
            sums[t[k]] += ang[k];
        }
    }
    (0..m.len()).map(|i| if m.topo.boundary[i] { PI - sums[i] } else { TAU - sums[i] }).collect()
}

pub fn total_curvature(m: &SurfaceMesh) -> TotalCurvature {
    let d = angle_defects(m);
    let mut interior = 0.0;
    let mut boundary = 0.0;
    for i in 0..m.len() {
        if m.topo.boundary[i] {
            boundary += d[i];
        } else {
            interior += d[i];
        }
    }
    TotalCurvature { interior, boundary, euler_characteristic: m.euler_characteristic() }
}

/// `Ric(N, N) = -(1 - ⟨N, ∂t⟩²)` for the product metric.
pub fn ricci_normal(m: &SurfaceMesh) -> ScalarField {
    m.normals.iter().map(|n| -(1.0 - n[2] * n[2])).collect()
}

/// Orthonormal tangent basis perpendicular to `n`.
pub fn tangent_basis(n: &V3) -> (V3, V3) {
    let a = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(&a, n);
    let mut t1 = [a[0] - d * n[0], a[1] - d * n[1], a[2] - d * n[2]];
    let l = norm(&t1);
    t1 = [t1[0] / l, t1[1] / l, t1[2] / l];
    let t2 = cross(n, &t1);
    (t1, t2)
}

/// Fit stencil: the 1-ring, widened to the 2-ring on the boundary.
fn stencil(m: &SurfaceMesh, i: usize) -> Vec<usize> {
    let ring = m.topo.neighbors(i);
    if ring.len() >= 5 {
        return ring.to_vec();
    }
    let mut s: Vec<usize> = ring.iter().flat_map(|&j| m.topo.neighbors(j).iter().copied()).filter(|&j| j != i).collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Stencil offsets of vertex `i` in the tangent frame `(T1, T2, N)`.
fn local_neighbors(m: &SurfaceMesh, i: usize, st: &[usize]) -> Vec<V3> {
    let n = m.normals[i];
    let (t1, t2) = tangent_basis(&n);
    st.iter()
        .map(|&j| {
            let x = ambient_log(&m.base[i], m.height[i], &m.base[j], m.height[j]);
            [dot(&x, &t1), dot(&x, &t2), dot(&x, &n)]
        })
        .collect()
}

fn lstsq_small(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    let a = nalgebra::DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&b, 1e-12 * smax).ok().map(|x| x.iter().copied().collect())
}

/// Quadratic fit `z ≈ ½(A x² + 2B xy + C y²) + D x + E y` of the offsets.
fn quadratic_fit(pts: &[V3]) -> Option<[f64; 5]> {
    // scale to unit size for conditioning
    let s = pts.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max).max(1e-300);
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| {
            let (x, y) = (p[0] / s, p[1] / s);
            vec![0.5 * x * x, x * y, 0.5 * y * y, x, y]
        })
        .collect();
    let rhs: Vec<f64> = pts.iter().map(|p| p[2] / s).collect();
    let c = lstsq_small(&rows, &rhs)?;
    Some([c[0] / s, c[1] / s, c[2] / s, c[3], c[4]])
}

/// `|A|²` from a quadratic fit over the 1-ring in normal coordinates.
pub fn second_fundamental_norm_sq(m: &SurfaceMesh) -> Result<ScalarField, MeshError> {
    (0..m.len())
        .into_par_iter()
        .map(|i| {
            let st = stencil(m, i);
            let val = st.len();
            if val < 5 {
                return Err(MeshError::Underdetermined { vertex: i, valence: val });
            }
            let pts = local_neighbors(m, i, &st);
            let c = quadratic_fit(&pts).ok_or(MeshError::Underdetermined { vertex: i, valence: val })?;
            let (a, b, cc, d, e) = (c[0], c[1], c[2], c[3], c[4]);
            let w = (1.0 + d * d + e * e).sqrt();
            // shape operator G^{-1} II with G = I + g gᵀ
            let g = nalgebra::Matrix2::new(1.0 + d * d, d * e, d * e, 1.0 + e * e);
            let ii = nalgebra::Matrix2::new(a, b, b, cc) / w;
            let s = g.try_inverse().unwrap_or_else(nalgebra::Matrix2::identity) * ii;
            Ok((s * s).trace())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormParams {
    pub kappa: f64,
    pub mu: f64,
}

impl WeightedNormParams {
    pub fn new(kappa: f64, mu: f64) -> Option<Self> {
        (kappa > -1.0 && kappa < 1.0 && mu > 0.0 && mu < 1.0).then_some(WeightedNormParams { kappa, mu })
    }
}

/// Gradient and Hessian norms of `u` at every vertex by 1-ring least squares.
pub fn field_derivatives(m: &SurfaceMesh, u: &[f64]) -> Vec<(f64, f64)> {
    (0..m.len())
        .into_par_iter()
        .map(|i| {
            let nb = stencil(m, i);
            let pts = local_neighbors(m, i, &nb);
            let du: Vec<f64> = nb.iter().map(|&j| u[j] - u[i]).collect();
            let scale = pts.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max).max(1e-300);
            if pts.len() >= 5 {
                let rows: Vec<Vec<f64>> = pts
                    .iter()
                    .map(|p| {
                        let (x, y) = (p[0] / scale, p[1] / scale);
                        vec![x, y, 0.5 * x * x, x * y, 0.5 * y * y]
                    })
                    .collect();
                if let Some(c) = lstsq_small(&rows, &du) {
                    let g = c[0].hypot(c[1]) / scale;
                    let s2 = scale * scale;
                    let h = (c[2] * c[2] + 2.0 * c[3] * c[3] + c[4] * c[4]).sqrt() / s2;
                    return (g, h);
                }
            }
            if pts.len() >= 2 {
                let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] / scale, p[1] / scale]).collect();
                if let Some(c) = lstsq_small(&rows, &du) {
                    return (c[0].hypot(c[1]) / scale, 0.0);
                }
            }
            (0.0, 0.0)
        })
        .collect()
}

/// `max e^{-κR}(|u| + [order≥1]|∇u| + [order≥2]|∇²u|)`.
pub fn weighted_norm(m: &SurfaceMesh, u: &[f64], p: WeightedNormParams, order: u8) -> Result<f64, MeshError> {
    m.check_field(u)?;
    let der = if order >= 1 { field_derivatives(m, u) } else { Vec::new() };
    let mut best = 0.0f64;
    for i in 0..m.len() {
        let mut v = u[i].abs();
        if order >= 1 {
            v += der[i].0;
        }
        if order >= 2 {
            v += der[i].1;
        }
        best = best.max((-p.kappa * m.weight[i]).exp() * v);
    }
    Ok(best)
}

/// Default injectivity bound for [`normal_graph`].
pub const GRAPH_BOUND: f64 = 0.2;

/// Moves vertex `i` along the ambient geodesic with initial velocity `u_i N_i`.
pub fn displace(p: &HPoint, t: f64, n: &V3, u: f64) -> (HPoint, f64) {
    (p.exp([u * n[0], u * n[1]]), t + u * n[2])
}

pub fn normal_graph(m: &SurfaceMesh, u: &[f64]) -> Result<SurfaceMesh, MeshError> {
    normal_graph_bounded(m, u, GRAPH_BOUND)
}

pub fn normal_graph_bounded(m: &SurfaceMesh, u: &[f64], bound: f64) -> Result<SurfaceMesh, MeshError> {
    m.check_field(u)?;
    if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| v.abs() > bound || !v.is_finite()) {
        return Err(MeshError::GraphTooLarge { vertex: i, value: *v, bound });
    }
    let mut out = m.clone();
    for i in 0..m.len() {
        let (p, t) = displace(&m.base[i], m.height[i], &m.normals[i], u[i]);
        out.base[i] = p;
        out.height[i] = t;
    }
    out.recompute_normals();
    Ok(out)
}

/// Writes the mesh as Wavefront OBJ with vertex coordinates `(x, y, t)`.
pub fn write_obj(m: &SurfaceMesh, path: &Path) -> Result<(), MeshError> {
    let io = |e: std::io::Error| MeshError::Io(e.to_string());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "# H2xR surface, disk model; {} vertices, {} faces", m.len(), m.triangles.len()).map_err(io)?;
    for i in 0..m.len() {
        writeln!(f, "v {:.12} {:.12} {:.12}", m.base[i].z.re, m.base[i].z.im, m.height[i]).map_err(io)?;
    }
    for t in &m.triangles {
        writeln!(f, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
    }
    Ok(())
}

/// Per-vertex sidecar table: coordinates, weight, region and extra columns.
pub fn write_fields_csv(m: &SurfaceMesh, path: &Path, columns: &[(&str, &[f64])]) -> Result<(), MeshError> {
    let io = |e: std::io::Error| MeshError::Io(e.to_string());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write!(f, "index,x,y,t,R,region").map_err(io)?;
    for (name, col) in columns {
        m.check_field(col)?;
        write!(f, ",{name}").map_err(io)?;
    }
    writeln!(f).map_err(io)?;
    for i in 0..m.len() {
        write!(f, "{i},{:.12},{:.12},{:.12},{:.9},{}", m.base[i].z.re, m.base[i].z.im, m.height[i], m.weight[i], m.region[i].name())
            .map_err(io)?;
        for (_, col) in columns {
            write!(f, ",{:.9e}", col[i]).map_err(io)?;
        }
        writeln!(f).map_err(io)?;
    }
    Ok(())
}

/// Structured grid helpers for test surfaces and sheets.
pub mod shapes {
    use super::*;
    use crate::hyperbolic::{fermi_point, Geodesic};

    /// Quad grid over `(u, v) ∈ [0, nu) x [0, nv)` split along one diagonal
    /// direction (valence 6 inside); `periodic_u` closes the `u` direction and
    /// `mirror` reflects the diagonals of the lower half so the triangulation
    /// is symmetric under `v ↦ nv - 1 - v`.
    pub fn grid_triangles(nu: usize, nv: usize, periodic_u: bool, mirror: bool) -> Vec<[usize; 3]> {
        let id = |i: usize, j: usize| j * nu + (i % nu);
        let iu = if periodic_u { nu } else { nu - 1 };
        let mut tris = Vec::with_capacity(2 * iu * (nv - 1));
        for j in 0..nv - 1 {
            for i in 0..iu {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if mirror && 2 * j + 1 < nv - 1 {
                    tris.push([a, b, d]);
                    tris.push([b, c, d]);
                } else {
                    tris.push([a, b, c]);
                    tris.push([a, c, d]);
                }
            }
        }
        tris
    }

    /// The vertical plane `γ x ℝ` over Fermi `s ∈ [-S, S]`, `t ∈ [-T, T]`.
    pub fn vertical_plane(g: &Geodesic, half_s: f64, half_t: f64, h: f64) -> SurfaceMesh {
        let ns = 2 * (half_s / h).round() as usize + 1;
        let nt = 2 * (half_t / h).round() as usize + 1;
        let mut base = Vec::with_capacity(ns * nt);
        let mut height = Vec::with_capacity(ns * nt);
        for j in 0..nt {
            for i in 0..ns {
                let s = -half_s + i as f64 * h;
                base.push(fermi_point(g, s, 0.0));
                height.push(-half_t + j as f64 * h);
            }
        }
        let mut m = SurfaceMesh::new(base, height, grid_triangles(ns, nt, false, true)).expect("grid mesh");
        m.sym.rt = m.detect_pairing(1e-9);
        m
    }

    /// Slice `H² x {0}` over the Fermi rectangle of the real axis.
    pub fn horizontal_slice(half: f64, h: f64) -> SurfaceMesh {
        let n = 2 * (half / h).round() as usize + 1;
        let mut base = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let s = -half + i as f64 * h;
                let sg = -half + j as f64 * h;
                base.push(crate::hyperbolic::real_axis_fermi(s, sg));
            }
        }
        let height = vec![0.0; n * n];
        let mut m = SurfaceMesh::new(base, height, grid_triangles(n, n, false, false)).expect("grid mesh");
        m.sym.rt = Some((0..m.len()).collect());
        m
    }

    /// Vertical cylinder over the hyperbolic circle of radius `rho` about the
    /// origin, with the normal pointing inwards.
    pub fn cylinder(rho: f64, half_t: f64, h: f64) -> SurfaceMesh {
        let perim = TAU * rho.sinh();
        let nu = ((perim / h).round() as usize).max(8);
        let nt = 2 * (half_t / h).round() as usize + 1;
        let dt = 2.0 * half_t / (nt - 1) as f64;
        let mut base = Vec::new();
        let mut height = Vec::new();
        for j in 0..nt {
            for i in 0..nu {
                let th = TAU * i as f64 / nu as f64;
                base.push(HPoint::polar(rho, th));
                height.push(-half_t + j as f64 * dt);
            }
        }
        // orient so that the normal points towards the axis
        let tris: Vec<[usize; 3]> = grid_triangles(nu, nt, true, true).into_iter().map(|t| [t[0], t[2], t[1]]).collect();
        let mut m = SurfaceMesh::new(base, height, tris).expect("cylinder mesh");
        m.sym.rt = m.detect_pairing(1e-9);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::shapes::*;
    use super::*;
    use crate::hyperbolic::{dilation_along, Geodesic};
    use proptest::prelude::*;

    fn interior_max(m: &SurfaceMesh, f: &[f64], margin: usize) -> f64 {
        // vertices at combinatorial distance > margin from the boundary
        let mut depth = vec![usize::MAX; m.len()];
        let mut frontier: Vec<usize> = (0..m.len()).filter(|&i| m.topo.boundary[i]).collect();
        for &i in &frontier {
            depth[i] = 0;
        }
        let mut d = 0;
        while !frontier.is_empty() && d < margin {
            let mut next = Vec::new();
            for &i in &frontier {
                for &j in m.topo.neighbors(i) {
                    if depth[j] == usize::MAX {
                        depth[j] = d + 1;
                        next.push(j);
                    }
                }
            }
            frontier = next;
            d += 1;
        }
        (0..m.len()).filter(|&i| depth[i] == usize::MAX).map(|i| f[i].abs()).fold(0.0, f64::max)
    }

    #[test]
    fn vertical_plane_is_minimal() {
        let g = Geodesic::from_angles(0.3, 2.5).unwrap();
        let m = vertical_plane(&g, 2.0, 2.0, 0.1);
        let h = mean_curvature(&m).unwrap();
        assert!(interior_max(&m, &h, 1) < 1e-8);
        let a2 = second_fundamental_norm_sq(&m).unwrap();
        assert!(interior_max(&m, &a2, 1) < 1e-8);
        let ric = ricci_normal(&m);
        assert!(ric.iter().all(|r| (r + 1.0).abs() < 1e-9));
        m.check_pairing(1e-9).unwrap();
    }

    #[test]
    fn horizontal_slice_is_minimal() {
        let m = horizontal_slice(2.0, 0.1);
        let h = mean_curvature(&m).unwrap();
        assert!(interior_max(&m, &h, 1) < 1e-8);
        assert!(ricci_normal(&m).iter().all(|r| r.abs() < 1e-12));
        // intrinsic curvature -1: defect ≈ -area away from the boundary
        let d = angle_defects(&m);
        let a = vertex_areas(&m);
        let k: Vec<f64> = d.iter().zip(&a).map(|(d, a)| d / a + 1.0).collect();
        assert!(interior_max(&m, &k, 2) < 0.01, "{}", interior_max(&m, &k, 2));
    }

    #[test]
    fn cylinder_curvatures() {
        let m = cylinder(1.0, 1.5, 0.05);
        let h = mean_curvature(&m).unwrap();
        let want = 0.5 / 1.0f64.tanh();
        let mid: Vec<usize> = (0..m.len()).filter(|&i| m.height[i].abs() < 0.5).collect();
        for &i in &mid {
            assert!((h[i] - want).abs() < 0.03 * want, "{} vs {}", h[i], want);
        }
        let a2 = second_fundamental_norm_sq(&m).unwrap();
        let want2 = 1.0 / 1.0f64.tanh().powi(2);
        for &i in &mid {
            assert!((a2[i] - want2).abs() < 0.03 * want2, "{} vs {}", a2[i], want2);
        }
    }

    #[test]
    fn offset_plane_sign() {
        let g = Geodesic::real_axis();
        let m = vertical_plane(&g, 2.0, 2.0, 0.1);
        let c = 0.1;
        let off = normal_graph(&m, &vec![c; m.len()]).unwrap();
        let h = mean_curvature(&off).unwrap();
        // equidistant surfaces bend back towards the plane: H = -tanh(c)/2
        let centre = (0..m.len()).min_by(|&a, &b| {
            let da = m.base[a].dist(&crate::hyperbolic::HPoint::ORIGIN) + m.height[a].abs();
            let db = m.base[b].dist(&crate::hyperbolic::HPoint::ORIGIN) + m.height[b].abs();
            da.partial_cmp(&db).unwrap()
        });
        let hc = h[centre.unwrap()];
        assert!((hc + 0.5 * c.tanh()).abs() < 0.02 * c.tanh(), "{hc}");
    }

    #[test]
    fn normal_graph_zero_and_bound() {
        let m = cylinder(1.0, 1.0, 0.1);
        let same = normal_graph(&m, &vec![0.0; m.len()]).unwrap();
        assert!(same.base.iter().zip(&m.base).all(|(a, b)| a == b));
        assert!(normal_graph(&m, &vec![0.3; m.len()]).is_err());
        assert!(normal_graph(&m, &[0.0]).is_err());
    }

    #[test]
    fn gauss_bonnet_identity() {
        let m = cylinder(0.8, 1.0, 0.1);
        let tc = total_curvature(&m);
        let chi = tc.euler_characteristic as f64;
        assert!((tc.interior + tc.boundary - TAU * chi).abs() < 1e-8);
        let g = Geodesic::from_angles(1.0, 3.0).unwrap();
        let p = vertical_plane(&g, 1.0, 1.0, 0.1);
        let tc = total_curvature(&p);
        assert!(tc.interior.abs() < 1e-8);
        assert!((tc.interior + tc.boundary - TAU).abs() < 1e-8);
        assert_eq!(p.genus(), 0);
        assert_eq!(m.boundary_loops().len(), 2);
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let base = vec![HPoint::polar(0.0, 0.0), HPoint::polar(0.1, 0.0), HPoint::polar(0.1, 0.01)];
        let m = SurfaceMesh::new(base, vec![0.0; 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(mean_curvature(&m), Err(MeshError::Degenerate { .. })));
    }

    #[test]
    fn weighted_norm_basics() {
        let mut m = cylinder(1.0, 1.0, 0.1);
        for (i, w) in m.weight.iter_mut().enumerate() {
            *w = 1.0 + 0.01 * i as f64;
        }
        let p = WeightedNormParams::new(-0.5, 0.5).unwrap();
        assert_eq!(weighted_norm(&m, &vec![0.0; m.len()], p, 2).unwrap(), 0.0);
        let u: Vec<f64> = m.weight.iter().map(|r| (p.kappa * r).exp()).collect();
        assert!((weighted_norm(&m, &u, p, 0).unwrap() - 1.0).abs() < 1e-12);
        let v: Vec<f64> = m.height.iter().map(|t| t.sin()).collect();
        let n0 = weighted_norm(&m, &v, p, 0).unwrap();
        let n1 = weighted_norm(&m, &v, p, 1).unwrap();
        let n2 = weighted_norm(&m, &v, p, 2).unwrap();
        assert!(n0 <= n1 && n1 <= n2);
    }

    #[test]
    fn export_round_trip() {
        let m = cylinder(1.0, 0.5, 0.2);
        let dir = std::env::temp_dir().join(format!("catenet-mesh-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        write_obj(&m, &dir.join("c.obj")).unwrap();
        let h = mean_curvature(&m).unwrap();
        write_fields_csv(&m, &dir.join("c.csv"), &[("H", &h)]).unwrap();
        let obj = std::fs::read_to_string(dir.join("c.obj")).unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), m.len());
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), m.triangles.len());
        let csv = std::fs::read_to_string(dir.join("c.csv")).unwrap();
        assert_eq!(csv.lines().count(), m.len() + 1);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn isometry_invariance(a in 0.0..6.0f64, sg in -3.0..3.0f64, refl in any::<bool>(), flip in any::<bool>(), shift in -1.0..1.0f64) {
            let m = cylinder(0.9, 0.6, 0.1);
            let g = Geodesic::from_angles(a, a + 2.0).unwrap();
            let mut iso = dilation_along(&g, sg).with_vertical(if flip { -1.0 } else { 1.0 }, shift);
            if refl { iso = iso.compose(&PlaneIsometry::conjugation()); }
            let n = m.transformed(&iso);
            let h0 = mean_curvature(&m).unwrap();
            let h1 = mean_curvature(&n).unwrap();
            for i in 0..m.len() {
                prop_assert!((h0[i] - h1[i]).abs() < 1e-8);
            }
            let a0 = second_fundamental_norm_sq(&m).unwrap();
            let a1 = second_fundamental_norm_sq(&n).unwrap();
            for i in 0..m.len() {
                prop_assert!((a0[i] - a1[i]).abs() < 1e-7);
            }
            prop_assert!((total_area(&m) - total_area(&n)).abs() < 1e-8);
        }

        #[test]
        fn relabelling_invariance(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let m = cylinder(0.9, 0.5, 0.1);
            let mut perm: Vec<usize> = (0..m.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut base = vec![m.base[0]; m.len()];
            let mut height = vec![0.0; m.len()];
            for i in 0..m.len() {
                base[perm[i]] = m.base[i];
                height[perm[i]] = m.height[i];
            }
            let tris = m.triangles.iter().map(|t| [perm[t[0]], perm[t[1]], perm[t[2]]]).collect();
            let n = SurfaceMesh::new(base, height, tris).unwrap();
            let h0 = mean_curvature(&m).unwrap();
            let h1 = mean_curvature(&n).unwrap();
            for i in 0..m.len() {
                prop_assert!((h0[i] - h1[perm[i]]).abs() < 1e-12);
            }
        }
    }
}
