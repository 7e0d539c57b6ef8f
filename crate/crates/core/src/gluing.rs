//! Strip decomposition of a network, placement and cutoff of catenoids,
//! planar band stitching, gluing of two surfaces along a shared end and
//! moduli probes.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};
use thiserror::Error;

use crate::catenoid::{catenoid, smoothstep, CatenoidError, CatenoidSpec, RefineParams};
use crate::hyperbolic::{
    fermi_coords, fermi_point, geodesic_distance, translation_to, Geodesic, GeodesicRelation, HPoint, PlaneIsometry,
};
use crate::mesh::{ambient_dist, mean_curvature, MeshError, Region, SurfaceMesh};
use crate::network::{deform, validate, DeformationVector, GeodesicNetwork, NetworkError, NetworkMetrics, RejectionReport};
use crate::solver::{contraction_solve, ContractionParams, ContractionState, SolverError};

/// Minimal neck separation `D` for the cutoff construction.
pub const MIN_SEPARATION: f64 = 6.0;
/// Half-width of the band removed around each strip boundary.
pub const CLIP: f64 = 0.5;
/// Half-width of a gluing strip `Q` around a strip boundary.
pub const Q_HALF_WIDTH: f64 = 2.0;
/// Lowest chain height required of a truncated catenoid at a cut.
const MIN_CHAIN_HEIGHT: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GluingError {
    #[error("necks too close for cutoff construction: gap {gap:.4} on line {line}, need at least {min}")]
    NecksTooClose { line: usize, gap: f64, min: f64 },
    #[error(transparent)]
    Network(#[from] RejectionReport),
    #[error(transparent)]
    Deformation(#[from] NetworkError),
    #[error("lines {0} and {1} are not disjoint")]
    Crossing(usize, usize),
    #[error("truncation radius {r_max} too small for gap {gap:.3}")]
    Truncation { r_max: f64, gap: f64 },
    #[error(transparent)]
    Catenoid(#[from] CatenoidError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("stitching failed: {0}")]
    Stitch(String),
    #[error("the chosen ends do not coincide")]
    EndMismatch,
    #[error("necks of the two surfaces are not on opposite sides of the gluing line")]
    Overlap,
    #[error("overlap graphs too large ({got:.3e} > {bound:.3e}); bring surfaces closer to the common plane first")]
    GraphTooLarge { got: f64, bound: f64 },
    #[error("probe domain too small: blend reaches {need:.3}, surface extends to {have:.3}")]
    ProbeDomain { need: f64, have: f64 },
}

/// Smooth cutoff in the distance `d` to a strip boundary: 0 for `d ≤ inner`,
/// 1 for `d ≥ outer`, quintic in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub inner: f64,
    pub outer: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        CutoffProfile { inner: 1.0, outer: 2.0 }
    }
}

impl CutoffProfile {
    fn x(&self, d: f64) -> f64 {
        (d - self.inner) / (self.outer - self.inner)
    }

    pub fn value(&self, d: f64) -> f64 {
        smoothstep(self.x(d))
    }

    pub fn derivative(&self, d: f64) -> f64 {
        let x = self.x(d);
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        30.0 * x * x * (1.0 - x) * (1.0 - x) / (self.outer - self.inner)
    }

    pub fn second_derivative(&self, d: f64) -> f64 {
        let x = self.x(d);
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        let w = self.outer - self.inner;
        60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) / (w * w)
    }

    /// `sup |χ'| + |χ''|`, sampled.
    pub fn derivative_bound(&self) -> f64 {
        let n = 20000;
        (0..=n)
            .map(|k| {
                let d = self.inner + (self.outer - self.inner) * k as f64 / n as f64;
                self.derivative(d).abs() + self.second_derivative(d).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Necks and strip boundaries along one line, in Fermi arclength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineStrips {
    pub necks: Vec<f64>,
    /// Segment index of each neck.
    pub segments: Vec<usize>,
    pub midpoints: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl LineStrips {
    /// Strip `[q_{j-1}, q_j]` of the `j`-th neck, unbounded at the extremes.
    pub fn strip(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { f64::NEG_INFINITY } else { self.midpoints[j - 1] };
        let hi = if j + 1 == self.necks.len() { f64::INFINITY } else { self.midpoints[j] };
        (lo, hi)
    }

    pub fn q_strips(&self) -> Vec<(f64, f64)> {
        self.midpoints.iter().map(|q| (q - Q_HALF_WIDTH, q + Q_HALF_WIDTH)).collect()
    }

    pub fn position(&self, segment: usize) -> Option<usize> {
        self.segments.iter().position(|&k| k == segment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripDecomposition {
    pub lines: Vec<LineStrips>,
    pub d: f64,
    pub cutoff: CutoffProfile,
}

/// Validates the network, checks that all lines are pairwise disjoint and
/// that every gap admits the cutoff construction.
pub fn decompose(net: &GeodesicNetwork) -> Result<(NetworkMetrics, StripDecomposition), GluingError> {
    let metrics = validate(net)?;
    for a in 0..net.lines.len() {
        for b in a + 1..net.lines.len() {
            if !matches!(geodesic_distance(&net.lines[a], &net.lines[b]).relation, GeodesicRelation::Ultraparallel { .. }) {
                return Err(GluingError::Crossing(a, b));
            }
        }
    }
    let d = strips_of(&metrics)?;
    Ok((metrics, d))
}

fn strips_of(metrics: &NetworkMetrics) -> Result<StripDecomposition, GluingError> {
    let mut lines = Vec::with_capacity(metrics.lines.len());
    for (l, lm) in metrics.lines.iter().enumerate() {
        if let Some(&gap) = lm.gaps.iter().find(|&&g| g < MIN_SEPARATION - 1e-9) {
            return Err(GluingError::NecksTooClose { line: l, gap, min: MIN_SEPARATION });
        }
        let necks: Vec<f64> = lm.necks.iter().map(|n| n.s).collect();
        lines.push(LineStrips {
            midpoints: necks.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
            segments: lm.necks.iter().map(|n| n.segment).collect(),
            gaps: lm.gaps.clone(),
            necks,
        });
    }
    Ok(StripDecomposition { lines, d: metrics.d, cutoff: CutoffProfile::default() })
}

#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub eta: f64,
    pub mesh: SurfaceMesh,
    pub sup_h: f64,
    pub iterations: usize,
}

/// Refined catenoids at a common spacing and truncation radius, keyed by `η`.
#[derive(Debug, Clone)]
pub struct CatenoidLibrary {
    pub h: f64,
    pub r_max: f64,
    pub refine: RefineParams,
    /// Relative `η` tolerance for reusing an entry.
    pub tolerance: f64,
    entries: Vec<LibraryEntry>,
}

impl CatenoidLibrary {
    pub fn new(h: f64, r_max: f64) -> Self {
        CatenoidLibrary { h, r_max, refine: RefineParams::default(), tolerance: 1e-4, entries: Vec::new() }
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn find(&self, eta: f64) -> Option<&LibraryEntry> {
        self.entries
            .iter()
            .filter(|e| (e.eta - eta).abs() <= self.tolerance * eta)
            .min_by(|a, b| (a.eta - eta).abs().partial_cmp(&(b.eta - eta).abs()).unwrap())
    }

    fn build(&self, eta: f64) -> Result<LibraryEntry, GluingError> {
        let spec = CatenoidSpec::new(eta, self.r_max, self.h)?;
        let (mesh, rep) = catenoid(&spec, self.refine)?;
        Ok(LibraryEntry { eta, mesh, sup_h: *rep.sup_h_history.last().unwrap_or(&0.0), iterations: rep.iterations })
    }

    /// Refines all missing separations in parallel.
    pub fn prefetch(&mut self, etas: &[f64]) -> Result<(), GluingError> {
        let mut todo: Vec<f64> = Vec::new();
        for &e in etas {
            if self.find(e).is_none() && !todo.iter().any(|&t| (t - e).abs() <= self.tolerance * e) {
                todo.push(e);
            }
        }
        let built: Vec<Result<LibraryEntry, GluingError>> = todo.par_iter().map(|&e| self.build(e)).collect();
        for b in built {
            self.entries.push(b?);
        }
        Ok(())
    }

    pub fn get(&mut self, eta: f64) -> Result<&LibraryEntry, GluingError> {
        self.prefetch(&[eta])?;
        Ok(self.find(eta).unwrap())
    }
}

/// A region of an assembled surface where a cutoff or stitch happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluingStrip {
    pub line: usize,
    pub center: f64,
    pub half_width: f64,
    /// Arclengths of the necks adjacent to the strip.
    pub necks: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AssembledSurface {
    pub mesh: SurfaceMesh,
    pub network: GeodesicNetwork,
    /// Line each vertex is a graph over, `None` on necks.
    pub sheet: Vec<Option<usize>>,
    pub strips: Vec<GluingStrip>,
    pub decomposition: Option<StripDecomposition>,
    pub h: f64,
    /// Largest sup |H| of the catenoids used.
    pub library_sup_h: f64,
}

impl AssembledSurface {
    /// `(genus, ends)` of the mesh.
    pub fn topology(&self) -> (i64, usize) {
        (self.mesh.genus(), self.mesh.boundary_loops().len())
    }

    /// Vertices whose closed 1-ring meets a gluing strip.
    pub fn in_strips(&self) -> Vec<bool> {
        let inside: Vec<bool> = (0..self.mesh.len()).map(|v| self.strip_of(v).is_some()).collect();
        (0..self.mesh.len())
            .map(|v| inside[v] || self.mesh.topo.neighbors(v).iter().any(|&w| inside[w]))
            .collect()
    }

    fn strip_of(&self, v: usize) -> Option<usize> {
        let l = self.sheet[v]?;
        let s = fermi_coords(&self.network.lines[l], &self.mesh.base[v]).0;
        self.strips.iter().position(|g| g.line == l && (s - g.center).abs() <= g.half_width)
    }

    /// Same surface and network moved by an isometry; strip arclengths are
    /// re-measured along the image lines.
    pub fn transformed(&self, iso: &PlaneIsometry) -> AssembledSurface {
        let mut out = self.clone();
        out.mesh = self.mesh.transformed(iso);
        let network = self.network.transformed(iso);
        let remap = |l: usize, s: f64| fermi_coords(&network.lines[l], &iso.apply(&fermi_point(&self.network.lines[l], s, 0.0))).0;
        for g in &mut out.strips {
            let c = remap(g.line, g.center);
            let necks = g.necks.iter().map(|&p| remap(g.line, p)).collect();
            *g = GluingStrip { line: g.line, center: c, half_width: g.half_width, necks };
        }
        out.network = network;
        if let Ok(m) = validate(&out.network) {
            out.decomposition = strips_of(&m).ok();
        }
        out
    }
}

/// Mutable soup of vertices and triangles with the `t`-pairing tracked.
#[derive(Debug, Default)]
struct Builder {
    base: Vec<HPoint>,
    height: Vec<f64>,
    region: Vec<Region>,
    sheet: Vec<Option<usize>>,
    rt: Vec<usize>,
    tris: Vec<[usize; 3]>,
}

/// A source mesh with its sheet labels; `sheet_map` renames source lines.
struct Source<'a> {
    mesh: &'a SurfaceMesh,
    sheet: &'a [Option<usize>],
    sheet_map: &'a (dyn Fn(usize) -> usize + Sync),
}

impl Builder {
    fn push(&mut self, p: HPoint, t: f64, region: Region, sheet: Option<usize>) -> usize {
        self.base.push(p);
        self.height.push(t);
        self.region.push(region);
        self.sheet.push(sheet);
        self.rt.push(self.base.len() - 1);
        self.base.len() - 1
    }

    /// Copies `src`, keeping vertices by `rule(line, s)`: `None` drops, `Some(c)`
    /// keeps with the graph over the line scaled by `c`. Returns the boundary
    /// edges created by the removal.
    fn append(&mut self, src: &Source, lines: &[Geodesic], rule: &(dyn Fn(usize, f64) -> Option<f64> + Sync)) -> Result<Vec<[usize; 2]>, GluingError> {
        let m = src.mesh;
        let rt = m.sym.rt.as_ref().ok_or_else(|| GluingError::Stitch("source lacks the t-pairing".into()))?;
        let n = m.len();
        let decide = |i: usize| -> Option<(HPoint, Region)> {
            match src.sheet[i] {
                None => Some((m.base[i], m.region[i])),
                Some(l0) => {
                    let l = (src.sheet_map)(l0);
                    let (s, v) = fermi_coords(&lines[l], &m.base[i]);
                    let c = rule(l, s)?;
                    if c >= 1.0 {
                        Some((m.base[i], m.region[i]))
                    } else {
                        let r = if c > 0.0 { Region::Transition } else { Region::Strip };
                        Some((fermi_point(&lines[l], s, c * v), r))
                    }
                }
            }
        };
        let reps: Vec<Option<(HPoint, Region)>> = (0..n).into_par_iter().map(|i| if rt[i] >= i { decide(i) } else { None }).collect();
        let mut index = vec![usize::MAX; n];
        for i in 0..n {
            let r = i.min(rt[i]);
            if let Some((p, region)) = reps[r] {
                let t = if i == r { m.height[r] } else { -m.height[r] };
                let t = if rt[i] == i { 0.0 } else { t };
                index[i] = self.push(p, t, region, src.sheet[r].map(src.sheet_map));
            }
        }
        for i in 0..n {
            if index[i] != usize::MAX {
                self.rt[index[i]] = index[rt[i]];
            }
        }
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        let mut kept = Vec::new();
        for t in &m.triangles {
            if t.iter().all(|&v| index[v] != usize::MAX) {
                kept.push(*t);
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    *count.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
        }
        let old: HashSet<(usize, usize)> = m.topo.boundary_edges.iter().map(|e| (e[0].min(e[1]), e[0].max(e[1]))).collect();
        let mut fresh = Vec::new();
        for t in &kept {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if count[&key] == 1 && !old.contains(&key) {
                    fresh.push([index[a], index[b]]);
                }
            }
            self.tris.push([index[t[0]], index[t[1]], index[t[2]]]);
        }
        Ok(fresh)
    }

    /// Path formed by the fresh edges on `line` within `radius` of arclength
    /// `near`, cut to its upper half starting at the `t = 0` vertex.
    fn chain(&self, fresh: &[[usize; 2]], line: usize, g: &Geodesic, near: f64, radius: f64) -> Result<Vec<usize>, GluingError> {
        let on = |v: usize| self.sheet[v] == Some(line) && (fermi_coords(g, &self.base[v]).0 - near).abs() < radius;
        let edges: Vec<[usize; 2]> = fresh.iter().copied().filter(|e| on(e[0]) && on(e[1])).collect();
        if edges.is_empty() {
            return Err(GluingError::Stitch(format!("no cut edges on line {line} near s = {near:.3}")));
        }
        let mut next: HashMap<usize, usize> = HashMap::new();
        let mut has_in: HashSet<usize> = HashSet::new();
        for e in &edges {
            if next.insert(e[0], e[1]).is_some() || !has_in.insert(e[1]) {
                return Err(GluingError::Stitch(format!("cut on line {line} near s = {near:.3} branches")));
            }
        }
        let start = *next
            .keys()
            .find(|v| !has_in.contains(v))
            .ok_or_else(|| GluingError::Stitch(format!("cut on line {line} near s = {near:.3} is closed")))?;
        let mut path = vec![start];
        while let Some(&w) = next.get(path.last().unwrap()) {
            path.push(w);
        }
        if path.len() != edges.len() + 1 {
            return Err(GluingError::Stitch(format!("cut on line {line} near s = {near:.3} is disconnected")));
        }
        let i0 = path
            .iter()
            .position(|&v| self.rt[v] == v)
            .ok_or_else(|| GluingError::Stitch(format!("cut on line {line} misses t = 0")))?;
        let upper: Vec<usize> = if self.height[*path.last().unwrap()] > 0.0 {
            path[i0..].to_vec()
        } else {
            path[..=i0].iter().rev().copied().collect()
        };
        if upper.len() < 2 {
            return Err(GluingError::Stitch(format!("cut on line {line} has no upper half")));
        }
        Ok(upper)
    }

    /// Meshes the planar band between two upper chains over `g` and mirrors it
    /// to `t < 0`.
    fn stitch(&mut self, line: usize, g: &Geodesic, a: &[usize], b: &[usize], h: f64) -> Result<(), GluingError> {
        let st = |v: usize| (fermi_coords(g, &self.base[v]).0, self.height[v]);
        let mean_s = |c: &[usize]| c.iter().map(|&v| st(v).0).sum::<f64>() / c.len() as f64;
        let (left, right) = if mean_s(a) <= mean_s(b) { (a, b) } else { (b, a) };
        let mut poly: Vec<((f64, f64), Option<usize>)> = left.iter().map(|&v| (st(v), Some(v))).collect();
        let interior = |p: (f64, f64), q: (f64, f64)| -> Vec<(f64, f64)> {
            let len = (q.0 - p.0).hypot(q.1 - p.1);
            let k = (len / h).ceil().max(1.0) as usize;
            (1..k).map(|i| {
                let x = i as f64 / k as f64;
                (p.0 + x * (q.0 - p.0), p.1 + x * (q.1 - p.1))
            })
            .collect()
        };
        let (lt, rt) = (st(*left.last().unwrap()), st(*right.last().unwrap()));
        poly.extend(interior(lt, rt).into_iter().map(|p| (p, None)));
        poly.extend(right.iter().rev().map(|&v| (st(v), Some(v))));
        let (r0, l0) = (st(right[0]), st(left[0]));
        poly.extend(interior((r0.0, 0.0), (l0.0, 0.0)).into_iter().map(|p| ((p.0, 0.0), None)));

        let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
        let mut handles = Vec::with_capacity(poly.len());
        for ((s, t), _) in &poly {
            let hd = cdt.insert(Point2::new(*s, *t)).map_err(|e| GluingError::Stitch(format!("{e:?}")))?;
            handles.push(hd);
        }
        let distinct: HashSet<usize> = handles.iter().map(|h| h.index()).collect();
        if distinct.len() != handles.len() {
            return Err(GluingError::Stitch("band polygon repeats a vertex".into()));
        }
        for k in 0..handles.len() {
            let (p, q) = (handles[k], handles[(k + 1) % handles.len()]);
            if !cdt.can_add_constraint(p, q) {
                return Err(GluingError::Stitch("band polygon self-intersects".into()));
            }
            cdt.add_constraint(p, q);
        }
        let params = RefinementParameters::<f64>::new()
            .with_angle_limit(AngleLimit::from_deg(25.0))
            .with_max_allowed_area(0.5 * h * h)
            .with_max_additional_vertices(200 * poly.len() + 10000)
            .keep_constraint_edges()
            .exclude_outer_faces(true);
        let res = cdt.refine(params);
        let excluded: HashSet<usize> = res.excluded_faces.iter().map(|f| f.index()).collect();

        let mut id: HashMap<usize, (usize, usize)> = HashMap::new();
        for (k, hd) in handles.iter().enumerate() {
            if let Some(v) = poly[k].1 {
                id.insert(hd.index(), (v, self.rt[v]));
            }
        }
        let mut upper = Vec::new();
        for f in cdt.inner_faces() {
            if excluded.contains(&f.fix().index()) {
                continue;
            }
            let mut tri = [(0usize, 0usize); 3];
            for (k, v) in f.vertices().iter().enumerate() {
                let key = v.fix().index();
                let e = match id.get(&key) {
                    Some(e) => *e,
                    None => {
                        let p = v.position();
                        let base = fermi_point(g, p.x, 0.0);
                        let up = self.push(base, p.y, Region::Strip, Some(line));
                        let down = if p.y == 0.0 { up } else { self.push(base, -p.y, Region::Strip, Some(line)) };
                        self.rt[up] = down;
                        self.rt[down] = up;
                        id.insert(key, (up, down));
                        (up, down)
                    }
                };
                tri[k] = e;
            }
            upper.push(tri);
        }
        if upper.is_empty() {
            return Err(GluingError::Stitch("empty band".into()));
        }
        for t in upper {
            self.tris.push([t[0].0, t[1].0, t[2].0]);
            self.tris.push([t[0].1, t[2].1, t[1].1]);
        }
        Ok(())
    }

    fn finish(mut self, lines: &[Geodesic], metrics: &NetworkMetrics) -> Result<(SurfaceMesh, Vec<Option<usize>>), GluingError> {
        orient(&mut self.tris)?;
        let mut mesh = SurfaceMesh::new(self.base, self.height, self.tris)?;
        mesh.region = self.region;
        let necks: Vec<Vec<f64>> = metrics.lines.iter().map(|l| l.necks.iter().map(|n| n.s).collect()).collect();
        mesh.weight = radial_weight(&mesh, &self.sheet, lines, &necks);
        mesh.sym.rt = Some(self.rt);
        mesh.check_pairing(1e-12)?;
        Ok((mesh, self.sheet))
    }
}

/// Flips triangles so that every interior edge is traversed in opposite
/// directions by its two triangles.
fn orient(tris: &mut [[usize; 3]]) -> Result<(), GluingError> {
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, t) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    if let Some((e, _)) = by_edge.iter().find(|(_, fs)| fs.len() > 2) {
        return Err(GluingError::Stitch(format!("edge {}-{} is shared by more than two triangles", e.0, e.1)));
    }
    let forward = |t: &[usize; 3], a: usize, b: usize| (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b);
    let mut seen = vec![false; tris.len()];
    for root in 0..tris.len() {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(f) = queue.pop_front() {
            let t = tris[f];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                for &g in &by_edge[&(a.min(b), a.max(b))] {
                    if g == f {
                        continue;
                    }
                    let same = forward(&tris[g], a, b);
                    if !seen[g] {
                        if same {
                            tris[g].swap(1, 2);
                        }
                        seen[g] = true;
                        queue.push_back(g);
                    } else if same {
                        return Err(GluingError::Stitch("surface is not orientable".into()));
                    }
                }
            }
        }
    }
    Ok(())
}

fn smooth_min(xs: impl Iterator<Item = f64>, k: f64) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return lo;
    }
    lo - xs.iter().map(|x| (-k * (x - lo)).exp()).sum::<f64>().ln() / k
}

/// `1` on `[0, 1]`, slope rising by a quintic to 1 over `[1, 3]`, then `ρ - 1`.
pub fn radial_profile(rho: f64) -> f64 {
    if rho <= 1.0 {
        return 1.0;
    }
    if rho >= 3.0 {
        return rho - 1.0;
    }
    let y = 0.5 * (rho - 1.0);
    1.0 + 2.0 * y.powi(4) * (2.5 - 3.0 * y + y * y)
}

/// Smoothed distance to the necks: 1 on necks, growing like the distance
/// along the sheets.
pub fn radial_weight(m: &SurfaceMesh, sheet: &[Option<usize>], lines: &[Geodesic], necks: &[Vec<f64>]) -> Vec<f64> {
    (0..m.len())
        .into_par_iter()
        .map(|v| match sheet[v] {
            None => 1.0,
            Some(l) if necks[l].is_empty() => 1.0,
            Some(l) => {
                let s = fermi_coords(&lines[l], &m.base[v]).0;
                let md = smooth_min(necks[l].iter().map(|p| ((s - p).powi(2) + 1.0).sqrt() - 1.0), 2.0).max(0.0);
                radial_profile(md.hypot(m.height[v]))
            }
        })
        .collect()
}

/// Isometry taking the real axis to the geodesic through `a` and `b`, with
/// `-1` on the side of `a`.
fn frame_through(a: &HPoint, b: &HPoint) -> PlaneIsometry {
    let to = translation_to(a);
    let bb = to.inverse().apply(b);
    let theta = bb.z.arg();
    to.compose(&PlaneIsometry::rotation(theta))
}

/// Places a catenoid for every segment, cuts it at the strip boundaries with
/// the cutoff and fills each strip boundary with a planar band.
pub fn assemble(net: &GeodesicNetwork, lib: &mut CatenoidLibrary) -> Result<AssembledSurface, GluingError> {
    let (metrics, dec) = decompose(net)?;
    for l in &dec.lines {
        for &gap in &l.gaps {
            let need = ((0.5 * gap + CLIP).powi(2) + MIN_CHAIN_HEIGHT * MIN_CHAIN_HEIGHT).sqrt();
            if lib.r_max < need {
                return Err(GluingError::Truncation { r_max: lib.r_max, gap });
            }
        }
    }
    let etas: Vec<f64> = metrics.segments.iter().map(|s| s.eta).collect();
    lib.prefetch(&etas)?;
    let cut = dec.cutoff;
    let mut b = Builder::default();
    let mut fresh = Vec::new();
    for (k, sm) in metrics.segments.iter().enumerate() {
        let entry = lib.find(sm.eta).unwrap();
        let frame = frame_through(&sm.foot_alpha, &sm.foot_beta);
        let iso = frame.compose(&PlaneIsometry::translation_x(0.5 * sm.eta));
        let src = entry.mesh.transformed(&iso);
        let sheet: Vec<Option<usize>> = (0..entry.mesh.len())
            .map(|i| match entry.mesh.region[i] {
                Region::Neck => None,
                _ => Some(if fermi_coords(&Geodesic::real_axis(), &entry.mesh.base[i]).0 < 0.0 { sm.alpha } else { sm.beta }),
            })
            .collect();
        let mut src = src;
        src.region = entry.mesh.region.iter().map(|r| if *r == Region::End { Region::End } else { Region::Neck }).collect();
        let bounds: HashMap<usize, (f64, f64)> = [sm.alpha, sm.beta]
            .iter()
            .map(|&l| (l, dec.lines[l].strip(dec.lines[l].position(k).unwrap())))
            .collect();
        let rule = |l: usize, s: f64| -> Option<f64> {
            let (lo, hi) = bounds[&l];
            let d = (s - lo).min(hi - s);
            (d >= CLIP).then(|| cut.value(d))
        };
        let id = |l: usize| l;
        fresh.extend(b.append(&Source { mesh: &src, sheet: &sheet, sheet_map: &id }, &net.lines, &rule)?);
    }
    let mut strips = Vec::new();
    for (l, ls) in dec.lines.iter().enumerate() {
        for (j, &q) in ls.midpoints.iter().enumerate() {
            let g = &net.lines[l];
            let a = b.chain(&fresh, l, g, q - CLIP, 0.5 * CLIP + 0.5)?;
            let c = b.chain(&fresh, l, g, q + CLIP, 0.5 * CLIP + 0.5)?;
            b.stitch(l, g, &a, &c, lib.h)?;
            strips.push(GluingStrip { line: l, center: q, half_width: Q_HALF_WIDTH, necks: vec![ls.necks[j], ls.necks[j + 1]] });
        }
    }
    let (mesh, sheet) = b.finish(&net.lines, &metrics)?;
    let library_sup_h = etas.iter().map(|&e| lib.find(e).unwrap().sup_h).fold(0.0, f64::max);
    Ok(AssembledSurface { mesh, network: net.clone(), sheet, strips, decomposition: Some(dec), h: lib.h, library_sup_h })
}

/// `sup |H|` over one box of a gluing strip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSample {
    pub strip: usize,
    pub t: f64,
    /// Distance in the sheet from the box centre to the nearest adjacent neck.
    pub r_centre: f64,
    /// Same distance from the vertex attaining the sup.
    pub r: f64,
    pub sup_h: f64,
    pub vertices: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanCurvatureReport {
    pub boxes: Vec<BoxSample>,
    /// Fit of `ln(sup|H| r^{1/2})` against `r` over all boxes above the floor.
    pub fit: Option<LineFit>,
    pub inside_sup: f64,
    /// sup |H| over vertices whose closed 1-ring avoids every gluing strip.
    pub outside_sup: f64,
    pub outside_vertices: usize,
}

/// Boxes with sup |H| at or below this are treated as numerically zero.
pub const H_FLOOR: f64 = 1e-12;

pub fn mean_curvature_report(s: &AssembledSurface) -> Result<MeanCurvatureReport, GluingError> {
    let h = mean_curvature(&s.mesh)?;
    let boundary = s.mesh.boundary();
    let inside = s.in_strips();
    let mut outside_sup = 0.0f64;
    let mut inside_sup = 0.0f64;
    let mut outside_vertices = 0;
    for v in 0..s.mesh.len() {
        if inside[v] {
            inside_sup = inside_sup.max(h[v].abs());
        } else {
            outside_vertices += 1;
            outside_sup = outside_sup.max(h[v].abs());
        }
    }
    let mut boxes = Vec::new();
    for (k, g) in s.strips.iter().enumerate() {
        let line = &s.network.lines[g.line];
        let members: Vec<(f64, f64, f64)> = (0..s.mesh.len())
            .filter(|&v| !boundary[v] && s.sheet[v] == Some(g.line))
            .filter_map(|v| {
                let sv = fermi_coords(line, &s.mesh.base[v]).0;
                let t = s.mesh.height[v];
                let r = g.necks.iter().map(|p| (sv - p).hypot(t)).fold(f64::INFINITY, f64::min);
                ((sv - g.center).abs() <= g.half_width).then_some((t, h[v].abs(), r))
            })
            .collect();
        let top = members.iter().map(|m| m.0.abs()).fold(0.0, f64::max);
        let mut tc = 0.0;
        while tc + 1.0 <= top {
            let inb: Vec<&(f64, f64, f64)> = members.iter().filter(|m| (m.0 - tc).abs() <= 1.0).collect();
            if let Some(best) = inb.iter().max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()) {
                let r_centre = g.necks.iter().map(|p| (g.center - p).hypot(tc)).fold(f64::INFINITY, f64::min);
                boxes.push(BoxSample { strip: k, t: tc, r_centre, r: best.2, sup_h: best.1, vertices: inb.len() });
            }
            tc += 2.0;
        }
    }
    let pts: Vec<(f64, f64)> = boxes.iter().filter(|b| b.sup_h > H_FLOOR && b.r.is_finite()).map(|b| (b.r, (b.sup_h * b.r.sqrt()).ln())).collect();
    Ok(MeanCurvatureReport { fit: linear_fit(&pts), boxes, inside_sup, outside_sup, outside_vertices })
}

/// Least-squares line through `(x, y)` points.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<LineFit> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit { slope, intercept: my - slope * mx, samples: pts.len() })
}

/// Parameters of [`glue_pair`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlueParams {
    /// Bound on the overlap graphs over the shared line.
    pub graph_bound: f64,
    /// Distance kept free of either surface on each side of the gluing point.
    pub clip: f64,
}

impl Default for GlueParams {
    fn default() -> Self {
        GlueParams { graph_bound: 0.05, clip: 0.3 }
    }
}

fn same_line(a: &Geodesic, b: &Geodesic) -> bool {
    let close = |x: f64, y: f64| {
        let d = (x - y).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d) < 1e-8
    };
    (close(a.start.angle(), b.start.angle()) && close(a.end.angle(), b.end.angle()))
        || (close(a.start.angle(), b.end.angle()) && close(a.end.angle(), b.start.angle()))
}

fn line_necks(net: &GeodesicNetwork, line: usize) -> Result<Vec<f64>, GluingError> {
    Ok(validate(net)?.lines[line].necks.iter().map(|n| n.s).collect())
}

/// Isometries placing `end1` of `m1` and `end2` of `m2` on the real axis, the
/// last neck of the first at `-separation/2`, the first neck of the second at
/// `+separation/2`, and the rest of each surface on opposite sides.
pub fn end_alignment(m1: &AssembledSurface, end1: usize, m2: &AssembledSurface, end2: usize, separation: f64) -> Result<(PlaneIsometry, PlaneIsometry), GluingError> {
    let place = |m: &AssembledSurface, end: usize, first: bool| -> Result<PlaneIsometry, GluingError> {
        let g = m.network.lines[end];
        let necks = line_necks(&m.network, end)?;
        if necks.is_empty() {
            return Err(GluingError::Overlap);
        }
        let (s0, target, side) = if first {
            (necks.iter().cloned().fold(f64::NEG_INFINITY, f64::max), -0.5 * separation, 1.0)
        } else {
            (necks.iter().cloned().fold(f64::INFINITY, f64::min), 0.5 * separation, -1.0)
        };
        let iso = PlaneIsometry::translation_x(target - s0).compose(&g.standard_map().inverse());
        let probe = m
            .network
            .lines
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != end)
            .map(|(_, o)| fermi_coords(&Geodesic::real_axis(), &iso.apply(&o.foot())).1)
            .next();
        let flip = probe.map(|y| y * side < 0.0).unwrap_or(false);
        Ok(if flip { PlaneIsometry::conjugation().compose(&iso) } else { iso })
    };
    Ok((place(m1, end1, true)?, place(m2, end2, false)?))
}

/// Glues two surfaces along a common end line: the first keeps `s < -clip`,
/// the second `s > clip` in the arclength of that line, each cut off towards
/// the line over a unit collar, and the gap is filled by a planar band.
pub fn glue_pair(m1: &AssembledSurface, m2: &AssembledSurface, end1: usize, end2: usize, iso1: &PlaneIsometry, iso2: &PlaneIsometry, p: &GlueParams) -> Result<AssembledSurface, GluingError> {
    let a = m1.transformed(iso1);
    let b = m2.transformed(iso2);
    let g = a.network.lines[end1];
    if !same_line(&g, &b.network.lines[end2]) {
        return Err(GluingError::EndMismatch);
    }
    let s_on_g = |m: &AssembledSurface, l: usize, s: f64| fermi_coords(&g, &fermi_point(&m.network.lines[l], s, 0.0)).0;
    let na: Vec<f64> = line_necks(&a.network, end1)?.iter().map(|&s| s_on_g(&a, end1, s)).collect();
    let nb: Vec<f64> = line_necks(&b.network, end2)?.iter().map(|&s| s_on_g(&b, end2, s)).collect();
    let sigma = if na.iter().all(|&s| s < 0.0) { 1.0 } else { -1.0 };
    if !na.iter().all(|&s| sigma * s <= -1.0 - p.clip - 2.0) || !nb.iter().all(|&s| sigma * s >= 1.0 + p.clip + 2.0) {
        return Err(GluingError::Overlap);
    }
    // overlap graph sizes over (-1, 0) and (0, 1)
    let mut worst = 0.0f64;
    for (m, end, sgn) in [(&a, end1, -1.0), (&b, end2, 1.0)] {
        for v in 0..m.mesh.len() {
            if m.sheet[v] == Some(end) {
                let (s, y) = fermi_coords(&g, &m.mesh.base[v]);
                let x = sgn * sigma * s;
                if (0.0..=1.0).contains(&x) {
                    worst = worst.max(y.abs());
                }
            }
        }
    }
    if worst > p.graph_bound {
        return Err(GluingError::GraphTooLarge { got: worst, bound: p.graph_bound });
    }
    let k1 = a.network.lines.len();
    let map2 = |l: usize| -> usize {
        if l == end2 {
            end1
        } else if l < end2 {
            k1 + l
        } else {
            k1 + l - 1
        }
    };
    let mut lines = a.network.lines.clone();
    for (l, ln) in b.network.lines.iter().enumerate() {
        if l != end2 {
            lines.push(*ln);
        }
    }
    let mut segments = a.network.segments.clone();
    segments.extend(b.network.segments.iter().map(|&(x, y)| (map2(x), map2(y))));
    let network = GeodesicNetwork { lines: lines.clone(), segments, allow_disconnected: false };
    let metrics = validate(&network)?;

    let clip = p.clip;
    let mut bld = Builder::default();
    let id = |l: usize| l;
    let rule1 = |l: usize, s: f64| -> Option<f64> {
        if l != end1 {
            return Some(1.0);
        }
        let x = sigma * fermi_coords(&g, &fermi_point(&lines[l], s, 0.0)).0;
        (x <= -clip).then(|| 1.0 - smoothstep(x + 1.0))
    };
    let f1 = bld.append(&Source { mesh: &a.mesh, sheet: &a.sheet, sheet_map: &id }, &lines, &rule1)?;
    let rule2 = |l: usize, s: f64| -> Option<f64> {
        if l != end1 {
            return Some(1.0);
        }
        let x = sigma * fermi_coords(&g, &fermi_point(&lines[l], s, 0.0)).0;
        (x >= clip).then(|| smoothstep(x))
    };
    let f2 = bld.append(&Source { mesh: &b.mesh, sheet: &b.sheet, sheet_map: &map2 }, &lines, &rule2)?;
    let ca = bld.chain(&f1, end1, &g, -sigma * clip, 0.5)?;
    let cb = bld.chain(&f2, end1, &g, sigma * clip, 0.5)?;
    let h = a.h.min(b.h);
    bld.stitch(end1, &g, &ca, &cb, h)?;
    let (mesh, sheet) = bld.finish(&lines, &metrics)?;

    let mut strips = a.strips.clone();
    for st in &b.strips {
        let mut st = st.clone();
        if st.line == end2 {
            st.center = s_on_g(&b, end2, st.center);
            st.necks = st.necks.iter().map(|&x| s_on_g(&b, end2, x)).collect();
        }
        st.line = map2(st.line);
        strips.push(st);
    }
    let by = |x: &f64, y: &f64| (sigma * x).partial_cmp(&(sigma * y)).unwrap();
    let near_a = na.iter().cloned().max_by(by).unwrap();
    let near_b = nb.iter().cloned().min_by(by).unwrap();
    strips.push(GluingStrip { line: end1, center: 0.0, half_width: 1.0, necks: vec![near_a, near_b] });
    Ok(AssembledSurface {
        mesh,
        network,
        sheet,
        strips,
        decomposition: strips_of(&metrics).ok(),
        h,
        library_sup_h: a.library_sup_h.max(b.library_sup_h),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeParams {
    pub contraction: ContractionParams,
}

#[derive(Debug, Clone)]
pub struct ModuliProbe {
    pub surface: AssembledSurface,
    /// Initial deformed surface before the fixed-point iteration.
    pub initial: SurfaceMesh,
    pub u_sup: f64,
    pub state: ContractionState,
    /// Per line: sup Fermi distance to the deformed line over the sheet
    /// vertices within 2 of the sheet's outermost radius.
    pub plane_fit: Vec<f64>,
}

/// Moves every end of `surface` to the deformed line `γ_α(ε)` outside a
/// compact set and drives the result to minimality.
pub fn moduli_probe(surface: &AssembledSurface, eps: &DeformationVector, p: &ProbeParams) -> Result<ModuliProbe, GluingError> {
    let deformed = deform(&surface.network, eps)?;
    let metrics = validate(&surface.network)?;
    let lines = &surface.network.lines;
    let m = &surface.mesh;
    let mut centre = Vec::new();
    let mut radius = Vec::new();
    let mut extent = vec![0.0f64; lines.len()];
    for lm in &metrics.lines {
        let ss: Vec<f64> = lm.necks.iter().map(|n| n.s).collect();
        let (lo, hi) = ss.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
        let c = if ss.is_empty() { 0.0 } else { 0.5 * (lo + hi) };
        centre.push(c);
        radius.push(if ss.is_empty() { 3.0 } else { 0.5 * (hi - lo) + 3.0 });
    }
    let coords: Vec<Option<(usize, f64)>> = (0..m.len())
        .into_par_iter()
        .map(|v| {
            let l = surface.sheet[v]?;
            let s = fermi_coords(&lines[l], &m.base[v]).0;
            Some((l, (s - centre[l]).hypot(m.height[v])))
        })
        .collect();
    let mut reach = vec![f64::INFINITY; lines.len()];
    for (v, c) in coords.iter().enumerate() {
        if let Some((l, rr)) = *c {
            extent[l] = extent[l].max(rr);
            if m.boundary()[v] {
                reach[l] = reach[l].min(rr);
            }
        }
    }
    for l in 0..lines.len() {
        let need = radius[l] + 2.0;
        if reach[l] < need + 1.0 {
            return Err(GluingError::ProbeDomain { need, have: reach[l] });
        }
    }
    // each move carries the neck centroid of a line to its projection on the deformed line
    let moves: Vec<PlaneIsometry> = lines
        .iter()
        .zip(&deformed.lines)
        .zip(&centre)
        .map(|((g0, g1), &c)| {
            let s1 = fermi_coords(g1, &fermi_point(g0, c, 0.0)).0;
            g1.standard_map()
                .compose(&PlaneIsometry::translation_x(s1 - c))
                .compose(&g0.standard_map().inverse())
        })
        .collect();
    let mut init = m.clone();
    let rt = m.sym.rt.clone().unwrap();
    for v in 0..m.len() {
        let r = v.min(rt[v]);
        if let Some((l, rr)) = coords[r] {
            let w = smoothstep(rr - radius[l] - 1.0);
            if w > 0.0 {
                init.base[v] = interpolate(&m.base[r], &moves[l].apply(&m.base[r]), w);
            }
        }
    }
    init.recompute_normals();
    let (u, out, state) = contraction_solve(&init, p.contraction)?;
    let u_sup = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut plane_fit = vec![0.0f64; lines.len()];
    for v in 0..out.len() {
        if let Some((l, rr)) = coords[v] {
            if rr >= extent[l] - 2.0 {
                plane_fit[l] = plane_fit[l].max(fermi_coords(&deformed.lines[l], &out.base[v]).1.abs());
            }
        }
    }
    let mut surf = surface.clone();
    surf.mesh = out;
    surf.network = deformed;
    Ok(ModuliProbe { surface: surf, initial: init, u_sup, state, plane_fit })
}

/// Point at fraction `x` along the geodesic from `a` to `b`.
fn interpolate(a: &HPoint, b: &HPoint, x: f64) -> HPoint {
    let v = a.log(b);
    a.exp([x * v[0], x * v[1]])
}

/// Symmetric Hausdorff distance between the vertex sets of two meshes,
/// nearest candidates taken in the disk-model embedding.
pub fn hausdorff(a: &SurfaceMesh, b: &SurfaceMesh) -> f64 {
    directed(a, b).max(directed(b, a))
}

fn directed(a: &SurfaceMesh, b: &SurfaceMesh) -> f64 {
    let cell = 0.02;
    let key = |p: &HPoint, t: f64| ((p.z.re / cell).floor() as i64, (p.z.im / cell).floor() as i64, (t / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for i in 0..b.len() {
        grid.entry(key(&b.base[i], b.height[i])).or_default().push(i);
    }
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = key(&a.base[i], a.height[i]);
            let mut best = f64::INFINITY;
            let mut r = 0i64;
            loop {
                for dx in -r..=r {
                    for dy in -r..=r {
                        for dz in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(js) = grid.get(&(x + dx, y + dy, z + dz)) {
                                for &j in js {
                                    best = best.min(ambient_dist(&a.base[i], a.height[i], &b.base[j], b.height[j]));
                                }
                            }
                        }
                    }
                }
                if best.is_finite() && r >= 1 || r > 200 {
                    break;
                }
                r += 1;
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::symmetric_ring;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn vertical() -> Geodesic {
        Geodesic::from_angles(-FRAC_PI_2, FRAC_PI_2).unwrap()
    }

    fn catenoid_net(eta: f64) -> GeodesicNetwork {
        let v = vertical();
        GeodesicNetwork::new(
            vec![PlaneIsometry::translation_x(-0.5 * eta).apply_geodesic(&v), PlaneIsometry::translation_x(0.5 * eta).apply_geodesic(&v)],
            vec![(0, 1)],
        )
    }

    fn ring_eta(j: usize, d: f64) -> f64 {
        2.0 * ((PI / j as f64).cos() / (0.5 * d).sinh()).asinh()
    }

    #[test]
    fn cutoff_values() {
        let c = CutoffProfile::default();
        assert_eq!(c.value(0.5), 0.0);
        assert_eq!(c.value(1.0), 0.0);
        assert_eq!(c.value(2.0), 1.0);
        assert!((c.value(1.5) - 0.5).abs() < 1e-15);
        assert!((c.derivative(1.5) - 1.875).abs() < 1e-12);
        let b = c.derivative_bound();
        assert!(b > 6.0 && b < 7.0, "{b}");
    }

    proptest! {
        #[test]
        fn cutoff_monotone_and_derivative_consistent(d in 0.9f64..2.1) {
            let c = CutoffProfile::default();
            let e = 1e-6;
            prop_assert!(c.value(d + e) >= c.value(d));
            let fd = (c.value(d + e) - c.value(d - e)) / (2.0 * e);
            prop_assert!((fd - c.derivative(d)).abs() < 1e-5);
        }

        #[test]
        fn radial_profile_is_c1(rho in 0.0f64..5.0) {
            let e = 1e-5;
            let slope = |r: f64| (radial_profile(r + e) - radial_profile(r - e)) / (2.0 * e);
            prop_assert!(slope(rho) >= -1e-9 && slope(rho) <= 1.0 + 1e-6);
            prop_assert!((slope(rho + 1e-3) - slope(rho)).abs() < 2e-3);
        }
    }

    #[test]
    fn radial_profile_values() {
        assert_eq!(radial_profile(0.3), 1.0);
        assert!((radial_profile(3.0) - 2.0).abs() < 1e-12);
        assert_eq!(radial_profile(7.0), 6.0);
    }

    #[test]
    fn decompose_ring_strips() {
        let eta = ring_eta(6, 6.0);
        let (m, d) = decompose(&symmetric_ring(6, eta).unwrap()).unwrap();
        assert!((d.d - 6.0).abs() < 1e-9);
        for (l, ls) in d.lines.iter().enumerate() {
            assert_eq!(ls.necks.len(), 2);
            assert_eq!(ls.midpoints.len(), 1);
            let q = ls.midpoints[0];
            assert!((q - ls.necks[0] - 3.0).abs() < 1e-9);
            assert_eq!(ls.strip(0), (f64::NEG_INFINITY, q));
            assert_eq!(ls.strip(1), (q, f64::INFINITY));
            assert_eq!(ls.q_strips(), vec![(q - 2.0, q + 2.0)]);
            assert_eq!(m.lines[l].necks.len(), 2);
        }
    }

    #[test]
    fn decompose_rejects_close_necks() {
        match decompose(&symmetric_ring(6, 0.8).unwrap()) {
            Err(GluingError::NecksTooClose { gap, .. }) => assert!(gap < 3.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decompose_rejects_crossing_lines() {
        let mut net = catenoid_net(0.5);
        net.lines.push(Geodesic::real_axis());
        net.allow_disconnected = true;
        assert!(matches!(decompose(&net), Err(GluingError::Crossing(..))));
    }

    #[test]
    fn orient_repairs_flipped_triangles() {
        let mut t = vec![[0, 1, 2], [1, 3, 2], [3, 4, 2]];
        t[1] = [1, 2, 3];
        orient(&mut t).unwrap();
        crate::mesh::Topology::build(5, &t).unwrap();
    }

    #[test]
    fn linear_fit_recovers_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!(linear_fit(&pts[..1]).is_none());
    }

    #[test]
    fn single_segment_is_the_library_catenoid() {
        let mut lib = CatenoidLibrary::new(0.25, 6.0);
        let s = assemble(&catenoid_net(0.5), &mut lib).unwrap();
        let e = &lib.entries()[0];
        assert_eq!(s.mesh.len(), e.mesh.len());
        assert_eq!(s.topology(), (0, 2));
        assert!(s.strips.is_empty());
        let h = mean_curvature(&s.mesh).unwrap();
        let h0 = mean_curvature(&e.mesh).unwrap();
        let diff = h.iter().zip(&h0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        assert!(s.mesh.weight.iter().all(|&w| w >= 1.0));
    }

    #[test]
    fn library_reuses_entries() {
        let mut lib = CatenoidLibrary::new(0.25, 6.0);
        lib.prefetch(&[0.5, 0.5, 0.5 * (1.0 + 1e-6)]).unwrap();
        assert_eq!(lib.entries().len(), 1);
        assert!(lib.find(0.51).is_none());
    }

    #[test]
    fn ring_assembly_topology_and_pairing() {
        let mut lib = CatenoidLibrary::new(0.25, 8.0);
        let s = assemble(&symmetric_ring(6, ring_eta(6, 6.0)).unwrap(), &mut lib).unwrap();
        assert_eq!(s.topology(), (1, 6));
        assert_eq!(s.mesh.euler_characteristic(), -6);
        s.mesh.check_pairing(0.0).unwrap();
        check_field_bound(&s);
        let r = mean_curvature_report(&s).unwrap();
        assert!(r.outside_sup < 1e-8, "{}", r.outside_sup);
        assert!(r.inside_sup > 1e-3);
    }

    fn check_field_bound(s: &AssembledSurface) {
        let der = crate::mesh::field_derivatives(&s.mesh, &s.mesh.weight);
        let sup = der.iter().zip(s.mesh.boundary()).filter(|(_, b)| !**b).map(|(d, _)| d.0 + d.1).fold(0.0, f64::max);
        assert!(sup <= 2.0 + 2.0 * s.h, "{sup}");
    }

    #[test]
    fn truncation_radius_checked() {
        let mut lib = CatenoidLibrary::new(0.25, 6.0);
        let r = assemble(&symmetric_ring(6, ring_eta(6, 12.0)).unwrap(), &mut lib);
        assert!(matches!(r, Err(GluingError::Truncation { .. })));
    }

    #[test]
    fn probe_domain_checked() {
        let mut lib = CatenoidLibrary::new(0.25, 8.0);
        let s = assemble(&symmetric_ring(6, ring_eta(6, 6.0)).unwrap(), &mut lib).unwrap();
        let p = ProbeParams { contraction: ContractionParams::for_spacing(-0.5, 0.25) };
        assert!(matches!(moduli_probe(&s, &DeformationVector::zero(6), &p), Err(GluingError::ProbeDomain { .. })));
    }

    #[test]
    fn same_line_ignores_orientation() {
        let g = vertical();
        assert!(same_line(&g, &g.reversed()));
        assert!(!same_line(&g, &Geodesic::real_axis()));
    }

    #[test]
    fn hausdorff_of_translate() {
        let m = crate::mesh::shapes::horizontal_slice(1.0, 0.25);
        let mut n = m.clone();
        n.height.iter_mut().for_each(|t| *t += 0.3);
        assert!((hausdorff(&m, &n) - 0.3).abs() < 1e-12);
        assert_eq!(hausdorff(&m, &m), 0.0);
    }
}
