//! Geodesic networks: lines of H² joined by common perpendiculars.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hyperbolic::{
    common_perpendicular, eta0, fermi_coords, fermi_point, geodesic_distance, BoundaryPoint, Geodesic, GeodesicRelation, HPoint, PlaneIsometry,
};

/// Coincidence threshold for neck points on a line.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicNetwork {
    pub lines: Vec<Geodesic>,
    pub segments: Vec<(usize, usize)>,
    #[serde(default)]
    pub allow_disconnected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    BadIndex { segment: usize },
    SelfPair { segment: usize },
    DuplicateSegment { segment: usize },
    /// Condition i): separation outside `(0, η₀)`.
    Separation { segment: usize, alpha: usize, beta: usize, eta: f64 },
    /// The two lines meet or share an ideal endpoint.
    NotUltraparallel { segment: usize, alpha: usize, beta: usize },
    CoincidentNecks { line: usize },
    Disconnected { components: usize },
    EmptyNetwork,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::BadIndex { segment } => write!(f, "segment {segment} references a missing line"),
            Violation::SelfPair { segment } => write!(f, "segment {segment} joins a line to itself"),
            Violation::DuplicateSegment { segment } => write!(f, "segment {segment} is a duplicate"),
            Violation::Separation { segment, alpha, beta, eta } => {
                write!(f, "segment {segment} ({alpha},{beta}): separation {eta:.6} is outside (0, eta0)")
            }
            Violation::NotUltraparallel { segment, alpha, beta } => {
                write!(f, "segment {segment} ({alpha},{beta}): lines are not ultraparallel (separation 0)")
            }
            Violation::CoincidentNecks { line } => write!(f, "line {line} carries two coincident neck points"),
            Violation::Disconnected { components } => write!(f, "network has {components} components"),
            Violation::EmptyNetwork => write!(f, "network has no lines"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("network rejected: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct RejectionReport {
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Rejected(#[from] RejectionReport),
    #[error("network is disconnected")]
    Disconnected,
    #[error("no ring with separation {eta} exists for j = {j}")]
    Infeasible { j: usize, eta: f64 },
    #[error("deformation has {got} entries for {want} lines")]
    DeformationShape { got: usize, want: usize },
    #[error("deformation magnitude {got} exceeds bound {bound}")]
    DeformationTooLarge { got: f64, bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub alpha: usize,
    pub beta: usize,
    pub eta: f64,
    pub foot_alpha: HPoint,
    pub foot_beta: HPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neck {
    pub segment: usize,
    /// Fermi arclength of the neck point along its line.
    pub s: f64,
    pub point: HPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMetrics {
    /// Neck points in increasing `s`.
    pub necks: Vec<Neck>,
    pub midpoints: Vec<HPoint>,
    pub gaps: Vec<f64>,
    /// Minimum gap, `+∞` for fewer than two necks.
    pub d_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub segments: Vec<SegmentMetrics>,
    pub lines: Vec<LineMetrics>,
    /// Minimal neck separation.
    pub d: f64,
    /// Maximal neck parameter.
    pub eta: f64,
}

impl GeodesicNetwork {
    pub fn new(lines: Vec<Geodesic>, segments: Vec<(usize, usize)>) -> Self {
        GeodesicNetwork { lines, segments, allow_disconnected: false }
    }

    pub fn components(&self) -> usize {
        let n = self.lines.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let nx = p[c];
                p[c] = r;
                c = nx;
            }
            r
        }
        for &(a, b) in &self.segments {
            if a < n && b < n {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Applies one isometry to every line.
    pub fn transformed(&self, iso: &PlaneIsometry) -> GeodesicNetwork {
        GeodesicNetwork { lines: self.lines.iter().map(|g| iso.apply_geodesic(g)).collect(), ..self.clone() }
    }

    /// Number of deformation parameters (two ideal endpoints per line).
    pub fn parameter_count(&self) -> usize {
        2 * self.lines.len()
    }
}

pub fn validate(net: &GeodesicNetwork) -> Result<NetworkMetrics, RejectionReport> {
    let mut violations = Vec::new();
    if net.lines.is_empty() {
        violations.push(Violation::EmptyNetwork);
    }
    let n = net.lines.len();
    let mut seen = std::collections::HashSet::new();
    let mut segs = Vec::new();
    for (k, &(a, b)) in net.segments.iter().enumerate() {
        if a >= n || b >= n {
            violations.push(Violation::BadIndex { segment: k });
            continue;
        }
        if a == b {
            violations.push(Violation::SelfPair { segment: k });
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            violations.push(Violation::DuplicateSegment { segment: k });
            continue;
        }
        let gd = geodesic_distance(&net.lines[a], &net.lines[b]);
        match (gd.relation, common_perpendicular(&net.lines[a], &net.lines[b])) {
            (GeodesicRelation::Ultraparallel { .. }, Some((foot_alpha, foot_beta))) => {
                let eta = foot_alpha.dist(&foot_beta);
                if !(eta > 0.0 && eta < eta0()) {
                    violations.push(Violation::Separation { segment: k, alpha: a, beta: b, eta });
                }
                segs.push(SegmentMetrics { alpha: a, beta: b, eta, foot_alpha, foot_beta });
            }
            _ => violations.push(Violation::NotUltraparallel { segment: k, alpha: a, beta: b }),
        }
    }
    if !net.allow_disconnected && n > 0 {
        let c = net.components();
        if c > 1 {
            violations.push(Violation::Disconnected { components: c });
        }
    }
    let mut lines = Vec::with_capacity(n);
    for (alpha, g) in net.lines.iter().enumerate() {
        let mut necks: Vec<Neck> = Vec::new();
        for (k, sm) in segs.iter().enumerate() {
            let p = if sm.alpha == alpha {
                sm.foot_alpha
            } else if sm.beta == alpha {
                sm.foot_beta
            } else {
                continue;
            };
            necks.push(Neck { segment: k, s: fermi_coords(g, &p).0, point: p });
        }
        necks.sort_by(|x, y| x.s.partial_cmp(&y.s).unwrap());
        let gaps: Vec<f64> = necks.windows(2).map(|w| w[1].s - w[0].s).collect();
        if gaps.iter().any(|&d| d <= TIE_TOL) {
            violations.push(Violation::CoincidentNecks { line: alpha });
        }
        let midpoints = necks.windows(2).map(|w| fermi_point(g, 0.5 * (w[0].s + w[1].s), 0.0)).collect();
        let d_alpha = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        lines.push(LineMetrics { necks, midpoints, gaps, d_alpha });
    }
    if !violations.is_empty() {
        return Err(RejectionReport { violations });
    }
    let d = lines.iter().map(|l| l.d_alpha).fold(f64::INFINITY, f64::min);
    let eta = segs.iter().map(|s| s.eta).fold(0.0, f64::max);
    Ok(NetworkMetrics { segments: segs, lines, d, eta })
}

/// `(genus, ends)`: first Betti number of the network graph and the number of lines.
pub fn compute_topology(net: &GeodesicNetwork) -> Result<(usize, usize), NetworkError> {
    if net.lines.is_empty() || net.components() != 1 {
        return Err(NetworkError::Disconnected);
    }
    let genus = net.segments.len() + 1 - net.lines.len();
    Ok((genus, net.lines.len()))
}

fn ring_line(j: usize, alpha: usize, phi: f64) -> Geodesic {
    let c = TAU * alpha as f64 / j as f64;
    Geodesic::from_angles(c - phi, c + phi).expect("distinct endpoints")
}

/// Separation of adjacent ring lines of half-width `phi`.
fn ring_separation(j: usize, phi: f64) -> f64 {
    geodesic_distance(&ring_line(j, 0, phi), &ring_line(j, 1, phi)).distance
}

/// `j` lines invariant under rotation by `2π/j`, consecutive lines at separation `eta`.
pub fn symmetric_ring(j: usize, eta: f64) -> Result<GeodesicNetwork, NetworkError> {
    if j < 3 || !(eta > 0.0 && eta < eta0()) {
        return Err(NetworkError::Infeasible { j, eta });
    }
    // separation decreases from +∞ (phi → 0) to 0 (phi → π/j)
    let (mut lo, mut hi) = (1e-3, PI / j as f64 * (1.0 - 1e-9));
    if ring_separation(j, lo) < eta || ring_separation(j, hi) > eta {
        return Err(NetworkError::Infeasible { j, eta });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ring_separation(j, mid) > eta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    let phi = 0.5 * (lo + hi);
    let lines = (0..j).map(|a| ring_line(j, a, phi)).collect();
    let segments = (0..j).map(|a| (a, (a + 1) % j)).collect();
    Ok(GeodesicNetwork::new(lines, segments))
}

/// Largest alternating side `η ≤ η₀` of a rotationally symmetric right-angled
/// `2k`-gon whose other sides are at least `d`.
pub fn cycle_neck_bound(k: usize, d: f64) -> Option<f64> {
    if k < 3 || !(d > 0.0) {
        return None;
    }
    // for the symmetric family sinh(η/2)·sinh(a/2) = cos(π/k); η is largest at a = d
    let v = (PI / k as f64).cos() / (0.5 * d).sinh();
    Some((2.0 * v.asinh()).min(eta0()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationVector {
    /// Per line: angular displacement of start and end points.
    pub eps: Vec<[f64; 2]>,
}

/// Default bound on the deformation magnitude.
pub const DEFORMATION_BOUND: f64 = 0.1;

impl DeformationVector {
    pub fn zero(lines: usize) -> Self {
        DeformationVector { eps: vec![[0.0; 2]; lines] }
    }

    /// Unit vector along coordinate `k` (line `k / 2`, endpoint `k % 2`) scaled by `mag`.
    pub fn coordinate(lines: usize, k: usize, mag: f64) -> Self {
        let mut d = Self::zero(lines);
        d.eps[k / 2][k % 2] = mag;
        d
    }

    pub fn magnitude(&self) -> f64 {
        self.eps.iter().flat_map(|e| e.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn deform(net: &GeodesicNetwork, eps: &DeformationVector) -> Result<GeodesicNetwork, NetworkError> {
    deform_bounded(net, eps, DEFORMATION_BOUND)
}

pub fn deform_bounded(net: &GeodesicNetwork, eps: &DeformationVector, bound: f64) -> Result<GeodesicNetwork, NetworkError> {
    if eps.eps.len() != net.lines.len() {
        return Err(NetworkError::DeformationShape { got: eps.eps.len(), want: net.lines.len() });
    }
    let mag = eps.magnitude();
    if mag > bound {
        return Err(NetworkError::DeformationTooLarge { got: mag, bound });
    }
    let mut out = net.clone();
    for (g, e) in out.lines.iter_mut().zip(&eps.eps) {
        if e[0] != 0.0 || e[1] != 0.0 {
            let start = BoundaryPoint::new(g.start.angle() + e[0]);
            let end = BoundaryPoint::new(g.end.angle() + e[1]);
            *g = Geodesic::new(start, end).map_err(|_| NetworkError::DeformationTooLarge { got: mag, bound })?;
        }
    }
    validate(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::rotation_about;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pair(eta: f64) -> GeodesicNetwork {
        let axis = PlaneIsometry::rotation(PI / 2.0).apply_geodesic(&Geodesic::real_axis());
        let a = PlaneIsometry::translation_x(-0.5 * eta).apply_geodesic(&axis);
        let b = PlaneIsometry::translation_x(0.5 * eta).apply_geodesic(&axis);
        GeodesicNetwork::new(vec![a, b], vec![(0, 1)])
    }

    #[test]
    fn single_segment_metrics() {
        let net = pair(0.8);
        let m = validate(&net).unwrap();
        assert!((m.eta - 0.8).abs() < 1e-9);
        assert!(m.d.is_infinite());
        assert_eq!(compute_topology(&net).unwrap(), (0, 2));
    }

    #[test]
    fn rejects_bad_separations() {
        let far = pair(1.9);
        let r = validate(&far).unwrap_err();
        assert!(matches!(r.violations[0], Violation::Separation { .. }));
        let cross = GeodesicNetwork::new(
            vec![Geodesic::from_angles(0.0, PI).unwrap(), Geodesic::from_angles(PI / 2.0, 1.5 * PI).unwrap()],
            vec![(0, 1)],
        );
        let r = validate(&cross).unwrap_err();
        assert!(matches!(r.violations[0], Violation::NotUltraparallel { .. }));
        let selfp = GeodesicNetwork::new(vec![Geodesic::real_axis()], vec![(0, 0)]);
        assert!(validate(&selfp).is_err());
        let disc = GeodesicNetwork::new(pair(0.8).lines, vec![]);
        assert!(matches!(validate(&disc).unwrap_err().violations[0], Violation::Disconnected { .. }));
        assert!(compute_topology(&disc).is_err());
    }

    #[test]
    fn ring_six() {
        let net = symmetric_ring(6, 0.8).unwrap();
        let m = validate(&net).unwrap();
        for s in &m.segments {
            assert!((s.eta - 0.8).abs() < 1e-9);
        }
        for l in &m.lines {
            assert_eq!(l.necks.len(), 2);
            assert!((l.d_alpha - m.d).abs() < 1e-9);
        }
        assert_eq!(compute_topology(&net).unwrap(), (1, 6));
        // rotation invariance of the line set
        let rot = PlaneIsometry::rotation(TAU / 6.0);
        for g in &net.lines {
            let r = rot.apply_geodesic(g);
            assert!(net.lines.iter().any(|h| h.start.same_as(&r.start) && h.end.same_as(&r.end)));
        }
        // gap and midpoint relations
        for l in &m.lines {
            let q = l.midpoints[0];
            assert!((l.necks[0].point.dist(&q) - 0.5 * l.gaps[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn ring_gap_grows_with_j() {
        let ds: Vec<f64> = (4..=12).map(|j| validate(&symmetric_ring(j, 0.8).unwrap()).unwrap().d).collect();
        for w in ds.windows(2) {
            assert!(w[1] > w[0]);
        }
        // the gap obeys the right-angled hexagon relation and stays bounded
        for (j, d) in (4..=12).zip(&ds) {
            let want = 2.0 * ((PI / j as f64).cos() / 0.4f64.sinh()).asinh();
            assert!((d - want).abs() < 1e-8, "{j}: {d} vs {want}");
        }
        let limit = 2.0 * (1.0 / 0.4f64.sinh()).asinh();
        assert!(ds.iter().all(|d| *d < limit));
    }

    #[test]
    fn ring_infeasible_inputs() {
        assert!(symmetric_ring(2, 0.8).is_err());
        assert!(symmetric_ring(6, 2.0).is_err());
        assert!(symmetric_ring(6, 0.0).is_err());
    }

    #[test]
    fn cycle_bound_brute_force() {
        // brute force over the symmetric hexagons realised by rings with j = 3
        let target = 2.0;
        let (mut lo, mut hi) = (1e-3, eta0() - 1e-6);
        let gap = |eta: f64| validate(&symmetric_ring(3, eta).unwrap()).unwrap().d;
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if gap(m) > target {
                lo = m
            } else {
                hi = m
            }
        }
        let b = cycle_neck_bound(3, target).unwrap();
        assert!((b - 0.5 * (lo + hi)).abs() < 1e-8);
        let grid: Vec<f64> = [2.0, 4.0, 8.0, 16.0].iter().map(|&d| cycle_neck_bound(5, d).unwrap()).collect();
        for w in grid.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(grid[3] < 1e-2);
        assert!(cycle_neck_bound(3, 0.01).unwrap() <= eta0());
    }

    #[test]
    fn deformation_basics() {
        let net = symmetric_ring(6, 0.8).unwrap();
        assert_eq!(net.parameter_count(), 12);
        let same = deform(&net, &DeformationVector::zero(6)).unwrap();
        assert_eq!(validate(&same).unwrap(), validate(&net).unwrap());
        assert!(deform(&net, &DeformationVector::zero(5)).is_err());
        assert!(deform(&net, &DeformationVector::coordinate(6, 0, 0.5)).is_err());
        let base = validate(&net).unwrap();
        let mut prev = f64::INFINITY;
        for mag in [1e-2, 1e-3, 1e-4] {
            let d = deform(&net, &DeformationVector::coordinate(6, 3, mag)).unwrap();
            let m = validate(&d).unwrap();
            let de = m.segments.iter().zip(&base.segments).map(|(a, b)| (a.eta - b.eta).abs()).fold(0.0, f64::max);
            assert!(de < prev && de > 0.0);
            prev = de;
        }
        assert_eq!(compute_topology(&deform(&net, &DeformationVector::coordinate(6, 1, 1e-3)).unwrap()).unwrap(), (1, 6));
    }

    #[test]
    fn random_trees_and_rings_topology() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let j = rng.gen_range(3..10);
            let eta = rng.gen_range(0.3..1.5);
            let net = symmetric_ring(j, eta).unwrap();
            assert_eq!(compute_topology(&net).unwrap(), (1, j));
            let mut tree = net.clone();
            tree.segments.pop();
            assert_eq!(compute_topology(&tree).unwrap(), (0, j));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn metrics_isometry_invariant(th in 0.0..TAU, r in 0.0..2.0f64, a in 0.0..TAU, j in 3usize..9, eta in 0.3..1.6f64) {
            let net = symmetric_ring(j, eta).unwrap();
            let iso = rotation_about(&HPoint::polar(r, a), th).compose(&crate::hyperbolic::translation_to(&HPoint::polar(r, th)));
            let m0 = validate(&net).unwrap();
            let m1 = validate(&net.transformed(&iso)).unwrap();
            prop_assert!((m0.d - m1.d).abs() < 1e-9);
            prop_assert!((m0.eta - m1.eta).abs() < 1e-9);
            for (x, y) in m0.segments.iter().zip(&m1.segments) {
                prop_assert!((x.eta - y.eta).abs() < 1e-9);
            }
        }

        #[test]
        fn ring_separations_agree(j in 3usize..12, eta in 0.1..1.7f64) {
            let m = validate(&symmetric_ring(j, eta).unwrap()).unwrap();
            for s in &m.segments {
                prop_assert!((s.eta - eta).abs() < 1e-9);
            }
            for l in &m.lines {
                prop_assert!((l.d_alpha - m.d).abs() < 1e-9);
            }
        }
    }
}
