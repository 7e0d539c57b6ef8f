//! Hyperbolic plane primitives in the Poincaré disk.
//!
//! Points carry their conformal factor `λ = 1 - |z|²` alongside the disk
//! coordinate. Every formula below is arranged so that `λ` is propagated
//! multiplicatively, which keeps relative accuracy for nearby points even
//! when they sit far out towards the ideal boundary.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point ({0}, {1}) is not inside the open unit disk")]
    OutsideDisk(f64, f64),
    #[error("geodesic endpoints coincide")]
    DegenerateGeodesic,
    #[error("non-finite input")]
    NonFinite,
}

/// Vectors of the Minkowski space R^{2,1}.
pub type Vec3 = [f64; 3];

/// Minkowski product with signature (-, +, +).
#[inline]
pub fn mdot(a: &Vec3, b: &Vec3) -> f64 {
    -a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Lorentz cross product; orthogonal to both factors under [`mdot`].
#[inline]
pub fn lcross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        -(a[1] * b[2] - a[2] * b[1]),
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// A point of H², stored as a disk coordinate plus `λ = 1 - |z|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub z: Complex64,
    pub lam: f64,
}

impl HPoint {
    pub const ORIGIN: HPoint = HPoint { z: Complex64::new(0.0, 0.0), lam: 1.0 };

    pub fn from_disk(p: DiskPoint) -> Self {
        let r = (p.x * p.x + p.y * p.y).sqrt();
        HPoint { z: Complex64::new(p.x, p.y), lam: (1.0 - r) * (1.0 + r) }
    }

    pub fn disk(&self) -> DiskPoint {
        DiskPoint { x: self.z.re, y: self.z.im }
    }

    /// From hyperboloid coordinates `(x0, x1, x2)`.
    pub fn from_hyperboloid(x: &Vec3) -> Self {
        let k = 1.0 + x[0];
        HPoint { z: Complex64::new(x[1] / k, x[2] / k), lam: 2.0 / k }
    }

    pub fn hyperboloid(&self) -> Vec3 {
        let k = 1.0 / self.lam;
        [(2.0 - self.lam) * k, 2.0 * self.z.re * k, 2.0 * self.z.im * k]
    }

    /// Point at distance `r` from the origin in direction `theta`.
    pub fn polar(r: f64, theta: f64) -> Self {
        let th = (0.5 * r).tanh();
        let c = (0.5 * r).cosh();
        HPoint { z: Complex64::from_polar(th, theta), lam: 1.0 / (c * c) }
    }

    pub fn dist(&self, other: &HPoint) -> f64 {
        let s = (self.z - other.z).norm() / (self.lam * other.lam).sqrt();
        2.0 * s.asinh()
    }

    /// Logarithm in the orthonormal frame `(λ/2)∂x, (λ/2)∂y` at `self`.
    pub fn log(&self, other: &HPoint) -> [f64; 2] {
        let dz = other.z - self.z;
        let n = dz.norm();
        if n == 0.0 {
            return [0.0, 0.0];
        }
        let d = 2.0 * (n / (self.lam * other.lam).sqrt()).asinh();
        // direction of (q - p)/(1 - conj(p) q), with 1 - conj(p) q = λ_p - conj(p)(q - p)
        let w = dz / (self.lam - self.z.conj() * dz);
        let wn = w.norm();
        [d * w.re / wn, d * w.im / wn]
    }

    /// Exponential of a tangent vector given in the frame at `self`.
    pub fn exp(&self, v: [f64; 2]) -> HPoint {
        let n = v[0].hypot(v[1]);
        if n == 0.0 {
            return *self;
        }
        let th = (0.5 * n).tanh() / n;
        let c = (0.5 * n).cosh();
        let w = Complex64::new(v[0] * th, v[1] * th);
        let den = 1.0 + self.z.conj() * w;
        HPoint { z: (w + self.z) / den, lam: self.lam / (c * c * den.norm_sqr()) }
    }

    /// Velocity at arclength `n` of the geodesic `u ↦ exp(u·v/|v|)`, in the
    /// frame at the end point. `v` must be nonzero.
    pub fn exp_velocity(&self, v: [f64; 2]) -> [f64; 2] {
        let n = v[0].hypot(v[1]);
        let w = Complex64::new(v[0] / n, v[1] / n);
        let t = Complex64::new((0.5 * n).tanh(), 0.0) * w;
        let den = 1.0 + self.z.conj() * t;
        // the transvection's derivative is 1/den² up to a positive factor
        let rot = (den * den).conj();
        let u = w * rot / rot.norm();
        [u.re, u.im]
    }
}

/// A point of the open Poincaré disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub x: f64,
    pub y: f64,
}

impl DiskPoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if x * x + y * y >= 1.0 {
            return Err(GeometryError::OutsideDisk(x, y));
        }
        Ok(DiskPoint { x, y })
    }

    pub fn origin() -> Self {
        DiskPoint { x: 0.0, y: 0.0 }
    }
}

/// A point of the ideal boundary, stored as an angle in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    angle: f64,
}

impl BoundaryPoint {
    pub fn new(angle: f64) -> Self {
        let a = angle.rem_euclid(TAU);
        BoundaryPoint { angle: if a >= TAU { 0.0 } else { a } }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn unit(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.angle)
    }

    /// Future null vector representing the point.
    pub fn null_vector(&self) -> Vec3 {
        [1.0, self.angle.cos(), self.angle.sin()]
    }

    pub fn same_as(&self, other: &BoundaryPoint) -> bool {
        let d = (self.angle - other.angle).rem_euclid(TAU);
        d < 1e-12 || TAU - d < 1e-12
    }
}

/// An oriented complete geodesic, running from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodesic {
    pub start: BoundaryPoint,
    pub end: BoundaryPoint,
}

impl Geodesic {
    pub fn new(start: BoundaryPoint, end: BoundaryPoint) -> Result<Self, GeometryError> {
        if start.same_as(&end) {
            return Err(GeometryError::DegenerateGeodesic);
        }
        Ok(Geodesic { start, end })
    }

    pub fn from_angles(a: f64, b: f64) -> Result<Self, GeometryError> {
        Geodesic::new(BoundaryPoint::new(a), BoundaryPoint::new(b))
    }

    /// The real diameter, oriented from -1 to 1.
    pub fn real_axis() -> Self {
        Geodesic { start: BoundaryPoint::new(PI), end: BoundaryPoint::new(0.0) }
    }

    pub fn reversed(&self) -> Geodesic {
        Geodesic { start: self.end, end: self.start }
    }

    /// Unit spacelike normal in R^{2,1}; positive side is to the left.
    pub fn normal(&self) -> Vec3 {
        let n = lcross(&self.start.null_vector(), &self.end.null_vector());
        scale3(&n, 1.0 / mdot(&n, &n).sqrt())
    }

    /// Orientation preserving isometry taking the real axis to `self`, with
    /// `-1 ↦ start`, `1 ↦ end` and `0 ↦` the point of `self` nearest the origin.
    pub fn standard_map(&self) -> PlaneIsometry {
        let a = self.start.angle;
        let b = self.end.angle;
        let ccw = (b - a).rem_euclid(TAU);
        // half-width and midpoint of the minor arc
        let (half, mid, swapped) = if ccw <= PI {
            (0.5 * ccw, a + 0.5 * ccw, false)
        } else {
            (0.5 * (TAU - ccw), b + 0.5 * (TAU - ccw), true)
        };
        let r_foot = (1.0 - half.sin()) / half.cos();
        let delta = 2.0 * r_foot.atanh();
        let base = PlaneIsometry::rotation(mid)
            .compose(&PlaneIsometry::translation_x(delta))
            .compose(&PlaneIsometry::rotation(PI / 2.0));
        if swapped {
            base.compose(&PlaneIsometry::rotation(PI))
        } else {
            base
        }
    }

    /// Arc-length parametrisation from the foot.
    pub fn point_at(&self, s: f64) -> HPoint {
        fermi_point(self, s, 0.0)
    }

    pub fn foot(&self) -> HPoint {
        self.point_at(0.0)
    }

    /// Signed distance from `p` (positive on the left).
    pub fn signed_distance(&self, p: &HPoint) -> f64 {
        fermi_coords(self, p).1
    }
}

/// How two geodesics sit relative to each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeodesicRelation {
    /// Disjoint closures; carries the feet of the common perpendicular.
    Ultraparallel { foot_a: DiskPoint, foot_b: DiskPoint },
    Intersecting { point: DiskPoint, angle: f64 },
    Asymptotic,
    Coincident,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicDistance {
    pub distance: f64,
    pub relation: GeodesicRelation,
}

/// Hyperbolic distance between two points of the disk.
pub fn dist(p: DiskPoint, q: DiskPoint) -> f64 {
    HPoint::from_disk(p).dist(&HPoint::from_disk(q))
}

fn interleaved(a: &Geodesic, b: &Geodesic) -> bool {
    let lo = a.start.angle.min(a.end.angle);
    let hi = a.start.angle.max(a.end.angle);
    let inside = |t: f64| t > lo && t < hi;
    inside(b.start.angle) != inside(b.end.angle)
}

/// Distance between geodesics together with the common perpendicular.
pub fn geodesic_distance(a: &Geodesic, b: &Geodesic) -> GeodesicDistance {
    let shared = [(a.start, b.start), (a.start, b.end), (a.end, b.start), (a.end, b.end)]
        .iter()
        .filter(|(x, y)| x.same_as(y))
        .count();
    if shared >= 2 {
        return GeodesicDistance { distance: 0.0, relation: GeodesicRelation::Coincident };
    }
    if shared == 1 {
        return GeodesicDistance { distance: 0.0, relation: GeodesicRelation::Asymptotic };
    }
    let na = a.normal();
    let nb = b.normal();
    let w = lcross(&na, &nb);
    if interleaved(a, b) {
        let p = if w[0] < 0.0 { scale3(&w, -1.0) } else { w };
        let p = scale3(&p, 1.0 / (-mdot(&p, &p)).sqrt());
        let angle = mdot(&na, &nb).clamp(-1.0, 1.0).acos();
        return GeodesicDistance {
            distance: 0.0,
            relation: GeodesicRelation::Intersecting { point: HPoint::from_hyperboloid(&p).disk(), angle },
        };
    }
    let (fa, fb) = match common_perpendicular(a, b) {
        Some(f) => f,
        None => return GeodesicDistance { distance: 0.0, relation: GeodesicRelation::Asymptotic },
    };
    GeodesicDistance {
        distance: fa.dist(&fb),
        relation: GeodesicRelation::Ultraparallel { foot_a: fa.disk(), foot_b: fb.disk() },
    }
}

/// Arc length along `a` of the foot of the common perpendicular to `b`.
/// Computed in the half-plane picture where `a` is the imaginary axis, which
/// stays accurate when both lines lie far from the origin.
pub fn perpendicular_foot_s(a: &Geodesic, b: &Geodesic) -> Option<f64> {
    let bb = a.standard_map().inverse().apply_geodesic(b);
    let x = |q: &BoundaryPoint| {
        let h = 0.5 * q.angle;
        -h.cos() / h.sin()
    };
    let p = x(&bb.start) * x(&bb.end);
    (p > 0.0 && p.is_finite()).then(|| 0.5 * p.ln())
}

/// Feet of the common perpendicular of two ultraparallel geodesics.
pub fn common_perpendicular(a: &Geodesic, b: &Geodesic) -> Option<(HPoint, HPoint)> {
    let sa = perpendicular_foot_s(a, b)?;
    let sb = perpendicular_foot_s(b, a)?;
    Some((fermi_point(a, sa, 0.0), fermi_point(b, sb, 0.0)))
}

/// Fermi coordinates `(s, σ)` of `p` about `g`: `s` is arc length along `g`
/// from its foot towards `end`, `σ` the signed distance (left positive).
pub fn fermi_chart(g: &Geodesic, p: DiskPoint) -> (f64, f64) {
    fermi_coords(g, &HPoint::from_disk(p))
}

pub fn fermi_coords(g: &Geodesic, p: &HPoint) -> (f64, f64) {
    let q = g.standard_map().inverse().apply(p);
    let x = q.hyperboloid();
    let sigma = x[2].asinh();
    let s = (x[1] / (1.0 + x[2] * x[2]).sqrt()).asinh();
    (s, sigma)
}

/// Inverse of [`fermi_coords`].
pub fn fermi_point(g: &Geodesic, s: f64, sigma: f64) -> HPoint {
    g.standard_map().apply(&real_axis_fermi(s, sigma))
}

/// The point with Fermi coordinates `(s, σ)` about the real axis.
pub fn real_axis_fermi(s: f64, sigma: f64) -> HPoint {
    let c = sigma.cosh();
    HPoint::from_hyperboloid(&[c * s.cosh(), c * s.sinh(), sigma.sinh()])
}

/// The maximal separation `2 ln(1 + √2)` of the planes bounding a catenoid.
pub fn eta0() -> f64 {
    2.0 * 1.0f64.asinh()
}

/// Isometry of H²×ℝ. The base acts by `z ↦ (a w + b)/(conj(b) w + conj(a))`
/// where `w = conj(z)` if `reflect` is set and `w = z` otherwise, normalised
/// so that `|a|² - |b|² = 1`. Heights map by `t ↦ t_sign·t + t_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneIsometry {
    pub a: Complex64,
    pub b: Complex64,
    pub reflect: bool,
    pub t_sign: f64,
    pub t_shift: f64,
}

impl PlaneIsometry {
    pub fn identity() -> Self {
        PlaneIsometry {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 0.0),
            reflect: false,
            t_sign: 1.0,
            t_shift: 0.0,
        }
    }

    pub fn rotation(theta: f64) -> Self {
        PlaneIsometry { a: Complex64::from_polar(1.0, 0.5 * theta), ..Self::identity() }
    }

    /// Translation by `d` along the real axis towards `+1`.
    pub fn translation_x(d: f64) -> Self {
        PlaneIsometry {
            a: Complex64::new((0.5 * d).cosh(), 0.0),
            b: Complex64::new((0.5 * d).sinh(), 0.0),
            ..Self::identity()
        }
    }

    /// Complex conjugation of the disk.
    pub fn conjugation() -> Self {
        PlaneIsometry { reflect: true, ..Self::identity() }
    }

    pub fn vertical(t_sign: f64, t_shift: f64) -> Self {
        PlaneIsometry { t_sign, t_shift, ..Self::identity() }
    }

    pub fn with_vertical(mut self, t_sign: f64, t_shift: f64) -> Self {
        self.t_sign = t_sign;
        self.t_shift = t_shift;
        self
    }

    #[inline]
    fn den(&self, w: Complex64) -> Complex64 {
        self.b.conj() * w + self.a.conj()
    }

    pub fn apply(&self, p: &HPoint) -> HPoint {
        let w = if self.reflect { p.z.conj() } else { p.z };
        let den = self.den(w);
        HPoint { z: (self.a * w + self.b) / den, lam: p.lam / den.norm_sqr() }
    }

    pub fn apply_disk(&self, p: DiskPoint) -> DiskPoint {
        self.apply(&HPoint::from_disk(p)).disk()
    }

    pub fn apply_t(&self, t: f64) -> f64 {
        self.t_sign * t + self.t_shift
    }

    pub fn apply_boundary(&self, q: &BoundaryPoint) -> BoundaryPoint {
        let w = if self.reflect { q.unit().conj() } else { q.unit() };
        let z = (self.a * w + self.b) / self.den(w);
        BoundaryPoint::new(z.im.atan2(z.re))
    }

    pub fn apply_geodesic(&self, g: &Geodesic) -> Geodesic {
        Geodesic { start: self.apply_boundary(&g.start), end: self.apply_boundary(&g.end) }
    }

    /// Pushes a horizontal tangent vector at `p` (frame coordinates) forward.
    pub fn push_tangent(&self, p: &HPoint, v: [f64; 2]) -> [f64; 2] {
        let (w, v) = if self.reflect { (p.z.conj(), [v[0], -v[1]]) } else { (p.z, v) };
        let den = self.den(w);
        let rot = (den * den).conj();
        let rot = rot / rot.norm();
        let u = Complex64::new(v[0], v[1]) * rot;
        [u.re, u.im]
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &PlaneIsometry) -> PlaneIsometry {
        let (oa, ob) = if self.reflect { (other.a.conj(), other.b.conj()) } else { (other.a, other.b) };
        let a = self.a * oa + self.b * ob.conj();
        let b = self.a * ob + self.b * oa.conj();
        // renormalise against drift in long compositions
        let det = (a.norm_sqr() - b.norm_sqr()).sqrt();
        PlaneIsometry {
            a: a / det,
            b: b / det,
            reflect: self.reflect != other.reflect,
            t_sign: self.t_sign * other.t_sign,
            t_shift: self.t_sign * other.t_shift + self.t_shift,
        }
    }

    pub fn inverse(&self) -> PlaneIsometry {
        // (A c)^{-1} = c A^{-1} = conj(A^{-1}) c
        let (a, b) = (self.a.conj(), -self.b);
        let (a, b) = if self.reflect { (a.conj(), b.conj()) } else { (a, b) };
        PlaneIsometry {
            a,
            b,
            reflect: self.reflect,
            t_sign: self.t_sign,
            t_shift: -self.t_sign * self.t_shift,
        }
    }

    pub fn preserves_orientation(&self) -> bool {
        !self.reflect
    }
}

/// Translation by `sigma` along `g`, towards its end point.
pub fn dilation_along(g: &Geodesic, sigma: f64) -> PlaneIsometry {
    let t = g.standard_map();
    t.compose(&PlaneIsometry::translation_x(sigma)).compose(&t.inverse())
}

/// Reflection of the base across `g`.
pub fn reflection_across(g: &Geodesic) -> PlaneIsometry {
    let t = g.standard_map();
    t.compose(&PlaneIsometry::conjugation()).compose(&t.inverse())
}

/// Rotation by `theta` about `c`.
pub fn rotation_about(c: &HPoint, theta: f64) -> PlaneIsometry {
    let to = translation_to(c);
    to.compose(&PlaneIsometry::rotation(theta)).compose(&to.inverse())
}

/// The transvection sending the origin to `c`.
pub fn translation_to(c: &HPoint) -> PlaneIsometry {
    let r = c.z.norm();
    if r == 0.0 {
        return PlaneIsometry::identity();
    }
    let phi = c.z.im.atan2(c.z.re);
    let d = HPoint::ORIGIN.dist(c);
    PlaneIsometry::rotation(phi)
        .compose(&PlaneIsometry::translation_x(d))
        .compose(&PlaneIsometry::rotation(-phi))
}
