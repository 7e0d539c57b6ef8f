//! The flat model operator `L_P = Δ - 1` on a vertical plane, its Green
//! kernel, and far-field fitting.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("argument {0} outside the domain r > 0")]
    Domain(f64),
    #[error("grid needs h > 0 and at least 3 nodes per direction")]
    BadGrid,
    #[error("fit underdetermined: {0}")]
    Underdetermined(String),
    #[error("ill-conditioned far-field fit: {0}")]
    IllConditioned(String),
}

/// `(K0(x), K1(x))` by the power series, for `0 < x <= 2`.
fn k01_series(x: f64) -> (f64, f64) {
    let y = 0.25 * x * x;
    let l = (0.5 * x).ln();
    // K0 = -(ln(x/2)+γ) I0 + Σ H_k y^k/(k!)²
    // K1 = 1/x + ln(x/2) I1 - (x/4) Σ (ψ(k+1)+ψ(k+2)) y^k/(k!(k+1)!)
    let mut term = 1.0;
    let mut i0 = 0.0;
    let mut s0 = 0.0;
    let mut i1 = 0.0;
    let mut s1 = 0.0;
    let mut harm = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            term *= y / (kf * kf);
            harm += 1.0 / kf;
        }
        let t1 = term / (kf + 1.0);
        i0 += term;
        s0 += harm * term;
        i1 += t1;
        let psi_sum = 2.0 * harm - 2.0 * EULER_GAMMA + 1.0 / (kf + 1.0);
        s1 += psi_sum * t1;
        if term < 1e-18 * i0 {
            break;
        }
    }
    let i1 = 0.5 * x * i1;
    let k0 = -(l + EULER_GAMMA) * i0 + s0;
    let k1 = 1.0 / x + l * i1 - 0.25 * x * s1;
    (k0, k1)
}

/// Scaled pair `(e^x K0(x), e^x K1(x))` by Steed's continued fraction, `x > 2`.
fn k01_scaled_cf(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (FRAC_PI_2 / x).sqrt() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

/// Modified Bessel function of the second kind, order 0.
pub fn bessel_k0(r: f64) -> Result<f64, ModelError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(ModelError::Domain(r));
    }
    Ok(k0(r))
}

/// Unchecked form of [`bessel_k0`] for internal loops.
pub fn k0(r: f64) -> f64 {
    if r <= 2.0 {
        k01_series(r).0
    } else {
        k01_scaled_cf(r).0 * (-r).exp()
    }
}

/// Order-1 companion, `K1 = -K0'`.
pub fn k1(r: f64) -> f64 {
    if r <= 2.0 {
        k01_series(r).1
    } else {
        k01_scaled_cf(r).1 * (-r).exp()
    }
}

/// Fundamental solution of `Δ - 1` in the plane: `(Δ - 1)G = δ`.
pub fn green_kernel(r: f64) -> f64 {
    -k0(r) / TAU
}

/// Mean of `ln|z|` over a unit square centred at the origin.
const LOG_MEAN_UNIT_SQUARE: f64 = -1.061_175_426_882_524_3;

/// Nodal values on `[-S, S] x [-T, T]` with spacing `h`, row-major in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarField {
    pub ns: usize,
    pub nt: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl PlanarField {
    /// Zero field with `ns x nt` nodes centred at the origin.
    pub fn zeros(ns: usize, nt: usize, h: f64) -> Result<Self, ModelError> {
        if ns < 3 || nt < 3 || !(h > 0.0) {
            return Err(ModelError::BadGrid);
        }
        Ok(PlanarField { ns, nt, h, values: vec![0.0; ns * nt] })
    }

    /// Square grid of half-width `half` (rounded to a multiple of `h`).
    pub fn square(half: f64, h: f64) -> Result<Self, ModelError> {
        let n = 2 * (half / h).round() as usize + 1;
        Self::zeros(n, n, h)
    }

    pub fn from_fn(ns: usize, nt: usize, h: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self, ModelError> {
        let mut g = Self::zeros(ns, nt, h)?;
        for j in 0..nt {
            for i in 0..ns {
                let (s, t) = g.coords(i, j);
                g.values[j * ns + i] = f(s, t);
            }
        }
        Ok(g)
    }

    pub fn map(&self, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = self.clone();
        for j in 0..self.nt {
            for i in 0..self.ns {
                let (s, t) = self.coords(i, j);
                out.values[j * self.ns + i] = f(s, t, self.values[j * self.ns + i]);
            }
        }
        out
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ns + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.ns + i]
    }

    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        let s0 = -0.5 * (self.ns - 1) as f64 * self.h;
        let t0 = -0.5 * (self.nt - 1) as f64 * self.h;
        (s0 + i as f64 * self.h, t0 + j as f64 * self.h)
    }

    pub fn half_widths(&self) -> (f64, f64) {
        (0.5 * (self.ns - 1) as f64 * self.h, 0.5 * (self.nt - 1) as f64 * self.h)
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.ns && j + 1 < self.nt
    }

    /// Node nearest to `(s, t)`.
    pub fn nearest(&self, s: f64, t: f64) -> (usize, usize) {
        let (hs, ht) = self.half_widths();
        let i = ((s + hs) / self.h).round().clamp(0.0, (self.ns - 1) as f64) as usize;
        let j = ((t + ht) / self.h).round().clamp(0.0, (self.nt - 1) as f64) as usize;
        (i, j)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid samples `(s, t, value)`.
    pub fn samples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..self.nt {
            for i in 0..self.ns {
                let (s, t) = self.coords(i, j);
                out.push((s, t, self.get(i, j)));
            }
        }
        out
    }
}

/// Five-point `Δ - 1`; boundary nodes are set to zero.
pub fn apply_lp(u: &PlanarField) -> PlanarField {
    let mut out = u.clone();
    let h2 = u.h * u.h;
    for j in 0..u.nt {
        for i in 0..u.ns {
            let k = u.idx(i, j);
            out.values[k] = if u.is_interior(i, j) {
                (u.get(i + 1, j) + u.get(i - 1, j) + u.get(i, j + 1) + u.get(i, j - 1) - 4.0 * u.get(i, j)) / h2
                    - u.get(i, j)
            } else {
                0.0
            };
        }
    }
    out
}

/// Cell-averaged kernel on the grid: `G(r)` off the pole, the square mean of
/// the logarithmic singularity on it.
fn cell_kernel(r: f64, h: f64) -> f64 {
    if r > 0.5 * h {
        green_kernel(r)
    } else {
        let mean_ln = h.ln() + LOG_MEAN_UNIT_SQUARE;
        -(-(mean_ln - 2f64.ln()) - EULER_GAMMA) / TAU
    }
}

/// `u = G * f`, the direct-sum convolution with the fundamental solution of
/// `Δ - 1`, so that `apply_lp(green_apply(f)) ≈ f` in the interior.
pub fn green_apply(f: &PlanarField) -> PlanarField {
    let support: Vec<(f64, f64, f64)> = f.samples().into_iter().filter(|s| s.2 != 0.0).collect();
    let h = f.h;
    let w = h * h;
    let mut out = f.clone();
    out.values.par_iter_mut().enumerate().for_each(|(k, v)| {
        let (s, t) = f.coords(k % f.ns, k / f.ns);
        let mut acc = 0.0;
        for &(s2, t2, val) in &support {
            acc += cell_kernel((s - s2).hypot(t - t2), h) * val;
        }
        *v = acc * w;
    });
    out
}

/// Angular samples of far-field coefficients, `u ~ r^{-1/2}(F⁺e^{r} + F⁻e^{-r})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarFieldProfile {
    pub theta: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
}

impl FarFieldProfile {
    /// Amplitude of the decaying part, meaningful when `F⁺` vanishes.
    pub fn amplitude(&self) -> &[f64] {
        &self.f_minus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Exponential rate of `r^{1/2}|u|`, expected `-1`.
    pub rate: f64,
    pub amplitude: FarFieldProfile,
    /// Exponent `p` in `|u/leading - 1| ~ r^p`; `-inf` when the remainder
    /// vanishes to rounding.
    pub residual_rate: f64,
    pub samples_used: usize,
}

fn sector_of(theta: f64, sectors: usize) -> usize {
    ((theta.rem_euclid(TAU) / TAU * sectors as f64) as usize).min(sectors - 1)
}

fn sector_centres(sectors: usize) -> Vec<f64> {
    (0..sectors).map(|k| (k as f64 + 0.5) * TAU / sectors as f64).collect()
}

/// Least squares via the normal equations with column scaling.
fn lstsq(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rows.first()?.len();
    let a = nalgebra::DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return None;
    }
    svd.solve(&b, 1e-14 * smax).ok().map(|x| x.iter().copied().collect())
}

/// Fit of `log|u| = log A(θ) - r·rate - ½ log r` on samples inside the
/// radial window, with `sectors` angular bins.
pub fn decay_fit_samples(
    samples: &[(f64, f64, f64)],
    window: (f64, f64),
    sectors: usize,
) -> Result<DecayFit, ModelError> {
    let pts: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter_map(|&(s, t, u)| {
            let r = s.hypot(t);
            (r >= window.0 && r <= window.1 && u != 0.0 && u.is_finite()).then(|| (r, t.atan2(s), u))
        })
        .collect();
    if window.1 - window.0 < 1.0 || pts.len() < 4 * sectors {
        return Err(ModelError::Underdetermined(format!(
            "{} samples in window [{}, {}]",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let mut counts = vec![0usize; sectors];
    for p in &pts {
        counts[sector_of(p.1, sectors)] += 1;
    }
    if counts.iter().any(|&c| c < 3) {
        return Err(ModelError::Underdetermined("empty angular sector".into()));
    }
    // common rate, one intercept per sector
    let mut rows = Vec::with_capacity(pts.len());
    let mut rhs = Vec::with_capacity(pts.len());
    for &(r, th, u) in &pts {
        let mut row = vec![0.0; sectors + 1];
        row[0] = r;
        row[1 + sector_of(th, sectors)] = 1.0;
        rows.push(row);
        rhs.push(u.abs().ln() + 0.5 * r.ln());
    }
    let x = lstsq(&rows, &rhs).ok_or_else(|| ModelError::Underdetermined("singular rate fit".into()))?;
    let rate = x[0];
    // amplitude at fixed rate -1 with a 1/r correction per sector
    let mut log_a = vec![0.0; sectors];
    let mut corr = vec![0.0; sectors];
    let mut sign = vec![1.0; sectors];
    for k in 0..sectors {
        let sel: Vec<&(f64, f64, f64)> = pts.iter().filter(|p| sector_of(p.1, sectors) == k).collect();
        let rows: Vec<Vec<f64>> = sel.iter().map(|p| vec![1.0, 1.0 / p.0]).collect();
        let rhs: Vec<f64> = sel.iter().map(|p| p.2.abs().ln() + 0.5 * p.0.ln() + p.0).collect();
        let sol = lstsq(&rows, &rhs).ok_or_else(|| ModelError::Underdetermined("singular amplitude fit".into()))?;
        log_a[k] = sol[0];
        corr[k] = sol[1];
        let pos = sel.iter().filter(|p| p.2 > 0.0).count();
        sign[k] = if 2 * pos >= sel.len() { 1.0 } else { -1.0 };
    }
    let mut lr = Vec::new();
    let mut lq = Vec::new();
    let mut max_rel = 0.0f64;
    for &(r, th, u) in &pts {
        let k = sector_of(th, sectors);
        let lead = log_a[k].exp() * r.powf(-0.5) * (-r).exp();
        let rel = (u.abs() / lead - 1.0).abs();
        max_rel = max_rel.max(rel);
        if rel > 0.0 {
            lr.push(vec![1.0, r.ln()]);
            lq.push(rel.ln());
        }
    }
    let residual_rate = if max_rel < 1e-12 || lr.len() < 3 {
        f64::NEG_INFINITY
    } else {
        lstsq(&lr, &lq).map(|x| x[1]).unwrap_or(f64::NAN)
    };
    let theta = sector_centres(sectors);
    Ok(DecayFit {
        rate,
        amplitude: FarFieldProfile {
            f_plus: vec![0.0; sectors],
            f_minus: log_a.iter().zip(&sign).map(|(l, s)| s * l.exp()).collect(),
            theta,
        },
        residual_rate,
        samples_used: pts.len(),
    })
}

/// [`decay_fit_samples`] on a planar field with 16 angular sectors.
pub fn decay_fit(u: &PlanarField, window: (f64, f64)) -> Result<DecayFit, ModelError> {
    decay_fit_samples(&u.samples(), window, 16)
}

/// Splits `u` on the annulus `window` into growing and decaying profiles by
/// per-sector least squares; sectors overlap by half a width on each side and
/// the estimates at each centre are averaged.
pub fn far_field_extract_samples(
    samples: &[(f64, f64, f64)],
    window: (f64, f64),
    sectors: usize,
) -> Result<FarFieldProfile, ModelError> {
    let centres = sector_centres(sectors);
    let width = TAU / sectors as f64;
    let mut f_plus = vec![0.0; sectors];
    let mut f_minus = vec![0.0; sectors];
    let mid = 0.5 * (window.0 + window.1);
    for (k, &c) in centres.iter().enumerate() {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for &(s, t, u) in samples {
            let r = s.hypot(t);
            if r < window.0 || r > window.1 {
                continue;
            }
            let d = (t.atan2(s) - c + PI).rem_euclid(TAU) - PI;
            if d.abs() > width {
                continue;
            }
            // basis scaled to unit size at the annulus midpoint
            let g = (r / mid).powf(-0.5) * (r - mid).exp();
            let dcy = (r / mid).powf(-0.5) * (mid - r).exp();
            rows.push(vec![g, dcy]);
            rhs.push(u);
        }
        if rows.len() < 6 {
            return Err(ModelError::IllConditioned(format!("sector {k} has {} samples", rows.len())));
        }
        let x = lstsq(&rows, &rhs).ok_or_else(|| ModelError::IllConditioned(format!("sector {k}")))?;
        let norm = mid.powf(0.5);
        f_plus[k] = x[0] * norm * (-mid).exp();
        f_minus[k] = x[1] * norm * mid.exp();
    }
    Ok(FarFieldProfile { theta: centres, f_plus, f_minus })
}

pub fn far_field_extract(u: &PlanarField) -> Result<FarFieldProfile, ModelError> {
    let (hs, ht) = u.half_widths();
    let outer = hs.min(ht);
    far_field_extract_samples(&u.samples(), (0.5 * outer, outer), 16)
}
