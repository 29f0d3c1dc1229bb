//! Rectangular free convolution of an empirical spectrum with the
//! Marchenko–Pastur law at time `t`.
//!
//! For `V = WWᵀ` with eigenvalues `d_i`, the Stieltjes transform of the
//! limiting spectrum of `(W + √t X)(W + √t X)ᵀ` is `m = (b − 1)/(c t)`
//! where `b` solves
//!
//! ```text
//! b = 1 + (c t / p) Σ_i 1 / (d_i / b − b z + t (1 − c)).
//! ```
//!
//! The right edge is `λ₊ = Φ(ζ₊)` where `ζ₊ > d₁` is the critical point of
//! `Φ(ζ) = g(ζ)² ζ + (1 − c) t g(ζ)`, `g = 1 − c t m₀(ζ)` and `m₀` is the
//! Stieltjes transform of the `d_i`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyson::{fit_sqrt_edge, DensityCurve};
use crate::error::{invalid_param, Error, Result};

/// Spectrum of `WWᵀ`, aspect ratio and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfcQuery {
    d: Vec<f64>,
    c: f64,
    t: f64,
}

impl RfcQuery {
    /// `d` is sorted descending internally.
    pub fn new(mut d: Vec<f64>, c: f64, t: f64) -> Result<Self> {
        if d.is_empty() {
            return Err(invalid_param("empty spectrum"));
        }
        if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid_param(
                "spectrum entries must be finite and nonnegative",
            ));
        }
        if !(c > 0.0 && c <= 1.0) {
            return Err(invalid_param(format!("aspect ratio {c} outside (0, 1]")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid_param(format!("time {t} must be positive")));
        }
        d.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { d, c, t })
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn p(&self) -> usize {
        self.d.len()
    }

    /// Same spectrum at another time.
    pub fn at_time(&self, t: f64) -> Result<Self> {
        Self::new(self.d.clone(), self.c, t)
    }

    fn ct(&self) -> f64 {
        self.c * self.t
    }

    fn drift(&self) -> f64 {
        (1.0 - self.c) * self.t
    }
}

/// Solution at one spectral parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfcPoint {
    pub z: Complex64,
    pub m: Complex64,
    /// `1 + c t m`.
    pub b: Complex64,
    /// Subordination `ζ = b² z − (1 − c) t b`.
    pub zeta: Complex64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfcSolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RfcSolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200,
        }
    }
}

/// `G(b) = b − 1 − (ct/p) Σ 1/den_i` and `G'(b)`.
fn b_equation(q: &RfcQuery, z: Complex64, b: Complex64) -> (Complex64, Complex64) {
    let drift = q.drift();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut dsum = Complex64::new(0.0, 0.0);
    let b2 = b * b;
    for &d in &q.d {
        let den = d / b - b * z + drift;
        let inv = den.inv();
        sum += inv;
        dsum += (d / b2 + z) * inv * inv;
    }
    let scale = q.ct() / q.p() as f64;
    (
        b - 1.0 - sum * scale,
        Complex64::new(1.0, 0.0) - dsum * scale,
    )
}

fn residual_of(q: &RfcQuery, z: Complex64, b: Complex64) -> f64 {
    b_equation(q, z, b).0.norm()
}

/// The four properties every accepted solution must have.
fn admissible(q: &RfcQuery, z: Complex64, b: Complex64) -> bool {
    let m = (b - 1.0) / q.ct();
    let slack = 1e-12 * m.norm().max(1e-300);
    m.im >= -slack
        && (z * m).im >= -slack * z.norm()
        && b.re > 0.0
        && m.norm() <= (q.ct() * z.norm()).powf(-0.5) * (1.0 + 1e-9)
}

fn iterate(
    q: &RfcQuery,
    z: Complex64,
    mut b: Complex64,
    cfg: &RfcSolverConfig,
) -> Result<(Complex64, f64)> {
    let mut res = residual_of(q, z, b);
    let mut iters = 0;
    // a few damped fixed-point sweeps bring b into the Newton basin
    let mut theta = 0.5;
    while iters < 20 && res > 1e-3 {
        let (g, _) = b_equation(q, z, b);
        let trial = b - g * theta;
        let trial_res = residual_of(q, z, trial);
        iters += 1;
        if trial_res < res && trial.re > 0.0 {
            b = trial;
            res = trial_res;
        } else {
            theta *= 0.5;
        }
    }
    while res > cfg.tol && iters < cfg.max_iter {
        iters += 1;
        let (g, dg) = b_equation(q, z, b);
        if dg.norm() == 0.0 {
            break;
        }
        let step = g / dg;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = b - step * t;
            if trial.re > 0.0 && (trial - 1.0).im * z.im.signum() >= -1e-300 {
                let trial_res = residual_of(q, z, trial);
                if trial_res < res {
                    b = trial;
                    res = trial_res;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res > cfg.tol {
        return Err(Error::Convergence {
            iterations: iters,
            residual: res,
        });
    }
    if !admissible(q, z, b) {
        return Err(Error::Branch(format!(
            "b = {b} violates the Stieltjes invariants at z = {z}"
        )));
    }
    Ok((b, res))
}

fn point(q: &RfcQuery, z: Complex64, b: Complex64, residual: f64) -> RfcPoint {
    RfcPoint {
        z,
        m: (b - 1.0) / q.ct(),
        b,
        zeta: b * b * z - b * q.drift(),
        residual,
    }
}

/// Solves at `z` (`Im z > 0`), optionally warm-started from `warm_b`.
pub fn solve_rfc_from(
    q: &RfcQuery,
    z: Complex64,
    warm_b: Option<Complex64>,
    cfg: &RfcSolverConfig,
) -> Result<RfcPoint> {
    if !(z.im > 0.0) || !z.re.is_finite() {
        return Err(invalid_param(format!(
            "spectral parameter {z} must have positive imaginary part"
        )));
    }
    if let Some(b) = warm_b {
        if let Ok((b, res)) = iterate(q, z, b, cfg) {
            return Ok(point(q, z, b, res));
        }
    }
    // continuation from far above the real axis, where b ≈ 1 − ct/z
    let top = (2.0 * (q.d[0] + q.t * (1.0 + q.c.sqrt()).powi(2))).max(1.0);
    let mut eta = top.max(z.im);
    let start = Complex64::new(z.re, eta);
    let mut b = Complex64::new(1.0, 0.0) - q.ct() / start;
    loop {
        let zz = Complex64::new(z.re, eta);
        let (next, res) = iterate(q, zz, b, cfg)?;
        b = next;
        if eta <= z.im {
            return Ok(point(q, z, b, res));
        }
        eta = (eta * 0.25).max(z.im);
    }
}

pub fn solve_rfc(q: &RfcQuery, z: Complex64, tol: f64, max_iter: usize) -> Result<RfcPoint> {
    solve_rfc_from(q, z, None, &RfcSolverConfig { tol, max_iter })
}

/// `Φ(ζ)` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiValue {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// `m₀(ζ)`, `m₀'(ζ)`, `m₀''(ζ)` for real `ζ` off the spectrum.
fn m0_derivs(q: &RfcQuery, zeta: f64) -> Result<(f64, f64, f64)> {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &d in &q.d {
        let gap = d - zeta;
        if gap.abs() < 1e-12 {
            return Err(Error::Pole(zeta));
        }
        let inv = 1.0 / gap;
        s0 += inv;
        s1 += inv * inv;
        s2 += inv * inv * inv;
    }
    let p = q.p() as f64;
    Ok((s0 / p, s1 / p, 2.0 * s2 / p))
}

pub fn phi(q: &RfcQuery, zeta: f64) -> Result<PhiValue> {
    let (m0, m1, m2) = m0_derivs(q, zeta)?;
    let ct = q.ct();
    let drift = q.drift();
    let g = 1.0 - ct * m0;
    let g1 = -ct * m1;
    let g2 = -ct * m2;
    Ok(PhiValue {
        value: g * g * zeta + drift * g,
        first: 2.0 * g * g1 * zeta + g * g + drift * g1,
        second: 2.0 * g1 * g1 * zeta + 2.0 * g * g2 * zeta + 4.0 * g * g1 + drift * g2,
    })
}

/// `F(z, ζ) = 1 + (t(1−c) − √(t²(1−c)² + 4ζz)) / (2ζ) − c t m₀(ζ)` and its
/// `ζ`-derivative; both vanish at the edge.
pub fn edge_system(q: &RfcQuery, z: f64, zeta: f64) -> Result<(f64, f64)> {
    let (m0, m1, _) = m0_derivs(q, zeta)?;
    let drift = q.drift();
    let root = (drift * drift + 4.0 * zeta * z).sqrt();
    let f = 1.0 + (drift - root) / (2.0 * zeta) - q.ct() * m0;
    let df = -z / (root * zeta) - (drift - root) / (2.0 * zeta * zeta) - q.ct() * m1;
    Ok((f, df))
}

/// Right edge of the free convolution and its Tracy–Widom scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfcEdge {
    pub lambda_plus_t: f64,
    pub zeta_plus_t: f64,
    pub gamma_n: f64,
    pub phi_second: f64,
    pub edge_velocity: f64,
    /// `|F(λ₊, ζ₊)|`.
    pub f_residual: f64,
    /// `|∂F/∂ζ (λ₊, ζ₊)|`.
    pub f_zeta_residual: f64,
    /// `lim_{η↓0} ζ(λ₊ + iη)`, Richardson-extrapolated in `√η` from
    /// `η = 1e-6, 1e-7` (a cross-check of `zeta_plus_t`).
    pub zeta_limit: Option<f64>,
    /// Set when `t` lies outside `[n^{-1/3}, 1]`.
    pub outside_regime: bool,
}

fn find_critical_point(q: &RfcQuery) -> Result<f64> {
    let d1 = q.d[0];
    let mut delta = (10.0 * q.t * q.t * (1.0 + d1)).max(1.0);
    let mut hi = d1 + delta;
    let mut grow = 0;
    while phi(q, hi)?.first <= 0.0 {
        grow += 1;
        if grow > 60 {
            return Err(Error::EdgeNotFound(
                "Φ' stays negative to the right of d₁".into(),
            ));
        }
        delta *= 2.0;
        hi = d1 + delta;
    }
    let mut lo = None;
    let mut eps = delta;
    for _ in 0..200 {
        eps *= 0.5;
        let x = d1 + eps;
        if x <= d1 {
            break;
        }
        match phi(q, x) {
            Ok(v) if v.first < 0.0 => {
                lo = Some(x);
                break;
            }
            Ok(_) => {}
            Err(Error::Pole(_)) => break,
            Err(e) => return Err(e),
        }
    }
    let mut lo =
        lo.ok_or_else(|| Error::EdgeNotFound("no sign change of Φ' right of d₁".into()))?;
    // shrink the bracket towards the rightmost sign change
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(q, mid)?.first < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut zeta = 0.5 * (lo + hi);
    for _ in 0..4 {
        let v = phi(q, zeta)?;
        if v.second <= 0.0 {
            break;
        }
        let next = zeta - v.first / v.second;
        if next > d1 && (next - zeta).abs() < (hi - lo).max(1e-15 * zeta.abs()) * 4.0 {
            zeta = next;
        }
    }
    Ok(zeta)
}

/// `dλ₊/dt` from the closed form at the edge.
fn velocity(q: &RfcQuery, lambda: f64, zeta: f64) -> Result<f64> {
    let (m0, _, _) = m0_derivs(q, zeta)?;
    let one_c = 1.0 - q.c;
    let root = (q.t * q.t * one_c * one_c + 4.0 * zeta * lambda).sqrt();
    Ok((one_c / (2.0 * zeta) - q.c * m0) * root - one_c * one_c * q.t / (2.0 * zeta))
}

fn zeta_limit(q: &RfcQuery, lambda: f64) -> Option<f64> {
    let cfg = RfcSolverConfig::default();
    let (e1, e2) = (1e-6, 1e-7);
    let z1 = solve_rfc_from(q, Complex64::new(lambda, e1), None, &cfg)
        .ok()?
        .zeta;
    let z2 = solve_rfc_from(q, Complex64::new(lambda, e2), None, &cfg)
        .ok()?
        .zeta;
    let (s1, s2) = (e1.sqrt(), e2.sqrt());
    Some(((z2 * s1 - z1 * s2) / (s1 - s2)).re)
}

pub fn find_rfc_edge(q: &RfcQuery) -> Result<RfcEdge> {
    let zeta = find_critical_point(q)?;
    let v = phi(q, zeta)?;
    let lambda = v.value;
    if !(v.second > 0.0) {
        return Err(Error::DegenerateEdge(format!(
            "Φ''(ζ₊) = {} is not positive",
            v.second
        )));
    }
    let (c, t) = (q.c, q.t);
    let k = (4.0 * lambda * zeta + (1.0 - c).powi(2) * t * t) * c * c * t * t * v.second;
    let gamma_n = (0.5 * k).powf(-1.0 / 3.0);
    let (f, df) = edge_system(q, lambda, zeta)?;
    let n = q.p() as f64 / c;
    let outside_regime = t < n.powf(-1.0 / 3.0) || t > 1.0;
    if outside_regime {
        log::warn!("t = {t} lies outside [n^(-1/3), 1] for n = {n}");
    }
    Ok(RfcEdge {
        lambda_plus_t: lambda,
        zeta_plus_t: zeta,
        gamma_n,
        phi_second: v.second,
        edge_velocity: velocity(q, lambda, zeta)?,
        f_residual: f.abs(),
        f_zeta_residual: df.abs(),
        zeta_limit: zeta_limit(q, lambda),
        outside_regime,
    })
}

/// `ρ(E) = Im m(E + iη₀) / π` along an ascending grid, warm-started.
pub fn rfc_density(q: &RfcQuery, grid: &[f64], eta0: f64) -> Result<DensityCurve> {
    if !(eta0 > 0.0) {
        return Err(invalid_param(format!("eta0 = {eta0} must be positive")));
    }
    let cfg = RfcSolverConfig::default();
    let mut warm = None;
    let mut rho = Vec::with_capacity(grid.len());
    let mut converged = Vec::with_capacity(grid.len());
    for &e in grid {
        match solve_rfc_from(q, Complex64::new(e, eta0), warm, &cfg) {
            Ok(pt) => {
                rho.push((pt.m.im / std::f64::consts::PI).max(0.0));
                converged.push(true);
                warm = Some(pt.b);
            }
            Err(Error::Convergence { .. }) | Err(Error::Branch(_)) => {
                rho.push(0.0);
                converged.push(false);
                warm = None;
            }
            Err(err) => return Err(err),
        }
    }
    Ok(DensityCurve {
        grid: grid.to_vec(),
        rho,
        eta0,
        converged,
    })
}

/// Agreement between `γₙ` and the fitted square-root coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConsistency {
    pub gamma_n: f64,
    pub varpi_fit: f64,
    /// `|γₙ − ϖ^{2/3}| / γₙ`.
    pub rel_err: f64,
    pub fit_residual: f64,
}

/// Fit window for the square-root law, as fractions of the natural edge
/// scale `½ Φ''(ζ₊) (ζ₊ − d₁)²` (the drop of `Φ` over the distance from
/// `ζ₊` to the nearest pole).
pub const CONSISTENCY_WINDOW: (f64, f64) = (2e-4, 2e-3);

pub fn edge_consistency(q: &RfcQuery) -> Result<EdgeConsistency> {
    let edge = find_rfc_edge(q)?;
    let scale = 0.5 * edge.phi_second * (edge.zeta_plus_t - q.d[0]).powi(2);
    let count = 24;
    let (lo, hi) = (CONSISTENCY_WINDOW.0 * scale, CONSISTENCY_WINDOW.1 * scale);
    let xs: Vec<f64> = (0..count)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count - 1) as f64).exp())
        .collect();
    let mut grid: Vec<f64> = xs.iter().map(|x| edge.lambda_plus_t - x).collect();
    grid.reverse();
    let eta = 1e-6 * lo;
    let curve = rfc_density(q, &grid, eta)?;
    if !curve.all_converged() {
        return Err(Error::Convergence {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let rho: Vec<f64> = curve.rho.iter().rev().copied().collect();
    let fit = fit_sqrt_edge(&xs, &rho)?;
    let rel_err = (edge.gamma_n - fit.varpi.powf(2.0 / 3.0)).abs() / edge.gamma_n;
    Ok(EdgeConsistency {
        gamma_n: edge.gamma_n,
        varpi_fit: fit.varpi,
        rel_err,
        fit_residual: fit.residual,
    })
}
