//! Density, right edge, square-root coefficient and classical locations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DysonSolver;
use crate::error::{invalid_param, Error, Result};
use crate::model::VarianceProfile;

/// Density values `ρ(E) = Im m(E + iη₀) / π` on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta0: f64,
    /// False where the solver failed; `rho` is zero there.
    pub converged: Vec<bool>,
}

impl DensityCurve {
    /// Trapezoid integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.rho.windows(2))
            .map(|(e, r)| 0.5 * (r[0] + r[1]) * (e[1] - e[0]))
            .sum()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

/// Evaluates the density along `grid` (which must be sorted ascending),
/// warm-starting each solve from the previous grid point.
pub fn density(profile: &VarianceProfile, grid: &[f64], eta0: f64) -> Result<DensityCurve> {
    density_with(&DysonSolver::new(profile), grid, eta0)
}

pub(crate) fn density_with(solver: &DysonSolver, grid: &[f64], eta0: f64) -> Result<DensityCurve> {
    if !(eta0 > 0.0) {
        return Err(invalid_param(format!("eta0 = {eta0} must be positive")));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid_param("density grid must be strictly increasing"));
    }
    let mut rho = Vec::with_capacity(grid.len());
    let mut converged = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<Complex64>> = None;
    for &e in grid {
        match solver.m_avg(Complex64::new(e, eta0), warm.as_ref()) {
            Ok((m, classes)) => {
                rho.push((m.im / std::f64::consts::PI).max(0.0));
                converged.push(true);
                warm = Some(classes);
            }
            Err(Error::Convergence { .. }) | Err(Error::Branch(_)) => {
                rho.push(0.0);
                converged.push(false);
                warm = None;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DensityCurve {
        grid: grid.to_vec(),
        rho,
        eta0,
        converged,
    })
}

/// Writes `E,rho` rows.
pub fn write_density_csv<W: Write>(mut out: W, curve: &DensityCurve) -> Result<()> {
    writeln!(out, "E,rho")?;
    for (e, r) in curve.grid.iter().zip(&curve.rho) {
        writeln!(out, "{e},{r}")?;
    }
    Ok(())
}

/// Least-squares fit of `ρ(λ₊ − x) ≈ (ϖ/π) √x (1 + βx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtFit {
    pub varpi: f64,
    pub beta: f64,
    /// Relative RMS misfit.
    pub residual: f64,
}

/// Fits the square-root edge law to density samples at distances `x` inside
/// the edge. The fit is linear in `ρ/√x = a + b x`, which weights the
/// points by their relative error.
pub fn fit_sqrt_edge(x: &[f64], rho: &[f64]) -> Result<SqrtFit> {
    if x.len() != rho.len() || x.len() < 3 {
        return Err(invalid_param(
            "square-root fit needs at least three matched samples",
        ));
    }
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid_param("fit distances must be positive"));
    }
    let y: Vec<f64> = x.iter().zip(rho).map(|(x, r)| r / x.sqrt()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let residual = (x
        .iter()
        .zip(rho)
        .map(|(x, r)| {
            let fit = (a + b * x) * x.sqrt();
            ((fit - r) / r.abs().max(f64::MIN_POSITIVE)).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SqrtFit {
        varpi: std::f64::consts::PI * a,
        beta: b / a,
        residual,
    })
}

/// Controls for [`find_edge`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    /// Imaginary part used when locating the edge by bisection.
    pub eta_loc: f64,
    /// Density level separating "inside" from "outside" the support.
    pub rho_thresh: f64,
    /// Coarse scan points over `[0, 4𝔐]` before bisection.
    pub scan_points: usize,
    /// Bisection steps.
    pub bisection_steps: usize,
    /// Window for the edge refinement, as fractions of the spectral width.
    pub refine_window: (f64, f64),
    /// Window for the square-root fit, as fractions of the spectral width.
    pub fit_window: (f64, f64),
    pub fit_points: usize,
    /// Imaginary part, relative to the spectral width, for the near-real
    /// density samples used by the refinement and the fit.
    pub eta_fit_rel: f64,
    /// Fit residual above which the edge is flagged as unstable.
    pub max_residual: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            eta_loc: 1e-4,
            rho_thresh: 1e-3,
            scan_points: 64,
            bisection_steps: 40,
            refine_window: (2e-4, 2e-3),
            fit_window: (2e-3, 2e-2),
            fit_points: 24,
            eta_fit_rel: 1e-9,
            max_residual: 0.02,
        }
    }
}

/// Right edge `λ₊` of the density and the coefficient `ϖ` of
/// `ρ(λ₊ − x) = π⁻¹ ϖ √x + O(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DysonEdge {
    pub lambda_plus: f64,
    pub varpi: f64,
    /// Absolute fit window `(x_min, x_max)` below the edge.
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
    /// Set when `fit_residual` exceeds the configured maximum.
    pub fit_unstable: bool,
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Densities at `λ − x` for each `x`, walking inwards from the edge.
fn inner_density(solver: &DysonSolver, lambda: f64, xs: &[f64], eta: f64) -> Result<Vec<f64>> {
    let mut warm: Option<DVector<Complex64>> = None;
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let (m, classes) = solver.m_avg(Complex64::new(lambda - x, eta), warm.as_ref())?;
        out.push(m.im / std::f64::consts::PI);
        warm = Some(classes);
    }
    Ok(out)
}

/// Refines an edge estimate from a quadratic fit of `ρ²` against `E`,
/// which is exact to second order for a square-root edge.
fn refine_edge(
    solver: &DysonSolver,
    guess: f64,
    width: f64,
    cfg: &EdgeConfig,
) -> Result<Option<f64>> {
    let xs = log_spaced(cfg.refine_window.0 * width, cfg.refine_window.1 * width, 12);
    let rho = inner_density(solver, guess, &xs, cfg.eta_fit_rel * width)?;
    if rho.iter().any(|r| !(*r > 0.0)) {
        return Ok(None);
    }
    // least squares for ρ² = c0 + c1 t + c2 t² with t = x / width
    let design = DMatrix::from_fn(xs.len(), 3, |i, j| (xs[i] / width).powi(j as i32));
    let target = DVector::from_iterator(rho.len(), rho.iter().map(|r| r * r));
    let coef = match (design.transpose() * &design).cholesky() {
        Some(ch) => ch.solve(&(design.transpose() * target)),
        None => return Ok(None),
    };
    let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
    // root of the quadratic nearest t = 0; ρ² grows inwards so c1 > 0
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if !(c1 > 0.0) || disc < 0.0 {
        return Ok(None);
    }
    let t = -2.0 * c0 / (c1 + disc.sqrt());
    let shift = t * width;
    if shift.abs() > cfg.refine_window.1 * width {
        return Ok(None);
    }
    Ok(Some(guess - shift))
}

/// Locates `λ₊` and fits `ϖ`.
///
/// The edge is bracketed by a coarse scan of the indicator
/// `ρ(E + iη_loc) > ρ_thresh` from `4𝔐` downwards, bisected, and then
/// refined from near-real density samples just inside the support. The
/// spectral width used for the windows is measured from the origin.
pub fn find_edge(profile: &VarianceProfile, cfg: &EdgeConfig) -> Result<DysonEdge> {
    find_edge_with(&DysonSolver::new(profile), cfg)
}

pub(crate) fn find_edge_with(solver: &DysonSolver, cfg: &EdgeConfig) -> Result<DysonEdge> {
    let hi = 4.0 * solver.frak_m() * (1.0 + 1e-3);
    if !(hi > 0.0) {
        return Err(Error::EdgeNotFound("profile is identically zero".into()));
    }
    let inside =
        |e: f64, warm: Option<&DVector<Complex64>>| -> Result<(bool, DVector<Complex64>)> {
            let (m, classes) = solver.m_avg(Complex64::new(e, cfg.eta_loc), warm)?;
            Ok((m.im / std::f64::consts::PI > cfg.rho_thresh, classes))
        };
    let steps = cfg.scan_points.max(2);
    let mut warm: Option<DVector<Complex64>> = None;
    let mut bracket = None;
    for k in 1..steps {
        let e = hi * (1.0 - k as f64 / steps as f64);
        let (is_in, classes) = inside(e, warm.as_ref())?;
        if is_in {
            bracket = Some((e, hi * (1.0 - (k - 1) as f64 / steps as f64)));
            break;
        }
        warm = Some(classes);
    }
    let (mut lo, mut up) = bracket.ok_or_else(|| {
        Error::EdgeNotFound(format!("density stays below threshold on [0, {hi}]"))
    })?;
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + up);
        if inside(mid, None)?.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let mut lambda = 0.5 * (lo + up);
    for _ in 0..2 {
        match refine_edge(solver, lambda, lambda, cfg)? {
            Some(refined) => lambda = refined,
            None => break,
        }
    }
    let width = lambda;
    let xs = log_spaced(
        cfg.fit_window.0 * width,
        cfg.fit_window.1 * width,
        cfg.fit_points.max(3),
    );
    let rho = inner_density(solver, lambda, &xs, cfg.eta_fit_rel * width)?;
    let fit = fit_sqrt_edge(&xs, &rho)?;
    if !(fit.varpi > 0.0) {
        return Err(Error::EdgeNotFound(format!(
            "nonpositive square-root coefficient {}",
            fit.varpi
        )));
    }
    Ok(DysonEdge {
        lambda_plus: lambda,
        varpi: fit.varpi,
        fit_window: (xs[0], xs[xs.len() - 1]),
        fit_residual: fit.residual,
        fit_unstable: fit.residual > cfg.max_residual,
    })
}

/// Classical locations `γ₁ ≥ γ₂ ≥ …`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileSet {
    pub gamma: Vec<f64>,
}

/// `γ_j = sup{x : ∫_x^∞ ρ > (j − 1)/p}` for `j = 1..=p`.
///
/// The last grid segment before the edge is integrated as a square root
/// (the edge position is extrapolated from `ρ²`), the rest by trapezoids.
pub fn quantiles(curve: &DensityCurve, p: usize) -> Result<QuantileSet> {
    let (e, r) = (&curve.grid, &curve.rho);
    if p == 0 || e.len() != r.len() {
        return Err(invalid_param(
            "quantiles need p >= 1 and a consistent curve",
        ));
    }
    // relative to the median so that a singular left end does not dominate
    let mut positive: Vec<f64> = r.iter().copied().filter(|v| *v > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let floor = 1e-4 * positive.get(positive.len() / 2).copied().unwrap_or(0.0);
    let k = match r.iter().rposition(|v| *v > floor) {
        Some(k) if k >= 2 => k,
        _ => {
            return Err(Error::Resolution(
                "fewer than three grid points inside the support".into(),
            ))
        }
    };
    let (r1, r0) = (r[k] * r[k], r[k - 1] * r[k - 1]);
    let spacing = e[k] - e[k - 1];
    let mut edge = if r0 > r1 {
        e[k] + r1 * spacing / (r0 - r1)
    } else {
        e[k] + spacing
    };
    if let Some(next) = e.get(k + 1) {
        edge = edge.min(*next);
    }
    let edge_mass = 2.0 / 3.0 * r[k] * (edge - e[k]);
    // tail[i] = mass to the right of e[i]
    let mut tail = vec![0.0; k + 1];
    tail[k] = edge_mass;
    for i in (0..k).rev() {
        let h = e[i + 1] - e[i];
        let mut seg = 0.5 * (r[i] + r[i + 1]) * h;
        if i == 0 {
            // an inverse square-root blow-up at the left end integrates to 2ρ₁h
            seg = seg.min(2.0 * r[1] * h);
        }
        tail[i] = tail[i + 1] + seg;
    }
    if (tail[0] - 1.0).abs() > 0.05 {
        return Err(Error::Resolution(format!(
            "curve carries mass {:.4}, not 1",
            tail[0]
        )));
    }
    let mut gamma = Vec::with_capacity(p);
    let mut seg = k;
    for j in 1..=p {
        let q = (j - 1) as f64 / p as f64;
        if q == 0.0 {
            gamma.push(edge);
            continue;
        }
        if q <= edge_mass {
            gamma.push(edge - (edge - e[k]) * (q / edge_mass).powf(2.0 / 3.0));
            continue;
        }
        while seg > 0 && tail[seg] < q {
            seg -= 1;
        }
        if tail[seg] < q {
            gamma.push(e[0]);
            continue;
        }
        // q lies in (tail[seg + 1], tail[seg]]: invert the linear density on
        // [e[seg], e[seg + 1]]
        let i = seg;
        let need = q - tail[i + 1];
        let slope = (r[i + 1] - r[i]) / (e[i + 1] - e[i]);
        let h =
            2.0 * need / (r[i + 1] + (r[i + 1] * r[i + 1] - 2.0 * slope * need).max(0.0).sqrt());
        gamma.push((e[i + 1] - h).max(e[i]));
    }
    Ok(QuantileSet { gamma })
}

/// Density on a grid clustered towards `λ₊` and the resulting classical
/// locations for a `p`-dimensional spectrum.
pub fn classical_locations(
    profile: &VarianceProfile,
    edge: &DysonEdge,
    p: usize,
    points: usize,
) -> Result<QuantileSet> {
    let solver = DysonSolver::new(profile);
    let lam = edge.lambda_plus;
    let points = points.max(16);
    let mut grid: Vec<f64> = (0..points)
        .map(|i| {
            let s = 1.0 - i as f64 / (points - 1) as f64;
            lam * (1.0 - s * s)
        })
        .collect();
    grid[0] = grid[0].max(1e-9 * lam);
    let curve = density_with(&solver, &grid, 1e-10 * lam)?;
    if !curve.all_converged() {
        return Err(Error::Resolution(
            "density solve failed on part of the grid".into(),
        ));
    }
    quantiles(&curve, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp_density(x: f64, c: f64) -> f64 {
        let (a, b) = ((1.0 - c.sqrt()).powi(2), (1.0 + c.sqrt()).powi(2));
        if x <= a || x >= b {
            0.0
        } else {
            ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * c * x)
        }
    }

    #[test]
    fn density_matches_marchenko_pastur() {
        let profile = VarianceProfile::white(60, 60).unwrap();
        let curve = density(&profile, &[1.0, 2.0, 3.0, 5.0], 1e-4).unwrap();
        assert!((curve.rho[1] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-3);
        for (e, r) in curve.grid.iter().zip(&curve.rho) {
            assert!((r - mp_density(*e, 1.0)).abs() < 1e-3, "{e}: {r}");
        }
        let outside = density(&profile, &[5.0], 1e-6).unwrap();
        assert!(outside.rho[0] < 1e-4);
    }

    #[test]
    fn density_normalization() {
        let profile = VarianceProfile::white(50, 100).unwrap();
        let grid: Vec<f64> = (0..=3000)
            .map(|i| i as f64 * 3.2 / 3000.0)
            .map(|e| e.max(1e-6))
            .collect();
        let curve = density(&profile, &grid, 1e-6).unwrap();
        assert!(curve.all_converged());
        assert!((curve.mass() - 1.0).abs() < 0.02, "mass {}", curve.mass());
    }

    #[test]
    fn marchenko_pastur_edges() {
        for c in [0.25, 0.5, 1.0] {
            let n = 400;
            let p = (c * n as f64) as usize;
            let edge = find_edge(
                &VarianceProfile::white(p, n).unwrap(),
                &EdgeConfig::default(),
            )
            .unwrap();
            let want = (1.0 + c.sqrt()).powi(2);
            assert!(
                (edge.lambda_plus - want).abs() < 1e-4,
                "c = {c}: {} vs {want}",
                edge.lambda_plus
            );
            if c == 1.0 {
                assert!(
                    (edge.varpi - 0.25).abs() < 0.02 * 0.25,
                    "varpi {}",
                    edge.varpi
                );
            }
            assert!(!edge.fit_unstable);
            assert!(
                edge.lambda_plus
                    <= 4.0 * VarianceProfile::white(p, n).unwrap().frak_m() * (1.0 + 1e-6)
            );
        }
    }

    #[test]
    fn scaling_of_the_profile() {
        let base = VarianceProfile::separable(&vec![1.0; 100], &vec![1.0; 200]).unwrap();
        let doubled = VarianceProfile::separable(&vec![1.0; 100], &vec![2.0; 200]).unwrap();
        let e1 = find_edge(&base, &EdgeConfig::default()).unwrap();
        let e2 = find_edge(&doubled, &EdgeConfig::default()).unwrap();
        let want = 2.0 * (1.0 + 0.5f64.sqrt()).powi(2);
        assert!((e2.lambda_plus - want).abs() < 1e-4);
        assert!(
            (e2.varpi - e1.varpi / 2f64.powf(1.5)).abs() < 1e-3 * e1.varpi,
            "{e1:?} {e2:?}"
        );
    }

    #[test]
    fn square_root_fit_recovers_coefficients() {
        let xs: Vec<f64> = (1..20).map(|i| i as f64 * 1e-3).collect();
        let rho: Vec<f64> = xs
            .iter()
            .map(|x| 0.3 / std::f64::consts::PI * x.sqrt() * (1.0 + 0.5 * x))
            .collect();
        let fit = fit_sqrt_edge(&xs, &rho).unwrap();
        assert!((fit.varpi - 0.3).abs() < 1e-12);
        assert!((fit.beta - 0.5).abs() < 1e-9);
        assert!(fit.residual < 1e-12);
    }

    /// Independent Simpson quadrature of the Marchenko–Pastur tail mass on
    /// `[x, 4]` at `c = 1`, with the substitution `x = 4 − u²`.
    fn mp_tail_c1(x: f64) -> f64 {
        let umax = (4.0 - x).sqrt();
        let f = |u: f64| {
            let y = 4.0 - u * u;
            // ρ(y) dy with dy = 2u du and 4 − y = u²
            u * u / (std::f64::consts::PI * y.sqrt())
        };
        let n = 2000;
        let h = umax / n as f64;
        let mut s = f(0.0) + f(umax);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn quantiles_match_marchenko_pastur() {
        let profile = VarianceProfile::white(100, 100).unwrap();
        let edge = find_edge(&profile, &EdgeConfig::default()).unwrap();
        let q = classical_locations(&profile, &edge, 100, 4000).unwrap();
        assert!((q.gamma[0] - edge.lambda_plus).abs() < 1e-6);
        assert!((q.gamma[0] - 4.0).abs() < 1e-4);
        // bisection on the independent tail quadrature
        let (mut lo, mut hi) = (3.0, 4.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mp_tail_c1(mid) > 0.01 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((q.gamma[1] - lo).abs() < 2e-4, "{} vs {lo}", q.gamma[1]);
        assert!(q.gamma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn quantiles_reject_coarse_curves() {
        let curve = DensityCurve {
            grid: vec![0.0, 1.0],
            rho: vec![0.5, 0.0],
            eta0: 1e-3,
            converged: vec![true; 2],
        };
        assert!(matches!(quantiles(&curve, 10), Err(Error::Resolution(_))));
    }

    #[test]
    fn density_csv_rows() {
        let curve = DensityCurve {
            grid: vec![1.0, 2.0],
            rho: vec![0.25, 0.0],
            eta0: 1e-3,
            converged: vec![true; 2],
        };
        let mut buf = Vec::new();
        write_density_csv(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "E,rho\n1,0.25\n2,0\n");
    }
}
