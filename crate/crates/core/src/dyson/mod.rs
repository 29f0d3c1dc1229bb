//! The vector Dyson equation `1/m = −z + S (1 / (1 + Sᵀ m))` and the
//! quantities derived from its solution: density, right edge, square-root
//! coefficient and classical eigenvalue locations.

mod checks;
mod edge;

pub use checks::{
    check_assumptions, check_eta_regular, AssumptionConfig, AssumptionReport, CheckA2, CheckA3,
    CheckA4s, Condition, RegularityConfig, RegularityReport, Violation,
};
pub use edge::{
    classical_locations, density, find_edge, fit_sqrt_edge, quantiles, write_density_csv,
    DensityCurve, DysonEdge, EdgeConfig, QuantileSet, SqrtFit,
};

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::model::VarianceProfile;

/// Solution of the vector Dyson equation at one spectral parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DysonSolution {
    pub z: Complex64,
    /// One entry per row of the profile.
    pub m: Vec<Complex64>,
    pub m_avg: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

/// Iteration controls for [`DysonSolver`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Tolerance on `‖1/m + z − S(1/(1 + Sᵀm))‖_∞ / max(1, |z|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed-point sweeps before switching to Newton.
    pub fixed_point_iters: usize,
    /// Initial damping of the fixed-point map.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 400,
            fixed_point_iters: 60,
            damping: 0.5,
        }
    }
}

/// A variance profile with identical rows and identical columns merged.
///
/// Rows `i, i'` with equal `S_i` share `m_i`, and columns with equal
/// `(Sᵀ)_j` share `(Sᵀm)_j`, so the equation can be solved on the classes
/// with multiplicity weights and no approximation.
#[derive(Debug, Clone)]
pub struct DysonSolver {
    p: usize,
    /// `k[(a, b)] = (#columns in b) · s_ab`, shape classes_p × classes_n.
    k: DMatrix<f64>,
    /// `l[(b, a)] = (#rows in a) · s_ab`.
    l: DMatrix<f64>,
    row_class: Vec<usize>,
    row_weight: Vec<f64>,
    frak_m: f64,
    cfg: SolverConfig,
}

fn group_keys<I: Iterator<Item = Vec<u64>>>(keys: I) -> (Vec<usize>, Vec<usize>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut class_of = Vec::new();
    let mut representative = Vec::new();
    for (i, key) in keys.enumerate() {
        let next = index.len();
        let c = *index.entry(key).or_insert(next);
        if c == representative.len() {
            representative.push(i);
        }
        class_of.push(c);
    }
    (class_of, representative)
}

/// Class counts above which Newton systems are solved by GMRES.
const DENSE_LIMIT: usize = 96;
const GMRES_TOL: f64 = 1e-13;
const GMRES_MAX_ITER: usize = 250;

/// `a · v` for real `a` and complex `v`.
fn real_mul(a: &DMatrix<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let re = a * v.map(|x| x.re);
    let im = a * v.map(|x| x.im);
    DVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
}

/// Right-preconditioned GMRES for `A x = b` with diagonal preconditioner
/// `precond` (applied as `x = precond ∘ y`). Returns `None` if the relative
/// residual does not reach `tol` within `max_iter` iterations.
fn gmres<F>(
    apply: F,
    b: &DVector<Complex64>,
    precond: &DVector<Complex64>,
    tol: f64,
    max_iter: usize,
) -> Option<DVector<Complex64>>
where
    F: Fn(&DVector<Complex64>) -> DVector<Complex64>,
{
    let zero = Complex64::new(0.0, 0.0);
    let beta = b.norm();
    if beta == 0.0 {
        return Some(DVector::from_element(b.len(), zero));
    }
    let mut basis: Vec<DVector<Complex64>> = vec![b.unscale(beta)];
    let mut h: Vec<Vec<Complex64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<Complex64> = Vec::new();
    let mut g = vec![Complex64::new(beta, 0.0)];
    for j in 0..max_iter {
        let mut w = apply(&basis[j].component_mul(precond));
        let mut col = vec![zero; j + 2];
        for (i, v) in basis.iter().enumerate() {
            let hij = v.dotc(&w);
            col[i] = hij;
            w.axpy(-hij, v, Complex64::new(1.0, 0.0));
        }
        let norm_w = w.norm();
        col[j + 1] = Complex64::new(norm_w, 0.0);
        for i in 0..j {
            let (x, y) = (col[i], col[i + 1]);
            col[i] = x * cs[i] + sn[i] * y;
            col[i + 1] = -sn[i].conj() * x + y * cs[i];
        }
        let (a, bb) = (col[j], col[j + 1]);
        let r = (a.norm_sqr() + bb.norm_sqr()).sqrt();
        let (c, s) = if a.norm() == 0.0 {
            (0.0, Complex64::new(1.0, 0.0))
        } else {
            (a.norm() / r, (a / a.norm()) * bb.conj() / r)
        };
        col[j] = c * a + s * bb;
        col[j + 1] = zero;
        cs.push(c);
        sn.push(s);
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s.conj() * gj);
        h.push(col);
        let done = g[j + 1].norm() <= tol * beta || norm_w == 0.0;
        if done || j + 1 == max_iter {
            if !done {
                return None;
            }
            let k = j + 1;
            let mut y = vec![zero; k];
            for i in (0..k).rev() {
                let mut acc = g[i];
                for l in i + 1..k {
                    acc -= h[l][i] * y[l];
                }
                y[i] = acc / h[i][i];
            }
            let mut x = DVector::from_element(b.len(), zero);
            for (v, yi) in basis.iter().zip(&y) {
                x.axpy(*yi, v, Complex64::new(1.0, 0.0));
            }
            return Some(x.component_mul(precond));
        }
        basis.push(w.unscale(norm_w));
    }
    None
}

impl DysonSolver {
    pub fn new(profile: &VarianceProfile) -> Self {
        Self::with_config(profile, SolverConfig::default())
    }

    pub fn with_config(profile: &VarianceProfile, cfg: SolverConfig) -> Self {
        let s = profile.matrix();
        let (p, n) = s.shape();
        let (row_class, row_rep) =
            group_keys((0..p).map(|i| (0..n).map(|j| s[(i, j)].to_bits()).collect()));
        let (col_class, col_rep) =
            group_keys((0..n).map(|j| row_rep.iter().map(|&i| s[(i, j)].to_bits()).collect()));
        let (na, nb) = (row_rep.len(), col_rep.len());
        let mut row_weight = vec![0.0; na];
        for &a in &row_class {
            row_weight[a] += 1.0;
        }
        let mut col_weight = vec![0.0; nb];
        for &b in &col_class {
            col_weight[b] += 1.0;
        }
        let k = DMatrix::from_fn(na, nb, |a, b| col_weight[b] * s[(row_rep[a], col_rep[b])]);
        let l = DMatrix::from_fn(nb, na, |b, a| row_weight[a] * s[(row_rep[a], col_rep[b])]);
        Self {
            p,
            k,
            l,
            row_class,
            row_weight,
            frak_m: profile.frak_m(),
            cfg,
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Number of row and column classes after merging.
    pub fn reduced_dims(&self) -> (usize, usize) {
        self.k.shape()
    }

    pub fn frak_m(&self) -> f64 {
        self.frak_m
    }

    fn field(
        &self,
        z: Complex64,
        m: &DVector<Complex64>,
    ) -> (DVector<Complex64>, DVector<Complex64>) {
        let one = Complex64::new(1.0, 0.0);
        let u = real_mul(&self.l, m);
        let inv = u.map(|v| one / (one + v));
        let rhs = real_mul(&self.k, &inv);
        (u, rhs.map(|v| v - z))
    }

    fn residual(&self, z: Complex64, m: &DVector<Complex64>) -> f64 {
        let (_, rhs) = self.field(z, m);
        let scale = z.norm().max(1.0);
        m.iter()
            .zip(rhs.iter())
            .map(|(mi, r)| (Complex64::new(1.0, 0.0) / mi - r).norm())
            .fold(0.0, f64::max)
            / scale
    }

    fn is_admissible(m: &DVector<Complex64>) -> bool {
        m.iter()
            .all(|v| v.im > 0.0 && v.re.is_finite() && v.im.is_finite())
    }

    fn average(&self, m: &DVector<Complex64>) -> Complex64 {
        m.iter()
            .zip(&self.row_weight)
            .map(|(v, w)| v * w)
            .sum::<Complex64>()
            / self.p as f64
    }

    /// Dense Newton matrix `K diag(d) L − diag(1/m²)`.
    fn dense_jacobian(&self, d: &DVector<Complex64>, m: &DVector<Complex64>) -> DMatrix<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        let mut k_re = self.k.clone();
        let mut k_im = self.k.clone();
        for (b, (mut cr, mut ci)) in k_re
            .column_iter_mut()
            .zip(k_im.column_iter_mut())
            .enumerate()
        {
            cr *= d[b].re;
            ci *= d[b].im;
        }
        let re = k_re * &self.l;
        let im = k_im * &self.l;
        let mut jac = DMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
            Complex64::new(re[(i, j)], im[(i, j)])
        });
        for (i, mi) in m.iter().enumerate() {
            jac[(i, i)] -= one / (mi * mi);
        }
        jac
    }

    /// Newton step `J⁻¹ f`; GMRES for large class counts, dense LU otherwise
    /// or when GMRES stalls.
    fn newton_step(
        &self,
        d: &DVector<Complex64>,
        m: &DVector<Complex64>,
        f: &DVector<Complex64>,
    ) -> Option<DVector<Complex64>> {
        let one = Complex64::new(1.0, 0.0);
        let dim = m.len();
        if dim > DENSE_LIMIT {
            let inv_m2 = m.map(|v| one / (v * v));
            // diagonal of K diag(d) L, for the preconditioner
            let diag = DVector::from_fn(dim, |a, _| {
                (0..self.k.ncols())
                    .map(|b| d[b] * (self.k[(a, b)] * self.l[(b, a)]))
                    .sum::<Complex64>()
            });
            let precond = DVector::from_fn(dim, |a, _| one / (diag[a] - inv_m2[a]));
            let apply = |v: &DVector<Complex64>| -> DVector<Complex64> {
                let lv = real_mul(&self.l, v).component_mul(d);
                real_mul(&self.k, &lv) - v.component_mul(&inv_m2)
            };
            if let Some(x) = gmres(apply, f, &precond, GMRES_TOL, dim.min(GMRES_MAX_ITER)) {
                return Some(x);
            }
        }
        self.dense_jacobian(d, m).lu().solve(f)
    }

    /// Newton from `m`, preceded by damped fixed-point sweeps when
    /// `fixed_point` is set.
    fn iterate(
        &self,
        z: Complex64,
        mut m: DVector<Complex64>,
        fixed_point: bool,
    ) -> Result<(DVector<Complex64>, usize, f64)> {
        let cfg = &self.cfg;
        let one = Complex64::new(1.0, 0.0);
        let mut res = self.residual(z, &m);
        let mut iters = 0;
        let mut theta = cfg.damping;
        // fixed-point sweeps; they keep Im m > 0 automatically
        while fixed_point && iters < cfg.fixed_point_iters.min(cfg.max_iter) && res > cfg.tol {
            let (_, rhs) = self.field(z, &m);
            let target = rhs.map(|r| -one / r);
            let trial = m.scale(1.0 - theta) + target.scale(theta);
            let trial_res = self.residual(z, &trial);
            iters += 1;
            if trial_res < res || theta < 1e-3 {
                m = trial;
                res = trial_res;
            } else {
                theta *= 0.5;
            }
            if res < 1e-6 {
                break;
            }
        }
        while res > cfg.tol && iters < cfg.max_iter {
            iters += 1;
            let (u, rhs) = self.field(z, &m);
            let f = DVector::from_iterator(
                m.len(),
                m.iter().zip(rhs.iter()).map(|(mi, r)| one / mi - r),
            );
            let d = u.map(|v| one / ((one + v) * (one + v)));
            let step = match self.newton_step(&d, &m, &f) {
                Some(s) => s,
                None => break,
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = &m - step.scale(t);
                if Self::is_admissible(&trial) {
                    let trial_res = self.residual(z, &trial);
                    if trial_res < res {
                        m = trial;
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
        if !Self::is_admissible(&m) {
            return Err(Error::Branch(format!("Im m <= 0 at z = {z}")));
        }
        if res <= cfg.tol {
            Ok((m, iters, res))
        } else {
            Err(Error::Convergence {
                iterations: iters,
                residual: res,
            })
        }
    }

    /// Newton first, then the damped iteration if Newton alone fails.
    fn iterate_from(
        &self,
        z: Complex64,
        m: &DVector<Complex64>,
    ) -> Result<(DVector<Complex64>, usize, f64)> {
        match self.iterate(z, m.clone(), false) {
            Ok(out) => Ok(out),
            Err(Error::Convergence { .. }) | Err(Error::Branch(_)) => {
                self.iterate(z, m.clone(), true)
            }
            Err(e) => Err(e),
        }
    }

    fn initial_guess(&self, z: Complex64) -> DVector<Complex64> {
        DVector::from_element(self.k.nrows(), -Complex64::new(1.0, 0.0) / z)
    }

    /// Solves at `z` (`Im z > 0`), warm-starting from `warm` when given.
    ///
    /// Without a usable warm start the solution is continued down from
    /// `Im z = max(1, 𝔐)` in geometric steps.
    pub fn solve_classes(
        &self,
        z: Complex64,
        warm: Option<&DVector<Complex64>>,
    ) -> Result<(DVector<Complex64>, usize, f64)> {
        if !(z.im > 0.0) || !z.re.is_finite() {
            return Err(invalid_param(format!(
                "spectral parameter {z} must have positive imaginary part"
            )));
        }
        let mut total = 0;
        if let Some(w) = warm.filter(|w| w.len() == self.k.nrows() && Self::is_admissible(w)) {
            match self.iterate_from(z, w) {
                Ok((m, it, res)) => return Ok((m, it, res)),
                Err(Error::Convergence { iterations, .. }) => total += iterations,
                Err(_) => {}
            }
        }
        let top = self.frak_m.max(1.0);
        if z.im >= top {
            let (m, it, res) = self.iterate(z, self.initial_guess(z), true)?;
            return Ok((m, it + total, res));
        }
        let mut eta = top;
        let mut m = self.initial_guess(Complex64::new(z.re, eta));
        let mut first = true;
        loop {
            let zz = Complex64::new(z.re, eta);
            let (next, it, res) = if first {
                self.iterate(zz, m, true)?
            } else {
                self.iterate_from(zz, &m)?
            };
            first = false;
            total += it;
            m = next;
            if eta <= z.im {
                return Ok((m, total, res));
            }
            eta = (eta * 0.25).max(z.im);
        }
    }

    pub fn solve(&self, z: Complex64, warm: Option<&DVector<Complex64>>) -> Result<DysonSolution> {
        let (m, iterations, residual) = self.solve_classes(z, warm)?;
        Ok(self.expand(z, &m, iterations, residual))
    }

    fn expand(
        &self,
        z: Complex64,
        m: &DVector<Complex64>,
        iterations: usize,
        residual: f64,
    ) -> DysonSolution {
        DysonSolution {
            z,
            m: self.row_class.iter().map(|&a| m[a]).collect(),
            m_avg: self.average(m),
            iterations,
            residual,
        }
    }

    /// Averaged Stieltjes transform with the class vector for warm starts.
    pub fn m_avg(
        &self,
        z: Complex64,
        warm: Option<&DVector<Complex64>>,
    ) -> Result<(Complex64, DVector<Complex64>)> {
        let (m, _, _) = self.solve_classes(z, warm)?;
        Ok((self.average(&m), m))
    }
}

/// Solves the vector Dyson equation for `profile` at `z`.
pub fn solve_vde(
    profile: &VarianceProfile,
    z: Complex64,
    tol: f64,
    max_iter: usize,
) -> Result<DysonSolution> {
    let cfg = SolverConfig {
        tol,
        max_iter,
        ..SolverConfig::default()
    };
    DysonSolver::with_config(profile, cfg).solve(z, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Stieltjes transform of the Marchenko–Pastur law with ratio `ratio`.
    fn mp_stieltjes(z: Complex64, ratio: f64) -> Complex64 {
        // c z m² + (z − 1 + c) m + 1 = 0, root with Im m > 0
        let a = z * ratio;
        let b = z - 1.0 + ratio;
        let disc = (b * b - a * 4.0).sqrt();
        let r1 = (-b + disc) / (a * 2.0);
        let r2 = (-b - disc) / (a * 2.0);
        if r1.im > 0.0 {
            r1
        } else {
            r2
        }
    }

    #[test]
    fn constant_profile_collapses_to_one_class() {
        let profile = VarianceProfile::white(40, 40).unwrap();
        let solver = DysonSolver::new(&profile);
        assert_eq!(solver.reduced_dims(), (1, 1));
        let sep = VarianceProfile::separable(&[1.0, 1.0, 2.0], &[3.0, 4.0, 5.0, 5.0]).unwrap();
        assert_eq!(DysonSolver::new(&sep).reduced_dims(), (2, 3));
    }

    #[test]
    fn negative_real_axis_golden_ratio() {
        let profile = VarianceProfile::white(50, 50).unwrap();
        let sol = solve_vde(&profile, c(-1.0, 1e-9), 1e-12, 400).unwrap();
        assert!((sol.m_avg.re - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-8);
        assert!(sol.m.iter().all(|m| m.im > 0.0));
    }

    #[test]
    fn far_field_asymptotic() {
        let profile = VarianceProfile::separable(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
        let z = c(1e6, 1.0);
        let sol = solve_vde(&profile, z, 1e-12, 400).unwrap();
        let expect = -Complex64::new(1.0, 0.0) / z;
        assert!((sol.m_avg - expect).norm() / expect.norm() < 1e-4);
    }

    #[test]
    fn matches_marchenko_pastur() {
        for (p, n) in [(30, 30), (20, 40)] {
            let profile = VarianceProfile::white(p, n).unwrap();
            let ratio = p as f64 / n as f64;
            let solver = DysonSolver::new(&profile);
            for z in [c(2.0, 0.01), c(0.5, 1e-3), c(5.0, 1e-6), c(1.0, 3.0)] {
                let got = solver.solve(z, None).unwrap().m_avg;
                let want = mp_stieltjes(z, ratio);
                assert!((got - want).norm() < 1e-9, "{z}: {got} vs {want}");
            }
        }
        let sol = solve_vde(
            &VarianceProfile::white(10, 10).unwrap(),
            c(2.0, 0.01),
            1e-12,
            400,
        )
        .unwrap();
        assert!((sol.m_avg.im - 0.5).abs() < 0.02);
    }

    #[test]
    fn heterogeneous_profile_satisfies_equation() {
        let s = DMatrix::from_fn(7, 9, |i, j| (1.0 + ((i * 3 + j * 5) % 4) as f64) / 9.0);
        let profile = VarianceProfile::new(s.clone()).unwrap();
        let z = c(1.3, 1e-4);
        let sol = solve_vde(&profile, z, 1e-12, 400).unwrap();
        let m = DVector::from_vec(sol.m.clone());
        let u = s.map(|x| Complex64::new(x, 0.0)).transpose() * &m;
        let rhs =
            s.map(|x| Complex64::new(x, 0.0)) * u.map(|v| Complex64::new(1.0, 0.0) / (v + 1.0));
        for (mi, r) in m.iter().zip(rhs.iter()) {
            assert!((Complex64::new(1.0, 0.0) / mi + z - r).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_lower_half_plane() {
        let profile = VarianceProfile::white(3, 3).unwrap();
        assert!(matches!(
            solve_vde(&profile, c(1.0, 0.0), 1e-12, 100),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let profile = VarianceProfile::white(3, 3).unwrap();
        let err = DysonSolver::with_config(
            &profile,
            SolverConfig {
                max_iter: 1,
                fixed_point_iters: 1,
                ..Default::default()
            },
        )
        .solve(c(1.0, 1e-3), None)
        .unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }));
    }
}
