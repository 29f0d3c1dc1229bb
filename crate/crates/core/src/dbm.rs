//! Rectangular Dyson Brownian motion for the eigenvalues of
//! `(W + √t X)(W + √t X)ᵀ`, `X` with iid `N(0, 1/n)` entries:
//!
//! ```text
//! dλ_i = 2 √λ_i dB_i / √n + ((1/n) Σ_{j≠i} (λ_i + λ_j)/(λ_i − λ_j) + 1) dt.
//! ```
//!
//! Integrated by Euler–Maruyama. A step that would break the ordering is
//! split in two with a Brownian bridge, so retried steps keep the exact
//! noise increment.

use std::io::Write;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::montecarlo::{ks_distance, par_replicates, Progress, Silent};
use crate::rng::{stream, StreamRng};
use crate::spectra::gram_top_eigs;

/// Which coordinates are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbmMode {
    /// The eigenvalues `λ_i` directly.
    Eigen,
    /// The singular values `y_i = √λ_i`, whose diffusion coefficient is
    /// the constant `1/√n`.
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbmConfig {
    pub n: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub mode: DbmMode,
    /// Switch the Brownian term off (deterministic repulsion ODE).
    pub diffusion: bool,
    /// Smallest admissible gap, relative to `max(1, λ₁)`.
    pub gap_floor: f64,
    pub dt_min: f64,
    /// Record the top `record_k` values every `record_every` steps
    /// (0 disables recording).
    pub record_every: usize,
    pub record_k: usize,
}

impl DbmConfig {
    pub const GAP_FLOOR: f64 = 1e-10;
    pub const DT_MIN: f64 = 1e-9;

    pub fn new(n: usize, t_end: f64, dt: f64, seed: u64) -> Self {
        Self {
            n,
            t_end,
            dt,
            seed,
            mode: DbmMode::Eigen,
            diffusion: true,
            gap_floor: Self::GAP_FLOOR,
            dt_min: Self::DT_MIN,
            record_every: 0,
            record_k: 5,
        }
    }
}

/// State at the end of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbmState {
    /// Strictly decreasing, positive.
    pub lambda: Vec<f64>,
    pub t: f64,
    pub dt: f64,
    pub seed: u64,
    pub steps: usize,
    /// Number of step halvings triggered by near-collisions.
    pub halvings: usize,
    /// Set when an eigenvalue had to be clamped to stay positive.
    pub clamped: bool,
    /// Recorded `(t, top values)`.
    #[serde(skip)]
    pub trajectory: Vec<(f64, Vec<f64>)>,
}

impl DbmState {
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let k = self.trajectory.first().map_or(0, |(_, v)| v.len());
        let header: Vec<String> = (1..=k).map(|i| format!("lambda{i}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (t, values) in &self.trajectory {
            let row: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Pairwise interaction sums `I_i = Σ_{j≠i} (λ_i + λ_j)/(λ_i − λ_j)`.
pub fn interaction_sums(lambda: &[f64]) -> Vec<f64> {
    let p = lambda.len();
    let mut out = vec![0.0; p];
    for i in 0..p {
        for j in i + 1..p {
            let w = (lambda[i] + lambda[j]) / (lambda[i] - lambda[j]);
            out[i] += w;
            out[j] -= w;
        }
    }
    out
}

/// Drift of the eigenvalue equation.
pub fn eigen_drift(lambda: &[f64], n: usize) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    interaction_sums(lambda)
        .into_iter()
        .map(|s| s * inv_n + 1.0)
        .collect()
}

/// Drift of the singular-value equation,
/// `(1/(2y_i)) ((1/n) Σ_{j≠i} (y_i² + y_j²)/(y_i² − y_j²) + (n − 1)/n)`.
pub fn singular_drift(y: &[f64], n: usize) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    let squares: Vec<f64> = y.iter().map(|v| v * v).collect();
    interaction_sums(&squares)
        .into_iter()
        .zip(y)
        .map(|(s, yi)| (s * inv_n + (n as f64 - 1.0) * inv_n) / (2.0 * yi))
        .collect()
}

fn check_init(init: &[f64]) -> Result<()> {
    if init.is_empty() {
        return Err(invalid_param("empty initial spectrum"));
    }
    if init.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid_param(
            "initial eigenvalues must be positive and finite",
        ));
    }
    if init.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid_param(
            "initial eigenvalues must be strictly decreasing",
        ));
    }
    Ok(())
}

struct Integrator<'a> {
    cfg: &'a DbmConfig,
    halvings: usize,
    clamped: bool,
    floor: f64,
}

impl Integrator<'_> {
    fn ordered(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && x.windows(2).all(|w| w[0] - w[1] > self.floor)
    }

    /// One Euler–Maruyama step of size `h` with Brownian increments `db`.
    fn euler(&self, x: &[f64], h: f64, db: &[f64]) -> Vec<f64> {
        let n = self.cfg.n;
        let sqrt_n = (n as f64).sqrt();
        match self.cfg.mode {
            DbmMode::Eigen => {
                let drift = eigen_drift(x, n);
                x.iter()
                    .zip(&drift)
                    .zip(db)
                    .map(|((xi, a), b)| xi + a * h + 2.0 * xi.sqrt() * b / sqrt_n)
                    .collect()
            }
            DbmMode::Singular => {
                let drift = singular_drift(x, n);
                x.iter()
                    .zip(&drift)
                    .zip(db)
                    .map(|((xi, a), b)| xi + a * h + b / sqrt_n)
                    .collect()
            }
        }
    }

    /// Advances by `h`, splitting the step with a Brownian bridge when the
    /// result would violate the ordering.
    fn advance(&mut self, x: &[f64], h: f64, db: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut next = self.euler(x, h, db);
        let last = next.len() - 1;
        if self.cfg.mode == DbmMode::Eigen && next[last] <= 0.0 && self.ordered(&next[..last]) {
            // undershoot of the smallest eigenvalue: clamp inside its gap
            let mut clamp = 0.5 * x[last];
            if last > 0 {
                clamp = clamp.min(0.5 * next[last - 1]);
            }
            next[last] = clamp;
            self.clamped = true;
        }
        if self.ordered(&next) && next.iter().all(|v| *v > 0.0) {
            return Ok(next);
        }
        let half = 0.5 * h;
        if half < self.cfg.dt_min {
            return Err(Error::SimulationFailure(format!(
                "persistent collision at step size {h:e}"
            )));
        }
        self.halvings += 1;
        let spread = (0.25 * h).sqrt();
        let first: Vec<f64> = db
            .iter()
            .map(|b| {
                let z: f64 = StandardNormal.sample(rng);
                0.5 * b + spread * z
            })
            .collect();
        let second: Vec<f64> = db.iter().zip(&first).map(|(b, f)| b - f).collect();
        let mid = self.advance(x, half, &first, rng)?;
        self.advance(&mid, half, &second, rng)
    }
}

/// Integrates from the descending spectrum `init` to `t_end`.
pub fn simulate_rdbm_with(init: &[f64], cfg: &DbmConfig) -> Result<DbmState> {
    check_init(init)?;
    if cfg.n == 0 {
        return Err(invalid_param("n must be positive"));
    }
    if !(cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
        return Err(invalid_param(format!(
            "t_end = {} must be nonnegative",
            cfg.t_end
        )));
    }
    if !(cfg.dt > 0.0) || cfg.dt < cfg.dt_min {
        return Err(invalid_param(format!(
            "dt = {} must be at least dt_min = {}",
            cfg.dt, cfg.dt_min
        )));
    }
    let min_gap = init
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    if min_gap.is_finite() && cfg.dt > min_gap * min_gap / cfg.n as f64 * 100.0 {
        log::warn!(
            "dt = {} is large against the initial minimal gap {min_gap:e}; expect step halvings",
            cfg.dt
        );
    }
    let mut rng = stream(cfg.seed, 0);
    let mut x: Vec<f64> = match cfg.mode {
        DbmMode::Eigen => init.to_vec(),
        DbmMode::Singular => init.iter().map(|v| v.sqrt()).collect(),
    };
    let to_lambda = |x: &[f64]| -> Vec<f64> {
        match cfg.mode {
            DbmMode::Eigen => x.to_vec(),
            DbmMode::Singular => x.iter().map(|y| y * y).collect(),
        }
    };
    let mut integ = Integrator {
        cfg,
        halvings: 0,
        clamped: false,
        floor: 0.0,
    };
    let mut t = 0.0;
    let mut steps = 0;
    let mut trajectory = Vec::new();
    let record = |t: f64, x: &[f64], out: &mut Vec<(f64, Vec<f64>)>| {
        let lam = to_lambda(x);
        out.push((t, lam[..cfg.record_k.min(lam.len())].to_vec()));
    };
    if cfg.record_every > 0 {
        record(0.0, &x, &mut trajectory);
    }
    let total = (cfg.t_end / cfg.dt).round() as usize;
    let diffusion = if cfg.diffusion { 1.0 } else { 0.0 };
    while steps < total || (t < cfg.t_end && steps == total && cfg.t_end - t > 1e-12 * cfg.t_end) {
        let h = if steps < total {
            cfg.t_end / total as f64
        } else {
            cfg.t_end - t
        };
        integ.floor = cfg.gap_floor * x[0].abs().max(1.0);
        let sd = h.sqrt() * diffusion;
        let db: Vec<f64> = (0..x.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        x = integ.advance(&x, h, &db, &mut rng)?;
        steps += 1;
        t = if steps == total {
            cfg.t_end
        } else {
            steps as f64 * h
        };
        if cfg.record_every > 0 && (steps % cfg.record_every == 0 || steps == total) {
            record(t, &x, &mut trajectory);
        }
        if steps > total {
            break;
        }
    }
    let lambda = to_lambda(&x);
    debug_assert!(lambda.windows(2).all(|w| w[0] > w[1]));
    Ok(DbmState {
        lambda,
        t,
        dt: cfg.dt,
        seed: cfg.seed,
        steps,
        halvings: integ.halvings,
        clamped: integ.clamped,
        trajectory,
    })
}

/// Eigenvalue-mode path with `n = round(p / c_n)`.
pub fn simulate_rdbm(init: &[f64], c_n: f64, t_end: f64, dt: f64, seed: u64) -> Result<DbmState> {
    if !(c_n > 0.0) {
        return Err(invalid_param(format!(
            "aspect ratio {c_n} must be positive"
        )));
    }
    let n = (init.len() as f64 / c_n).round().max(1.0) as usize;
    simulate_rdbm_with(init, &DbmConfig::new(n, t_end, dt, seed))
}

/// Distributional comparison of the SDE with the matrix model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupleReport {
    pub p: usize,
    pub n: usize,
    pub t: f64,
    pub dt: f64,
    pub reps: usize,
    pub seed: u64,
    pub ks_top1: f64,
    /// `|E(λ₁ − λ₂)_SDE − E(λ₁ − λ₂)_matrix|`.
    pub mean_gap_err: f64,
    pub mean_top1_sde: f64,
    pub mean_top1_matrix: f64,
    /// Standard error of the SDE mean of `λ₁`.
    pub se_top1_sde: f64,
    pub failure_fraction: f64,
    /// Set when more than 10% of the paths failed.
    pub unreliable: bool,
    #[serde(skip)]
    pub top1_sde: Vec<f64>,
    #[serde(skip)]
    pub top1_matrix: Vec<f64>,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

/// Stream offset separating matrix-side draws from SDE paths.
const MATRIX_STREAMS: u64 = 1 << 40;

#[allow(clippy::too_many_arguments)]
pub fn couple_check(
    w_spectrum: &[f64],
    p: usize,
    n: usize,
    t: f64,
    dt: f64,
    reps: usize,
    seed: u64,
) -> Result<CoupleReport> {
    couple_check_with(w_spectrum, p, n, t, dt, reps, seed, DbmMode::Eigen, &Silent)
}

/// Runs `reps` SDE paths from `spec(WWᵀ)` and `reps` direct draws of
/// `W + √t X` with `W = [diag(√d) 0]`, comparing `λ₁` and `λ₁ − λ₂`.
#[allow(clippy::too_many_arguments)]
pub fn couple_check_with(
    w_spectrum: &[f64],
    p: usize,
    n: usize,
    t: f64,
    dt: f64,
    reps: usize,
    seed: u64,
    mode: DbmMode,
    progress: &dyn Progress,
) -> Result<CoupleReport> {
    check_init(w_spectrum)?;
    if w_spectrum.len() != p || p > n || p < 2 {
        return Err(invalid_param(format!(
            "need 2 <= p = {} <= n = {n}",
            w_spectrum.len()
        )));
    }
    if reps == 0 {
        return Err(invalid_param("reps must be positive"));
    }
    if !(t >= 0.0) {
        return Err(invalid_param("t must be nonnegative"));
    }
    let d1 = w_spectrum[0];
    let gap0 = w_spectrum[0] - w_spectrum[1];
    let (sde, matrix, failures): (Vec<[f64; 2]>, Vec<[f64; 2]>, usize) = if t == 0.0 {
        (vec![[d1, gap0]; reps], vec![[d1, gap0]; reps], 0)
    } else {
        let paths = par_replicates(reps, progress, |i| {
            let mut cfg = DbmConfig::new(n, t, dt, seed);
            cfg.seed = seed.wrapping_add(i);
            cfg.mode = mode;
            simulate_rdbm_with(w_spectrum, &cfg).map(|s| [s.lambda[0], s.lambda[0] - s.lambda[1]])
        });
        let failures = paths
            .iter()
            .filter(|r| matches!(r, Err(Error::SimulationFailure(_))))
            .count();
        let mut ok = Vec::with_capacity(reps);
        for r in paths {
            match r {
                Ok(v) => ok.push(v),
                Err(Error::SimulationFailure(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let sqrt_t = t.sqrt();
        let matrix = par_replicates(reps, &Silent, |i| -> Result<[f64; 2]> {
            let mut rng = stream(seed, MATRIX_STREAMS + i);
            let sd = sqrt_t / (n as f64).sqrt();
            let mut y = DMatrix::zeros(p, n);
            for r in 0..p {
                for c in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    y[(r, c)] = sd * z;
                }
            }
            for (k, d) in w_spectrum.iter().enumerate() {
                y[(k, k)] += d.sqrt();
            }
            let top = gram_top_eigs(&y, 2)?;
            Ok([top[0], top[0] - top[1]])
        });
        (
            ok,
            matrix.into_iter().collect::<Result<Vec<_>>>()?,
            failures,
        )
    };
    if sde.is_empty() {
        return Err(Error::SimulationFailure("every SDE path failed".into()));
    }
    let top1_sde: Vec<f64> = sde.iter().map(|v| v[0]).collect();
    let top1_matrix: Vec<f64> = matrix.iter().map(|v| v[0]).collect();
    let (m_sde, se_sde) = mean_and_se(&top1_sde);
    let (m_mat, _) = mean_and_se(&top1_matrix);
    let gap_sde = mean_and_se(&sde.iter().map(|v| v[1]).collect::<Vec<_>>()).0;
    let gap_mat = mean_and_se(&matrix.iter().map(|v| v[1]).collect::<Vec<_>>()).0;
    let failure_fraction = failures as f64 / reps as f64;
    Ok(CoupleReport {
        p,
        n,
        t,
        dt,
        reps,
        seed,
        ks_top1: ks_distance(&top1_sde, &top1_matrix)?,
        mean_gap_err: (gap_sde - gap_mat).abs(),
        mean_top1_sde: m_sde,
        mean_top1_matrix: m_mat,
        se_top1_sde: se_sde,
        failure_fraction,
        unreliable: failure_fraction > 0.1,
        top1_sde,
        top1_matrix,
    })
}
