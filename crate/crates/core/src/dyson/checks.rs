//! Finite-n checks of the variance-profile assumptions and of square-root
//! regularity of an empirical spectrum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::model::VarianceProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConfig {
    /// Lower bound on the aspect ratio `p/n`.
    pub tau_aspect: f64,
    /// Exponent slack in the lower variance bound `n^{-1/3+ε*}/n`.
    pub eps_star: f64,
    /// Largest acceptable `n · max s_ij`.
    pub s_star_max: f64,
    /// Irreducibility level: powers must reach `τ/n` entrywise.
    pub tau_irreducible: f64,
    pub max_power: usize,
    /// Minimum block fraction and Hölder constant for the partition check.
    pub tau_partition: f64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        Self {
            tau_aspect: 0.1,
            eps_star: 0.05,
            s_star_max: 100.0,
            tau_irreducible: 0.1,
            max_power: 4,
            tau_partition: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckA2 {
    pub pass: bool,
    /// `n · max s_ij`.
    pub s_star: f64,
    /// `n · min s_ij`.
    pub min_scaled: f64,
    /// `n^{-1/3+ε*}`.
    pub lower_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckA3 {
    pub pass: bool,
    /// Smallest power of `SSᵀ` that is entrywise at least `τ/n`.
    pub l1: Option<usize>,
    /// Smallest power of `SᵀS` that is entrywise at least `τ/n`.
    pub l2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckA4s {
    pub pass: bool,
    /// Sizes of the greedy contiguous row blocks.
    pub row_blocks: Vec<usize>,
    pub col_blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1: bool,
    pub a2: CheckA2,
    pub a3: CheckA3,
    pub a4s: CheckA4s,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.a1 && self.a2.pass && self.a3.pass && self.a4s.pass
    }
}

fn first_positive_power(m: &DMatrix<f64>, level: f64, max_power: usize) -> Option<usize> {
    let mut power = m.clone();
    for l in 1..=max_power {
        if power.min() >= level {
            return Some(l);
        }
        if l < max_power {
            power = &power * m;
        }
    }
    None
}

/// Splits `0..rows.nrows()` into maximal contiguous blocks in which every
/// pair of rows satisfies `‖r_a − r_b‖₂ ≤ bound · |a − b|^{1/2}`.
fn holder_blocks(rows: &DMatrix<f64>, bound: f64) -> Vec<usize> {
    let count = rows.nrows();
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 1..count {
        let fits = (start..i).all(|a| {
            let dist = (rows.row(i) - rows.row(a)).norm();
            dist <= bound * ((i - a) as f64).sqrt()
        });
        if !fits {
            blocks.push(i - start);
            start = i;
        }
    }
    if count > 0 {
        blocks.push(count - start);
    }
    blocks
}

/// Checks comparability of dimensions, variance bounds, irreducibility and
/// the piecewise Hölder surrogate for row/column closeness.
pub fn check_assumptions(profile: &VarianceProfile, cfg: &AssumptionConfig) -> AssumptionReport {
    let s = profile.matrix();
    let (p, n) = s.shape();
    let nf = n as f64;
    let a1 = profile.aspect_ok(cfg.tau_aspect);

    let s_star = nf * s.max();
    let min_scaled = nf * s.min();
    let lower_bound = nf.powf(-1.0 / 3.0 + cfg.eps_star);
    let a2 = CheckA2 {
        pass: min_scaled >= lower_bound && s_star <= cfg.s_star_max,
        s_star,
        min_scaled,
        lower_bound,
    };

    let level = cfg.tau_irreducible / nf;
    let l1 = first_positive_power(&(s * s.transpose()), level, cfg.max_power);
    let l2 = first_positive_power(&(s.transpose() * s), level, cfg.max_power);
    let a3 = CheckA3 {
        pass: l1.is_some() && l2.is_some(),
        l1,
        l2,
    };

    let bound = 1.0 / (cfg.tau_partition * nf);
    let row_blocks = holder_blocks(s, bound);
    let col_blocks = holder_blocks(&s.transpose(), bound);
    let min_rows = cfg.tau_partition * p as f64;
    let min_cols = cfg.tau_partition * nf;
    let pass = row_blocks.iter().all(|&b| b as f64 >= min_rows)
        && col_blocks.iter().all(|&b| b as f64 >= min_cols);
    AssumptionReport {
        a1,
        a2,
        a3,
        a4s: CheckA4s {
            pass,
            row_blocks,
            col_blocks,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConfig {
    /// Upper end of the `η` range.
    pub eta_max: f64,
    pub eta_per_decade: usize,
    /// `E` points in each of the two regions.
    pub e_points: usize,
    /// Largest `C_V` accepted as a constant.
    pub max_c_big: f64,
    /// Smallest `c_V` accepted, relative to `λ₊`.
    pub min_c_small_rel: f64,
    /// Cap on the number of listed violations.
    pub max_violations: usize,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            eta_max: 10.0,
            eta_per_decade: 40,
            e_points: 80,
            max_c_big: 100.0,
            min_c_small_rel: 0.01,
            max_violations: 50,
        }
    }
}

/// Which regularity condition a grid point violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Two-sided square-root bounds on `Im m`.
    #[serde(rename = "i")]
    SquareRoot,
    /// Eigenvalue-free interval above the edge.
    #[serde(rename = "ii")]
    Gap,
    /// Size constraints `2c_V ≤ λ₊ ≤ C_V/2`.
    #[serde(rename = "iii")]
    Size,
}

/// A grid point (or interval end, for the gap condition) violating a
/// condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub e: f64,
    pub eta: f64,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub eta_star: f64,
    pub i0: usize,
    pub lambda_plus: f64,
    pub c_small: f64,
    pub c_big: f64,
    pub pass: bool,
    pub violations: Vec<Violation>,
    pub violation_count: usize,
}

fn stieltjes_im(d: &[f64], e: f64, eta: f64) -> f64 {
    d.iter()
        .map(|x| eta / ((x - e) * (x - e) + eta * eta))
        .sum::<f64>()
        / d.len() as f64
}

fn eta_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    if lo >= hi {
        return vec![hi];
    }
    let count = ((per_decade as f64 * (hi / lo).log10()).ceil() as usize).max(1) + 1;
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Checks square-root regularity of the spectrum `d` (descending) around
/// `λ₊ = d_{i0}` at scale `η*`.
///
/// `c_V` is the largest value compatible with the eigenvalue-free interval
/// above the edge, capped at `λ₊/2`; `C_V` is the smallest constant making
/// both two-sided bounds hold on the grid, raised to at least `2λ₊`.
pub fn check_eta_regular(
    d: &[f64],
    i0: usize,
    eta_star: f64,
    cfg: &RegularityConfig,
) -> Result<RegularityReport> {
    if i0 == 0 || i0 > d.len() {
        return Err(invalid_param(format!(
            "edge index {i0} outside 1..={}",
            d.len()
        )));
    }
    if !(eta_star > 0.0 && eta_star <= 1.0) {
        return Err(invalid_param(format!("eta* = {eta_star} outside (0, 1]")));
    }
    let lambda = d[i0 - 1];
    let mut violations = Vec::new();
    let mut count = 0usize;
    let mut record = |v: Violation, list: &mut Vec<Violation>| {
        count += 1;
        if list.len() < cfg.max_violations {
            list.push(v);
        }
    };
    if !(lambda > 0.0) {
        record(
            Violation {
                e: lambda,
                eta: 0.0,
                condition: Condition::Size,
            },
            &mut violations,
        );
        return Ok(RegularityReport {
            eta_star,
            i0,
            lambda_plus: lambda,
            c_small: 0.0,
            c_big: f64::INFINITY,
            pass: false,
            violations,
            violation_count: count,
        });
    }
    let gap_above = d
        .iter()
        .map(|x| x - lambda)
        .filter(|g| *g >= eta_star)
        .fold(f64::INFINITY, f64::min);
    let min_c = cfg.min_c_small_rel * lambda;
    let mut c_small = (0.5 * lambda).min(0.5 * gap_above);
    if c_small < min_c {
        // an eigenvalue sits in [λ₊ + η*, λ₊ + min_c]
        record(
            Violation {
                e: lambda + gap_above,
                eta: 0.0,
                condition: Condition::Gap,
            },
            &mut violations,
        );
        c_small = min_c;
    }

    let e_points = cfg.e_points.max(2);
    let mut worst: f64 = 1.0;
    let mut ratios = Vec::new();
    for k in 0..e_points {
        let kappa = c_small * k as f64 / (e_points - 1) as f64;
        // inside the support edge
        let e = lambda - kappa;
        for eta in eta_grid(
            eta_star + (eta_star * kappa).sqrt(),
            cfg.eta_max,
            cfg.eta_per_decade,
        ) {
            let ratio = stieltjes_im(d, e, eta) / (kappa + eta).sqrt();
            ratios.push((e, eta, Condition::SquareRoot, ratio));
        }
        // outside the support edge
        let e = lambda + kappa;
        for eta in eta_grid(eta_star, cfg.eta_max, cfg.eta_per_decade) {
            let ratio = stieltjes_im(d, e, eta) * (kappa + eta).sqrt() / eta;
            ratios.push((e, eta, Condition::SquareRoot, ratio));
        }
    }
    for &(_, _, _, r) in &ratios {
        worst = worst.max(r).max(1.0 / r);
    }
    for &(e, eta, condition, r) in &ratios {
        if r > cfg.max_c_big || r < 1.0 / cfg.max_c_big {
            record(Violation { e, eta, condition }, &mut violations);
        }
    }
    let c_big = worst.max(2.0 * lambda);
    if 2.0 * lambda > cfg.max_c_big {
        record(
            Violation {
                e: lambda,
                eta: 0.0,
                condition: Condition::Size,
            },
            &mut violations,
        );
    }
    Ok(RegularityReport {
        eta_star,
        i0,
        lambda_plus: lambda,
        c_small,
        c_big,
        pass: count == 0 && c_big <= cfg.max_c_big,
        violations,
        violation_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_profile_passes_everything() {
        let report = check_assumptions(
            &VarianceProfile::white(60, 60).unwrap(),
            &AssumptionConfig::default(),
        );
        assert!(report.all_pass(), "{report:?}");
        assert_eq!((report.a3.l1, report.a3.l2), (Some(1), Some(1)));
        assert_eq!(report.a4s.row_blocks, vec![60]);
    }

    #[test]
    fn zero_row_breaks_irreducibility() {
        let mut s = DMatrix::from_element(20, 30, 1.0 / 30.0);
        s.row_mut(4).fill(0.0);
        let report = check_assumptions(
            &VarianceProfile::new(s).unwrap(),
            &AssumptionConfig::default(),
        );
        assert!(!report.a3.pass);
        assert_eq!(report.a3.l1, None);
        assert!(!report.a2.pass);
    }

    #[test]
    fn block_profile_splits_into_blocks() {
        let a: Vec<f64> = (0..100).map(|i| if i < 50 { 1.0 } else { 2.0 }).collect();
        let b: Vec<f64> = (0..200)
            .map(|j| {
                if j < 50 {
                    3.0
                } else if j < 100 {
                    4.0
                } else {
                    5.0
                }
            })
            .collect();
        let report = check_assumptions(
            &VarianceProfile::separable(&a, &b).unwrap(),
            &AssumptionConfig::default(),
        );
        assert_eq!(report.a4s.row_blocks, vec![50, 50]);
        assert_eq!(report.a4s.col_blocks, vec![50, 50, 100]);
        assert!(report.all_pass(), "{report:?}");
    }

    #[test]
    fn equal_eigenvalues_are_regular_at_scale_one() {
        let report = check_eta_regular(&[1.0; 50], 1, 1.0, &RegularityConfig::default()).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn argument_validation() {
        assert!(check_eta_regular(&[1.0, 0.5], 0, 0.1, &RegularityConfig::default()).is_err());
        assert!(check_eta_regular(&[1.0, 0.5], 1, 0.0, &RegularityConfig::default()).is_err());
        assert!(check_eta_regular(&[1.0, 0.5], 1, 2.0, &RegularityConfig::default()).is_err());
    }

    #[test]
    fn close_outlier_violates_the_gap_condition() {
        let mut d: Vec<f64> = (0..200).map(|i| 4.0 * (1.0 - i as f64 / 200.0)).collect();
        d.insert(0, 4.01);
        let report = check_eta_regular(&d, 2, 1e-3, &RegularityConfig::default()).unwrap();
        assert!(!report.pass);
        assert!(report
            .violations
            .iter()
            .any(|v| v.condition == Condition::Gap));
    }
}
