//! Size and power of the sequential tests under the three noise settings.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{par_replicates, CriticalTable, Progress, RunStamp, Setting, Silent, SCHEMA_VERSION};
use crate::error::{invalid_param, Error, Result};
use crate::rng::stream;
use crate::spectra::gram_top_eigs;
use crate::stats::{decide, evaluate, Statistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Null,
    Power,
}

/// Rejection fractions of `T` and `T_r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    #[serde(rename = "T")]
    pub max: f64,
    #[serde(rename = "T_r0")]
    pub single: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub d: f64,
    pub power: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub stamp: RunStamp,
    pub kind: ExperimentKind,
    pub setting: Setting,
    pub p: usize,
    pub n: usize,
    pub r0: usize,
    pub r_star: usize,
    pub level: f64,
    /// Critical values of `T` and `T_r0` in that order.
    pub critical: Rates,
    /// Null rejection rates; `None` when there were no replicates.
    pub rejection_rate: Option<Rates>,
    pub power: Vec<PowerPoint>,
    /// Per-replicate `(T, T_r0)` under the null.
    #[serde(skip)]
    pub statistics: Vec<[f64; 2]>,
}

impl ExperimentReport {
    pub fn rate_undefined(&self) -> bool {
        self.kind == ExperimentKind::Null && self.rejection_rate.is_none()
    }

    /// One row per replicate for a null experiment, one row per `d` for a
    /// power experiment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# setting={},p={},n={},seed={},reps={},git={}",
            self.setting, self.p, self.n, self.stamp.seed, self.stamp.reps, self.stamp.git_describe
        )?;
        match self.kind {
            ExperimentKind::Null => {
                writeln!(out, "replicate,T,T_r0,reject_T,reject_T_r0")?;
                for (i, [t, tr]) in self.statistics.iter().enumerate() {
                    writeln!(
                        out,
                        "{i},{t},{tr},{},{}",
                        decide(*t, self.critical.max),
                        decide(*tr, self.critical.single)
                    )?;
                }
            }
            ExperimentKind::Power => {
                writeln!(out, "d,power_T,power_T_r0")?;
                for pt in &self.power {
                    writeln!(out, "{},{},{}", pt.d, pt.power.max, pt.power.single)?;
                }
            }
        }
        Ok(())
    }
}

/// Signal strengths under the null with `r0` signals: `18, 16, 14, …`.
pub fn null_strengths(r0: usize) -> Result<Vec<f64>> {
    if r0 > 8 {
        return Err(invalid_param(format!(
            "null design supports r0 <= 8, got {r0}"
        )));
    }
    Ok((0..r0).map(|i| 18.0 - 2.0 * i as f64).collect())
}

fn critical_pair(table: &CriticalTable, p: usize, n: usize, k: usize, level: f64) -> Result<Rates> {
    Ok(Rates {
        max: table.get(p, n, k, Statistic::Max, level)?,
        single: table.get(p, n, k, Statistic::Single, level)?,
    })
}

/// `Z + Σ_k σ_k e_k e_kᵀ` for a noise draw `Z`.
fn add_diagonal_signal(mut y: DMatrix<f64>, strengths: &[f64]) -> DMatrix<f64> {
    for (k, s) in strengths.iter().enumerate() {
        y[(k, k)] += s;
    }
    y
}

fn statistics(top: &[f64], r0: usize, r_star: usize) -> Result<[f64; 2]> {
    Ok([
        evaluate(top, r0, r_star, Statistic::Max)?.value,
        evaluate(top, r0, r_star, Statistic::Single)?.value,
    ])
}

fn check_design(p: usize, n: usize, r0: usize, r_star: usize, level: f64) -> Result<()> {
    if r_star <= r0 {
        return Err(invalid_param(format!(
            "r* = {r_star} must exceed r0 = {r0}"
        )));
    }
    if r_star + 2 > p.min(n) {
        return Err(invalid_param(format!(
            "r* + 2 = {} exceeds min(p, n)",
            r_star + 2
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid_param(format!("level {level} is outside (0, 1)")));
    }
    Ok(())
}

fn fraction(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_type1(
    setting: Setting,
    p: usize,
    n: usize,
    r0: usize,
    r_star: usize,
    level: f64,
    reps: usize,
    table: &CriticalTable,
    seed: u64,
) -> Result<ExperimentReport> {
    simulate_type1_with(setting, p, n, r0, r_star, level, reps, table, seed, &Silent)
}

/// Rejection rates of both statistics under the null with `r0` signals of
/// strengths [`null_strengths`] on the leading coordinate axes.
#[allow(clippy::too_many_arguments)]
pub fn simulate_type1_with(
    setting: Setting,
    p: usize,
    n: usize,
    r0: usize,
    r_star: usize,
    level: f64,
    reps: usize,
    table: &CriticalTable,
    seed: u64,
    progress: &dyn Progress,
) -> Result<ExperimentReport> {
    check_design(p, n, r0, r_star, level)?;
    let critical = critical_pair(table, p, n, r_star - r0, level)?;
    let strengths = null_strengths(r0)?;
    let model = setting.noise_model(p, n, seed)?;
    let draws = par_replicates(reps, progress, |i| {
        let y = add_diagonal_signal(model.sample(&mut stream(seed, i)), &strengths);
        statistics(&gram_top_eigs(&y, r_star + 2)?, r0, r_star)
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    let rejection_rate = (reps > 0).then(|| Rates {
        max: fraction(
            draws.iter().filter(|d| decide(d[0], critical.max)).count(),
            reps,
        ),
        single: fraction(
            draws
                .iter()
                .filter(|d| decide(d[1], critical.single))
                .count(),
            reps,
        ),
    });
    Ok(ExperimentReport {
        schema: SCHEMA_VERSION,
        stamp: RunStamp::new(seed, reps),
        kind: ExperimentKind::Null,
        setting,
        p,
        n,
        r0,
        r_star,
        level,
        critical,
        rejection_rate,
        power: Vec::new(),
        statistics: draws,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_power(
    setting: Setting,
    p: usize,
    n: usize,
    d_grid: &[f64],
    r_star: usize,
    level: f64,
    reps: usize,
    table: &CriticalTable,
    seed: u64,
) -> Result<ExperimentReport> {
    simulate_power_with(
        setting, p, n, d_grid, r_star, level, reps, table, seed, &Silent,
    )
}

/// Power against a single signal `d e₁e₁ᵀ` while testing `r0 = 0`. The same
/// noise draw is reused for every `d` within a replicate.
#[allow(clippy::too_many_arguments)]
pub fn simulate_power_with(
    setting: Setting,
    p: usize,
    n: usize,
    d_grid: &[f64],
    r_star: usize,
    level: f64,
    reps: usize,
    table: &CriticalTable,
    seed: u64,
    progress: &dyn Progress,
) -> Result<ExperimentReport> {
    check_design(p, n, 0, r_star, level)?;
    if d_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(invalid_param(
            "signal strengths must be finite and nonnegative",
        ));
    }
    if reps == 0 {
        return Err(invalid_param(
            "a power experiment needs at least one replicate",
        ));
    }
    let critical = critical_pair(table, p, n, r_star, level)?;
    let model = setting.noise_model(p, n, seed)?;
    let draws = par_replicates(reps, progress, |i| -> Result<Vec<[bool; 2]>> {
        let z = model.sample(&mut stream(seed, i));
        d_grid
            .iter()
            .map(|&d| {
                let y = add_diagonal_signal(z.clone(), &[d]);
                let s = statistics(&gram_top_eigs(&y, r_star + 2)?, 0, r_star)?;
                Ok([decide(s[0], critical.max), decide(s[1], critical.single)])
            })
            .collect()
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    let power = d_grid
        .iter()
        .enumerate()
        .map(|(j, &d)| PowerPoint {
            d,
            power: Rates {
                max: fraction(draws.iter().filter(|r| r[j][0]).count(), reps),
                single: fraction(draws.iter().filter(|r| r[j][1]).count(), reps),
            },
        })
        .collect();
    Ok(ExperimentReport {
        schema: SCHEMA_VERSION,
        stamp: RunStamp::new(seed, reps),
        kind: ExperimentKind::Power,
        setting,
        p,
        n,
        r0: 0,
        r_star,
        level,
        critical,
        rejection_rate: None,
        power,
        statistics: Vec::new(),
    })
}

/// Largest absolute deviation of `values` from their nondecreasing
/// least-squares fit (pool adjacent violators).
pub fn isotonic_deviation(values: &[f64]) -> f64 {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
        }
    }
    let fitted = blocks
        .iter()
        .flat_map(|(v, k)| std::iter::repeat(*v).take(*k));
    values
        .iter()
        .zip(fitted)
        .map(|(v, f)| (v - f).abs())
        .fold(0.0, f64::max)
}

impl From<ExperimentKind> for &'static str {
    fn from(k: ExperimentKind) -> Self {
        match k {
            ExperimentKind::Null => "null",
            ExperimentKind::Power => "power",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(ExperimentKind::Null),
            "power" => Ok(ExperimentKind::Power),
            other => Err(invalid_param(format!("unknown experiment mode '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::simulate_critical_values;

    #[test]
    fn isotonic_fit() {
        assert_eq!(isotonic_deviation(&[0.1, 0.2, 0.9, 1.0]), 0.0);
        assert!((isotonic_deviation(&[0.1, 0.5, 0.3, 1.0]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_run_flags_undefined_rate() {
        let table = simulate_critical_values(20, 40, 2, 0.1, 100, 1).unwrap();
        let rep = simulate_type1(Setting::III, 20, 40, 3, 5, 0.1, 0, &table, 1).unwrap();
        assert!(rep.rate_undefined());
        assert!(simulate_type1(Setting::III, 20, 40, 2, 5, 0.1, 10, &table, 1).is_err());
    }

    #[test]
    fn matched_median_table_rejects_half() {
        // level 0.5 quantiles of the same reference should reject about half the time
        let table = simulate_critical_values(30, 60, 2, 0.5, 2000, 3).unwrap();
        let rep = simulate_type1(Setting::I, 30, 60, 0, 2, 0.5, 400, &table, 4).unwrap();
        let r = rep.rejection_rate.unwrap();
        assert!((0.4..=0.6).contains(&r.max), "{r:?}");
        assert!((0.4..=0.6).contains(&r.single), "{r:?}");
    }

    #[test]
    fn power_report_and_csv() {
        let table = simulate_critical_values(20, 40, 3, 0.1, 500, 2).unwrap();
        let rep = simulate_power(Setting::II, 20, 40, &[0.0, 30.0], 3, 0.1, 50, &table, 7).unwrap();
        assert_eq!(rep.power.len(), 2);
        assert!(rep.power[1].power.single >= 0.9);
        let again =
            simulate_power(Setting::II, 20, 40, &[0.0, 30.0], 3, 0.1, 50, &table, 7).unwrap();
        assert_eq!(rep, again);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("d,power_T,power_T_r0"));
    }
}
