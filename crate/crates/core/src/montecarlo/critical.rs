//! Critical values of the Wishart reference statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{par_replicates, upper_quantile, Progress, RunStamp, Silent, SCHEMA_VERSION};
use crate::error::{invalid_param, invalid_shape, Error, Result};
use crate::model::wishart_top_eigenvalues;
use crate::rng::stream;
use crate::stats::{evaluate, Statistic, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalEntry {
    pub p: usize,
    pub n: usize,
    /// `r* − r0`.
    pub k: usize,
    /// `T` entries hold `G1` quantiles, `T_r0` entries `G2` quantiles.
    pub which: Statistic,
    pub level: f64,
    pub value: f64,
}

/// Persisted table of `(1 − level)`-quantiles keyed by `(p, n, k, which,
/// level)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalTable {
    pub schema: u32,
    pub stamp: RunStamp,
    pub entries: Vec<CriticalEntry>,
}

/// Published 0.9-quantiles of `G1` and `G2` (5000 replicates) for the shapes
/// `(p, n)` used in the simulation study: `(p, n, k, G1, G2)`.
pub const REFERENCE_TABLE: [(usize, usize, usize, f64, f64); 30] = [
    (100, 200, 1, 4.77, 4.77),
    (100, 200, 2, 5.68, 4.98),
    (100, 200, 3, 6.37, 5.15),
    (100, 200, 4, 6.94, 5.41),
    (100, 200, 5, 7.86, 5.94),
    (250, 500, 1, 4.68, 4.68),
    (250, 500, 2, 5.6, 4.86),
    (250, 500, 3, 6.42, 4.95),
    (250, 500, 4, 7.12, 5.28),
    (250, 500, 5, 8.12, 5.87),
    (200, 200, 1, 4.71, 4.71),
    (200, 200, 2, 5.68, 5.02),
    (200, 200, 3, 6.51, 5.23),
    (200, 200, 4, 6.98, 5.63),
    (200, 200, 5, 8.23, 6.03),
    (500, 500, 1, 4.53, 4.53),
    (500, 500, 2, 5.62, 4.96),
    (500, 500, 3, 6.41, 5.48),
    (500, 500, 4, 6.96, 5.52),
    (500, 500, 5, 7.89, 5.94),
    (400, 200, 1, 4.51, 4.51),
    (400, 200, 2, 5.59, 4.95),
    (400, 200, 3, 6.63, 5.23),
    (400, 200, 4, 7.07, 5.34),
    (400, 200, 5, 7.91, 5.82),
    (1000, 500, 1, 4.51, 4.51),
    (1000, 500, 2, 5.62, 4.87),
    (1000, 500, 3, 6.38, 5.19),
    (1000, 500, 4, 7.93, 5.48),
    (1000, 500, 5, 7.78, 5.79),
];

fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

impl CriticalTable {
    pub fn new(stamp: RunStamp) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            stamp,
            entries: Vec::new(),
        }
    }

    /// The published 0.9-level table.
    pub fn reference() -> Self {
        let mut table = Self::new(RunStamp::new(0, 5000));
        table.stamp.git_describe = "reference".into();
        for (p, n, k, g1, g2) in REFERENCE_TABLE {
            for (which, value) in [(Statistic::Max, g1), (Statistic::Single, g2)] {
                table.entries.push(CriticalEntry {
                    p,
                    n,
                    k,
                    which,
                    level: 0.1,
                    value,
                });
            }
        }
        table
    }

    pub fn get(&self, p: usize, n: usize, k: usize, which: Statistic, level: f64) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.p == p && e.n == n && e.k == k && e.which == which && same_level(e.level, level)
            })
            .map(|e| e.value)
            .ok_or_else(|| {
                invalid_param(format!(
                    "no {} critical value for p = {p}, n = {n}, k = {k}, level = {level}",
                    which.reference_name()
                ))
            })
    }

    /// Per-step thresholds for the sequential estimator with `r0 = 0..r*−1`.
    pub fn thresholds(
        &self,
        p: usize,
        n: usize,
        r_star: usize,
        which: Statistic,
        level: f64,
    ) -> Result<Thresholds> {
        let values = (0..r_star)
            .map(|r0| self.get(p, n, r_star - r0, which, level))
            .collect::<Result<Vec<_>>>()?;
        Ok(Thresholds::PerR0(values))
    }

    /// Adds entries, replacing any with the same key.
    pub fn merge(&mut self, other: &CriticalTable) {
        for e in &other.entries {
            self.entries.retain(|x| {
                !(x.p == e.p
                    && x.n == e.n
                    && x.k == e.k
                    && x.which == e.which
                    && same_level(x.level, e.level))
            });
            self.entries.push(*e);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        if table.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "critical table schema {} is not supported (expected {SCHEMA_VERSION})",
                table.schema
            )));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn simulate_critical_values(
    p: usize,
    n: usize,
    k_max: usize,
    level: f64,
    reps: usize,
    seed: u64,
) -> Result<CriticalTable> {
    simulate_critical_values_with(p, n, k_max, level, reps, seed, &Silent)
}

/// One Wishart spectrum per replicate; the `(1 − level)` quantiles of `G1`
/// and `G2` for every `k ≤ k_max`.
pub fn simulate_critical_values_with(
    p: usize,
    n: usize,
    k_max: usize,
    level: f64,
    reps: usize,
    seed: u64,
    progress: &dyn Progress,
) -> Result<CriticalTable> {
    if p == 0 || n == 0 {
        return Err(invalid_shape("empty dimensions"));
    }
    if p > n {
        log::info!("p = {p} > n = {n}: the nonzero spectrum is that of the {n} x {n} companion");
    }
    if k_max == 0 || k_max + 2 > p.min(n) {
        return Err(invalid_param(format!(
            "k_max = {k_max} needs k_max + 2 <= min(p, n)"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid_param(format!("level {level} is outside (0, 1)")));
    }
    if reps < 100 {
        return Err(invalid_param(format!(
            "reps = {reps} is below the minimum of 100"
        )));
    }
    let draws: Vec<Result<Vec<[f64; 2]>>> = par_replicates(reps, progress, |i| {
        let top = wishart_top_eigenvalues(p, n, k_max + 2, &mut stream(seed, i))?;
        (1..=k_max)
            .map(|k| {
                Ok([
                    evaluate(&top, 0, k, Statistic::Max)?.value,
                    evaluate(&top, 0, k, Statistic::Single)?.value,
                ])
            })
            .collect()
    });
    let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
    let mut table = CriticalTable::new(RunStamp::new(seed, reps));
    for k in 1..=k_max {
        for (slot, which) in Statistic::ALL.into_iter().enumerate() {
            let sample: Vec<f64> = draws.iter().map(|d| d[k - 1][slot]).collect();
            let value = upper_quantile(&sample, level)?;
            table.entries.push(CriticalEntry {
                p,
                n,
                k,
                which,
                level,
                value,
            });
        }
    }
    Ok(table)
}
