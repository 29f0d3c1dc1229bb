//! Monte Carlo harness: critical-value tables, size and power experiments
//! and empirical Tracy–Widom checks.
//!
//! Replicate `i` of an experiment with master seed `s` always draws from
//! stream `(s, i)`, and results are collected in replicate order, so every
//! output is independent of the number of worker threads.

mod critical;
mod experiment;
mod tracy_widom;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::model::{BandedNoise, DoublyHeteroscedastic, NoiseModel, SparseNoise};
use crate::rng::{stream, FIXED_STREAM};

pub use critical::{
    simulate_critical_values, simulate_critical_values_with, CriticalEntry, CriticalTable,
    REFERENCE_TABLE,
};
pub use experiment::{
    isotonic_deviation, null_strengths, simulate_power, simulate_power_with, simulate_type1,
    simulate_type1_with, ExperimentKind, ExperimentReport, PowerPoint, Rates,
};
pub use tracy_widom::{
    tw_check, tw_check_with, tw_reference, tw_reference_cached, TwCheck, TwCheckOptions,
    TwReference, TwTarget,
};

/// Output schema version embedded in every persisted artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// Reproduction metadata carried by every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStamp {
    pub version: String,
    pub git_describe: String,
    pub seed: u64,
    pub reps: usize,
}

impl RunStamp {
    pub fn new(seed: u64, reps: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_describe: option_env!("GRAM_EDGE_GIT_DESCRIBE")
                .unwrap_or("unknown")
                .to_string(),
            seed,
            reps,
        }
    }
}

/// The three noise settings of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Doubly heteroscedastic `A^{1/2} 𝒩 B^{1/2}` with rotated `A`, `B`.
    I,
    /// Sparse Bernoulli-masked noise with separable random variances.
    II,
    /// Banded variance profile.
    III,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::I, Setting::II, Setting::III];

    pub fn name(self) -> &'static str {
        match self {
            Setting::I => "I",
            Setting::II => "II",
            Setting::III => "III",
        }
    }

    /// Builds the noise model. Quantities fixed for the whole experiment
    /// (the orthogonal factors of setting I) come from the reserved stream.
    pub fn noise_model(self, p: usize, n: usize, seed: u64) -> Result<Box<dyn NoiseModel>> {
        Ok(match self {
            Setting::I => {
                let (a, b) = DoublyHeteroscedastic::setting_one_spectra(p, n);
                let mut rng = stream(seed, FIXED_STREAM);
                Box::new(DoublyHeteroscedastic::rotated(a, b, &mut rng)?)
            }
            Setting::II => Box::new(SparseNoise::new(p, n, SparseNoise::default_prob(n))?),
            Setting::III => Box::new(BandedNoise::new(p, n, BandedNoise::DEFAULT_BANDWIDTH)?),
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Setting::I),
            "II" | "2" => Ok(Setting::II),
            "III" | "3" => Ok(Setting::III),
            other => Err(invalid_param(format!("unknown setting '{other}'"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Receives `(done, total)` roughly every 5% of replicates.
pub trait Progress: Sync {
    fn advance(&self, done: usize, total: usize);
}

/// Ignores progress updates.
pub struct Silent;

impl Progress for Silent {
    fn advance(&self, _: usize, _: usize) {}
}

impl<F: Fn(usize, usize) + Sync> Progress for F {
    fn advance(&self, done: usize, total: usize) {
        self(done, total)
    }
}

/// Runs `f(i)` for `i in 0..reps` on the rayon pool and returns the results
/// in index order.
pub(crate) fn par_replicates<T, F>(reps: usize, progress: &dyn Progress, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let done = AtomicUsize::new(0);
    let step = (reps / 20).max(1);
    (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let out = f(i);
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            if k % step == 0 || k == reps {
                progress.advance(k, reps);
            }
            out
        })
        .collect()
}

/// The `(1 − level)` empirical quantile of `sample`: the order statistic at
/// 1-based index `⌈(1 − level) · len⌉`.
pub fn upper_quantile(sample: &[f64], level: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(invalid_param("empty sample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid_param(format!("level {level} is outside (0, 1)")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    // guard against (1 − level)·len landing a rounding error above an integer
    let pos = ((1.0 - level) * sorted.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[pos.min(sorted.len()) - 1])
}

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid_param("KS distance needs two nonempty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(invalid_param("KS distance of a sample containing NaN"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.total_cmp(v));
    ys.sort_by(|u, v| u.total_cmp(v));
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_hand_cases() {
        assert_eq!(
            ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(),
            0.0
        );
        assert_eq!(ks_distance(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        assert!(
            (ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15
        );
        assert!(ks_distance(&[], &[1.0]).is_err());
        let k = ks_distance(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((k - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_convention() {
        let sample: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(upper_quantile(&sample, 0.1).unwrap(), 9.0);
        assert_eq!(upper_quantile(&sample, 0.5).unwrap(), 5.0);
        assert_eq!(upper_quantile(&sample, 0.05).unwrap(), 10.0);
        assert!(upper_quantile(&[], 0.1).is_err());
        assert!(upper_quantile(&sample, 1.0).is_err());
    }

    #[test]
    fn settings_parse() {
        assert_eq!("ii".parse::<Setting>().unwrap(), Setting::II);
        assert_eq!("3".parse::<Setting>().unwrap(), Setting::III);
        assert!("IV".parse::<Setting>().is_err());
    }

    #[test]
    fn replicates_are_ordered() {
        let calls = AtomicUsize::new(0);
        let out = par_replicates(
            100,
            &|_: usize, _: usize| {
                calls.fetch_add(1, Ordering::Relaxed);
            },
            |i| i * 2,
        );
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<u64>>());
        assert_eq!(calls.load(Ordering::Relaxed), 20);
    }
}
