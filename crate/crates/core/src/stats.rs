//! Edge gap-ratio statistics and the sequential estimator of the number of
//! signals.
//!
//! All functions take eigenvalues in descending order, indexed from 1 in
//! the formulas below.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};

/// Which gap-ratio statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    /// `max_{r0 < i ≤ r*} (λ_i − λ_{i+1}) / (λ_{i+1} − λ_{i+2})`.
    #[serde(rename = "T")]
    Max,
    /// `(λ_{r0+1} − λ_{r0+2}) / (λ_{r*+1} − λ_{r*+2})`.
    #[serde(rename = "T_r0")]
    Single,
}

impl Statistic {
    pub const ALL: [Statistic; 2] = [Statistic::Max, Statistic::Single];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Max => "T",
            Statistic::Single => "T_r0",
        }
    }

    /// Name of the Wishart reference statistic with the same arithmetic.
    pub fn reference_name(self) -> &'static str {
        match self {
            Statistic::Max => "G1",
            Statistic::Single => "G2",
        }
    }
}

/// A statistic value together with the exact-tie flag (set when some ratio
/// was `0/0` and counted as zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatValue {
    pub value: f64,
    pub tie: bool,
}

/// `num / den` with the conventions for degenerate gaps: a positive
/// numerator over a zero denominator is `+∞`, `0/0` is zero (flagged).
fn gap_ratio(num: f64, den: f64) -> StatValue {
    if den > 0.0 {
        StatValue {
            value: num / den,
            tie: false,
        }
    } else if num > 0.0 {
        StatValue {
            value: f64::INFINITY,
            tie: false,
        }
    } else {
        StatValue {
            value: 0.0,
            tie: true,
        }
    }
}

fn check_len(values: &[f64], r0: usize, r_star: usize) -> Result<()> {
    if r_star <= r0 {
        return Err(invalid_param(format!(
            "r* = {r_star} must exceed r0 = {r0}"
        )));
    }
    if values.len() < r_star + 2 {
        return Err(invalid_param(format!(
            "{} eigenvalues supplied but r* + 2 = {} are needed",
            values.len(),
            r_star + 2
        )));
    }
    Ok(())
}

/// Evaluates `which` on a descending spectrum.
pub fn evaluate(values: &[f64], r0: usize, r_star: usize, which: Statistic) -> Result<StatValue> {
    check_len(values, r0, r_star)?;
    // 0-based: gap(i) = λ_{i+1} − λ_{i+2} in 1-based notation
    let gap = |i: usize| values[i] - values[i + 1];
    Ok(match which {
        Statistic::Max => {
            let mut best = StatValue {
                value: f64::NEG_INFINITY,
                tie: false,
            };
            for i in r0..r_star {
                let r = gap_ratio(gap(i), gap(i + 1));
                best.tie |= r.tie;
                if r.value > best.value {
                    best.value = r.value;
                }
            }
            best
        }
        Statistic::Single => gap_ratio(gap(r0), gap(r_star)),
    })
}

pub fn stat_t(values: &[f64], r0: usize, r_star: usize) -> Result<f64> {
    Ok(evaluate(values, r0, r_star, Statistic::Max)?.value)
}

pub fn stat_t_r0(values: &[f64], r0: usize, r_star: usize) -> Result<f64> {
    Ok(evaluate(values, r0, r_star, Statistic::Single)?.value)
}

/// The Wishart reference statistics: `G1` (`which = Max`) and `G2`
/// (`which = Single`) with `k = r* − r0`.
pub fn stat_g(values: &[f64], k: usize, which: Statistic) -> Result<f64> {
    if k == 0 {
        return Err(invalid_param("k must be positive"));
    }
    Ok(evaluate(values, 0, k, which)?.value)
}

/// Parameters of a single test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub r0: usize,
    pub r_star: usize,
    pub level: f64,
}

impl TestConfig {
    pub const DEFAULT_LEVEL: f64 = 0.1;

    pub fn new(r0: usize, r_star: usize, level: f64) -> Result<Self> {
        if r_star <= r0 {
            return Err(invalid_param(format!(
                "r* = {r_star} must exceed r0 = {r0}"
            )));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(invalid_param(format!("level {level} is outside (0, 1)")));
        }
        Ok(Self { r0, r_star, level })
    }

    pub fn k(&self) -> usize {
        self.r_star - self.r0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub r0: usize,
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    pub which: Statistic,
}

/// Rejects exactly when the statistic exceeds the critical value.
pub fn decide(statistic: f64, critical: f64) -> bool {
    statistic > critical
}

/// Critical values for the sequential estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    /// One threshold per `r0 = 0, 1, …` (the reference distribution depends
    /// on `r* − r0`).
    PerR0(Vec<f64>),
    /// A single threshold for every step.
    Constant(f64),
}

impl Thresholds {
    pub fn get(&self, r0: usize) -> Result<f64> {
        match self {
            Thresholds::PerR0(v) => v
                .get(r0)
                .copied()
                .ok_or_else(|| invalid_param(format!("no threshold supplied for r0 = {r0}"))),
            Thresholds::Constant(c) => Ok(*c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub r_hat: usize,
    /// False when every step up to `r_max` rejected; `r_hat` is then
    /// `r_max + 1`.
    pub found: bool,
    pub trace: Vec<TestResult>,
}

/// Sequential testing: the smallest `r0 ≤ r_max` whose statistic does not
/// exceed its threshold.
pub fn estimate_r(
    values: &[f64],
    r_max: usize,
    r_star: usize,
    thresholds: &Thresholds,
    which: Statistic,
) -> Result<Estimate> {
    if r_max >= r_star {
        return Err(invalid_param(format!(
            "r_max = {r_max} must be below r* = {r_star}"
        )));
    }
    if let Thresholds::PerR0(v) = thresholds {
        if v.len() <= r_max {
            return Err(invalid_param(format!(
                "{} thresholds supplied but r_max = {r_max} needs {}",
                v.len(),
                r_max + 1
            )));
        }
    }
    let mut trace = Vec::with_capacity(r_max + 1);
    for r0 in 0..=r_max {
        let statistic = evaluate(values, r0, r_star, which)?.value;
        let critical = thresholds.get(r0)?;
        let reject = decide(statistic, critical);
        trace.push(TestResult {
            r0,
            statistic,
            critical,
            reject,
            which,
        });
        if !reject {
            return Ok(Estimate {
                r_hat: r0,
                found: true,
                trace,
            });
        }
    }
    Ok(Estimate {
        r_hat: r_max + 1,
        found: false,
        trace,
    })
}

/// Writes an estimator trace as CSV `r0,statistic,critical,reject`.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TestResult]) -> Result<()> {
    writeln!(out, "r0,statistic,critical,reject")?;
    for t in trace {
        writeln!(out, "{},{},{},{}", t.r0, t.statistic, t.critical, t.reject)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: [f64; 6] = [10.0, 5.0, 4.0, 3.0, 2.0, 1.0];

    #[test]
    fn direct_evaluation() {
        assert_eq!(stat_t(&SPEC, 0, 2).unwrap(), 5.0);
        assert_eq!(stat_t_r0(&SPEC, 0, 2).unwrap(), 5.0);
        assert_eq!(
            stat_g(&[4.0, 3.0, 2.0, 1.0], 1, Statistic::Max).unwrap(),
            1.0
        );
    }

    #[test]
    fn equal_gaps_give_one() {
        let s = [6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        for (r0, rs) in [(0, 1), (0, 4), (1, 3), (2, 4)] {
            assert_eq!(stat_t(&s, r0, rs).unwrap(), 1.0);
            assert_eq!(stat_t_r0(&s, r0, rs).unwrap(), 1.0);
        }
    }

    #[test]
    fn degenerate_gaps() {
        let v = evaluate(&[3.0, 2.0, 1.0, 1.0], 0, 2, Statistic::Max).unwrap();
        assert_eq!(v.value, f64::INFINITY);
        let v = evaluate(&[3.0, 3.0, 3.0, 1.0], 0, 1, Statistic::Single).unwrap();
        assert_eq!(
            v,
            StatValue {
                value: 0.0,
                tie: true
            }
        );
    }

    #[test]
    fn too_short_spectrum() {
        assert!(stat_t(&[3.0, 2.0, 1.0], 0, 2).is_err());
        assert!(stat_t(&SPEC, 2, 2).is_err());
        assert!(stat_g(&SPEC, 0, Statistic::Max).is_err());
    }

    #[test]
    fn decisions() {
        assert!(decide(5.0, 4.77));
        assert!(decide(f64::INFINITY, 1e300));
        assert!(!decide(1.0, 4.77));
    }

    #[test]
    fn estimator_stops_at_first_acceptance() {
        let mut s = vec![100.0, 50.0, 4.01, 4.005, 4.002, 4.001];
        s.extend((1..20).map(|i| 4.001 - 1e-3 * i as f64));
        let table = Thresholds::PerR0(vec![7.86, 6.94, 6.37, 5.68, 4.77]);
        for which in Statistic::ALL {
            let est = estimate_r(&s, 4, 5, &table, which).unwrap();
            assert_eq!(est.r_hat, 2, "{which:?}: {:?}", est.trace);
            assert!(est.found);
            assert_eq!(est.trace.len(), 3);
        }
    }

    #[test]
    fn estimator_single_step_and_errors() {
        let est = estimate_r(&SPEC, 0, 2, &Thresholds::Constant(10.0), Statistic::Max).unwrap();
        assert_eq!((est.r_hat, est.trace.len()), (0, 1));
        let est = estimate_r(&SPEC, 0, 2, &Thresholds::Constant(1.0), Statistic::Max).unwrap();
        assert_eq!((est.r_hat, est.found), (1, false));
        assert!(estimate_r(&SPEC, 1, 2, &Thresholds::PerR0(vec![1.0]), Statistic::Max).is_err());
        assert!(estimate_r(&SPEC, 2, 2, &Thresholds::Constant(1.0), Statistic::Max).is_err());
    }

    #[test]
    fn trace_csv() {
        let est = estimate_r(&SPEC, 0, 2, &Thresholds::Constant(10.0), Statistic::Single).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &est.trace).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "r0,statistic,critical,reject\n0,5,10,false\n"
        );
    }
}
