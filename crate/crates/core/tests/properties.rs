use gram_edge::dbm::interaction_sums;
use gram_edge::montecarlo::{ks_distance, upper_quantile};
use gram_edge::spectra::{gram_eigs, gram_top_eigs};
use gram_edge::stats::{estimate_r, evaluate, stat_g, Statistic, Thresholds};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Descending spectra with well-separated values.
fn spectrum(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|gaps| {
        let mut v = Vec::with_capacity(gaps.len() + 1);
        let mut x = 0.5;
        v.push(x);
        for g in gaps {
            x += g;
            v.push(x);
        }
        v.reverse();
        v
    })
}

fn design() -> impl Strategy<Value = (Vec<f64>, usize, usize)> {
    spectrum(3..14).prop_flat_map(|s| {
        let len = s.len();
        (Just(s), 1..len - 1).prop_flat_map(|(s, r_star)| (Just(s), 0..r_star, Just(r_star)))
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn statistics_are_scale_invariant(
        (s, r0, r_star) in design(),
        exp in -20i32..20,
        scale in 0.001f64..1000.0,
    ) {
        let pow2 = 2f64.powi(exp);
        for which in Statistic::ALL {
            let base = evaluate(&s, r0, r_star, which).unwrap().value;
            let exact: Vec<f64> = s.iter().map(|v| v * pow2).collect();
            prop_assert_eq!(evaluate(&exact, r0, r_star, which).unwrap().value, base);
            let scaled: Vec<f64> = s.iter().map(|v| v * scale).collect();
            let value = evaluate(&scaled, r0, r_star, which).unwrap().value;
            prop_assert!(rel_close(value, base, 1e-12), "{} vs {}", value, base);
        }
    }

    #[test]
    fn statistics_are_shift_invariant(
        (s, r0, r_star) in design(),
        shift in -100.0f64..100.0,
    ) {
        for which in Statistic::ALL {
            let base = evaluate(&s, r0, r_star, which).unwrap().value;
            let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
            let value = evaluate(&shifted, r0, r_star, which).unwrap().value;
            // gaps of size >= 0.01 lose at most ~1e-14 * 100 / 0.01 relative
            prop_assert!(rel_close(value, base, 1e-9), "{} vs {}", value, base);
        }
    }

    #[test]
    fn single_step_statistics_coincide(s in spectrum(3..12), r0 in 0usize..8) {
        prop_assume!(r0 + 3 <= s.len());
        let t = evaluate(&s, r0, r0 + 1, Statistic::Max).unwrap();
        let tr = evaluate(&s, r0, r0 + 1, Statistic::Single).unwrap();
        prop_assert_eq!(t, tr);
        prop_assert_eq!(
            stat_g(&s, 1, Statistic::Max).unwrap(),
            stat_g(&s, 1, Statistic::Single).unwrap()
        );
    }

    #[test]
    fn max_statistic_dominates_each_ratio((s, r0, r_star) in design()) {
        let t = evaluate(&s, r0, r_star, Statistic::Max).unwrap().value;
        for i in r0..r_star {
            let ratio = (s[i] - s[i + 1]) / (s[i + 1] - s[i + 2]);
            prop_assert!(t >= ratio);
        }
        prop_assert!(t > 0.0);
    }

    #[test]
    fn estimator_trace_is_consistent(
        (s, _, r_star) in design(),
        crit in prop::collection::vec(0.5f64..20.0, 12),
    ) {
        let r_max = r_star - 1;
        let thresholds = Thresholds::PerR0(crit[..r_star].to_vec());
        for which in Statistic::ALL {
            let est = estimate_r(&s, r_max, r_star, &thresholds, which).unwrap();
            let (last, rest) = est.trace.split_last().unwrap();
            prop_assert!(rest.iter().all(|t| t.reject));
            prop_assert_eq!(last.reject, !est.found);
            if est.found {
                prop_assert_eq!(est.r_hat, est.trace.len() - 1);
            } else {
                prop_assert_eq!(est.r_hat, r_max + 1);
                prop_assert_eq!(est.trace.len(), r_max + 1);
            }
        }
    }

    #[test]
    fn gram_spectrum_invariants(
        p in 1usize..8,
        n in 1usize..8,
        entries in prop::collection::vec(-3.0f64..3.0, 64),
    ) {
        let y = DMatrix::from_fn(p, n, |i, j| entries[i * 8 + j]);
        let spec = gram_eigs(&y).unwrap();
        let v = spec.values();
        prop_assert_eq!(v.len(), p);
        prop_assert!(v.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        let frob = y.norm_squared();
        let sum: f64 = v.iter().sum();
        prop_assert!((sum - frob).abs() <= 1e-10 * frob.max(1.0));

        let yt = gram_eigs(&y.transpose()).unwrap();
        for k in 0..p.min(n) {
            prop_assert!((v[k] - yt.values()[k]).abs() <= 1e-10 * v[0].max(1.0));
        }
        let top = gram_top_eigs(&y, p).unwrap();
        for (a, b) in top.iter().zip(v) {
            prop_assert!((a - b).abs() <= 1e-9 * v[0].max(1.0));
        }
    }

    #[test]
    fn interaction_sums_are_antisymmetric(s in spectrum(2..30)) {
        let sums = interaction_sums(&s);
        let total: f64 = sums.iter().sum();
        let scale: f64 = sums.iter().map(|x| x.abs()).sum();
        prop_assert!(total.abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn ks_distance_properties(
        a in prop::collection::vec(-5.0f64..5.0, 1..60),
        b in prop::collection::vec(-5.0f64..5.0, 1..60),
    ) {
        let d = ks_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_distance(&b, &a).unwrap());
        prop_assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn quantile_is_an_order_statistic(
        sample in prop::collection::vec(-5.0f64..5.0, 1..200),
        level in 0.01f64..0.99,
    ) {
        let q = upper_quantile(&sample, level).unwrap();
        prop_assert!(sample.contains(&q));
        let above = sample.iter().filter(|x| **x > q).count() as f64;
        prop_assert!(above <= level * sample.len() as f64 + 1e-9);
    }
}
