//! Independent oracles for the generators, the edge solvers and the
//! estimator.

use gram_edge::dyson::{
    check_assumptions, check_eta_regular, classical_locations, find_edge, AssumptionConfig,
    Condition, EdgeConfig, RegularityConfig,
};
use gram_edge::freeconv::{find_rfc_edge, RfcQuery};
use gram_edge::model::{
    check_supercritical, gen_banded_noise, gen_doubly_heteroscedastic, gen_signal_matrix,
    gen_sparse_noise, BandedNoise, DoublyHeteroscedastic, NoiseModel, ProfileNoise, SparseNoise,
    DEFAULT_SUPERCRITICAL_TAU,
};
use gram_edge::montecarlo::null_strengths;
use gram_edge::rng::stream;
use gram_edge::spectra::{gram_eigs, gram_top_eigs};
use gram_edge::stats::{estimate_r, Statistic};
use gram_edge::{CriticalTable, SignalSpec, VarianceProfile};
use nalgebra::DMatrix;

#[test]
fn diagonal_factors_give_the_product_variance() {
    let (p, n) = (100, 200);
    let model = DoublyHeteroscedastic::diagonal(vec![1.0; p], vec![2.0; n]).unwrap();
    let reps = 10_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..reps {
        let z = model.sample(&mut stream(3, i));
        let v = z[(7, 11)] * z[(7, 11)];
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / reps as f64;
    let se = ((sum_sq / reps as f64 - mean * mean) / reps as f64).sqrt();
    let target = 2.0 / n as f64;
    assert!(
        (mean - target).abs() < 3.0 * se,
        "{mean} vs {target} (se {se})"
    );
}

#[test]
fn setting_one_sample_is_valid() {
    let (p, n) = (200, 200);
    let (a, b) = DoublyHeteroscedastic::setting_one_spectra(p, n);
    assert_eq!(a.iter().filter(|v| **v == 1.0).count(), 100);
    assert_eq!(b.iter().filter(|v| **v == 5.0).count(), 100);
    let (sample, profile) = gen_doubly_heteroscedastic(p, n, &a, &b, 4).unwrap();
    assert_eq!(sample.y.shape(), (p, n));
    assert!(sample.y.iter().all(|v| v.is_finite()));
    // the Frobenius norm concentrates around the total variance
    let total: f64 = profile.matrix().sum();
    let frob = sample.y.norm_squared();
    assert!((frob / total - 1.0).abs() < 0.05, "{frob} vs {total}");
}

#[test]
fn sparse_zero_fraction() {
    let n = 200;
    let prob = SparseNoise::default_prob(n);
    let (sample, _) = gen_sparse_noise(n, n, prob, 8).unwrap();
    let total = (n * n) as f64;
    let zeros = sample.y.iter().filter(|v| **v == 0.0).count() as f64;
    let expected = 1.0 - prob;
    let se = (expected * prob / total).sqrt();
    assert!(
        (zeros / total - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        zeros / total
    );
}

#[test]
fn banded_profile_bounds() {
    let (p, n) = (60, 80);
    for seed in 0..5 {
        let (_, profile) = gen_banded_noise(p, n, 5, seed).unwrap();
        let s = profile.matrix();
        for i in 0..p {
            for j in 0..n {
                let scaled = s[(i, j)] * n as f64;
                if i.abs_diff(j) <= 5 {
                    assert!((2.0..=3.0).contains(&scaled), "({i},{j}) {scaled}");
                } else {
                    assert_eq!(scaled, 1.0);
                }
            }
        }
    }
    let (_, flat) = gen_banded_noise(p, n, 0, 1).unwrap();
    assert!(flat
        .matrix()
        .iter()
        .enumerate()
        .all(|(k, v)| (k % p == k / p) || *v * n as f64 == 1.0));
}

#[test]
fn null_signal_has_the_prescribed_singular_values() {
    let strengths = null_strengths(3).unwrap();
    assert_eq!(strengths, vec![18.0, 16.0, 14.0]);
    let spec = SignalSpec::canonical(100, 200, &strengths).unwrap();
    let r = gen_signal_matrix(&spec, 100, 200).unwrap();
    let sv = gram_top_eigs(&r, 4).unwrap();
    for (got, want) in sv.iter().zip([18.0, 16.0, 14.0, 0.0]) {
        assert!((got.sqrt() - want).abs() < 1e-10, "{sv:?}");
    }

    let (a, b) = DoublyHeteroscedastic::setting_one_spectra(100, 200);
    let profile = DoublyHeteroscedastic::diagonal(a, b)
        .unwrap()
        .effective_profile();
    let report = check_supercritical(&spec, &profile, DEFAULT_SUPERCRITICAL_TAU);
    assert!(report.frak_m <= 10.0, "{}", report.frak_m);
    assert!(report.pass);
}

#[test]
fn marchenko_pastur_edges_for_several_ratios() {
    let cfg = EdgeConfig::default();
    for (p, n) in [(100, 400), (200, 400), (300, 300)] {
        let profile = VarianceProfile::white(p, n).unwrap();
        let edge = find_edge(&profile, &cfg).unwrap();
        let c = p as f64 / n as f64;
        let target = (1.0 + c.sqrt()).powi(2);
        assert!(
            (edge.lambda_plus - target).abs() < 1e-4,
            "c = {c}: {edge:?}"
        );
    }
    let scaled = VarianceProfile::separable(&vec![1.0; 100], &vec![2.0; 200]).unwrap();
    let edge = find_edge(&scaled, &cfg).unwrap();
    let target = 2.0 * (1.0 + 0.5f64.sqrt()).powi(2);
    assert!((edge.lambda_plus - target).abs() < 1e-4, "{edge:?}");
}

#[test]
fn banded_profile_meets_the_variance_bounds() {
    let profile = BandedNoise::new(200, 200, 5).unwrap().mean_profile();
    let report = check_assumptions(&profile, &AssumptionConfig::default());
    assert!(report.a2.pass);
    assert!((1.0..=3.0).contains(&report.a2.s_star), "{:?}", report.a2);
}

fn mp_quantiles(p: usize, n: usize) -> Vec<f64> {
    let profile = VarianceProfile::white(p, n).unwrap();
    let edge = find_edge(&profile, &EdgeConfig::default()).unwrap();
    classical_locations(&profile, &edge, p, 2000).unwrap().gamma
}

#[test]
fn regularity_of_quantile_spectra() {
    let p = 500;
    let d = mp_quantiles(p, p);
    let eta_star = (p as f64).powf(-2.0 / 3.0 + 0.05);
    let cfg = RegularityConfig::default();
    let report = check_eta_regular(&d, 1, eta_star, &cfg).unwrap();
    assert!(report.pass, "{report:?}");

    // an isolated top value has no square-root profile below it, while the
    // bulk edge behind it is regular
    let mut spiked = d.clone();
    spiked[0] = 10.0;
    let top = check_eta_regular(&spiked, 1, eta_star, &cfg).unwrap();
    assert!(!top.pass);
    assert!(top
        .violations
        .iter()
        .any(|v| v.condition == Condition::SquareRoot));
    let bulk = check_eta_regular(&spiked, 2, eta_star, &cfg).unwrap();
    assert!(bulk.pass, "{bulk:?}");
}

#[test]
fn free_convolution_of_zero_spectrum_at_half_ratio() {
    for t in [0.05, 0.3, 1.0] {
        let q = RfcQuery::new(vec![0.0; 200], 0.5, t).unwrap();
        let edge = find_rfc_edge(&q).unwrap();
        let target = t * (1.0 + 0.5f64.sqrt()).powi(2);
        assert!(
            (edge.lambda_plus_t - target).abs() < 1e-6 * target,
            "t = {t}: {edge:?}"
        );
    }
}

#[test]
fn free_convolution_tracks_the_matrix_model() {
    // the edge of (W + √t X)(W + √t X)ᵀ for a regular W moves with the
    // free-convolution edge
    let (p, n) = (400, 800);
    let d = mp_quantiles(p, n);
    let t = 0.5;
    let q = RfcQuery::new(d.clone(), p as f64 / n as f64, t).unwrap();
    let predicted = find_rfc_edge(&q).unwrap().lambda_plus_t;
    let w = DMatrix::from_fn(p, n, |i, j| if i == j { d[i].sqrt() } else { 0.0 });
    let x = ProfileNoise::new(VarianceProfile::white(p, n).unwrap()).sample(&mut stream(6, 0));
    let top = gram_eigs(&(w + x * t.sqrt())).unwrap().values()[0];
    assert!((top - predicted).abs() < 0.1, "{top} vs {predicted}");
}

#[test]
fn pure_noise_is_mostly_estimated_as_rank_zero() {
    let (p, n) = (100, 200);
    let table = CriticalTable::reference();
    let thresholds = table.thresholds(p, n, 5, Statistic::Single, 0.1).unwrap();
    let model = ProfileNoise::new(VarianceProfile::white(p, n).unwrap());
    let reps = 500;
    let zeros = (0..reps)
        .filter(|&i| {
            let y = model.sample(&mut stream(10, i));
            let top = gram_top_eigs(&y, 7).unwrap();
            estimate_r(&top, 4, 5, &thresholds, Statistic::Single)
                .unwrap()
                .r_hat
                == 0
        })
        .count();
    assert!(zeros as f64 >= 0.85 * reps as f64, "{zeros} of {reps}");
}
