//! Fixtures shared by the benchmarks.

use gram_edge::model::{NoiseModel, ProfileNoise};
use gram_edge::rng::stream;
use gram_edge::{Setting, VarianceProfile};
use nalgebra::DMatrix;

/// A `p × n` matrix with iid `N(0, 1/n)` entries.
pub fn white_noise(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let profile = VarianceProfile::white(p, n).expect("positive dimensions");
    ProfileNoise::new(profile).sample(&mut stream(seed, 0))
}

/// One draw from a simulation setting.
pub fn setting_noise(setting: Setting, p: usize, n: usize, seed: u64) -> DMatrix<f64> {
    setting
        .noise_model(p, n, seed)
        .expect("valid dimensions")
        .sample(&mut stream(seed, 0))
}
