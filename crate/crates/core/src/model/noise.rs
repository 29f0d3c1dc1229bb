//! The heterogeneous noise models used in the simulation studies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{haar_orthogonal, DataMatrixSample, Provenance, VarianceProfile};
use crate::error::{invalid_param, invalid_shape, Result};
use crate::rng::{stream, StreamRng};

/// A noise distribution that can be sampled repeatedly from a stream.
pub trait NoiseModel: Send + Sync {
    fn dims(&self) -> (usize, usize);

    fn provenance(&self) -> Provenance;

    /// Draws one `p × n` noise matrix together with the variance profile it
    /// was drawn from. Per-sample random variance parameters are redrawn on
    /// every call.
    fn sample_with_profile(&self, rng: &mut StreamRng) -> (DMatrix<f64>, VarianceProfile);

    fn sample(&self, rng: &mut StreamRng) -> DMatrix<f64> {
        self.sample_with_profile(rng).0
    }
}

fn gaussian_matrix(p: usize, n: usize, sd: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    // fill row-major so that the draw order does not depend on storage layout
    let mut m = DMatrix::zeros(p, n);
    for i in 0..p {
        for j in 0..n {
            let g: f64 = StandardNormal.sample(rng);
            m[(i, j)] = sd * g;
        }
    }
    m
}

/// Symmetric square root `U diag(√σ) Uᵀ`.
fn sqrt_factor(u: &DMatrix<f64>, spectrum: &[f64]) -> DMatrix<f64> {
    let d = DVector::from_iterator(spectrum.len(), spectrum.iter().map(|s| s.sqrt()));
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    scaled * u.transpose()
}

/// `Z = A^{1/2} 𝒩 B^{1/2}` with `𝒩` iid `N(0, 1/n)`.
///
/// `A` and `B` are fixed when the model is built; only `𝒩` is random per
/// sample.
#[derive(Debug, Clone)]
pub struct DoublyHeteroscedastic {
    spectrum_a: Vec<f64>,
    spectrum_b: Vec<f64>,
    // None when the factor is diagonal
    sqrt_a: Option<DMatrix<f64>>,
    sqrt_b: Option<DMatrix<f64>>,
}

fn validate_spectrum(values: &[f64], name: &str) -> Result<()> {
    if values.is_empty() {
        return Err(invalid_shape(format!("{name} spectrum is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(invalid_param(format!(
            "{name} spectrum entry {v} must be positive"
        )));
    }
    Ok(())
}

impl DoublyHeteroscedastic {
    /// Diagonal `A = diag(a)`, `B = diag(b)`.
    pub fn diagonal(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        validate_spectrum(&a, "A")?;
        validate_spectrum(&b, "B")?;
        Ok(Self {
            spectrum_a: a,
            spectrum_b: b,
            sqrt_a: None,
            sqrt_b: None,
        })
    }

    /// `A = U_A diag(a) U_Aᵀ`, `B = U_B diag(b) U_Bᵀ` with Haar orthogonal
    /// `U_A`, `U_B` drawn from `rng`.
    pub fn rotated(a: Vec<f64>, b: Vec<f64>, rng: &mut StreamRng) -> Result<Self> {
        validate_spectrum(&a, "A")?;
        validate_spectrum(&b, "B")?;
        let ua = haar_orthogonal(a.len(), rng);
        let ub = haar_orthogonal(b.len(), rng);
        let sqrt_a = sqrt_factor(&ua, &a);
        let sqrt_b = sqrt_factor(&ub, &b);
        Ok(Self {
            spectrum_a: a,
            spectrum_b: b,
            sqrt_a: Some(sqrt_a),
            sqrt_b: Some(sqrt_b),
        })
    }

    /// The spectra of simulation setting (I): `Σ_A` is half 1s and half 2s,
    /// `Σ_B` is a quarter 3s, a quarter 4s and half 5s.
    pub fn setting_one_spectra(p: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let a = (0..p).map(|i| if i < p / 2 { 1.0 } else { 2.0 }).collect();
        let b = (0..n)
            .map(|j| {
                if j < n / 4 {
                    3.0
                } else if j < n / 2 {
                    4.0
                } else {
                    5.0
                }
            })
            .collect();
        (a, b)
    }

    /// Variance profile of the equivalent diagonal model, `s_ij = a_i b_j / n`.
    pub fn effective_profile(&self) -> VarianceProfile {
        VarianceProfile::separable(&self.spectrum_a, &self.spectrum_b)
            .expect("validated spectra give a valid profile")
    }
}

impl NoiseModel for DoublyHeteroscedastic {
    fn dims(&self) -> (usize, usize) {
        (self.spectrum_a.len(), self.spectrum_b.len())
    }

    fn provenance(&self) -> Provenance {
        Provenance::DoublyHet
    }

    fn sample_with_profile(&self, rng: &mut StreamRng) -> (DMatrix<f64>, VarianceProfile) {
        let (p, n) = self.dims();
        let mut z = gaussian_matrix(p, n, 1.0 / (n as f64).sqrt(), rng);
        match &self.sqrt_a {
            Some(sa) => z = sa * z,
            None => {
                for (i, mut row) in z.row_iter_mut().enumerate() {
                    row *= self.spectrum_a[i].sqrt();
                }
            }
        }
        match &self.sqrt_b {
            Some(sb) => z *= sb,
            None => {
                for (j, mut col) in z.column_iter_mut().enumerate() {
                    col *= self.spectrum_b[j].sqrt();
                }
            }
        }
        (z, self.effective_profile())
    }
}

/// Draws Haar orthogonal factors and one noise matrix from `seed`.
///
/// The returned profile is the one of the equivalent diagonal model.
pub fn gen_doubly_heteroscedastic(
    p: usize,
    n: usize,
    spectrum_a: &[f64],
    spectrum_b: &[f64],
    seed: u64,
) -> Result<(DataMatrixSample, VarianceProfile)> {
    if spectrum_a.len() != p || spectrum_b.len() != n {
        return Err(invalid_shape(format!(
            "spectra of length {} and {} do not match {p}x{n}",
            spectrum_a.len(),
            spectrum_b.len()
        )));
    }
    if p > n {
        return Err(invalid_shape(format!("p = {p} exceeds n = {n}")));
    }
    let mut rng = stream(seed, 0);
    let model = DoublyHeteroscedastic::rotated(spectrum_a.to_vec(), spectrum_b.to_vec(), &mut rng)?;
    let (y, profile) = model.sample_with_profile(&mut rng);
    Ok((
        DataMatrixSample {
            y,
            seed,
            provenance: Provenance::DoublyHet,
        },
        profile,
    ))
}

/// Sparse noise `z_ij = h_ij w_ij`: `h_ij = (n·prob)^{-1/2}` with probability
/// `prob` and zero otherwise, `w_ij ~ N(0, α_i β_j)` with `α_i ~ U[1,2]`,
/// `β_j ~ U[3,4]`.
#[derive(Debug, Clone, Copy)]
pub struct SparseNoise {
    p: usize,
    n: usize,
    prob: f64,
}

impl SparseNoise {
    pub fn new(p: usize, n: usize, prob: f64) -> Result<Self> {
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(invalid_param(format!(
                "sparsity probability {prob} is outside (0, 1]"
            )));
        }
        if p == 0 || n == 0 {
            return Err(invalid_shape("empty noise matrix"));
        }
        Ok(Self { p, n, prob })
    }

    /// The default sparsity `n^{-1/4}`.
    pub fn default_prob(n: usize) -> f64 {
        (n as f64).powf(-0.25)
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }
}

impl NoiseModel for SparseNoise {
    fn dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Sparse
    }

    fn sample_with_profile(&self, rng: &mut StreamRng) -> (DMatrix<f64>, VarianceProfile) {
        let (p, n) = (self.p, self.n);
        let alpha: Vec<f64> = (0..p).map(|_| rng.gen_range(1.0..=2.0)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..=4.0)).collect();
        let h = 1.0 / (n as f64 * self.prob).sqrt();
        let mut z = DMatrix::zeros(p, n);
        for i in 0..p {
            for j in 0..n {
                let keep = self.prob >= 1.0 || rng.gen_bool(self.prob);
                let g: f64 = StandardNormal.sample(rng);
                if keep {
                    z[(i, j)] = h * (alpha[i] * beta[j]).sqrt() * g;
                }
            }
        }
        let profile = VarianceProfile::separable(&alpha, &beta).expect("positive factors");
        (z, profile)
    }
}

pub fn gen_sparse_noise(
    p: usize,
    n: usize,
    prob: f64,
    seed: u64,
) -> Result<(DataMatrixSample, VarianceProfile)> {
    let model = SparseNoise::new(p, n, prob)?;
    let (y, profile) = model.sample_with_profile(&mut stream(seed, 0));
    Ok((
        DataMatrixSample {
            y,
            seed,
            provenance: Provenance::Sparse,
        },
        profile,
    ))
}

/// Banded profile `s_ij = (1 + ν_ij 1{|i-j| <= bandwidth}) / n` with
/// `ν_ij ~ U[1,2]`, and Gaussian entries `z_ij ~ N(0, s_ij)`.
#[derive(Debug, Clone, Copy)]
pub struct BandedNoise {
    p: usize,
    n: usize,
    bandwidth: usize,
}

impl BandedNoise {
    pub const DEFAULT_BANDWIDTH: usize = 5;

    pub fn new(p: usize, n: usize, bandwidth: usize) -> Result<Self> {
        if p == 0 || n == 0 {
            return Err(invalid_shape("empty noise matrix"));
        }
        Ok(Self { p, n, bandwidth })
    }

    /// Draws only the variance profile.
    pub fn draw_profile(&self, rng: &mut StreamRng) -> VarianceProfile {
        let inv_n = 1.0 / self.n as f64;
        let mut s = DMatrix::from_element(self.p, self.n, inv_n);
        for i in 0..self.p {
            let lo = i.saturating_sub(self.bandwidth);
            let hi = (i + self.bandwidth).min(self.n.saturating_sub(1));
            for j in lo..=hi {
                if j < self.n {
                    let nu: f64 = rng.gen_range(1.0..=2.0);
                    s[(i, j)] = (1.0 + nu) * inv_n;
                }
            }
        }
        VarianceProfile::new(s).expect("positive variances")
    }
}

impl BandedNoise {
    /// The expected profile `(1 + 1.5 · 1{|i-j| <= bandwidth}) / n`.
    pub fn mean_profile(&self) -> VarianceProfile {
        let inv_n = 1.0 / self.n as f64;
        let s = DMatrix::from_fn(self.p, self.n, |i, j| {
            if i.abs_diff(j) <= self.bandwidth {
                2.5 * inv_n
            } else {
                inv_n
            }
        });
        VarianceProfile::new(s).expect("positive variances")
    }
}

impl NoiseModel for BandedNoise {
    fn dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Banded
    }

    fn sample_with_profile(&self, rng: &mut StreamRng) -> (DMatrix<f64>, VarianceProfile) {
        let profile = self.draw_profile(rng);
        let s = profile.matrix();
        let mut z = DMatrix::zeros(self.p, self.n);
        for i in 0..self.p {
            for j in 0..self.n {
                let g: f64 = StandardNormal.sample(rng);
                z[(i, j)] = s[(i, j)].sqrt() * g;
            }
        }
        (z, profile)
    }
}

pub fn gen_banded_noise(
    p: usize,
    n: usize,
    bandwidth: usize,
    seed: u64,
) -> Result<(DataMatrixSample, VarianceProfile)> {
    let model = BandedNoise::new(p, n, bandwidth)?;
    let (y, profile) = model.sample_with_profile(&mut stream(seed, 0));
    Ok((
        DataMatrixSample {
            y,
            seed,
            provenance: Provenance::Banded,
        },
        profile,
    ))
}

/// Independent Gaussian entries `z_ij ~ N(0, s_ij)` for a fixed profile.
#[derive(Debug, Clone)]
pub struct ProfileNoise {
    sd: DMatrix<f64>,
    profile: VarianceProfile,
}

impl ProfileNoise {
    pub fn new(profile: VarianceProfile) -> Self {
        let sd = profile.matrix().map(f64::sqrt);
        Self { sd, profile }
    }
}

impl NoiseModel for ProfileNoise {
    fn dims(&self) -> (usize, usize) {
        self.sd.shape()
    }

    fn provenance(&self) -> Provenance {
        Provenance::Custom
    }

    fn sample_with_profile(&self, rng: &mut StreamRng) -> (DMatrix<f64>, VarianceProfile) {
        let (p, n) = self.sd.shape();
        let mut z = gaussian_matrix(p, n, 1.0, rng);
        z.component_mul_assign(&self.sd);
        (z, self.profile.clone())
    }
}
