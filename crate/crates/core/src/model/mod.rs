//! Signal-plus-noise data model: variance profiles, low-rank signals,
//! heterogeneous noise generators and reference ensembles.

mod ensembles;
mod noise;

pub use ensembles::{
    gen_goe, gen_wishart, goe_top_eigenvalues, haar_orthogonal, wishart_top_eigenvalues,
};
pub use noise::{
    gen_banded_noise, gen_doubly_heteroscedastic, gen_sparse_noise, BandedNoise,
    DoublyHeteroscedastic, NoiseModel, ProfileNoise, SparseNoise,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, invalid_shape, Result};

/// Per-entry noise variances `s_ij = Var(y_ij)` of a `p × n` data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    s: DMatrix<f64>,
}

impl VarianceProfile {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() == 0 || s.ncols() == 0 {
            return Err(invalid_shape("variance profile must be non-empty"));
        }
        if let Some(v) = s.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid_param(format!(
                "variance entry {v} is not a finite nonnegative number"
            )));
        }
        Ok(Self { s })
    }

    /// `s_ij = value` for every entry.
    pub fn constant(p: usize, n: usize, value: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(p, n, value))
    }

    /// The white-noise profile `s_ij = 1/n`.
    pub fn white(p: usize, n: usize) -> Result<Self> {
        Self::constant(p, n, 1.0 / n as f64)
    }

    /// Separable profile `s_ij = a_i b_j / n`.
    pub fn separable(a: &[f64], b: &[f64]) -> Result<Self> {
        let n = b.len() as f64;
        Self::new(DMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j] / n))
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }

    pub fn n(&self) -> usize {
        self.s.ncols()
    }

    /// Aspect ratio `p/n`.
    pub fn c_n(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.s
    }

    /// Maximum of the ℓ∞ operator norms of `S` and `Sᵀ`, i.e. the largest
    /// row or column sum.
    pub fn frak_m(&self) -> f64 {
        let rows = self.s.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        let cols = self.s.column_iter().map(|c| c.sum()).fold(0.0, f64::max);
        rows.max(cols)
    }

    /// `σ² S`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.s * factor)
    }

    /// Whether `tau <= p/n <= 1`.
    pub fn aspect_ok(&self, tau: f64) -> bool {
        let c = self.c_n();
        tau <= c && c <= 1.0
    }
}

/// Rank-`r` mean matrix `R = Σ_k σ_k u_k v_kᵀ` kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    p: usize,
    n: usize,
    strengths: Vec<f64>,
    left: Vec<DVector<f64>>,
    right: Vec<DVector<f64>>,
}

const ORTHONORMAL_TOL: f64 = 1e-10;

fn check_orthonormal(vectors: &[DVector<f64>], side: &str) -> Result<()> {
    for (a, u) in vectors.iter().enumerate() {
        for (b, v) in vectors.iter().enumerate().skip(a) {
            let target = if a == b { 1.0 } else { 0.0 };
            if (u.dot(v) - target).abs() > ORTHONORMAL_TOL {
                return Err(invalid_param(format!(
                    "{side} vectors {a} and {b} are not orthonormal"
                )));
            }
        }
    }
    Ok(())
}

impl SignalSpec {
    /// Builds a signal from strengths and singular vectors. Triples are
    /// reordered so that strengths are descending.
    pub fn new(
        p: usize,
        n: usize,
        strengths: Vec<f64>,
        left: Vec<DVector<f64>>,
        right: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if strengths.len() != left.len() || strengths.len() != right.len() {
            return Err(invalid_param(
                "strengths and singular vectors differ in count",
            ));
        }
        if let Some(s) = strengths.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(invalid_param(format!(
                "signal strength {s} must be positive"
            )));
        }
        if left.iter().any(|u| u.len() != p) || right.iter().any(|v| v.len() != n) {
            return Err(invalid_shape(format!(
                "singular vectors do not match {p}x{n}"
            )));
        }
        check_orthonormal(&left, "left")?;
        check_orthonormal(&right, "right")?;
        let mut order: Vec<usize> = (0..strengths.len()).collect();
        order.sort_by(|&a, &b| strengths[b].total_cmp(&strengths[a]));
        Ok(Self {
            p,
            n,
            strengths: order.iter().map(|&k| strengths[k]).collect(),
            left: order.iter().map(|&k| left[k].clone()).collect(),
            right: order.iter().map(|&k| right[k].clone()).collect(),
        })
    }

    /// No signal (`r = 0`).
    pub fn none(p: usize, n: usize) -> Self {
        Self {
            p,
            n,
            strengths: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
        }
    }

    /// `R = Σ_k d_k e_{k,p} e_{k,n}ᵀ` along the canonical coordinate axes.
    pub fn canonical(p: usize, n: usize, strengths: &[f64]) -> Result<Self> {
        let r = strengths.len();
        if r > p.min(n) {
            return Err(invalid_shape(format!("rank {r} exceeds min({p}, {n})")));
        }
        let e = |dim: usize, k: usize| {
            let mut v = DVector::zeros(dim);
            v[k] = 1.0;
            v
        };
        Self::new(
            p,
            n,
            strengths.to_vec(),
            (0..r).map(|k| e(p, k)).collect(),
            (0..r).map(|k| e(n, k)).collect(),
        )
    }

    pub fn rank(&self) -> usize {
        self.strengths.len()
    }

    pub fn strengths(&self) -> &[f64] {
        &self.strengths
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }

    /// Smallest nontrivial singular value `σ_r(R)`.
    pub fn smallest_strength(&self) -> Option<f64> {
        self.strengths.last().copied()
    }

    pub fn left_vectors(&self) -> &[DVector<f64>] {
        &self.left
    }

    pub fn right_vectors(&self) -> &[DVector<f64>] {
        &self.right
    }
}

/// Where a data matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    DoublyHet,
    Sparse,
    Banded,
    Custom,
}

/// A sampled `p × n` data (or noise) matrix with the seed that produced it.
#[derive(Debug, Clone)]
pub struct DataMatrixSample {
    pub y: DMatrix<f64>,
    pub seed: u64,
    pub provenance: Provenance,
}

/// Materializes `R = Σ_k σ_k u_k v_kᵀ`.
pub fn gen_signal_matrix(spec: &SignalSpec, p: usize, n: usize) -> Result<DMatrix<f64>> {
    if spec.dims() != (p, n) {
        return Err(invalid_shape(format!(
            "signal is {}x{} but {p}x{n} was requested",
            spec.p, spec.n
        )));
    }
    let mut r = DMatrix::zeros(p, n);
    for ((s, u), v) in spec.strengths.iter().zip(&spec.left).zip(&spec.right) {
        r.ger(*s, u, v, 1.0);
    }
    Ok(r)
}

/// Outcome of the supercritical-signal check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupercriticalReport {
    pub frak_m: f64,
    /// `(4 + τ) √𝔐`.
    pub threshold: f64,
    pub smallest_strength: Option<f64>,
    pub pass: bool,
}

/// Default `τ` for the supercritical margin.
pub const DEFAULT_SUPERCRITICAL_TAU: f64 = 0.1;

/// Checks `σ_r(R) > (4 + τ) √𝔐`. A rank-zero signal passes vacuously.
pub fn check_supercritical(
    spec: &SignalSpec,
    profile: &VarianceProfile,
    tau: f64,
) -> SupercriticalReport {
    let frak_m = profile.frak_m();
    let threshold = (4.0 + tau) * frak_m.sqrt();
    let smallest = spec.smallest_strength();
    SupercriticalReport {
        frak_m,
        threshold,
        smallest_strength: smallest,
        pass: smallest.is_none_or(|s| s > threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_zero_signal_is_zero_matrix() {
        let r = gen_signal_matrix(&SignalSpec::none(3, 4), 3, 4).unwrap();
        assert_eq!(r, DMatrix::zeros(3, 4));
    }

    #[test]
    fn canonical_rank_one_has_single_entry() {
        let spec = SignalSpec::canonical(5, 7, &[18.0]).unwrap();
        let r = gen_signal_matrix(&spec, 5, 7).unwrap();
        assert_eq!(r[(0, 0)], 18.0);
        assert_eq!(r.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn strengths_are_sorted_descending() {
        let spec = SignalSpec::canonical(5, 7, &[14.0, 18.0, 16.0]).unwrap();
        assert_eq!(spec.strengths(), &[18.0, 16.0, 14.0]);
        let r = gen_signal_matrix(&spec, 5, 7).unwrap();
        // the triple (14, e0, e0) moved with its vectors
        assert_eq!(r[(0, 0)], 14.0);
        assert_eq!(r[(1, 1)], 18.0);
    }

    #[test]
    fn non_orthonormal_vectors_are_rejected() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 1.0]);
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let v2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let err = SignalSpec::new(2, 3, vec![1.0, 2.0], vec![u, w], vec![v, v2]);
        assert!(err.is_err());
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let spec = SignalSpec::canonical(3, 4, &[1.0]).unwrap();
        assert!(gen_signal_matrix(&spec, 4, 4).is_err());
    }

    #[test]
    fn supercritical_vacuous_for_rank_zero() {
        let profile = VarianceProfile::white(10, 10).unwrap();
        let rep = check_supercritical(&SignalSpec::none(10, 10), &profile, 0.1);
        assert!(rep.pass);
        assert!((rep.threshold - 4.1).abs() < 1e-12);
    }

    #[test]
    fn white_profile_has_unit_frak_m() {
        let profile = VarianceProfile::white(50, 50).unwrap();
        assert!((profile.frak_m() - 1.0).abs() < 1e-12);
        let rep = check_supercritical(
            &SignalSpec::canonical(50, 50, &[4.0]).unwrap(),
            &profile,
            0.1,
        );
        assert!(!rep.pass);
    }

    #[test]
    fn negative_variance_is_rejected() {
        assert!(VarianceProfile::new(DMatrix::from_element(2, 2, -1.0)).is_err());
    }
}
