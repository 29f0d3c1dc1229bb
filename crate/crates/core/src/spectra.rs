//! Descending eigenvalue spectra of Gram and symmetric matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real eigenvalues sorted in descending order (ties allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Sorts `values` into descending order. Non-finite values are rejected.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite eigenvalue {bad}")));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values })
    }

    /// Accepts values that are already in descending order.
    pub fn from_descending(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite eigenvalue {bad}")));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "values are not in descending order".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `k` largest eigenvalues (fewer if the spectrum is shorter).
    pub fn top(&self, k: usize) -> &[f64] {
        &self.values[..k.min(self.values.len())]
    }

    pub fn largest(&self) -> Option<f64> {
        self.values.first().copied()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Empirical Stieltjes transform `p^{-1} Σ 1/(d_i - z)`.
    pub fn stieltjes(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        let p = self.values.len() as f64;
        self.values
            .iter()
            .map(|&d| 1.0 / (d - z))
            .sum::<num_complex::Complex64>()
            / p
    }
}

impl TryFrom<Vec<f64>> for Spectrum {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::from_unsorted(values)
    }
}

impl From<Spectrum> for Vec<f64> {
    fn from(s: Spectrum) -> Self {
        s.values
    }
}

/// Eigenvalues of `Y Yᵀ` computed as squared singular values of `Y`.
///
/// Returns `p` values. When `p > n` the trailing `p - n` eigenvalues are
/// exactly zero.
pub fn gram_eigs(y: &DMatrix<f64>) -> Result<Spectrum> {
    let (p, n) = y.shape();
    if p == 0 || n == 0 {
        return Err(Error::InvalidShape(format!("empty {p}x{n} matrix")));
    }
    if let Some((idx, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        // nalgebra storage is column-major
        return Err(Error::InvalidInput(format!(
            "non-finite entry {v} at ({}, {})",
            idx % p,
            idx / p
        )));
    }
    let sv = y.singular_values();
    let mut values: Vec<f64> = sv.iter().map(|s| s * s).collect();
    values.resize(p, 0.0);
    Spectrum::from_unsorted(values)
}

/// The `k` largest eigenvalues of `Y Yᵀ`, descending, padded with zeros
/// beyond `min(p, n)`.
///
/// Forms the Gram matrix on the smaller side, reduces it to tridiagonal form
/// and bisects for the top of the spectrum only. Much cheaper than
/// [`gram_eigs`] when `k` is small.
pub fn gram_top_eigs(y: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let (p, n) = y.shape();
    if p == 0 || n == 0 {
        return Err(Error::InvalidShape(format!("empty {p}x{n} matrix")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let gram = if p <= n {
        y * y.transpose()
    } else {
        y.transpose() * y
    };
    let (diag, off) = nalgebra::linalg::SymmetricTridiagonal::new(gram).unpack_tridiagonal();
    let tri = SymTridiagonal::new(
        diag.iter().copied().collect(),
        off.iter().copied().collect(),
    )?;
    let mut top = tri.top_eigenvalues(k);
    top.iter_mut().for_each(|v| *v = v.max(0.0));
    top.resize(k.min(p), 0.0);
    Ok(top)
}

/// Full spectrum of a real symmetric matrix, descending.
pub fn sym_eigs_desc(h: &DMatrix<f64>) -> Result<Spectrum> {
    let (m, m2) = h.shape();
    if m != m2 {
        return Err(Error::InvalidShape(format!(
            "{m}x{m2} matrix is not square"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidShape("empty matrix".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry".into()));
    }
    let scale = h.amax().max(1.0);
    for i in 0..m {
        for j in (i + 1)..m {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let values = h.symmetric_eigenvalues();
    Spectrum::from_unsorted(values.iter().copied().collect())
}

/// Symmetric tridiagonal matrix stored as its diagonal and first
/// off-diagonal.
#[derive(Debug, Clone)]
pub struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::InvalidShape(format!(
                "tridiagonal with {} diagonal and {} off-diagonal entries",
                diag.len(),
                off.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin interval containing the spectrum.
    fn bounds(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        let pad = 1e-12 * (hi.abs().max(lo.abs())).max(1.0);
        (lo - pad, hi + pad)
    }

    /// Number of eigenvalues strictly less than `x` (Sturm count).
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.diag.len() {
            let b = self.off[i - 1];
            q = self.diag[i] - x - b * b / q;
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// The `k` largest eigenvalues, descending, by bisection on Sturm counts.
    pub fn top_eigenvalues(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        let (glo, ghi) = self.bounds();
        let scale = glo.abs().max(ghi.abs()).max(f64::MIN_POSITIVE);
        let max_off2 = self.off.iter().map(|b| b * b).fold(0.0, f64::max);
        let pivmin = (f64::MIN_POSITIVE * max_off2.max(1.0)).max(f64::MIN_POSITIVE);
        // lower[j] / upper[j] bracket the (j+1)-th largest eigenvalue.
        let mut lower = vec![glo; k];
        let mut upper = vec![ghi; k];
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let (mut lo, mut hi) = (lower[j], upper[j]);
            while hi - lo > 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) + 1e-300 * scale {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let above = n - self.count_below(mid, pivmin);
                for (idx, (l, u)) in lower.iter_mut().zip(upper.iter_mut()).enumerate().skip(j) {
                    if idx < above {
                        *l = l.max(mid);
                    } else {
                        *u = u.min(mid);
                    }
                }
                lo = lower[j];
                hi = upper[j];
            }
            out.push(0.5 * (lo + hi));
        }
        out
    }
}
