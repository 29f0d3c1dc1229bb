//! GOE and Wishart reference ensembles.
//!
//! Besides the dense generators, both ensembles have tridiagonal models with
//! the same eigenvalue distribution (Dumitriu–Edelman), which makes the
//! large Monte Carlo runs cheap: only the top few eigenvalues are extracted,
//! by Sturm bisection.

use nalgebra::DMatrix;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{invalid_param, invalid_shape, Result};
use crate::rng::{stream, StreamRng};
use crate::spectra::{gram_eigs, Spectrum, SymTridiagonal};

/// Haar-distributed orthogonal matrix from the QR factorization of an iid
/// Gaussian matrix, with the signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal(dim: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

/// `H = (X + Xᵀ)/√2` with `X` iid `N(0, 1/p)`, so the spectrum has its right
/// edge at 2.
pub fn gen_goe(p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(invalid_shape(format!(
            "GOE dimension {p} must be at least 2"
        )));
    }
    let mut rng = stream(seed, 0);
    let sd = 1.0 / (p as f64).sqrt();
    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let a: f64 = StandardNormal.sample(&mut rng);
            let v = if i == j {
                std::f64::consts::SQRT_2 * sd * a
            } else {
                let b: f64 = StandardNormal.sample(&mut rng);
                sd * (a + b) / std::f64::consts::SQRT_2
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Eigenvalues of `GGᵀ` with `G` a `p × n` matrix of iid `N(0, 1)` entries.
pub fn gen_wishart(p: usize, n: usize, seed: u64) -> Result<Spectrum> {
    if p == 0 || n == 0 {
        return Err(invalid_shape("empty Wishart dimensions"));
    }
    if p > n {
        return Err(invalid_shape(format!("p = {p} exceeds n = {n}")));
    }
    let mut rng = stream(seed, 0);
    let g = DMatrix::from_fn(p, n, |_, _| StandardNormal.sample(&mut rng));
    gram_eigs(&g)
}

fn chi(dof: usize, rng: &mut StreamRng) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .sample(rng)
        .sqrt()
}

/// The `k` largest eigenvalues of a `W_p(I, n)` Wishart matrix, descending.
///
/// Uses the bidiagonal model `B` with diagonal `χ_n, …, χ_{n-p+1}` and
/// subdiagonal `χ_{p-1}, …, χ_1`, whose `BBᵀ` has the Wishart spectrum.
/// When `p > n` the nonzero spectrum is that of the `n × n` companion and the
/// remaining eigenvalues are zero.
pub fn wishart_top_eigenvalues(
    p: usize,
    n: usize,
    k: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if p == 0 || n == 0 {
        return Err(invalid_shape("empty Wishart dimensions"));
    }
    if k == 0 {
        return Err(invalid_param("k must be positive"));
    }
    let (m, dof) = if p <= n { (p, n) } else { (n, p) };
    let diag_b: Vec<f64> = (0..m).map(|i| chi(dof - i, rng)).collect();
    let sub_b: Vec<f64> = (1..m).map(|i| chi(m - i, rng)).collect();
    let diag: Vec<f64> = (0..m)
        .map(|i| {
            let below = if i > 0 { sub_b[i - 1] } else { 0.0 };
            diag_b[i] * diag_b[i] + below * below
        })
        .collect();
    let off: Vec<f64> = (0..m.saturating_sub(1))
        .map(|i| diag_b[i] * sub_b[i])
        .collect();
    let mut top = SymTridiagonal::new(diag, off)?.top_eigenvalues(k);
    top.iter_mut().for_each(|v| *v = v.max(0.0));
    top.resize(k.min(p), 0.0);
    Ok(top)
}

/// The `k` largest eigenvalues of a GOE matrix normalized as in [`gen_goe`].
pub fn goe_top_eigenvalues(p: usize, k: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(invalid_shape(format!(
            "GOE dimension {p} must be at least 2"
        )));
    }
    let scale_diag = (2.0 / p as f64).sqrt();
    let scale_off = 1.0 / (p as f64).sqrt();
    let diag: Vec<f64> = (0..p)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale_diag * g
        })
        .collect();
    let off: Vec<f64> = (1..p).map(|i| scale_off * chi(p - i, rng)).collect();
    Ok(SymTridiagonal::new(diag, off)?.top_eigenvalues(k))
}
