//! Empirical Tracy–Widom reference and edge-law checks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ks_distance, null_strengths, par_replicates, Progress, RunStamp, Setting, Silent,
    SCHEMA_VERSION,
};
use crate::dyson::{find_edge, EdgeConfig};
use crate::error::{invalid_param, invalid_shape, Error, Result};
use crate::model::{
    goe_top_eigenvalues, BandedNoise, DoublyHeteroscedastic, NoiseModel, ProfileNoise,
    VarianceProfile,
};
use crate::rng::stream;
use crate::spectra::gram_top_eigs;

/// Number of top eigenvalues kept per reference replicate.
pub const JOINT_K: usize = 5;

/// Sample of `p^{2/3}(μ_j − 2)` for the top GOE eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwReference {
    pub schema: u32,
    pub stamp: RunStamp,
    pub p_ref: usize,
    /// Sorted sample of the rescaled largest eigenvalue.
    pub first: Vec<f64>,
    /// Per replicate, the rescaled top `JOINT_K` eigenvalues.
    pub joint: Vec<Vec<f64>>,
}

impl TwReference {
    /// Sorted sample of the rescaled `j`-th largest eigenvalue (1-based).
    pub fn marginal(&self, j: usize) -> Result<Vec<f64>> {
        if j == 0 || j > JOINT_K {
            return Err(invalid_param(format!(
                "reference keeps eigenvalues 1..={JOINT_K}, asked for {j}"
            )));
        }
        let mut v: Vec<f64> = self.joint.iter().map(|row| row[j - 1]).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        Ok(v)
    }

    pub fn median(&self) -> f64 {
        self.first[self.first.len() / 2]
    }
}

pub fn tw_reference(p_ref: usize, reps: usize, seed: u64) -> Result<TwReference> {
    if p_ref < 200 {
        return Err(invalid_param(format!(
            "reference dimension {p_ref} is below 200"
        )));
    }
    if reps < 1000 {
        return Err(invalid_param(format!(
            "reference needs at least 1000 replicates, got {reps}"
        )));
    }
    let scale = (p_ref as f64).powf(2.0 / 3.0);
    let joint = par_replicates(reps, &Silent, |i| -> Result<Vec<f64>> {
        let top = goe_top_eigenvalues(p_ref, JOINT_K, &mut stream(seed, i))?;
        Ok(top.iter().map(|mu| scale * (mu - 2.0)).collect())
    });
    let joint = joint.into_iter().collect::<Result<Vec<_>>>()?;
    let mut first: Vec<f64> = joint.iter().map(|row| row[0]).collect();
    first.sort_by(|a, b| a.total_cmp(b));
    Ok(TwReference {
        schema: SCHEMA_VERSION,
        stamp: RunStamp::new(seed, reps),
        p_ref,
        first,
        joint,
    })
}

fn cache_file(dir: &Path, p_ref: usize, reps: usize, seed: u64) -> PathBuf {
    dir.join(format!("tw_reference_p{p_ref}_r{reps}_s{seed}.json"))
}

/// [`tw_reference`] backed by a JSON cache in `dir`. A cached file is used
/// only when its recorded dimension, replicate count and seed match.
pub fn tw_reference_cached(
    p_ref: usize,
    reps: usize,
    seed: u64,
    dir: &Path,
) -> Result<TwReference> {
    let path = cache_file(dir, p_ref, reps, seed);
    if let Ok(text) = std::fs::read_to_string(&path) {
        match serde_json::from_str::<TwReference>(&text) {
            Ok(r)
                if r.schema == SCHEMA_VERSION
                    && r.p_ref == p_ref
                    && r.stamp.reps == reps
                    && r.stamp.seed == seed =>
            {
                return Ok(r);
            }
            _ => log::warn!("ignoring stale reference cache {}", path.display()),
        }
    }
    let reference = tw_reference(p_ref, reps, seed)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&reference)?)?;
    std::fs::rename(&tmp, &path)?;
    Ok(reference)
}

/// What to simulate in a Tracy–Widom check.
#[derive(Debug, Clone)]
pub enum TwTarget {
    /// Gaussian entries with this fixed profile.
    Profile(VarianceProfile),
    /// Setting I uses its separable profile; setting III the expected banded
    /// profile. Setting II has an `O(n^{-1/2})`-random edge and is rejected.
    Setting(Setting),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwCheckOptions {
    /// Multiplies the fitted `ϖ` before rescaling (1 for the real check).
    pub varpi_scale: f64,
    /// Also compare the marginals of eigenvalues `r+2..=r+joint_k`.
    pub joint_k: usize,
}

impl Default for TwCheckOptions {
    fn default() -> Self {
        Self {
            varpi_scale: 1.0,
            joint_k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwCheck {
    pub schema: u32,
    pub stamp: RunStamp,
    pub p: usize,
    pub n: usize,
    pub r: usize,
    pub ks_distance: f64,
    pub used_varpi: f64,
    pub used_lambda_plus: f64,
    /// KS distances of the rescaled `λ_{r+j}`, `j = 1..=joint_k`.
    pub joint_ks: Vec<f64>,
    /// Rescaled `λ_{r+1}` per replicate.
    #[serde(skip)]
    pub sample: Vec<f64>,
}

fn resolve(
    target: &TwTarget,
    p: usize,
    n: usize,
    seed: u64,
) -> Result<(Box<dyn NoiseModel>, VarianceProfile)> {
    match target {
        TwTarget::Profile(profile) => {
            if (profile.p(), profile.n()) != (p, n) {
                return Err(invalid_shape(format!(
                    "profile is {}x{} but {p}x{n} was requested",
                    profile.p(),
                    profile.n()
                )));
            }
            Ok((Box::new(ProfileNoise::new(profile.clone())), profile.clone()))
        }
        TwTarget::Setting(Setting::I) => {
            let (a, b) = DoublyHeteroscedastic::setting_one_spectra(p, n);
            let profile = DoublyHeteroscedastic::diagonal(a, b)?.effective_profile();
            Ok((Setting::I.noise_model(p, n, seed)?, profile))
        }
        TwTarget::Setting(Setting::II) => Err(invalid_param(
            "setting II redraws its variance factors per sample, so its edge is random; pass a fixed profile instead",
        )),
        TwTarget::Setting(Setting::III) => {
            let model = BandedNoise::new(p, n, BandedNoise::DEFAULT_BANDWIDTH)?;
            let profile = model.mean_profile();
            Ok((Box::new(model), profile))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tw_check(
    target: &TwTarget,
    p: usize,
    n: usize,
    r: usize,
    reps: usize,
    seed: u64,
    reference: &TwReference,
) -> Result<TwCheck> {
    tw_check_with(
        target,
        p,
        n,
        r,
        reps,
        seed,
        reference,
        &TwCheckOptions::default(),
        &Silent,
    )
}

/// Simulates `reps` Gram spectra with `r` strong signals, rescales
/// `λ_{r+1}` as `ϖ^{2/3} p^{2/3} (λ_{r+1} − λ₊)` with the edge of the noise
/// profile and compares it with the GOE reference.
#[allow(clippy::too_many_arguments)]
pub fn tw_check_with(
    target: &TwTarget,
    p: usize,
    n: usize,
    r: usize,
    reps: usize,
    seed: u64,
    reference: &TwReference,
    options: &TwCheckOptions,
    progress: &dyn Progress,
) -> Result<TwCheck> {
    if reps == 0 {
        return Err(invalid_param(
            "a Tracy-Widom check needs at least one replicate",
        ));
    }
    let joint_k = options.joint_k.max(1);
    if joint_k > JOINT_K || r + joint_k > p.min(n) {
        return Err(invalid_param(format!(
            "joint_k = {joint_k} is out of range"
        )));
    }
    if !(options.varpi_scale > 0.0) {
        return Err(invalid_param("varpi_scale must be positive"));
    }
    let (model, profile) = resolve(target, p, n, seed)?;
    let edge = find_edge(&profile, &EdgeConfig::default())?;
    let varpi = edge.varpi * options.varpi_scale;
    let scale = varpi.powf(2.0 / 3.0) * (p as f64).powf(2.0 / 3.0);
    let strengths = null_strengths(r)?;
    let rows = par_replicates(reps, progress, |i| -> Result<Vec<f64>> {
        let mut y = model.sample(&mut stream(seed, i));
        for (k, s) in strengths.iter().enumerate() {
            y[(k, k)] += s;
        }
        let top = gram_top_eigs(&y, r + joint_k)?;
        Ok(top[r..]
            .iter()
            .map(|l| scale * (l - edge.lambda_plus))
            .collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let joint_ks = (0..joint_k)
        .map(|j| {
            let sample: Vec<f64> = rows.iter().map(|row| row[j]).collect();
            ks_distance(&sample, &reference.marginal(j + 1)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let sample: Vec<f64> = rows.iter().map(|row| row[0]).collect();
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::SimulationFailure(
            "non-finite rescaled eigenvalue".into(),
        ));
    }
    Ok(TwCheck {
        schema: SCHEMA_VERSION,
        stamp: RunStamp::new(seed, reps),
        p,
        n,
        r,
        ks_distance: joint_ks[0],
        used_varpi: varpi,
        used_lambda_plus: edge.lambda_plus,
        joint_ks,
        sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_sorted_and_cached() {
        let dir = tempfile::tempdir().unwrap();
        let a = tw_reference_cached(200, 1000, 3, dir.path()).unwrap();
        assert!(a.first.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.first.iter().all(|v| v.is_finite()));
        assert!(a
            .joint
            .iter()
            .all(|row| row.windows(2).all(|w| w[0] >= w[1])));
        assert!((-1.6..-0.9).contains(&a.median()), "{}", a.median());
        let b = tw_reference_cached(200, 1000, 3, dir.path()).unwrap();
        assert_eq!(a, b);
        assert!(cache_file(dir.path(), 200, 1000, 3).exists());
        assert!(tw_reference(100, 1000, 1).is_err());
        assert!(tw_reference(200, 10, 1).is_err());
    }

    #[test]
    fn setting_two_is_rejected() {
        let reference = tw_reference(200, 1000, 1).unwrap();
        let out = tw_check(
            &TwTarget::Setting(Setting::II),
            50,
            50,
            0,
            10,
            1,
            &reference,
        );
        assert!(matches!(out, Err(Error::InvalidParameter(_))));
    }
}
