//! Fully connected CRF with Gaussian pairwise kernels, solved by mean-field
//! iteration with Potts compatibility.
//!
//! The pairwise kernel between pixels `i` and `j` is
//!
//! ```text
//! k(i, j) = w1 * exp(-|p_i - p_j|^2 / (2 sa^2) - |I_i - I_j|^2 / (2 sb^2))
//!         + w2 * exp(-|p_i - p_j|^2 / (2 sg^2))
//! ```
//!
//! Two interchangeable message-passing back ends are provided: a direct
//! quadratic summation ([`mean_field_naive`]) and permutohedral-lattice
//! filtering ([`mean_field_lattice`]). [`crf_refine`] picks one by image size.

mod filtered;
mod naive;
pub mod permutohedral;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dims_match, Error, Result};
use crate::imagery::{ImageRgb, ScoreKind, ScoreMap};

pub use filtered::LatticeKernel;
pub use naive::NaiveKernel;

/// Floor applied before taking the log of a probability.
pub const UNARY_FLOOR: f64 = 1e-8;

/// Images with more pixels than this use the lattice path by default.
pub const DEFAULT_LATTICE_CUTOFF: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfParams {
    /// Appearance kernel weight.
    pub w1: f64,
    /// Smoothness kernel weight.
    pub w2: f64,
    /// Spatial std of the appearance kernel, pixels.
    pub sigma_alpha: f64,
    /// Color std of the appearance kernel, 8-bit units.
    pub sigma_beta: f64,
    /// Spatial std of the smoothness kernel, pixels.
    pub sigma_gamma: f64,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w1: 10.0,
            w2: 3.0,
            sigma_alpha: 80.0,
            sigma_beta: 13.0,
            sigma_gamma: 3.0,
            iterations: 10,
        }
    }
}

impl CrfParams {
    /// Parameters with both kernels switched off.
    pub fn disabled() -> Self {
        Self {
            w1: 0.0,
            w2: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("w1", self.w1)?;
        finite_nonneg("w2", self.w2)?;
        finite_nonneg("sigma_alpha", self.sigma_alpha)?;
        finite_nonneg("sigma_beta", self.sigma_beta)?;
        finite_nonneg("sigma_gamma", self.sigma_gamma)?;
        if self.w1 > 0.0 && (self.sigma_alpha <= 0.0 || self.sigma_beta <= 0.0) {
            return Err(Error::InvalidParam(
                "appearance kernel needs sigma_alpha > 0 and sigma_beta > 0".into(),
            ));
        }
        if self.w2 > 0.0 && self.sigma_gamma <= 0.0 {
            return Err(Error::InvalidParam("smoothness kernel needs sigma_gamma > 0".into()));
        }
        Ok(())
    }

    fn has_pairwise(&self) -> bool {
        self.w1 > 0.0 || self.w2 > 0.0
    }
}

/// Unary energies `-log(max(f, floor))`, in the input's `(K, H, W)` layout.
pub fn unary_from_probs(probs: &ScoreMap, floor: f64) -> Result<Vec<f64>> {
    if probs.kind != ScoreKind::Probability {
        return Err(Error::Kind);
    }
    Ok(probs
        .data
        .iter()
        .map(|&f| -(f as f64).max(floor).ln())
        .collect())
}

/// Computes, for every pixel `i` and label `l`, the pairwise message
/// `sum_{j != i} k(i, j) * Q(j, l)`. Buffers are pixel-major (`N * K`).
pub trait MessagePassing: Sync {
    fn messages(&self, q: &[f64], classes: usize, out: &mut [f64]);
}

fn check_inputs(img: &ImageRgb, probs: &ScoreMap, params: &CrfParams) -> Result<()> {
    dims_match("crf image vs scores", img.dims(), probs.dims())?;
    params.validate()?;
    if probs.kind != ScoreKind::Probability {
        return Err(Error::Kind);
    }
    Ok(())
}

/// Transposes `(K, N)` to pixel-major `(N, K)`.
fn to_pixel_major(data: &[f64], classes: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for k in 0..classes {
        for i in 0..n {
            out[i * classes + k] = data[k * n + i];
        }
    }
    out
}

/// Synchronous mean-field updates starting from `probs`.
pub fn run_mean_field(
    probs: &ScoreMap,
    iterations: usize,
    passing: Option<&dyn MessagePassing>,
) -> Result<ScoreMap> {
    if iterations == 0 {
        return Ok(probs.clone());
    }
    let n = probs.pixel_count();
    let kc = probs.classes;
    let unary = to_pixel_major(&unary_from_probs(probs, UNARY_FLOOR)?, kc, n);
    let init: Vec<f64> = probs.data.iter().map(|&v| v as f64).collect();
    let mut q = to_pixel_major(&init, kc, n);
    let mut msg = vec![0.0; n * kc];

    for _ in 0..iterations {
        if let Some(mp) = passing {
            mp.messages(&q, kc, &mut msg);
        }
        // Potts: E(i,l) = u(i,l) + sum_{l' != l} m(i,l'), the shared total
        // cancels in the normalization, leaving u(i,l) - m(i,l).
        q.par_chunks_mut(kc)
            .zip(unary.par_chunks(kc))
            .zip(msg.par_chunks(kc))
            .for_each(|((qi, ui), mi)| {
                let mut lowest = f64::INFINITY;
                for l in 0..kc {
                    qi[l] = ui[l] - mi[l];
                    lowest = lowest.min(qi[l]);
                }
                let mut z = 0.0;
                for e in qi.iter_mut() {
                    *e = (lowest - *e).exp();
                    z += *e;
                }
                for e in qi.iter_mut() {
                    *e /= z;
                }
            });
    }

    let mut data = vec![0f32; n * kc];
    for i in 0..n {
        for k in 0..kc {
            data[k * n + i] = q[i * kc + k] as f32;
        }
    }
    ScoreMap::new(kc, probs.height, probs.width, data, ScoreKind::Probability)
}

/// Mean-field inference with exact quadratic-time message summation.
pub fn mean_field_naive(img: &ImageRgb, probs: &ScoreMap, params: &CrfParams) -> Result<ScoreMap> {
    check_inputs(img, probs, params)?;
    if !params.has_pairwise() {
        return run_mean_field(probs, params.iterations, None);
    }
    let kernel = NaiveKernel::new(img, params);
    run_mean_field(probs, params.iterations, Some(&kernel))
}

/// Mean-field inference with lattice-filtered messages.
pub fn mean_field_lattice(
    img: &ImageRgb,
    probs: &ScoreMap,
    params: &CrfParams,
) -> Result<ScoreMap> {
    check_inputs(img, probs, params)?;
    if !params.has_pairwise() {
        return run_mean_field(probs, params.iterations, None);
    }
    let kernel = LatticeKernel::new(img, params);
    run_mean_field(probs, params.iterations, Some(&kernel))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrfPath {
    Naive,
    Lattice,
}

/// Lattice filtering once the pixel count exceeds `cutoff`.
pub fn select_path(pixels: usize, cutoff: usize) -> CrfPath {
    if pixels > cutoff {
        CrfPath::Lattice
    } else {
        CrfPath::Naive
    }
}

/// A CRF bound to one image, with the kernel state prepared once and
/// reusable across many inferences (the refiner calls it repeatedly).
pub struct DenseCrf {
    params: CrfParams,
    dims: (usize, usize),
    path: CrfPath,
    kernel: Option<Box<dyn MessagePassing + Send>>,
}

impl DenseCrf {
    pub fn new(img: &ImageRgb, params: &CrfParams, cutoff: usize) -> Result<Self> {
        params.validate()?;
        let path = select_path(img.pixel_count(), cutoff);
        let kernel: Option<Box<dyn MessagePassing + Send>> = if !params.has_pairwise() {
            None
        } else {
            match path {
                CrfPath::Naive => Some(Box::new(NaiveKernel::new(img, params))),
                CrfPath::Lattice => Some(Box::new(LatticeKernel::new(img, params))),
            }
        };
        Ok(Self {
            params: *params,
            dims: img.dims(),
            path,
            kernel,
        })
    }

    pub fn path(&self) -> CrfPath {
        self.path
    }

    pub fn infer(&self, probs: &ScoreMap) -> Result<ScoreMap> {
        dims_match("crf image vs scores", self.dims, probs.dims())?;
        if probs.kind != ScoreKind::Probability {
            return Err(Error::Kind);
        }
        let passing = self.kernel.as_deref().map(|k| k as &dyn MessagePassing);
        run_mean_field(probs, self.params.iterations, passing)
    }
}

/// Refines a probability map, dispatching on image size.
pub fn crf_refine(
    img: &ImageRgb,
    probs: &ScoreMap,
    params: &CrfParams,
    cutoff: usize,
) -> Result<ScoreMap> {
    check_inputs(img, probs, params)?;
    match select_path(img.pixel_count(), cutoff) {
        CrfPath::Naive => mean_field_naive(img, probs, params),
        CrfPath::Lattice => mean_field_lattice(img, probs, params),
    }
}

#[cfg(test)]
mod tests;
