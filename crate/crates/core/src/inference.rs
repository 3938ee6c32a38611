//! Test-time mask prediction: suppress classes the image-level classifier
//! did not predict, refine with the CRF, take the per-pixel argmax.

use serde::{Deserialize, Serialize};

use crate::cues::BACKGROUND;
use crate::densecrf::{CrfParams, DenseCrf};
use crate::error::{dims_match, Error, Result};
use crate::imagery::{ImageRgb, LabelMask, ScoreKind, ScoreMap};

pub const DEFAULT_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct AmendSpec {
    /// Classes deemed present; background is always included.
    predicted: Vec<usize>,
    pub margin: f64,
}

impl AmendSpec {
    /// Builds the predicted set from foreground indices, adding background.
    pub fn new(foreground: &[usize], margin: f64) -> Result<Self> {
        if !(margin > 0.0) {
            return Err(Error::InvalidParam(format!("margin must be > 0, got {margin}")));
        }
        let mut predicted = vec![BACKGROUND];
        predicted.extend_from_slice(foreground);
        predicted.sort_unstable();
        predicted.dedup();
        Ok(Self { predicted, margin })
    }

    /// Uses `predicted` verbatim, without adding background.
    pub fn exact(mut predicted: Vec<usize>, margin: f64) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::EmptyPrediction);
        }
        if !(margin > 0.0) {
            return Err(Error::InvalidParam(format!("margin must be > 0, got {margin}")));
        }
        predicted.sort_unstable();
        predicted.dedup();
        Ok(Self { predicted, margin })
    }

    /// Every class in `0..classes`.
    pub fn all(classes: usize, margin: f64) -> Result<Self> {
        Self::new(&(0..classes).collect::<Vec<_>>(), margin)
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmendParams {
    pub margin: f64,
}

impl Default for AmendParams {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Binarizes per-class classifier scores at 0.5 into a foreground class list.
/// Index 0 (background) is never reported.
pub fn threshold_predictions(scores: &[f32]) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &s)| s >= 0.5)
        .map(|(i, _)| i)
        .collect()
}

/// Caps every non-predicted class at `max(ceiling - margin, 0)`, where the
/// ceiling is the best predicted-class score at that pixel. Values already
/// below the cap are left alone.
pub fn amend_scores(probs: &ScoreMap, spec: &AmendSpec) -> Result<ScoreMap> {
    let kc = probs.classes;
    if spec.predicted.is_empty() {
        return Err(Error::EmptyPrediction);
    }
    if let Some(&c) = spec.predicted.iter().find(|&&c| c >= kc) {
        return Err(Error::ClassOutOfRange { class: c, classes: kc });
    }
    let suppressed: Vec<usize> = (0..kc).filter(|c| !spec.predicted.contains(c)).collect();
    let mut out = probs.clone();
    out.kind = ScoreKind::Raw;
    let n = probs.pixel_count();
    for i in 0..n {
        let ceiling = spec
            .predicted
            .iter()
            .map(|&c| probs.data[c * n + i])
            .fold(f32::NEG_INFINITY, f32::max);
        let cap = (ceiling as f64 - spec.margin).max(0.0) as f32;
        for &c in &suppressed {
            let v = &mut out.data[c * n + i];
            *v = v.min(cap);
        }
    }
    Ok(out)
}

/// Amend, renormalize per pixel, refine with the CRF, then argmax.
pub fn predict_mask(
    img: &ImageRgb,
    probs: &ScoreMap,
    spec: &AmendSpec,
    crf: &CrfParams,
    lattice_cutoff: usize,
) -> Result<LabelMask> {
    dims_match("image vs scores", img.dims(), probs.dims())?;
    let amended = amend_scores(probs, spec)?.normalized();
    let engine = DenseCrf::new(img, crf, lattice_cutoff)?;
    Ok(engine.infer(&amended)?.argmax())
}
