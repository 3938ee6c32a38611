//! Localization cues from classifier activations: foreground thresholding
//! with inter-class subtraction, background cues from normalized feature
//! energy, super-pixel snapping and OR-merging of cue sets.

use serde::{Deserialize, Serialize};

use crate::error::{dims_match, Error, Result};
use crate::imagery::{CueSet, ScoreMap};
use crate::superpixel::{region_mean, SuperPixelLabeling};

/// Channel 0 is background in every cue set and score map.
pub const BACKGROUND: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CueThresholds {
    /// Foreground cue where the subtracted activation exceeds this fraction of its max.
    pub fg_ratio: f64,
    /// Background cue where the normalized feature energy falls below this value.
    pub bg_abs: f64,
    /// Snapped cue where the super-pixel mean exceeds this fraction of the channel max.
    pub snap_ratio: f64,
}

impl Default for CueThresholds {
    fn default() -> Self {
        Self {
            fg_ratio: 0.3,
            bg_abs: 0.2,
            snap_ratio: 0.3,
        }
    }
}

impl CueThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fg_ratio", self.fg_ratio),
            ("bg_abs", self.bg_abs),
            ("snap_ratio", self.snap_ratio),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParam(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Foreground classes named by the image-level labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PresentClasses(Vec<usize>);

impl PresentClasses {
    /// Validates indices against `classes`: each in `1..classes`, no duplicates.
    pub fn new(indices: Vec<usize>, classes: usize) -> Result<Self> {
        let mut seen = vec![false; classes];
        for &c in &indices {
            if c == BACKGROUND || c >= classes {
                return Err(Error::ClassOutOfRange { class: c, classes });
            }
            if seen[c] {
                return Err(Error::InvalidParam(format!("class {c} listed twice")));
            }
            seen[c] = true;
        }
        Ok(Self(indices))
    }

    /// Parses a comma-separated index list such as `"3,15"`.
    pub fn parse(list: &str, classes: usize) -> Result<Self> {
        let indices = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidParam(format!("bad class index {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, classes)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.contains(&class)
    }
}

/// Writes `[v > ratio * max(v)]` into `out`; an all-zero (or non-positive) input stays empty.
fn threshold_relative(values: &[f32], ratio: f64, out: &mut [u8]) {
    let max = values.iter().cloned().fold(0f32, f32::max);
    if max <= 0.0 {
        out.iter_mut().for_each(|o| *o = 0);
        return;
    }
    // Compared in f32 so a value equal to `ratio * max` is not above it.
    let t = ratio as f32 * max;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = (v > t) as u8;
    }
}

/// Foreground cues for the present classes. Each class map has the
/// elementwise max of the other present classes subtracted (clamped at 0)
/// before relative thresholding.
pub fn foreground_cues(
    activations: &ScoreMap,
    present: &PresentClasses,
    th: &CueThresholds,
) -> Result<CueSet> {
    let kc = activations.classes;
    for &c in present.as_slice() {
        if c == BACKGROUND || c >= kc {
            return Err(Error::ClassOutOfRange { class: c, classes: kc });
        }
    }
    let n = activations.pixel_count();
    let mut cues = CueSet::empty(kc, activations.height, activations.width);
    let mut subtracted = vec![0f32; n];
    for &c in present.as_slice() {
        let own = activations.channel(c);
        subtracted.copy_from_slice(own);
        for &other in present.as_slice().iter().filter(|&&o| o != c) {
            for (s, (&a, &b)) in subtracted.iter_mut().zip(own.iter().zip(activations.channel(other))) {
                *s = s.min(a - b);
            }
        }
        subtracted.iter_mut().for_each(|s| *s = s.max(0.0));
        threshold_relative(&subtracted, th.fg_ratio, cues.channel_mut(c));
    }
    Ok(cues)
}

/// Background cue channel from a channel-summed feature map: min-max
/// normalize to `[0, 1]` and keep pixels strictly below `bg_abs`.
pub fn background_cues(feature_sum: &[f32], th: &CueThresholds) -> Vec<u8> {
    let lo = feature_sum.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = feature_sum.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if feature_sum.is_empty() || !(hi > lo) {
        return vec![0; feature_sum.len()];
    }
    let range = (hi - lo) as f64;
    feature_sum
        .iter()
        .map(|&v| (((v - lo) as f64 / range) < th.bg_abs) as u8)
        .collect()
}

/// Sums a `(C, H, W)` feature stack over its channels.
pub fn sum_features(features: &ScoreMap) -> Vec<f32> {
    let n = features.pixel_count();
    let mut out = vec![0f64; n];
    for k in 0..features.classes {
        for (o, &v) in out.iter_mut().zip(features.channel(k)) {
            *o += v as f64;
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// Full raw cue set: foreground channels from `activations`, background
/// channel from `features` (any channel count; summed first).
pub fn generate_cues(
    activations: &ScoreMap,
    features: &ScoreMap,
    present: &PresentClasses,
    th: &CueThresholds,
) -> Result<CueSet> {
    th.validate()?;
    dims_match("activations vs features", activations.dims(), features.dims())?;
    let mut cues = foreground_cues(activations, present, th)?;
    let bg = background_cues(&sum_features(features), th);
    cues.channel_mut(BACKGROUND).copy_from_slice(&bg);
    Ok(cues)
}

/// Replaces each cue channel by its super-pixel means, re-binarized at
/// `snap_ratio` times the channel's largest mean.
pub fn snap_to_superpixels(
    cues: &CueSet,
    sp: &SuperPixelLabeling,
    th: &CueThresholds,
) -> Result<CueSet> {
    dims_match("cues vs super-pixels", cues.dims(), sp.dims())?;
    let mut out = CueSet::empty(cues.classes, cues.height, cues.width);
    let mut channel = vec![0f32; cues.pixel_count()];
    for k in 0..cues.classes {
        for (c, &v) in channel.iter_mut().zip(cues.channel(k)) {
            *c = v as f32;
        }
        let means = region_mean(sp, &channel)?;
        let max = means.iter().cloned().fold(0f64, f64::max);
        if max <= 0.0 {
            continue;
        }
        let t = th.snap_ratio * max;
        for (o, &s) in out.channel_mut(k).iter_mut().zip(&sp.segment_of) {
            *o = (means[s as usize] > t) as u8;
        }
    }
    Ok(out)
}

fn same_shape(a: &CueSet, b: &CueSet) -> Result<()> {
    if (a.classes, a.height, a.width) != (b.classes, b.height, b.width) {
        return Err(Error::DimensionMismatch(format!(
            "cue sets ({}, {}, {}) vs ({}, {}, {})",
            a.classes, a.height, a.width, b.classes, b.height, b.width
        )));
    }
    Ok(())
}

/// Elementwise OR of two cue sets.
pub fn or_cues(a: &CueSet, b: &CueSet) -> Result<CueSet> {
    same_shape(a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x | y).collect();
    CueSet::new(a.classes, a.height, a.width, data)
}

/// Clears background wherever any foreground channel is set.
pub fn resolve_conflicts(cues: &mut CueSet) {
    let n = cues.pixel_count();
    for i in 0..n {
        if (1..cues.classes).any(|k| cues.data[k * n + i] != 0) {
            cues.data[BACKGROUND * n + i] = 0;
        }
    }
}

/// OR-merge followed by conflict resolution in favour of foreground.
/// Overlapping foreground classes are all kept.
pub fn merge_cues(a: &CueSet, b: &CueSet) -> Result<CueSet> {
    let mut merged = or_cues(a, b)?;
    resolve_conflicts(&mut merged);
    Ok(merged)
}
