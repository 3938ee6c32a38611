//! Array and image types shared by every stage, plus PNG/NPY file I/O.
//!
//! All multi-channel arrays use the `(K, H, W)` layout in C order: channel
//! `k`, row `y`, column `x` lives at `k * H * W + y * W + x`.

pub mod npy;
mod png_io;
mod resize;

pub use png_io::{
    load_image, load_mask_png, save_image, save_mask_png, save_palette_png, voc_color,
    voc_palette,
};
pub use resize::resize_bilinear;

use crate::error::{Error, Result};
use std::path::Path;

/// Reserved label for pixels excluded from evaluation.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb {
    pub height: usize,
    pub width: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl ImageRgb {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroDimension(height, width));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "rgb buffer of {} bytes for {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageGray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

/// Rec.601 luma, rounded half away from zero.
pub fn to_gray(img: &ImageRgb) -> ImageGray {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageGray {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Replicates luminance into all three channels.
pub fn gray_to_rgb(img: &ImageGray) -> ImageRgb {
    let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
    ImageRgb {
        height: img.height,
        width: img.width,
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Per-pixel distributions over the K classes.
    Probability,
    /// Activations, feature sums, amended scores.
    Raw,
}

/// A `(K, H, W)` map of nonnegative 32-bit scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub kind: ScoreKind,
}

impl ScoreMap {
    pub fn new(
        classes: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        kind: ScoreKind,
    ) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::Shape(format!(
                "score buffer of {} values for ({classes}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
            kind,
        })
    }

    pub fn zeros(classes: usize, height: usize, width: usize, kind: ScoreKind) -> Self {
        Self {
            classes,
            height,
            width,
            data: vec![0.0; classes * height * width],
            kind,
        }
    }

    /// Uniform `1/K` probability map.
    pub fn uniform(classes: usize, height: usize, width: usize) -> Self {
        Self {
            classes,
            height,
            width,
            data: vec![1.0 / classes as f32; classes * height * width],
            kind: ScoreKind::Probability,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.pixel_count();
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f32 {
        self.data[k * self.pixel_count() + i]
    }

    /// Checks the probability invariant: nonnegative, per-pixel sums within `tol` of 1.
    pub fn is_distribution(&self, tol: f32) -> bool {
        let n = self.pixel_count();
        (0..n).all(|i| {
            let mut s = 0.0f64;
            for k in 0..self.classes {
                let v = self.data[k * n + i];
                if !(v >= 0.0) {
                    return false;
                }
                s += v as f64;
            }
            (s - 1.0).abs() <= tol as f64
        })
    }

    /// Divides every pixel column by its sum; columns summing to zero become uniform.
    pub fn normalized(&self) -> ScoreMap {
        let n = self.pixel_count();
        let mut out = self.clone();
        for i in 0..n {
            let s: f64 = (0..self.classes).map(|k| self.data[k * n + i] as f64).sum();
            for k in 0..self.classes {
                out.data[k * n + i] = if s > 0.0 {
                    (self.data[k * n + i] as f64 / s) as f32
                } else {
                    1.0 / self.classes as f32
                };
            }
        }
        out.kind = ScoreKind::Probability;
        out
    }

    /// Per-pixel argmax, ties broken toward the lowest class index.
    pub fn argmax(&self) -> LabelMask {
        let n = self.pixel_count();
        let data = (0..n)
            .map(|i| {
                let mut best = 0;
                let mut best_v = self.data[i];
                for k in 1..self.classes {
                    let v = self.data[k * n + i];
                    if v > best_v {
                        best = k;
                        best_v = v;
                    }
                }
                best as u8
            })
            .collect();
        LabelMask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_scoremap(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_scoremap(self, path)
    }
}

/// Loads a `(K, H, W)` little-endian f32 NPY file as a raw score map.
pub fn load_scoremap(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let arr = npy::read_f32(path)?;
    if arr.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected rank 3 (K, H, W), found shape {:?}",
            arr.shape
        )));
    }
    ScoreMap::new(
        arr.shape[0],
        arr.shape[1],
        arr.shape[2],
        arr.data,
        ScoreKind::Raw,
    )
}

/// Loads an f32 NPY of shape `(H, W)` or `(C, H, W)`; rank 2 becomes a
/// single-channel map. Used for feature-energy inputs.
pub fn load_feature_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let arr = npy::read_f32(path)?;
    match arr.shape[..] {
        [h, w] => ScoreMap::new(1, h, w, arr.data, ScoreKind::Raw),
        [c, h, w] => ScoreMap::new(c, h, w, arr.data, ScoreKind::Raw),
        _ => Err(Error::Shape(format!(
            "expected rank 2 or 3, found shape {:?}",
            arr.shape
        ))),
    }
}

pub fn save_scoremap(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    npy::write_f32(path, &[map.classes, map.height, map.width], &map.data)
}

/// Per-pixel class indices; [`IGNORE_LABEL`] marks unscored pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer of {} bytes for {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            data: vec![label; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Checks that every entry is a class below `classes` or the ignore label.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != IGNORE_LABEL && v as usize >= classes)
        {
            Some(&v) => Err(Error::ClassOutOfRange {
                class: v as usize,
                classes,
            }),
            None => Ok(()),
        }
    }
}

/// Binary `(K, H, W)` cue tensor. A pixel with no set channel is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CueSet {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl CueSet {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::Shape(format!(
                "cue buffer of {} values for ({classes}, {height}, {width})",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Shape(format!("cue values must be 0 or 1, found {v}")));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn empty(classes: usize, height: usize, width: usize) -> Self {
        Self {
            classes,
            height,
            width,
            data: vec![0; classes * height * width],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channel(&self, k: usize) -> &[u8] {
        let n = self.pixel_count();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [u8] {
        let n = self.pixel_count();
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> bool {
        self.data[k * self.pixel_count() + i] != 0
    }

    /// Number of set elements, `|C|`.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let arr = npy::read_u8(path)?;
        if arr.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "expected rank 3 (K, H, W), found shape {:?}",
                arr.shape
            )));
        }
        Self::new(arr.shape[0], arr.shape[1], arr.shape[2], arr.data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        npy::write_u8(path, &[self.classes, self.height, self.width], &self.data)
    }
}
