use super::{ScoreKind, ScoreMap};
use crate::error::{Error, Result};

/// Source taps for one output coordinate: `(lo, hi, weight of hi)`.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            // Half-pixel centers, clamped to the edge samples.
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resampling of every channel to `out_h` x `out_w`.
///
/// Output is always marked [`ScoreKind::Raw`]; renormalize if a probability
/// map is needed downstream.
pub fn resize_bilinear(map: &ScoreMap, out_h: usize, out_w: usize) -> Result<ScoreMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroDimension(out_h, out_w));
    }
    if out_h == map.height && out_w == map.width {
        let mut same = map.clone();
        same.kind = ScoreKind::Raw;
        return Ok(same);
    }
    let ys = taps(out_h, map.height);
    let xs = taps(out_w, map.width);
    let mut data = Vec::with_capacity(map.classes * out_h * out_w);
    for k in 0..map.classes {
        let ch = map.channel(k);
        let at = |y: usize, x: usize| ch[y * map.width + x];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
    }
    ScoreMap::new(map.classes, out_h, out_w, data, ScoreKind::Raw)
}
