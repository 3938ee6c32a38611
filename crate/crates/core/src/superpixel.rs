//! Graph-based super-pixels (Felzenszwalb–Huttenlocher) on the 8-connected
//! pixel grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dims_match, Error, Result};
use crate::imagery::{npy, save_image, ImageRgb};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FelzParams {
    /// Gaussian pre-smoothing std in pixels.
    pub sigma: f64,
    /// Scale constant; larger values favour larger components.
    pub k: f64,
    /// Components below this pixel count are merged away.
    pub min_size: usize,
}

impl Default for FelzParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            k: 500.0,
            min_size: 50,
        }
    }
}

impl FelzParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParam(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.k > 0.0) {
            return Err(Error::InvalidParam(format!("k must be > 0, got {}", self.k)));
        }
        if self.min_size == 0 {
            return Err(Error::InvalidParam("min_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperPixelLabeling {
    pub height: usize,
    pub width: usize,
    /// Row-major segment ids in `0..num_segments`.
    pub segment_of: Vec<u32>,
    pub num_segments: usize,
}

impl SuperPixelLabeling {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Pixel count of every segment.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_segments];
        for &s in &self.segment_of {
            sizes[s as usize] += 1;
        }
        sizes
    }

    /// Saves as an `(H, W)` int32 NPY.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ids: Vec<i32> = self.segment_of.iter().map(|&s| s as i32).collect();
        npy::write_i32(path, &[self.height, self.width], &ids)
    }

    /// Loads an `(H, W)` int32 NPY; ids must be contiguous from 0.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let arr = npy::read_i32(path)?;
        if arr.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "expected rank 2 (H, W), found {:?}",
                arr.shape
            )));
        }
        let mut segment_of = Vec::with_capacity(arr.data.len());
        for &v in &arr.data {
            if v < 0 {
                return Err(Error::Shape(format!("negative segment id {v}")));
            }
            segment_of.push(v as u32);
        }
        let num_segments = segment_of.iter().max().map_or(0, |&m| m as usize + 1);
        let labeling = Self {
            height: arr.shape[0],
            width: arr.shape[1],
            segment_of,
            num_segments,
        };
        if labeling.sizes().contains(&0) {
            return Err(Error::Shape("segment ids are not contiguous".into()));
        }
        Ok(labeling)
    }

    /// Writes the image with segment boundaries painted in `color`.
    pub fn save_overlay(
        &self,
        img: &ImageRgb,
        color: [u8; 3],
        path: impl AsRef<Path>,
    ) -> Result<()> {
        dims_match("overlay", img.dims(), self.dims())?;
        let mut out = img.clone();
        let (h, w) = self.dims();
        for y in 0..h {
            for x in 0..w {
                let s = self.segment_of[y * w + x];
                let edge = (x + 1 < w && self.segment_of[y * w + x + 1] != s)
                    || (y + 1 < h && self.segment_of[(y + 1) * w + x] != s);
                if edge {
                    out.set_pixel(y, x, color);
                }
            }
        }
        save_image(&out, path)
    }
}

/// Union-find with size and internal-difference bookkeeping.
struct Forest {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    internal: Vec<f32>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: u32, b: u32, weight: f32) {
        let (a, b) = (a as usize, b as usize);
        let (root, child) = if self.rank[a] < self.rank[b] { (b, a) } else { (a, b) };
        if self.rank[a] == self.rank[b] {
            self.rank[root] += 1;
        }
        self.parent[child] = root as u32;
        self.size[root] += self.size[child];
        self.internal[root] = weight;
    }
}

struct Edge {
    w: f32,
    a: u32,
    b: u32,
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Separable, edge-clamped Gaussian smoothing of an interleaved 3-channel
/// float image.
fn smooth(img: &ImageRgb, sigma: f64) -> Vec<f32> {
    let (h, w) = img.dims();
    let src: Vec<f32> = img.data.iter().map(|&v| v as f32).collect();
    if sigma == 0.0 {
        return src;
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;

    let mut tmp = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f32;
                for (t, kv) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + t as isize - r, w);
                    acc += kv * src[(y * w + sx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0f32;
                for (t, kv) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + t as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    out
}

/// Grid edges in construction order: right, down, down-right, up-right.
fn build_edges(smoothed: &[f32], h: usize, w: usize) -> Vec<Edge> {
    let dist = |a: usize, b: usize| {
        let mut s = 0f32;
        for c in 0..3 {
            let d = smoothed[a * 3 + c] - smoothed[b * 3 + c];
            s += d * d;
        }
        s.sqrt()
    };
    let mut edges = Vec::with_capacity(h * w * 4);
    let mut push = |a: usize, b: usize| {
        edges.push(Edge {
            w: dist(a, b),
            a: a as u32,
            b: b as u32,
        })
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                push(i, i + 1);
            }
            if y + 1 < h {
                push(i, i + w);
            }
            if x + 1 < w && y + 1 < h {
                push(i, i + w + 1);
            }
            if x + 1 < w && y > 0 {
                push(i, i - w + 1);
            }
        }
    }
    edges
}

pub fn segment_felzenszwalb(img: &ImageRgb, params: &FelzParams) -> Result<SuperPixelLabeling> {
    params.validate()?;
    let (h, w) = img.dims();
    let n = h * w;
    let smoothed = smooth(img, params.sigma);
    let mut edges = build_edges(&smoothed, h, w);
    // Stable sort: ties keep construction order, which makes the merge order total.
    edges.sort_by(|a, b| a.w.total_cmp(&b.w));

    let k = params.k as f32;
    let mut forest = Forest::new(n);
    for e in &edges {
        let a = forest.find(e.a);
        let b = forest.find(e.b);
        if a == b {
            continue;
        }
        let ta = forest.internal[a as usize] + k / forest.size[a as usize] as f32;
        let tb = forest.internal[b as usize] + k / forest.size[b as usize] as f32;
        if e.w <= ta.min(tb) {
            forest.join(a, b, e.w);
        }
    }

    // Small components join through their cheapest remaining edge.
    let min = params.min_size as u32;
    for e in &edges {
        let a = forest.find(e.a);
        let b = forest.find(e.b);
        if a != b && (forest.size[a as usize] < min || forest.size[b as usize] < min) {
            forest.join(a, b, e.w);
        }
    }

    let mut id_of_root = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut segment_of = Vec::with_capacity(n);
    for i in 0..n as u32 {
        let r = forest.find(i) as usize;
        if id_of_root[r] == u32::MAX {
            id_of_root[r] = next;
            next += 1;
        }
        segment_of.push(id_of_root[r]);
    }
    Ok(SuperPixelLabeling {
        height: h,
        width: w,
        segment_of,
        num_segments: next as usize,
    })
}

/// Mean of `channel` over each segment.
pub fn region_mean(labeling: &SuperPixelLabeling, channel: &[f32]) -> Result<Vec<f64>> {
    if channel.len() != labeling.segment_of.len() {
        return Err(Error::DimensionMismatch(format!(
            "channel of {} values for a {}x{} labeling",
            channel.len(),
            labeling.height,
            labeling.width
        )));
    }
    let mut sums = vec![0f64; labeling.num_segments];
    let mut counts = vec![0usize; labeling.num_segments];
    for (&s, &v) in labeling.segment_of.iter().zip(channel) {
        sums[s as usize] += v as f64;
        counts[s as usize] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect())
}
