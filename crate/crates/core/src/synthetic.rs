//! Synthetic scenes with exact ground truth, used by the end-to-end tests,
//! the benchmarks and `cuesnap fixture`.
//!
//! A scene is a flat background holding two flat-colored objects: a
//! two-tone rectangle (class 1, upper and lower parts in different colors)
//! and a disk (class 2). Two simulated classifiers each respond with
//! Gaussian activation blobs covering part of every object: the "color"
//! classifier fires on the rectangle's upper part and one side of the disk,
//! the "gray" classifier on the lower part and the other side.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imagery::{npy, save_image, save_mask_png, ImageRgb, LabelMask, ScoreKind, ScoreMap};

pub const CLASSES: usize = 3;
pub const SIZE: usize = 64;

/// Activation and feature-energy maps from one simulated classifier.
#[derive(Clone, Debug)]
pub struct ClassifierOutput {
    /// `(CLASSES, H, W)` raw activations; channel 0 is unused.
    pub activations: ScoreMap,
    /// `(1, H, W)` summed feature energy.
    pub features: ScoreMap,
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: ImageRgb,
    pub ground_truth: LabelMask,
    pub color: ClassifierOutput,
    pub gray: ClassifierOutput,
    pub present: Vec<usize>,
}

#[derive(Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    sy: f64,
    sx: f64,
}

impl Blob {
    fn at(&self, y: f64, x: f64) -> f64 {
        (-((y - self.cy) / self.sy).powi(2) / 2.0 - ((x - self.cx) / self.sx).powi(2) / 2.0).exp()
    }
}

fn distinct_color(rng: &mut ChaCha8Rng, taken: &[[u8; 3]]) -> [u8; 3] {
    loop {
        let c = [rng.gen_range(20..236), rng.gen_range(20..236), rng.gen_range(20..236)];
        let far = taken.iter().all(|t| {
            let d: f64 = (0..3).map(|i| (c[i] as f64 - t[i] as f64).powi(2)).sum();
            d.sqrt() > 90.0
        });
        if far {
            return c;
        }
    }
}

fn render(blobs: &[(usize, Blob)], features: &[Blob]) -> ClassifierOutput {
    let n = SIZE * SIZE;
    let mut act = vec![0f32; CLASSES * n];
    let mut feat = vec![0f32; n];
    for y in 0..SIZE {
        for x in 0..SIZE {
            let i = y * SIZE + x;
            for (class, b) in blobs {
                act[class * n + i] += b.at(y as f64, x as f64) as f32;
            }
            feat[i] = features.iter().map(|b| b.at(y as f64, x as f64)).sum::<f64>() as f32;
        }
    }
    ClassifierOutput {
        activations: ScoreMap::new(CLASSES, SIZE, SIZE, act, ScoreKind::Raw).unwrap(),
        features: ScoreMap::new(1, SIZE, SIZE, feat, ScoreKind::Raw).unwrap(),
    }
}

/// Deterministic scene for `seed`.
pub fn two_shapes(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = distinct_color(&mut rng, &[]);
    let upper = distinct_color(&mut rng, &[bg]);
    let lower = distinct_color(&mut rng, &[bg, upper]);
    let disk = distinct_color(&mut rng, &[bg, upper, lower]);

    // Rectangle in the left half, disk in the right half.
    let (rh, rw) = (rng.gen_range(26..34usize), rng.gen_range(14..20usize));
    let ry = rng.gen_range(6..SIZE - rh - 6);
    let rx = rng.gen_range(4..30 - rw);
    let split = ry + rh / 2;
    let radius = rng.gen_range(9.0..12.0f64);
    let dcy = rng.gen_range(14.0 + radius..SIZE as f64 - 14.0 - radius + 1.0);
    let dcx = rng.gen_range(36.0 + radius..SIZE as f64 - 3.0 - radius);

    let mut image = ImageRgb::filled(SIZE, SIZE, bg);
    let mut gt = LabelMask::filled(SIZE, SIZE, 0);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (yf, xf) = (y as f64, x as f64);
            let (label, color) = if (ry..ry + rh).contains(&y) && (rx..rx + rw).contains(&x) {
                (1, if y < split { upper } else { lower })
            } else if (yf - dcy).powi(2) + (xf - dcx).powi(2) <= radius * radius {
                (2, disk)
            } else {
                (0, bg)
            };
            let noisy = color.map(|c| (c as i32 + rng.gen_range(-5..=5)).clamp(0, 255) as u8);
            image.set_pixel(y, x, noisy);
            gt.data[y * SIZE + x] = label;
        }
    }

    let (ryf, rxf, rhf, rwf) = (ry as f64, rx as f64, rh as f64, rw as f64);
    let part_h = rhf / 2.0;
    let upper_blob = Blob {
        cy: ryf + part_h * 0.45,
        cx: rxf + rwf * 0.5,
        sy: part_h * 0.3,
        sx: rwf * 0.35,
    };
    let lower_blob = Blob {
        cy: ryf + part_h * 1.55,
        cx: rxf + rwf * 0.5,
        sy: part_h * 0.3,
        sx: rwf * 0.35,
    };
    let side = radius * 0.45;
    let disk_left = Blob {
        cy: dcy,
        cx: dcx - side,
        sy: radius * 0.45,
        sx: radius * 0.4,
    };
    let disk_right = Blob { cx: dcx + side, ..disk_left };

    // Feature energy: broad responses over each object.
    let rect_energy = Blob {
        cy: ryf + rhf / 2.0,
        cx: rxf + rwf / 2.0,
        sy: rhf * 0.55,
        sx: rwf * 0.7,
    };
    let disk_energy = Blob {
        cy: dcy,
        cx: dcx,
        sy: radius * 0.9,
        sx: radius * 0.9,
    };

    let color = render(&[(1, upper_blob), (2, disk_left)], &[rect_energy, disk_energy]);
    let gray = render(
        &[(1, lower_blob), (2, disk_right)],
        &[Blob { sy: rect_energy.sy * 1.1, ..rect_energy }, disk_energy],
    );

    Scene {
        image,
        ground_truth: gt,
        color,
        gray,
        present: vec![1, 2],
    }
}

/// File locations of a scene written by [`write_scene`].
#[derive(Clone, Debug)]
pub struct SceneFiles {
    pub image: PathBuf,
    pub ground_truth: PathBuf,
    pub activations: PathBuf,
    pub features: PathBuf,
    pub gray_activations: PathBuf,
    pub gray_features: PathBuf,
}

/// Writes the scene's inputs and ground truth under `dir` with `stem` prefixes.
pub fn write_scene(scene: &Scene, dir: &Path, stem: &str) -> Result<SceneFiles> {
    std::fs::create_dir_all(dir)?;
    let files = SceneFiles {
        image: dir.join(format!("{stem}.png")),
        ground_truth: dir.join(format!("{stem}_gt.png")),
        activations: dir.join(format!("{stem}_act_color.npy")),
        features: dir.join(format!("{stem}_feat_color.npy")),
        gray_activations: dir.join(format!("{stem}_act_gray.npy")),
        gray_features: dir.join(format!("{stem}_feat_gray.npy")),
    };
    save_image(&scene.image, &files.image)?;
    save_mask_png(&scene.ground_truth, &files.ground_truth)?;
    scene.color.activations.save(&files.activations)?;
    scene.gray.activations.save(&files.gray_activations)?;
    for (map, path) in [
        (&scene.color.features, &files.features),
        (&scene.gray.features, &files.gray_features),
    ] {
        npy::write_f32(path, &[map.height, map.width], &map.data)?;
    }
    Ok(files)
}
