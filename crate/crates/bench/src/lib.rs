//! Benchmark inputs.

use cuesnap::superpixel::{segment_felzenszwalb, FelzParams};
use cuesnap::synthetic::{two_shapes, Scene};
use cuesnap::{CueSet, ImageRgb, ScoreKind, ScoreMap};

/// The synthetic scene for `seed`, tiled `reps` times per axis.
pub fn tiled_image(seed: u64, reps: usize) -> ImageRgb {
    let base = two_shapes(seed).image;
    let (h, w) = (base.height * reps, base.width * reps);
    let mut img = ImageRgb::filled(h, w, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            img.set_pixel(y, x, base.pixel(y % base.height, x % base.width));
        }
    }
    img
}

/// Smooth probabilities from a softmax over the color classifier's activations.
pub fn scene_probs(scene: &Scene) -> ScoreMap {
    let a = &scene.color.activations;
    let n = a.pixel_count();
    let mut data = vec![0f32; a.data.len()];
    for i in 0..n {
        let e: Vec<f32> = (0..a.classes).map(|k| (3.0 * a.get(k, i)).exp()).collect();
        let z: f32 = e.iter().sum();
        for k in 0..a.classes {
            data[k * n + i] = e[k] / z;
        }
    }
    ScoreMap::new(a.classes, a.height, a.width, data, ScoreKind::Probability).unwrap()
}

/// Merged, snapped cues for the scene, as the pipeline would produce them.
pub fn scene_cues(scene: &Scene) -> CueSet {
    use cuesnap::cues::{generate_cues, merge_cues, snap_to_superpixels, CueThresholds, PresentClasses};
    let th = CueThresholds::default();
    let sp = segment_felzenszwalb(&scene.image, &FelzParams::default()).unwrap();
    let present = PresentClasses::new(scene.present.clone(), scene.color.activations.classes).unwrap();
    let snap = |o: &cuesnap::synthetic::ClassifierOutput| {
        let raw = generate_cues(&o.activations, &o.features, &present, &th).unwrap();
        snap_to_superpixels(&raw, &sp, &th).unwrap()
    };
    merge_cues(&snap(&scene.color), &snap(&scene.gray)).unwrap()
}
