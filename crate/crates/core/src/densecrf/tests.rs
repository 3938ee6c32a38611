use proptest::prelude::*;

use super::*;

fn probs_from(classes: usize, h: usize, w: usize, data: Vec<f32>) -> ScoreMap {
    ScoreMap::new(classes, h, w, data, ScoreKind::Probability).unwrap()
}

/// Deterministic pseudo-random probabilities, normalized per pixel.
fn scrambled_probs(classes: usize, h: usize, w: usize, salt: u32) -> ScoreMap {
    let n = h * w;
    let mut data = vec![0f32; classes * n];
    for i in 0..n {
        let raw: Vec<f32> = (0..classes)
            .map(|k| {
                let x = (i as u32).wrapping_mul(2654435761) ^ (k as u32 + salt).wrapping_mul(40503);
                0.05 + (x % 1000) as f32 / 1000.0
            })
            .collect();
        let z: f32 = raw.iter().sum();
        for k in 0..classes {
            data[k * n + i] = raw[k] / z;
        }
    }
    probs_from(classes, h, w, data)
}

fn max_diff(a: &ScoreMap, b: &ScoreMap) -> f32 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

#[test]
fn unary_values() {
    let p = probs_from(3, 1, 1, vec![1.0, 0.5, 0.0]);
    let u = unary_from_probs(&p, UNARY_FLOOR).unwrap();
    assert!(u[0].abs() < 1e-12);
    assert!((u[1] - 0.693147).abs() < 1e-6);
    assert!((u[2] - 18.420681).abs() < 1e-5);
}

#[test]
fn raw_scores_rejected() {
    let img = ImageRgb::filled(2, 2, [0, 0, 0]);
    let raw = ScoreMap::zeros(2, 2, 2, ScoreKind::Raw);
    assert!(matches!(unary_from_probs(&raw, UNARY_FLOOR), Err(Error::Kind)));
    assert!(matches!(mean_field_naive(&img, &raw, &CrfParams::default()), Err(Error::Kind)));
    assert!(matches!(crf_refine(&img, &raw, &CrfParams::default(), 4096), Err(Error::Kind)));
}

#[test]
fn zero_weights_return_input() {
    let img = ImageRgb::filled(4, 5, [10, 200, 30]);
    let p = scrambled_probs(3, 4, 5, 1);
    let q = crf_refine(&img, &p, &CrfParams::disabled(), 4096).unwrap();
    assert!(max_diff(&p, &q) <= 1e-6);
    let q = mean_field_lattice(&img, &p, &CrfParams::disabled()).unwrap();
    assert!(max_diff(&p, &q) <= 1e-6);
}

#[test]
fn two_pixel_single_step() {
    // One smoothness term of weight 1 between two adjacent pixels; with
    // sigma_gamma = 1 the kernel is exp(-1/2).
    let img = ImageRgb::filled(1, 2, [0, 0, 0]);
    let p = probs_from(2, 1, 2, vec![0.9, 0.5, 0.1, 0.5]);
    let params = CrfParams {
        w1: 0.0,
        w2: 1.0,
        sigma_gamma: 1.0,
        iterations: 1,
        ..CrfParams::default()
    };
    let q = mean_field_naive(&img, &p, &params).unwrap();
    // Pixel 1 sees a message of 0.9k for label 0 and 0.1k for label 1.
    let k = (-0.5f64).exp();
    let e0 = (0.5f64).ln() + 0.9 * k;
    let e1 = (0.5f64).ln() + 0.1 * k;
    let oracle = e0.exp() / (e0.exp() + e1.exp());
    assert!((q.data[1] as f64 - oracle).abs() < 1e-6);
    assert!((q.data[1] - 0.6190).abs() < 1e-3);
    assert!((q.data[3] - 0.3810).abs() < 1e-3);
}

#[test]
fn dispatch_by_pixel_count() {
    assert_eq!(select_path(64, 4096), CrfPath::Naive);
    assert_eq!(select_path(4096, 4096), CrfPath::Naive);
    assert_eq!(select_path(4097, 4096), CrfPath::Lattice);
    assert_eq!(select_path(1, 0), CrfPath::Lattice);

    let img = ImageRgb::new(8, 8, (0..192).map(|i| (i * 37 % 256) as u8).collect()).unwrap();
    let p = scrambled_probs(3, 8, 8, 2);
    let params = CrfParams::default();
    let direct = mean_field_naive(&img, &p, &params).unwrap();
    assert_eq!(crf_refine(&img, &p, &params, 4096).unwrap(), direct);
    let lattice = mean_field_lattice(&img, &p, &params).unwrap();
    assert_eq!(crf_refine(&img, &p, &params, 0).unwrap(), lattice);
    assert_eq!(DenseCrf::new(&img, &params, 0).unwrap().path(), CrfPath::Lattice);
}

#[test]
fn large_images_take_lattice_path() {
    let img = ImageRgb::filled(128, 128, [50, 60, 70]);
    let engine = DenseCrf::new(&img, &CrfParams::default(), DEFAULT_LATTICE_CUTOFF).unwrap();
    assert_eq!(engine.path(), CrfPath::Lattice);
    let p = ScoreMap::uniform(2, 128, 128);
    let q = engine.infer(&p).unwrap();
    assert!(q.is_distribution(1e-5));
}

#[test]
fn uniform_input_stays_uniform() {
    let img = ImageRgb::new(6, 6, (0..108).map(|i| (i * 53 % 256) as u8).collect()).unwrap();
    let p = ScoreMap::uniform(4, 6, 6);
    for q in [
        mean_field_naive(&img, &p, &CrfParams::default()).unwrap(),
        mean_field_lattice(&img, &p, &CrfParams::default()).unwrap(),
    ] {
        assert!(q.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}

#[test]
fn smoothing_pulls_toward_neighbours() {
    // A flat image whose centre pixel disagrees weakly with a confident majority.
    let img = ImageRgb::filled(5, 5, [120, 120, 120]);
    let n = 25;
    let mut data = vec![0f32; 2 * n];
    for i in 0..n {
        let p0 = if i == 12 { 0.4 } else { 0.9 };
        data[i] = p0;
        data[n + i] = 1.0 - p0;
    }
    let q = mean_field_naive(&img, &probs_from(2, 5, 5, data), &CrfParams::default()).unwrap();
    assert!(q.data[12] > 0.5);
}

#[test]
fn naive_agrees_with_lattice_on_flat_regions() {
    let mut img = ImageRgb::filled(24, 24, [30, 30, 200]);
    for y in 0..24 {
        for x in 12..24 {
            img.set_pixel(y, x, [220, 180, 20]);
        }
    }
    let p = scrambled_probs(3, 24, 24, 9);
    let a = mean_field_naive(&img, &p, &CrfParams::default()).unwrap();
    let b = mean_field_lattice(&img, &p, &CrfParams::default()).unwrap();
    assert_eq!(a.argmax(), b.argmax());
}

#[test]
fn engine_matches_free_functions() {
    let img = ImageRgb::new(4, 4, (0..48).map(|i| (i * 11 % 256) as u8).collect()).unwrap();
    let p = scrambled_probs(2, 4, 4, 5);
    let params = CrfParams::default();
    let engine = DenseCrf::new(&img, &params, 4096).unwrap();
    assert_eq!(engine.infer(&p).unwrap(), mean_field_naive(&img, &p, &params).unwrap());
    assert!(engine.infer(&ScoreMap::uniform(2, 3, 3)).is_err());
}

fn arb_instance() -> impl Strategy<Value = (ImageRgb, ScoreMap)> {
    (1usize..5, 1usize..5, 2usize..4).prop_flat_map(|(h, w, k)| {
        (
            prop::collection::vec(any::<u8>(), h * w * 3),
            prop::collection::vec(0.01f32..1.0, h * w * k),
        )
            .prop_map(move |(pix, raw)| {
                let img = ImageRgb::new(h, w, pix).unwrap();
                let n = h * w;
                let mut data = raw;
                for i in 0..n {
                    let z: f32 = (0..k).map(|c| data[c * n + i]).sum();
                    for c in 0..k {
                        data[c * n + i] /= z;
                    }
                }
                (img, ScoreMap::new(k, h, w, data, ScoreKind::Probability).unwrap())
            })
    })
}

proptest! {
    #[test]
    fn output_is_a_distribution((img, p) in arb_instance()) {
        for q in [
            mean_field_naive(&img, &p, &CrfParams::default()).unwrap(),
            mean_field_lattice(&img, &p, &CrfParams::default()).unwrap(),
        ] {
            prop_assert!(q.data.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!(q.is_distribution(1e-5));
        }
    }

    #[test]
    fn label_permutation_commutes((img, p) in arb_instance()) {
        // Reversing the class order of the input reverses the output's.
        let k = p.classes;
        let n = p.pixel_count();
        let mut flipped = p.clone();
        for c in 0..k {
            flipped.channel_mut(c).copy_from_slice(p.channel(k - 1 - c));
        }
        let q = mean_field_naive(&img, &p, &CrfParams::default()).unwrap();
        let qf = mean_field_naive(&img, &flipped, &CrfParams::default()).unwrap();
        for c in 0..k {
            for i in 0..n {
                prop_assert!((q.get(c, i) - qf.get(k - 1 - c, i)).abs() < 1e-5);
            }
        }
    }
}
