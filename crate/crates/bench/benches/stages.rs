use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cuesnap::densecrf::CrfParams;
use cuesnap::objective::{objective, refine_logits, LogitsField, RefineParams};
use cuesnap::superpixel::{segment_felzenszwalb, FelzParams};
use cuesnap::synthetic::two_shapes;
use cuesnap_bench::{scene_cues, tiled_image};

fn superpixels(c: &mut Criterion) {
    let mut group = c.benchmark_group("felzenszwalb");
    for reps in [1, 4] {
        let img = tiled_image(0, reps);
        group.bench_with_input(BenchmarkId::from_parameter(img.pixel_count()), &img, |b, img| {
            b.iter(|| segment_felzenszwalb(black_box(img), &FelzParams::default()).unwrap())
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let scene = two_shapes(0);
    let cues = scene_cues(&scene);
    let logits = LogitsField::zeros(cues.classes, cues.height, cues.width);
    let target = logits.softmax();
    c.bench_function("objective 64x64x3", |b| {
        b.iter(|| objective(black_box(&logits), &cues, &target, 1.0, 1.0).unwrap())
    });

    let params = RefineParams {
        steps: 20,
        ..RefineParams::default()
    };
    let mut group = c.benchmark_group("refine");
    group.sample_size(10);
    group.bench_function("20 steps 64x64x3", |b| {
        b.iter(|| {
            refine_logits(&scene.image, &logits, &cues, &CrfParams::default(), &params, 4096).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, superpixels, losses);
criterion_main!(benches);
