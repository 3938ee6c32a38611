use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cuesnap::densecrf::{mean_field_lattice, mean_field_naive, CrfParams};
use cuesnap::synthetic::two_shapes;
use cuesnap::ScoreMap;
use cuesnap_bench::{scene_probs, tiled_image};

fn tile_probs(p: &ScoreMap, reps: usize) -> ScoreMap {
    let (h, w) = (p.height * reps, p.width * reps);
    let mut out = ScoreMap::zeros(p.classes, h, w, p.kind);
    for k in 0..p.classes {
        for y in 0..h {
            for x in 0..w {
                let src = (y % p.height) * p.width + x % p.width;
                out.channel_mut(k)[y * w + x] = p.channel(k)[src];
            }
        }
    }
    out
}

fn naive_vs_lattice(c: &mut Criterion) {
    let params = CrfParams::default();
    let probs = scene_probs(&two_shapes(0));
    let mut group = c.benchmark_group("mean field");
    group.sample_size(10);
    for reps in [1, 2] {
        let img = tiled_image(0, reps);
        let p = tile_probs(&probs, reps);
        let n = img.pixel_count();
        if reps == 1 {
            group.bench_with_input(BenchmarkId::new("naive", n), &(&img, &p), |b, (img, p)| {
                b.iter(|| mean_field_naive(img, p, &params).unwrap())
            });
        }
        group.bench_with_input(BenchmarkId::new("lattice", n), &(&img, &p), |b, (img, p)| {
            b.iter(|| mean_field_lattice(img, p, &params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, naive_vs_lattice);
criterion_main!(benches);
