use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsa_splat::loss::total_loss;
use dsa_splat::phantom::{build_oracle, default_phantom};
use dsa_splat::raster::{backward, forward, RenderSettings};
use dsa_splat::synthetic::{frontal_camera, random_scene, SceneParams};
use dsa_splat::{Camera, Exec, GaussianCloud, Orbit};

fn settings(exec: Exec) -> RenderSettings {
    RenderSettings { exec, ..RenderSettings::default() }
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    let cloud: GaussianCloud<f32> = random_scene(1, &SceneParams { count: 20_000, scale: (0.01, 0.08), ..SceneParams::default() });
    for size in [128u32, 512] {
        let cam = frontal_camera(size, size);
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, format!("{size}px_20k")), &cam, |b, cam| {
                b.iter(|| forward(&cloud, cam, 0.5, settings(exec)).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    let spec = default_phantom(0);
    let cloud: GaussianCloud<f32> = build_oracle(&spec, 5).unwrap();
    let cam = Camera::orbit(
        &Orbit { azimuth_deg: 30.0, elevation_deg: 15.0, radius: 4.5, target: spec.center(), fov_y_deg: 35.0 },
        128,
        128,
    )
    .unwrap();
    let target = forward(&cloud, &cam, 0.4, RenderSettings::sequential()).unwrap().image;
    let mut perturbed = cloud.clone();
    perturbed.params_mut().position.iter_mut().for_each(|p| *p += 0.01);
    for (name, exec) in modes() {
        group.bench_function(BenchmarkId::new(name, "phantom_128px"), |b| {
            b.iter(|| {
                let fwd = forward(&perturbed, &cam, 0.4, settings(exec)).unwrap();
                let loss = total_loss(&fwd.image, &target, perturbed.params(), Default::default()).unwrap();
                backward(&perturbed, &cam, &fwd, &loss.d_image, settings(exec)).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_backward);
criterion_main!(benches);
