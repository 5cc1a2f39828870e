use std::time::Instant;

use gsforge::camera::{CameraModel, Intrinsics};
use gsforge::raster::{render, RenderOptions};
use gsforge::splat::{GaussianScene, SplatRecord};
use gsforge::transform::{transform_scene, SimilarityTransform};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(rng: &mut ChaCha8Rng, n: usize, degree: u8, extent: f64, size: (f64, f64)) -> GaussianScene {
    let splats = (0..n)
        .map(|_| {
            let mean = Vector3::new(
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
                rng.random_range(-extent..extent),
            );
            let mut s = SplatRecord::isotropic(mean, 1.0, rng.random_range(0.1..0.9), [0.5; 3], degree);
            s.log_scale = Vector3::from_fn(|_, _| rng.random_range(size.0..size.1)).map(f64::ln);
            for c in s.sh.iter_mut() {
                *c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            }
            let q = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            s.set_unit_quaternion(&q);
            s
        })
        .collect();
    GaussianScene::new(splats, degree, None).unwrap()
}

fn viewer(w: u32, h: u32) -> CameraModel {
    CameraModel::look_at(
        Intrinsics::from_fov(w, h, 1.5701, 1.0260),
        Vector3::new(0.0, -4.0, 0.5),
        Vector3::zeros(),
        Vector3::z(),
    )
}

#[test]
fn ten_thousand_splats_single_thread() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scene = random_scene(&mut rng, 10_000, 3, 1.5, (0.005, 0.05));
    let cam = viewer(320, 180);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let out = pool.install(|| render(&scene, &cam, &RenderOptions::default()));
    let secs = start.elapsed().as_secs_f64();
    assert!(out.alpha.iter().any(|a| *a > 0.5));
    assert!(secs < 2.0, "render took {secs:.3} s");
}

#[test]
fn similarity_leaves_render_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scene = random_scene(&mut rng, 500, 3, 1.0, (0.02, 0.15));
    let cam = viewer(160, 90);
    let opts = RenderOptions::default();
    let base = render(&scene, &cam, &opts);
    for _ in 0..5 {
        let q = UnitQuaternion::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let t = SimilarityTransform::from_quaternion(
            &q,
            Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            rng.random_range(0.3..3.0),
        );
        let moved = render(&transform_scene(&scene, &t), &cam.transformed(&t), &opts);
        let dev = base
            .rgb
            .iter()
            .zip(&moved.rgb)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-5, "max deviation {dev:e}");
    }
}
