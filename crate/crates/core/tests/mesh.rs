use gsforge::camera::{CameraModel, Intrinsics};
use gsforge::mesh::{extract_mesh, TsdfVolume};
use gsforge::raster::{render_depth_unbiased, RenderOptions};
use gsforge::splat::{GaussianScene, SplatRecord};
use nalgebra::{UnitQuaternion, Vector3};

fn disk_sphere(radius: f64, count: usize) -> GaussianScene {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt() * radius;
    let splats = (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let n = Vector3::new(rho * (golden * i as f64).cos(), rho * (golden * i as f64).sin(), z);
            let mut s = SplatRecord::isotropic(radius * n, 0.8 * spacing, 0.95, [0.6, 0.5, 0.4], 0);
            let q = UnitQuaternion::rotation_between(&Vector3::z(), &n)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            s.set_unit_quaternion(&q);
            s.log_scale.z = (1e-4 * radius).ln();
            s
        })
        .collect();
    GaussianScene::new(splats, 0, None).unwrap()
}

fn orbit(views: usize, distance: f64) -> Vec<CameraModel> {
    (0..views)
        .map(|i| {
            let az = i as f64 * 2.0 * std::f64::consts::PI / 8.0;
            let el = [-0.6, 0.0, 0.6][i % 3] + 0.1 * (i / 8) as f64;
            let eye = distance * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            CameraModel::look_at(Intrinsics::from_fov(160, 120, 1.0, 0.78), eye, Vector3::zeros(), Vector3::z())
        })
        .collect()
}

#[test]
fn fused_disk_sphere_meshes_closed() {
    let r = 0.5;
    let scene = disk_sphere(r, 6000);
    let mut vol = TsdfVolume::covering(Vector3::repeat(-r), Vector3::repeat(r), 0.01, 0.08).unwrap();
    let opts = RenderOptions::default();
    for cam in orbit(24, 1.8) {
        let maps = render_depth_unbiased(&scene, &cam, &opts);
        vol.fuse_depth(&maps.fusion_depth(&cam, 0.2), &cam).unwrap();
    }
    let mesh = extract_mesh(&vol);
    let err = mesh.vertices.iter().map(|v| (v.norm() - r).abs()).sum::<f64>() / mesh.vertices.len() as f64;
    assert!(err <= 0.01, "mean radial error {err}");
    assert_eq!(mesh.edge_report(), (0, 0));
}
