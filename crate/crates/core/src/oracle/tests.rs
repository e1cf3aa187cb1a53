use super::*;
use crate::cameras::{projection_jacobian, Camera, CameraModel};
use crate::gradients::JacobianFault;
use crate::model::{Gaussian3D, Scene};
use crate::splatting::render;
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs_diff(a: &crate::model::ImageBuffer, b: &crate::model::ImageBuffer) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn empty_scene_is_background() {
    let cam = Camera::for_fov(CameraModel::Panorama, 32, 16, 360.0);
    let img = bruteforce_render(&Scene::new(vec![], [0.25, 0.5, 0.75]), &cam).unwrap();
    assert!(img.pixels.chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
}

#[test]
fn single_splat_follows_closed_form_falloff() {
    let cam = Camera::pinhole(32, 32, 50.0, 50.0, 16.0, 16.0);
    let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.2, 0.8, [1.0, 0.0, 0.0]);
    let img = bruteforce_render(&Scene::new(vec![g], [0.0; 3]), &cam).unwrap();
    // isotropic: σ_px² = (f·σ/z)² + dilation
    let var = (50.0 * 0.2 / 4.0f64).powi(2) + 0.3;
    for (x, y) in [(16usize, 16usize), (18, 15), (20, 20), (12, 17)] {
        let d2 = (x as f64 + 0.5 - 16.0).powi(2) + (y as f64 + 0.5 - 16.0).powi(2);
        let alpha = 0.8 * (-0.5 * d2 / var).exp();
        let expected = if d2 / var > 9.0 || alpha < 1.0 / 255.0 { 0.0 } else { alpha };
        assert!((img.pixel(x, y)[0] - expected).abs() < 1e-12, "({x},{y})");
    }
}

#[test]
fn limit_is_enforced() {
    let cam = Camera::for_fov(CameraModel::Pinhole, 16, 16, 90.0);
    let scene = Scene::new(vec![Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.5, [0.5; 3]); 3], [0.0; 3]);
    assert!(matches!(
        bruteforce_render_limited(&scene, &cam, 2),
        Err(OracleError::TooManyGaussians { count: 3, limit: 2 })
    ));
}

#[test]
fn dual_number_jacobians_agree_with_hand_derived_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for model in CameraModel::ALL {
        let cam = Camera::for_fov(model, 64, 64, 170.0);
        let scene = Scene::new(
            (0..200)
                .map(|_| {
                    let m = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..3.0));
                    Gaussian3D::isotropic(m, 0.05, 0.5, [0.5; 3])
                })
                .collect(),
            [0.0; 3],
        );
        for s in project_scene(&scene, &cam).unwrap() {
            let p = crate::cameras::world_to_camera(&scene.gaussians[s.index].mean, &cam);
            let j = projection_jacobian(p, &cam);
            let t = j * cam.rotation_wc;
            let cov = t * scene.gaussians[s.index].covariance().unwrap() * t.transpose();
            let expected = cov + nalgebra::Matrix2::identity() * 0.3;
            assert!((expected - s.cov2d).abs().max() < 1e-9 * s.cov2d.abs().max(), "{model}");
        }
    }
}

#[test]
fn fd_cross_checks_fisheye_projection() {
    let cam = Camera::for_fov(CameraModel::FisheyeEquidistant, 64, 64, 190.0);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let x = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..1.0)]);
        let f = |v: &DVector<f64>| {
            let p = crate::cameras::CamPoint::new(v[0], v[1], v[2]);
            let px = crate::cameras::project(p, &cam).unwrap().pixel;
            DVector::from_vec(vec![px.x, px.y])
        };
        let fd = fd_jacobian(f, &x, &FDConfig::FORWARD).unwrap();
        let analytic = projection_jacobian(crate::cameras::CamPoint::new(x[0], x[1], x[2]), &cam);
        let a: Vec<f64> = analytic.iter().copied().collect();
        let b: Vec<f64> = fd.iter().copied().collect();
        assert!(relative_error_max_norm(&a, &b) < 1e-5);
    }
}

#[test]
fn tiled_render_matches_reference() {
    for (seed, model) in CameraModel::ALL.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed as u64);
        let scene = crate::splatting::tests::random_scene(&mut rng, 120);
        let cam = Camera::for_fov(*model, 48, 40, 150.0);
        let fast = render::<f64>(&scene, &cam).unwrap();
        let reference = bruteforce_render_limited(&scene, &cam, DEFAULT_MAX_GAUSSIANS).unwrap();
        assert!(max_abs_diff(&fast.image, &reference.image) < 1e-12);
        assert_eq!(fast.stats.num_intersections, count_tile_overlaps(&reference.splats, 48, 40));
    }
}

#[test]
fn signature_detects_discrete_changes() {
    let cam = Camera::for_fov(CameraModel::Pinhole, 32, 32, 90.0);
    let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.2, 0.8, [0.5; 3]);
    let mut scene = Scene::new(vec![g], [0.0; 3]);
    let a = bruteforce_render_limited(&scene, &cam, 10).unwrap();
    scene.gaussians[0].mean.z += 1e-9;
    let b = bruteforce_render_limited(&scene, &cam, 10).unwrap();
    assert_eq!(a.signature, b.signature);
    scene.gaussians[0].mean.x += 0.3;
    let c = bruteforce_render_limited(&scene, &cam, 10).unwrap();
    assert_ne!(a.signature, c.signature);
}

#[test]
fn gradcheck_single_on_axis_pinhole_is_tight() {
    let cam = gradcheck_camera(CameraModel::Pinhole, 32);
    let mut g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.4, 0.7, [0.6, 0.3, 0.2]);
    g.rotation = [0.9, 0.2, -0.1, 0.3];
    g.log_scale = Vector3::new(-0.8, -1.1, -0.6);
    let scene = Scene::new(vec![g], [0.1, 0.2, 0.3]);
    let config = GradcheckConfig {
        fd: FDConfig::new(1e-4, 1e-6).unwrap(),
        ..Default::default()
    };
    let report = gradcheck(&scene, &cam, &LossSpec::SquaredSum, &config).unwrap();
    assert!(report.pass(), "{}", report.to_json_lines());
}

#[test]
fn gradcheck_wide_fisheye_passes_and_detects_faults() {
    let cam = gradcheck_camera(CameraModel::FisheyeEquidistant, 32);
    let scene = gradcheck_scene(CameraModel::FisheyeEquidistant, 10, 7);
    let report = gradcheck(&scene, &cam, &LossSpec::SquaredSum, &GradcheckConfig::default()).unwrap();
    assert!(report.pass(), "{}", report.to_json_lines());
    for axis in 0..3 {
        let config = GradcheckConfig {
            fault: Some(JacobianFault { axis, factor: 1.1 }),
            ..Default::default()
        };
        let bad = gradcheck(&scene, &cam, &LossSpec::SquaredSum, &config).unwrap();
        assert!(!bad.group("mean").unwrap().pass, "axis {axis}: {}", bad.to_json_lines());
    }
}

#[test]
fn report_lines_are_json() {
    let cam = gradcheck_camera(CameraModel::Panorama, 32);
    let scene = gradcheck_scene(CameraModel::Panorama, 2, 1);
    let report = gradcheck(&scene, &cam, &LossSpec::SquaredSum, &GradcheckConfig::default()).unwrap();
    let lines: Vec<serde_json::Value> = report.to_json_lines().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), GROUPS.len());
    assert_eq!(lines[0]["group"], "mean");
    assert_eq!(lines[0]["model"], "panorama");
    assert!(lines[0]["pass"].is_boolean());
}

#[test]
fn fisheye_scene_contains_wide_angle_gaussian() {
    let scene = gradcheck_scene(CameraModel::FisheyeEquidistant, 10, 3);
    let m = scene.gaussians[0].mean;
    let theta = m.x.hypot(m.y).atan2(m.z);
    assert!((theta.to_degrees() - 85.0).abs() < 1e-9);
}
