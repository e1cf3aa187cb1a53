use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3};
use omnisplat::cameras::{project, unproject_direction, CamPoint, Camera, CameraModel};
use omnisplat::model::{Gaussian3D, ImageBuffer, Scene};
use omnisplat::optimize::{loss, psnr, ssim};
use omnisplat::oracle::{fd_jacobian, FDConfig};
use omnisplat::splatting::{bin_and_sort, preprocess, render};
use proptest::prelude::*;
use std::collections::HashSet;

fn model_strategy() -> impl Strategy<Value = CameraModel> {
    prop::sample::select(CameraModel::ALL.to_vec())
}

fn camera(model: CameraModel) -> Camera {
    match model {
        CameraModel::Pinhole => Camera::pinhole(160, 120, 140.0, 150.0, 81.0, 59.0),
        CameraModel::FisheyeEquidistant => Camera::fisheye(160, 120, 45.0, 47.0, 80.0, 61.0, 100f64.to_radians()),
        CameraModel::Panorama => Camera::panorama(160, 80),
    }
}

fn gaussian_strategy() -> impl Strategy<Value = Gaussian3D> {
    (
        (-2.0..2.0f64, -2.0..2.0f64, 0.6..5.0f64),
        (-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64),
        (-3.5..-0.5f64, -3.5..-0.5f64, -3.5..-0.5f64),
        0.05..0.999f64,
    )
        .prop_map(|(m, r, s, o)| {
            let mut g = Gaussian3D::isotropic(Vector3::new(m.0, m.1, m.2), 1.0, o, [1.0; 3]);
            let q = UnitQuaternion::from_euler_angles(r.0, r.1, r.2);
            g.rotation = [q.w, q.i, q.j, q.k];
            g.log_scale = Vector3::new(s.0, s.1, s.2);
            g
        })
}

fn image_strategy(w: usize, h: usize) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(0.0..1.0f64, w * h * 3).prop_map(move |pixels| ImageBuffer { width: w, height: h, pixels })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unproject_then_project_returns_pixel(model in model_strategy(), u in 0.0..1.0f64, v in 0.02..0.98f64, t in 0.3..20.0f64) {
        let cam = camera(model);
        let px = Vector2::new(u * cam.width as f64, v * cam.height as f64);
        let dir = match unproject_direction(px, &cam) {
            Ok(d) => d,
            // pixels outside the fisheye image circle have no ray
            Err(_) => return Ok(()),
        };
        let back = project(CamPoint::from(dir * t), &cam).unwrap().pixel;
        let mut dx = (back.x - px.x).abs();
        if model == CameraModel::Panorama {
            dx = dx.min(cam.width as f64 - dx);
        }
        prop_assert!(dx < 1e-6 && (back.y - px.y).abs() < 1e-6, "{px} -> {back}");
    }

    #[test]
    fn panorama_pixels_stay_in_range(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64) {
        prop_assume!(x.abs() + y.abs() + z.abs() > 1e-6);
        let cam = camera(CameraModel::Panorama);
        let px = project(CamPoint::new(x, y, z), &cam).unwrap().pixel;
        prop_assert!((0.0..cam.width as f64).contains(&px.x));
        prop_assert!((0.0..=cam.height as f64).contains(&px.y));
    }

    #[test]
    fn fisheye_radius_is_proportional_to_angle(theta in 0.001..1.7f64, phi in 0.0..std::f64::consts::TAU, d in 0.3..30.0f64) {
        let cam = Camera::fisheye(64, 64, 77.0, 77.0, 31.0, 33.0, 100f64.to_radians());
        let p = CamPoint::new(d * theta.sin() * phi.cos(), d * theta.sin() * phi.sin(), d * theta.cos());
        let px = project(p, &cam).unwrap().pixel;
        let r = (px.x - 31.0).hypot(px.y - 33.0);
        prop_assert!((r - 77.0 * theta).abs() <= 1e-9 * 77.0 * theta);
    }

    #[test]
    fn small_angles_agree_with_pinhole(theta in 0.0..5f64, phi in 0.0..std::f64::consts::TAU, d in 0.3..30.0f64) {
        let t = theta.to_radians();
        let p = CamPoint::new(d * t.sin() * phi.cos(), d * t.sin() * phi.sin(), d * t.cos());
        let pin = Camera::pinhole(64, 64, 300.0, 300.0, 32.0, 32.0);
        let fish = Camera::fisheye(64, 64, 300.0, 300.0, 32.0, 32.0, 1.5);
        let gap = (project(p, &pin).unwrap().pixel - project(p, &fish).unwrap().pixel).norm();
        prop_assert!(gap < 0.07);
        prop_assert!((gap - 300.0 * (t.tan() - t)).abs() < 1e-9);
    }

    #[test]
    fn fd_is_exact_on_quadratics(c in prop::collection::vec(-10.0..10.0f64, 10), x in prop::collection::vec(-3.0..3.0f64, 3)) {
        let f = |v: &DVector<f64>| {
            DVector::from_vec(vec![
                c[0] + c[1] * v[0] + c[2] * v[1] * v[2] + c[3] * v[0] * v[0],
                c[4] * v[2] * v[2] + c[5] * v[0] * v[1] + c[6] * v[1] + c[7] + c[8] * v[1] * v[1] + c[9] * v[2],
            ])
        };
        let x = DVector::from_vec(x);
        let j = fd_jacobian(f, &x, &FDConfig::FORWARD).unwrap();
        let exact = [
            [c[1] + 2.0 * c[3] * x[0], c[2] * x[2], c[2] * x[1]],
            [c[5] * x[1], c[5] * x[0] + c[6] + 2.0 * c[8] * x[1], 2.0 * c[4] * x[2] + c[9]],
        ];
        for r in 0..2 {
            for k in 0..3 {
                prop_assert!((j[(r, k)] - exact[r][k]).abs() < 1e-9 * exact[r][k].abs().max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn blend_weights_and_transmittance_sum_to_one(model in model_strategy(), gs in prop::collection::vec(gaussian_strategy(), 1..40)) {
        // white splats over a white background leave every pixel at exactly the total weight
        let scene = Scene::new(gs, [1.0; 3]);
        let cam = camera(model);
        let img = render::<f64>(&scene, &cam).unwrap().image;
        prop_assert!(img.pixels.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn tiles_partition_splats_in_depth_order(model in model_strategy(), gs in prop::collection::vec(gaussian_strategy(), 1..60)) {
        let cam = camera(model);
        let scene = Scene::new(gs, [0.0; 3]);
        let pre = preprocess::<f32>(&scene, &cam).unwrap();
        let binned = bin_and_sort(&pre.splats, cam.width as usize, cam.height as usize);
        let mut seen = HashSet::new();
        let tiles = binned.index.tiles_x * binned.index.tiles_y;
        for t in 0..tiles {
            let refs = binned.tile_refs(t);
            for pair in refs.windows(2) {
                let (a, b) = (pre.splats[pair[0] as usize].depth, pre.splats[pair[1] as usize].depth);
                prop_assert!(a < b || (a == b && pair[0] < pair[1]));
            }
            for r in refs {
                prop_assert!(seen.insert((t, *r)));
            }
        }
        prop_assert_eq!(seen.len(), binned.num_intersections);
        prop_assert_eq!(binned.refs.len(), binned.num_intersections);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_on_identity(a in image_strategy(12, 9), b in image_strategy(12, 9), lambda in 0.0..=1.0f64) {
        let (l, _) = loss(&a, &b, lambda).unwrap();
        prop_assert!(l >= 0.0);
        let (same, grad) = loss(&a, &a, lambda).unwrap();
        prop_assert_eq!(same, 0.0);
        prop_assert!(grad.pixels.iter().all(|g| *g == 0.0));
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
        prop_assert!(psnr(&a, &b).unwrap() <= 100.0);
    }
}
