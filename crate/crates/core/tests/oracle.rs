use std::path::Path;

use bos_tomo::fields::VoxelGrid;
use bos_tomo::math::Vec3;
use bos_tomo::optim::{AmbientReference, GridReference, StateField, TrainConfig};
use bos_tomo::oracle::*;
use bos_tomo::pinn::{FlowState, LossWeights, NetworkConfig};
use bos_tomo::scene::{reference_config, PlumeConfig, Scene};
use bos_tomo::tracer::Integrator;
use bos_tomo::Scene64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene_with(res: [usize; 2], plume: Option<PlumeConfig>) -> Scene64 {
    let mut c = reference_config();
    c.camera.resolution = res;
    c.render.integrator = Integrator::Quasilinear;
    c.render.step_m = 0.05;
    c.plume = plume;
    Scene::from_config(c, Path::new(".")).unwrap()
}

fn plume_cfg(dt_k: f64) -> PlumeConfig {
    PlumeConfig {
        center_m: [0.4, 2.0, 1.2],
        sigma_m: 0.35,
        dt_k,
        w0: 0.9,
    }
}

fn random_points(scene: &Scene64, n: usize, seed: u64) -> Vec<Vec3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, e) = (scene.room.min, scene.room.extent());
    (0..n)
        .map(|_| lo + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z))
        .collect()
}

/// Fourth-order central difference.
fn d4(f: impl Fn(Vec3<f64>) -> f64, x: Vec3<f64>, k: usize, h: f64) -> f64 {
    let e = Vec3::axis(k) * h;
    (8.0 * (f(x + e) - f(x - e)) - (f(x + e * 2.0) - f(x - e * 2.0))) / (12.0 * h)
}

#[test]
fn plume_gradients_match_finite_differences() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let pts: Vec<_> = random_points(&scene, 200, 1)
        .into_iter()
        .map(|x| p.center + (x - p.center) * 0.4)
        .collect();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for &x in &pts {
        let gt = p.temperature_gradient(x);
        let gp = p.pressure_gradient(x);
        let ju = p.velocity_jacobian(x);
        for k in 0..3 {
            let rel = |a: f64, b: f64, s: f64| (a - b).abs() / s;
            worst = worst.max(rel(gt[k], d4(|y| p.temperature(y), x, k, h), 30.0 / 0.35));
            worst = worst.max(rel(gp[k], d4(|y| p.pressure(y), x, k, h), 3.0 / 0.35));
            for i in 0..3 {
                worst = worst.max(rel(ju[i][k], d4(|y| p.velocity(y)[i], x, k, h), 0.9 / 0.35));
            }
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
    assert!(check_flow_derivatives(&p, &pts, 1e-5) < 1e-4);
}

#[test]
fn plume_values() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    assert_eq!(p.temperature(p.center), scene.medium.t0 + 30.0);
    let off = p.center + Vec3::new(0.0, 3.0 * 0.35, 0.0);
    let want = scene.medium.t0 + 30.0 * (-4.5f64).exp();
    assert!((p.temperature(off) - want).abs() < 1e-10);
    // Updraft is a vertical column and independent of height.
    let u0 = p.velocity(p.center);
    assert!((u0 - Vec3::new(0.0, 0.0, 0.9)).norm() < 1e-15);
    assert_eq!(p.velocity(p.center + Vec3::new(0.0, 0.0, 0.7)), u0);
    // Far below the blob the pressure vanishes; far above it saturates.
    let gain = scene.nondim.ri / scene.nondim.l * 30.0 / (scene.medium.t_in - scene.medium.t0);
    let below = p.pressure(p.center - Vec3::new(0.0, 0.0, 10.0 * 0.35));
    let above = p.pressure(p.center + Vec3::new(0.0, 0.0, 10.0 * 0.35));
    assert!(below.abs() < 1e-12);
    let sat = gain * 0.35 * (2.0 * std::f64::consts::PI).sqrt();
    assert!((above - sat).abs() < 1e-12 * sat);
}

#[test]
fn plume_is_hydrostatic_along_the_updraft_axis() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let ri = scene.nondim.ri;
    for dz in [-0.5, -0.1, 0.0, 0.2, 0.6] {
        let x = p.center + Vec3::new(0.0, 0.0, dz);
        let dpdz = p.pressure_gradient(x).z;
        let t_nd = p.flow_state(x).t_nd;
        assert!((dpdz - ri * t_nd / scene.nondim.l).abs() < 1e-12, "{dz}");
    }
}

#[test]
fn plume_parameters_are_validated() {
    let scene = scene_with([4, 4], None);
    assert!(GaussianPlume::from_scene(&scene).is_err());
    let mut bad = plume_cfg(30.0);
    bad.sigma_m = -1.0;
    assert!(GaussianPlume::from_config(&bad, &scene).is_err());
}

#[test]
fn zero_amplitude_plume_renders_the_reference() {
    let cfg = PlumeConfig {
        w0: 0.0,
        ..plume_cfg(0.0)
    };
    let scene = scene_with([8, 8], Some(cfg));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let (a, b) = synthesize_measurement(&scene, &p, 4, 2).unwrap();
    assert_eq!(a.data, b.data);
    let scene = scene_with([8, 8], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let (a, b) = synthesize_measurement(&scene, &p, 4, 2).unwrap();
    assert_ne!(a.data, b.data);
}

/// Direct-sum RMSE oracle over an explicit node loop.
fn rmse_oracle(
    pred: &dyn StateField,
    truth: &dyn StateField,
    scene: &Scene64,
    n: usize,
) -> [f64; 3] {
    let (lo, e) = (scene.room.min, scene.room.extent());
    let dt = scene.medium.t_in - scene.medium.t0;
    let mut acc = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let f = |m: usize| m as f64 / (n - 1) as f64;
                let x = lo + Vec3::new(e.x * f(i), e.y * f(j), e.z * f(k));
                let (a, b) = (pred.state(x).unwrap(), truth.state(x).unwrap());
                acc[0] += ((a.t_nd - b.t_nd) * dt).powi(2);
                acc[1] += (a.p - b.p).powi(2);
                acc[2] += (a.u - b.u).norm_sq();
            }
        }
    }
    acc.map(|v| (v / (n * n * n) as f64).sqrt())
}

#[test]
fn evaluate_matches_direct_sum() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let m = evaluate(&AmbientReference, &p, &scene, 9).unwrap();
    let want = rmse_oracle(&AmbientReference, &p, &scene, 9);
    let got = [m.t.rmse, m.p.rmse, m.u.rmse];
    for k in 0..3 {
        assert!((got[k] - want[k]).abs() <= 1e-12 * want[k], "{k}: {} vs {}", got[k], want[k]);
    }
    let same = evaluate(&p, &p, &scene, 9).unwrap();
    assert_eq!([same.t.rmse, same.p.rmse, same.u.rmse], [0.0; 3]);
    assert!(evaluate(&p, &p, &scene, 1).is_err());
    let ev = error_volume(&AmbientReference, &p, &scene, 5).unwrap();
    assert_eq!(ev.channels(), 3);
}

#[test]
fn metrics_are_permutation_invariant() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let pts = random_points(&scene, 97, 3);
    let truth: Vec<FlowState<f64>> = pts.iter().map(|&x| p.flow_state(x)).collect();
    let pred: Vec<FlowState<f64>> = truth
        .iter()
        .enumerate()
        .map(|(i, s)| FlowState {
            t_nd: s.t_nd + 0.01 * (i as f64).sin(),
            p: 0.5 * s.p,
            u: s.u * 1.1,
        })
        .collect();
    let m = metrics_of(&pred, &truth, &scene.medium);
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.reverse();
    order.swap(3, 40);
    let pp: Vec<_> = order.iter().map(|&i| pred[i]).collect();
    let tt: Vec<_> = order.iter().map(|&i| truth[i]).collect();
    let m2 = metrics_of(&pp, &tt, &scene.medium);
    for (a, b) in [(m.t, m2.t), (m.p, m2.p), (m.u, m2.u)] {
        assert!((a.rmse - b.rmse).abs() <= 1e-14 * a.rmse);
        assert_eq!(a.max_abs, b.max_abs);
    }
    assert!(m.t.nrmse > 0.0 && m.t.nrmse < 1.0);
}

#[test]
fn grid_reference_reproduces_the_plume_on_nodes() {
    let scene = scene_with([4, 4], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let ps = bos_tomo::optim::pressure_scale(&scene.medium, &scene.nondim);
    let grid = VoxelGrid::from_fn([9, 9, 9], scene.room, 5, |x| {
        let s = p.flow_state(x);
        let u = s.u * scene.nondim.u;
        vec![p.temperature(x), s.p * ps, u.x, u.y, u.z]
    })
    .unwrap();
    let r = GridReference::new(grid, &scene).unwrap();
    let m = evaluate(&r, &p, &scene, 9).unwrap();
    assert!(m.t.rmse < 1e-9 && m.p.rmse < 1e-12 && m.u.rmse < 1e-12, "{m:?}");
}

#[test]
fn regime_profiles_split_the_weights() {
    let base = LossWeights {
        lambda: [7.0, 2.0, 3.0],
        gamma: [1.0, 0.5, 2.0],
    };
    let r = regime_profiles(&base);
    let names: Vec<_> = r.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, ["bos_boundary", "pde_boundary", "combined"]);
    assert_eq!(r[0].1.lambda, [7.0, 2.0, 0.0]);
    assert_eq!(r[1].1.lambda, [0.0, 2.0, 3.0]);
    assert_eq!(r[2].1.lambda, [7.0, 2.0, 3.0]);
    assert!(r.iter().all(|(_, w)| w.gamma == base.gamma));
}

#[test]
fn tiny_study_writes_three_regimes() {
    let scene = scene_with([6, 6], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let cfg = TrainConfig {
        iterations: 3,
        batch_collocation: 8,
        batch_pixels: 8,
        batch_boundary: 8,
        network: NetworkConfig {
            hidden_layers: 1,
            width: 6,
            ..Default::default()
        },
        eta_proxy_resolution: [4, 4, 4],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let opts = StudyOptions {
        eval_resolution: 4,
        out: Some(dir.path().to_path_buf()),
        residual_resolution: 3,
        concurrent: false,
    };
    let rep = regime_study(&scene, &p, &cfg, &opts).unwrap();
    let par = regime_study(
        &scene,
        &p,
        &cfg,
        &StudyOptions {
            out: None,
            concurrent: true,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_eq!(par, rep);
    assert_eq!(rep.entries.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for name in ["bos_boundary", "pde_boundary", "combined"] {
        assert!(rep.entry(name).is_some());
        assert!(dir.path().join(name).join("final/model.bin").exists());
        assert!(dir.path().join(name).join("error.vox").exists());
    }
    assert!(rep.truth_residual_rms[0] == 0.0);
    assert!(rep.truth_residual_rms[1] > 0.0);
}

/// Wall displacement of each pixel's central ray, plume vs still air.
fn predicted_displacement(scene: &Scene64, plume: &GaussianPlume) -> Vec<f64> {
    use bos_tomo::fields::{EtaFromTemperature, UniformField};
    use bos_tomo::renderer::trace_camera_ray;
    let still = EtaFromTemperature::new(UniformField::new(scene.medium.t0), scene.medium);
    let flow = EtaFromTemperature::new(plume, scene.medium);
    let cfg = scene.render.trace_config::<f64>().unwrap();
    let (h, w) = scene.camera.resolution;
    (0..h * w)
        .map(|j| {
            let (a, b) = scene.camera.pixel_footprint_linear(j).unwrap().center();
            let (x, v) = scene.camera.sensor_ray(a, b);
            let s = trace_camera_ray(scene, &still, x, v, &cfg).unwrap();
            let f = trace_camera_ray(scene, &flow, x, v, &cfg).unwrap();
            match (s, f) {
                (Some(s), Some(f)) => (s.x - f.x).norm(),
                _ => 0.0,
            }
        })
        .collect()
}

#[test]
fn plume_distortion_is_localized_on_its_deflection_footprint() {
    let scene = scene_with([32, 32], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let (i_ref, i_flow) = synthesize_measurement(&scene, &p, 4, 2).unwrap();
    let disp = predicted_displacement(&scene, &p);
    let dmax = disp.iter().cloned().fold(0.0, f64::max);
    assert!(dmax > 0.0);
    let diff: Vec<f64> = i_ref.data.iter().zip(&i_flow.data).map(|(a, b)| (a - b).abs()).collect();
    assert!(diff.iter().sum::<f64>() > 0.0);
    let mean_where = |keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = diff.iter().zip(&disp).filter(|(_, &d)| keep(d)).map(|(x, _)| *x).collect();
        assert!(!v.is_empty());
        v.iter().sum::<f64>() / v.len() as f64
    };
    let inside = mean_where(&|d| d > 0.25 * dmax);
    let outside = mean_where(&|d| d < 0.01 * dmax);
    assert!(inside > 10.0 * outside, "inside {inside:e}, outside {outside:e}");
}

#[test]
fn doubling_spp_stays_within_the_noise_bound() {
    let scene = scene_with([16, 16], Some(plume_cfg(30.0)));
    let p = GaussianPlume::from_scene(&scene).unwrap();
    let n = 8;
    let runs: Vec<Vec<f64>> = (0..16)
        .map(|s| synthesize_measurement(&scene, &p, n, 100 + s).unwrap().1.data)
        .collect();
    let (_, a) = synthesize_measurement(&scene, &p, n, 5).unwrap();
    let (_, b) = synthesize_measurement(&scene, &p, 2 * n, 5).unwrap();
    let (mut z2, mut zmax, mut count) = (0.0, 0.0f64, 0);
    for j in 0..a.data.len() {
        let m = runs.iter().map(|r| r[j]).sum::<f64>() / runs.len() as f64;
        let var = runs.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (runs.len() - 1) as f64;
        if var == 0.0 {
            continue;
        }
        // Var(I_2n − I_n) ≤ σ²/n + σ²/(2n) when the two estimates share no samples.
        let z = (b.data[j] - a.data[j]).abs() / (1.5 * var).sqrt();
        z2 += z * z;
        zmax = zmax.max(z);
        count += 1;
    }
    assert!(count > 100);
    let mean_z2 = z2 / count as f64;
    assert!(mean_z2 < 1.5, "mean z² {mean_z2}");
    assert!(zmax < 6.0, "max z {zmax}");
}
