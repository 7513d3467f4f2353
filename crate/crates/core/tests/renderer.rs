use std::path::Path;

use bos_tomo::fields::{GaussianBump, LinearField, ScalarField, Texture, UniformField};
use bos_tomo::math::Vec3;
use bos_tomo::renderer::*;
use bos_tomo::scene::{reference_config, SceneConfig, TextureConfig};
use bos_tomo::tracer::{intersect_wall, trace, Integrator, Ray, TraceConfig};
use bos_tomo::Scene64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn textured(res: usize) -> SceneConfig {
    let mut c = reference_config();
    c.projector = None;
    c.camera.resolution = [res, res];
    c
}

fn scene(c: SceneConfig) -> Scene64 {
    Scene64::from_config(c, Path::new(".")).unwrap()
}

/// Tent-weighted midpoint quadrature of the straight pinhole projection of the wall texture.
fn projection_oracle(s: &Scene64, row: usize, col: usize, q: usize) -> f64 {
    let cam = &s.camera;
    let (h, w) = cam.resolution;
    let (pw, ph) = (cam.sensor_extent.0 / w as f64, cam.sensor_extent.1 / h as f64);
    let a0 = -cam.sensor_extent.0 / 2.0 + col as f64 * pw;
    let b1 = cam.sensor_extent.1 / 2.0 - row as f64 * ph;
    let (mut acc, mut wsum) = (0.0, 0.0);
    for i in 0..q {
        for k in 0..q {
            let u = (i as f64 + 0.5) / q as f64;
            let v = (k as f64 + 0.5) / q as f64;
            let wt = (1.0 - (2.0 * u - 1.0).abs()) * (1.0 - (2.0 * v - 1.0).abs());
            let a = a0 + u * pw;
            let b = b1 - v * ph;
            let off = cam.forward * cam.focal_length + cam.right * a + cam.up * b;
            let xs = cam.position - off;
            let d = off.normalized();
            let n = s.wall.normal;
            let t = (s.wall.point - cam.position).dot(n) / d.dot(n);
            let xw = cam.position + d * t;
            let rel = xw - s.wall.point;
            let st = rel.dot(s.wall.right) / s.wall.extent.0 + 0.5;
            let tt = 0.5 - rel.dot(s.wall.up) / s.wall.extent.1;
            let lum = if (0.0..=1.0).contains(&st) && (0.0..=1.0).contains(&tt) {
                s.wall.texture.sample(st, tt) * s.wall.luminance
            } else {
                0.0
            };
            acc += wt * s.render.exposure * lum * (-n.dot(d)) / (xw - xs).norm();
            wsum += wt;
        }
    }
    acc / wsum
}

#[test]
fn uniform_eta_matches_projection_oracle() {
    let s = scene(textured(64));
    let eta = UniformField::new(s.medium.ambient_eta());
    let img = render_image(&s, &eta, 64, 3).unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for r in 0..64 {
        for c in 0..64 {
            let o = projection_oracle(&s, r, c, 12);
            if o > 0.0 {
                sum += (img.get(r, c) - o).abs() / o;
                n += 1;
            }
        }
    }
    let mard = sum / n as f64;
    assert!(n > 2000);
    assert!(mard < 0.02, "mean abs rel diff {mard}");
}

#[test]
fn mc_variance_scales_inverse_with_spp() {
    let s = scene(textured(32));
    let eta = UniformField::new(1.0);
    let pixels: Vec<usize> = (0..16).map(|i| 16 * 32 + 3 + 2 * i).collect();
    let spps = [4usize, 16, 64, 256];
    let mut logs = Vec::new();
    for &spp in &spps {
        let runs: Vec<Vec<f64>> = (0..48)
            .map(|seed| render_pixels(&s, &eta, &pixels, spp, 1000 + seed).unwrap())
            .collect();
        let mut var = 0.0;
        for p in 0..pixels.len() {
            let m = runs.iter().map(|r| r[p]).sum::<f64>() / runs.len() as f64;
            var += runs.iter().map(|r| (r[p] - m).powi(2)).sum::<f64>() / (runs.len() - 1) as f64;
        }
        logs.push(((spp as f64).ln(), (var / pixels.len() as f64).ln()));
    }
    let slope = fit_slope(&logs);
    assert!((slope + 1.0).abs() <= 0.15, "slope {slope}");
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn rendering_is_deterministic_and_order_independent() {
    let s = scene(textured(12));
    let eta = GaussianBump {
        base: 1.000_27,
        amplitude: 1e-5,
        center: Vec3::new(0.8, 2.0, 1.5),
        sigma: 0.5,
    };
    let a = render_image(&s, &eta, 2, 9).unwrap();
    let b = render_image(&s, &eta, 2, 9).unwrap();
    assert_eq!(a, b);
    let rev: Vec<usize> = (0..144).rev().collect();
    let px = render_pixels(&s, &eta, &rev, 2, 9).unwrap();
    for (k, &j) in rev.iter().enumerate() {
        assert_eq!(px[k].to_bits(), a.data[j].to_bits());
    }
    let single = render_pixel(&s, &eta, 77, 2, 9).unwrap();
    assert_eq!(single.to_bits(), a.data[77].to_bits());
}

#[test]
fn identical_inputs_give_identical_images() {
    let s = scene(reference_config());
    let mut c = s.config().clone();
    c.camera.resolution = [10, 10];
    let s = scene(c);
    let eta = UniformField::new(s.medium.ambient_eta());
    assert_eq!(render_image(&s, &eta, 2, 0).unwrap(), render_image(&s, &eta, 2, 0).unwrap());
}

#[test]
fn zero_luminance_renders_black() {
    let mut c = textured(8);
    c.wall.luminance = 0.0;
    let s = scene(c);
    let img = render_image(&s, &UniformField::new(1.0), 4, 0).unwrap();
    assert!(img.data.iter().all(|&v| v == 0.0));
}

#[test]
fn linear_in_luminance() {
    let s1 = scene(textured(10));
    let p2 = Texture::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 5) as f64 / 4.0).unwrap();
    let s2 = s1.with_wall_texture(p2.clone());
    let mix = Texture::from_fn(256, 256, |r, c| 0.7 * s1.wall.texture.texel(r, c)).unwrap();
    let (a, b) = (0.7, 2.5);
    let eta = LinearField {
        base: 1.000_27,
        gradient: Vec3::new(3e-6, 0.0, 1e-6),
        origin: Vec3::zero(),
    };
    let i1 = render_image(&s1, &eta, 2, 4).unwrap();
    let i2 = render_image(&s2, &eta, 2, 4).unwrap();
    // a·P₁ on its own grid, b·P₂ through the wall luminance scale.
    let im = render_image(&s1.with_wall_texture(mix), &eta, 2, 4).unwrap();
    let mut c2 = s2.config().clone();
    c2.wall.luminance = b;
    let i2b = render_image(&scene(c2).with_wall_texture(p2), &eta, 2, 4).unwrap();
    for j in 0..100 {
        assert!((im.data[j] - a * i1.data[j]).abs() <= 1e-12 * i1.data[j].abs().max(1e-30));
        assert!((i2b.data[j] - b * i2.data[j]).abs() <= 1e-12 * i2.data[j].abs().max(1e-30));
    }
}

#[test]
fn images_are_nonnegative() {
    let s = scene(reference_config());
    let mut c = s.config().clone();
    c.camera.resolution = [16, 16];
    let s = scene(c);
    let eta = GaussianBump {
        base: 1.000_27,
        amplitude: -3e-5,
        center: Vec3::new(0.8, 2.0, 1.5),
        sigma: 0.4,
    };
    let img = render_image(&s, &eta, 2, 1).unwrap();
    assert!(img.data.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(img.data.iter().any(|&v| v > 0.0));
}

#[test]
fn textured_luminance_matches_bilinear_formula() {
    let s = scene(textured(4));
    let tex = &s.wall.texture;
    let (w, h) = (tex.width(), tex.height());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let su: f64 = rng.gen_range(0.0..1.0);
        let tv: f64 = rng.gen_range(0.0..1.0);
        let x = s.wall.point + s.wall.right * ((su - 0.5) * s.wall.extent.0) + s.wall.up * ((0.5 - tv) * s.wall.extent.1);
        let got: f64 = wall_luminance_textured(&s.wall, x);
        let fx = (su * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = (tv * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (c0, r0) = ((fx.floor() as usize).min(w - 2), (fy.floor() as usize).min(h - 2));
        let (ax, ay) = (fx - c0 as f64, fy - r0 as f64);
        let t = |r: usize, c: usize| tex.data()[r * w + c];
        let want = (t(r0, c0) * (1.0 - ax) + t(r0, c0 + 1) * ax) * (1.0 - ay)
            + (t(r0 + 1, c0) * (1.0 - ax) + t(r0 + 1, c0 + 1) * ax) * ay;
        assert!((got - want * s.wall.luminance).abs() < 1e-12);
    }
    let off = s.wall.point + s.wall.right * (s.wall.extent.0);
    assert_eq!(wall_luminance_textured::<f64, f64>(&s.wall, off), 0.0);
}

#[test]
fn constant_texture_gives_constant_luminance() {
    let mut c = textured(4);
    c.wall.texture = TextureConfig::Constant { value: 0.6 };
    let s = scene(c);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let x = s.wall.point + s.wall.right * rng.gen_range(-2.0..2.0) + s.wall.up * rng.gen_range(-1.4..1.4);
        assert_eq!(wall_luminance_textured::<f64, f64>(&s.wall, x), 0.6);
    }
}

#[test]
fn uniform_projector_pattern_follows_geometric_factor() {
    let mut c = reference_config();
    c.projector.as_mut().unwrap().pattern = TextureConfig::Constant { value: 1.0 };
    let s = scene(c);
    let p = s.projector.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let x = s.wall.point + s.wall.right * rng.gen_range(-1.0..1.0) + s.wall.up * rng.gen_range(-0.5..0.5);
        let d = p.position - x;
        let want = p.power * s.wall.luminance * d.dot(s.wall.normal) / d.norm() / d.norm_sq();
        let got: f64 = wall_luminance_projector(p, &s.wall, x);
        assert!((got - want).abs() <= 1e-12 * want);
    }
    // On the projector axis the pattern center is read.
    let on_axis = Vec3::new(p.position.x, 4.0, p.position.z);
    let d2 = (p.position - on_axis).norm_sq();
    let got: f64 = wall_luminance_projector(p, &s.wall, on_axis);
    assert!((got - p.power / d2).abs() < 1e-12);
    // Outside the frustum.
    let far = Vec3::new(p.position.x + 6.0, 4.0, p.position.z);
    assert_eq!(wall_luminance_projector::<f64, f64>(p, &s.wall, far), 0.0);
}

#[test]
fn apparent_shift_opposes_wall_deflection() {
    // Step-edge texture: dark left half, bright right half.
    let mut c = textured(1);
    c.camera.resolution = [1, 1];
    c.render.integrator = Integrator::Nonlinear;
    let edge = Texture::from_fn(64, 1, |_, col| if col < 32 { 0.0 } else { 1.0 }).unwrap();
    let s = scene(c).with_wall_texture(edge);
    let eta = LinearField {
        base: 1.000_27,
        gradient: Vec3::new(2e-4, 0.0, 0.0),
        origin: Vec3::zero(),
    };
    let flat = UniformField::new(1.000_27);
    // The tracer pushes the on-axis ray towards +x on the wall.
    let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
    let start = Vec3::new(0.85, 0.0, 1.5);
    let path = trace(&eta, Ray::launch(&eta, start, Vec3::new(0.0, 1.0, 0.0)), &s.room, &cfg).unwrap();
    let dx = intersect_wall(&path, &s.wall).unwrap().x.x - 0.85;
    assert!(dx > 0.0);
    // More of the bright half is seen, so the pattern appears shifted towards -x.
    let a = render_pixel(&s, &eta, 0, 256, 0).unwrap();
    let b = render_pixel(&s, &flat, 0, 256, 0).unwrap();
    assert!(a > b, "{a} {b}");
}

#[test]
fn mirrored_scene_gives_mirrored_image() {
    let mut c = textured(16);
    c.room.min[0] = -1.2;
    c.room.max[0] = 2.9;
    let s = scene(c.clone());
    let cx = 0.85;
    let bump = GaussianBump {
        base: 1.000_27,
        amplitude: 2e-5,
        center: Vec3::new(0.3, 2.0, 1.5),
        sigma: 0.3,
    };
    let mirrored_bump = GaussianBump {
        center: Vec3::new(2.0 * cx - 0.3, 2.0, 1.5),
        ..bump
    };
    // Room is symmetric about x = 0.85 and the camera sits on that plane.
    let sm = s.with_wall_texture(s.wall.texture.flipped_horizontally());
    let a = render_image(&s, &bump, 64, 0).unwrap();
    let b = render_image(&sm, &mirrored_bump, 64, 0).unwrap();
    let mut rel = 0.0;
    let mut n = 0;
    for r in 0..16 {
        for col in 0..16 {
            let (x, y) = (a.get(r, col), b.get(r, 15 - col));
            if x > 0.0 {
                rel += (x - y).abs() / x;
                n += 1;
            }
        }
    }
    assert!(rel / (n as f64) < 0.03, "{}", rel / n as f64);
}

#[test]
fn rows_missing_the_wall_are_black() {
    // Square sensor framing a 4.1 x 3 m wall: the top and bottom rows see past it.
    let s = scene(textured(20));
    let img = render_image(&s, &UniformField::new(1.0), 2, 0).unwrap();
    assert!((0..20).all(|c| img.get(0, c) == 0.0 && img.get(19, c) == 0.0));
    assert!(img.get(10, 10) > 0.0);
}

#[test]
fn invalid_spp_and_pixel_rejected() {
    let s = scene(textured(4));
    let eta = UniformField::new(1.0);
    assert!(render_pixel(&s, &eta, 0, 0, 0).is_err());
    assert!(render_pixel(&s, &eta, 16, 1, 0).is_err());
    let _: &dyn ScalarField<f64> = &eta;
}
