//! Monte Carlo evaluation of the pixel intensity integral
//!
//! `I_j = ∫_A ∫_Ω W_j(x_s) L_wall(x_w, v_w) ⟨n_w, v̂_w⟩ / ‖r_{s↔w}‖ dv_s dx_s`
//!
//! for a pinhole camera: every sensor point has a single admissible direction (through the
//! pinhole), so the inner integral collapses and `I_j` is a filtered area average.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::io::PfmImage;
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::{Camera, Projector, Scene, WallPlane};
use crate::tracer::{intersect_wall, trace, trace_quasilinear, Integrator, Ray, TraceConfig, WallHit};

/// Power of the path-length falloff.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Falloff {
    /// `1/‖r‖`.
    #[default]
    Linear,
    /// `1/‖r‖²`.
    InverseSquare,
}

/// How light from the projector reaches the wall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorLeg {
    #[default]
    Straight,
    /// Refraction on the projector leg approximated by one quasi-linear trace from the wall.
    Quasilinear,
}

/// Distribution of sensor positions within a pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterSampling {
    /// Positions drawn from the tent filter itself; every sample has unit weight.
    #[default]
    Importance,
    /// Positions uniform over the footprint, weighted by the normalized tent.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub falloff: Falloff,
    pub integrator: Integrator,
    pub step_m: f64,
    pub max_steps: usize,
    /// Global intensity scale.
    pub exposure: f64,
    pub projector_leg: ProjectorLeg,
    pub filter_sampling: FilterSampling,
    pub spp: usize,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            falloff: Falloff::Linear,
            integrator: Integrator::Nonlinear,
            step_m: 0.01,
            max_steps: 4000,
            exposure: 1.0,
            projector_leg: ProjectorLeg::Straight,
            filter_sampling: FilterSampling::Importance,
            spp: 2,
            seed: 0,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_m > 0.0) || !self.step_m.is_finite() {
            return Err(Error::Validation(format!("render.step_m must be positive, got {}", self.step_m)));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("render.max_steps must be >= 1".into()));
        }
        if !(self.exposure >= 0.0) || !self.exposure.is_finite() {
            return Err(Error::Validation("render.exposure must be finite and >= 0".into()));
        }
        if self.spp == 0 {
            return Err(Error::Validation("render.spp must be >= 1".into()));
        }
        Ok(())
    }

    pub fn trace_config<T: Real>(&self) -> Result<TraceConfig<T>> {
        TraceConfig::new(T::lit(self.step_m), self.max_steps, self.integrator)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub height: usize,
    pub width: usize,
    pub spp: usize,
    pub seed: u64,
    /// Row-major, row 0 at the top.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn to_pfm(&self) -> PfmImage {
        PfmImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    /// Measurement image from a file; `spp` and `seed` are unknown and recorded as 0.
    pub fn from_pfm(p: &PfmImage) -> Result<Self> {
        if p.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("image intensities must be finite and >= 0".into()));
        }
        Ok(Self {
            height: p.height,
            width: p.width,
            spp: 0,
            seed: 0,
            data: p.data.iter().map(|&v| T::lit(v as f64)).collect(),
        })
    }
}

/// A sensor sample: image-plane point, physical sensor point, pinhole direction and tent weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSample<T> {
    pub a: T,
    pub b: T,
    pub x_s: Vec3<T>,
    pub v_s: Vec3<T>,
    /// Unnormalized tent value in `[0, 1]`.
    pub weight: T,
    /// Multiplier turning the sample's contribution into an unbiased estimate.
    pub estimator_weight: T,
}

/// Per-pixel generator: a ChaCha stream selected by the pixel index, so the sample sequence of
/// a pixel does not depend on evaluation order.
pub fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pixel as u64);
    rng
}

/// Inverse CDF of the unit tent on `[-1, 1]`.
#[inline]
pub fn tent_inverse_cdf(u: f64) -> f64 {
    if u < 0.5 {
        (2.0 * u).sqrt() - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).sqrt()
    }
}

/// Draws the next sensor sample of a pixel.
pub fn sample_pixel<T: Real>(
    camera: &Camera<T>,
    row: usize,
    col: usize,
    mode: FilterSampling,
    rng: &mut impl Rng,
) -> Result<PixelSample<T>> {
    let fp = camera.pixel_footprint(row, col)?;
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let (dx, dy, est) = match mode {
        FilterSampling::Importance => (tent_inverse_cdf(u1), tent_inverse_cdf(u2), 1.0),
        FilterSampling::Uniform => {
            let (dx, dy) = (2.0 * u1 - 1.0, 2.0 * u2 - 1.0);
            (dx, dy, 4.0 * (1.0 - dx.abs()) * (1.0 - dy.abs()))
        }
    };
    let half = T::lit(0.5);
    let (a, b) = fp.point((T::lit(dx) + T::one()) * half, (T::lit(dy) + T::one()) * half);
    let (x_s, v_s) = camera.sensor_ray(a, b);
    Ok(PixelSample {
        a,
        b,
        x_s,
        v_s,
        weight: T::lit((1.0 - dx.abs()) * (1.0 - dy.abs())),
        estimator_weight: T::lit(est),
    })
}

fn lit<S: Real, T: Real>(x: T) -> S {
    S::lit(x.as_f64())
}

fn vlit<S: Real, T: Real>(v: Vec3<T>) -> Vec3<S> {
    v.cast()
}

/// Self-luminous wall: bilinear texture lookup at the wall coordinates of `x_w`, zero off the
/// extent. Evaluated in any scalar type so it can be differentiated on the tape.
pub fn wall_luminance_textured<S: Real, T: Real>(wall: &WallPlane<T>, x_w: Vec3<S>) -> S {
    let d = x_w - vlit(wall.point);
    let half = S::lit(0.5);
    let s = d.dot(vlit(wall.right)) / lit::<S, T>(wall.extent.0) + half;
    let t = half - d.dot(vlit(wall.up)) / lit::<S, T>(wall.extent.1);
    if !(s >= S::zero() && s <= S::one() && t >= S::zero() && t <= S::one()) {
        return S::zero();
    }
    wall.texture.sample_as(s, t) * lit::<S, T>(wall.luminance)
}

/// Projector-lit wall reached along the straight line to the pinhole: pattern value times
/// `⟨n_w, d̂⟩ / ‖x_w − x_p‖²` (with `d̂` pointing from the wall to the projector), zero outside
/// the pattern or for back-facing incidence.
pub fn wall_luminance_projector<S: Real, T: Real>(
    projector: &Projector<T>,
    wall: &WallPlane<T>,
    x_w: Vec3<S>,
) -> S {
    let to_p = vlit::<S, T>(projector.position) - x_w;
    projector_lookup(projector, wall, -to_p, to_p)
}

/// Pattern lookup for light leaving the pinhole along `emit_dir` and arriving at `x_w` from
/// direction `to_p` (wall towards projector).
fn projector_lookup<S: Real, T: Real>(
    projector: &Projector<T>,
    wall: &WallPlane<T>,
    emit_dir: Vec3<S>,
    to_p: Vec3<S>,
) -> S {
    let z = emit_dir.dot(vlit(projector.forward));
    if !(z > S::zero()) {
        return S::zero();
    }
    let f = lit::<S, T>(projector.focal_length);
    let half = S::lit(0.5);
    let s = f * emit_dir.dot(vlit(projector.right)) / z / lit::<S, T>(projector.pattern_extent.0) + half;
    let t = half - f * emit_dir.dot(vlit(projector.up)) / z / lit::<S, T>(projector.pattern_extent.1);
    if !(s >= S::zero() && s <= S::one() && t >= S::zero() && t <= S::one()) {
        return S::zero();
    }
    let dist2 = to_p.norm_sq();
    let cos = to_p.dot(vlit(wall.normal)) / dist2.sqrt();
    if !(cos > S::zero()) {
        return S::zero();
    }
    projector.pattern.sample_as(s, t) * lit::<S, T>(projector.power) * lit::<S, T>(wall.luminance) * cos
        / dist2
}

/// Wall luminance for the scene's mode (straight projector leg).
pub fn wall_luminance<S: Real, T: Real>(scene: &Scene<T>, x_w: Vec3<S>) -> S {
    match &scene.projector {
        None => wall_luminance_textured(&scene.wall, x_w),
        Some(p) => wall_luminance_projector(p, &scene.wall, x_w),
    }
}

/// Integrand of a hit: `exposure · L · ⟨n_w, v̂_w⟩ / len^p`, with the cosine taken against the
/// arrival direction so it is positive for rays hitting the wall's front.
pub fn shade_hit<S: Real, T: Real>(
    scene: &Scene<T>,
    luminance: S,
    v_w: Vec3<S>,
    path_length: S,
) -> S {
    let n = vlit::<S, T>(scene.wall.normal);
    let cos = -n.dot(v_w) / v_w.norm();
    if !(cos > S::zero()) || !(path_length > S::zero()) {
        return S::zero();
    }
    let fall = match scene.render.falloff {
        Falloff::Linear => path_length,
        Falloff::InverseSquare => path_length * path_length,
    };
    S::lit(scene.render.exposure) * luminance * cos / fall
}

/// Luminance at a hit, including the optional refracted projector leg.
fn hit_luminance<T: Real, F: ScalarField<T> + ?Sized>(scene: &Scene<T>, eta: &F, hit: &WallHit<T>) -> Result<T> {
    match (&scene.projector, scene.render.projector_leg) {
        (None, _) => Ok(wall_luminance_textured(&scene.wall, hit.x)),
        (Some(p), ProjectorLeg::Straight) => Ok(wall_luminance_projector(p, &scene.wall, hit.x)),
        (Some(p), ProjectorLeg::Quasilinear) => {
            // Trace from the wall towards the pinhole and read the pattern in the direction the
            // light would have to leave the projector to arrive along the traced path.
            let to_p = p.position - hit.x;
            let dir = to_p.normalized();
            let start = hit.x + dir * T::lit(1e-9);
            if !scene.room.contains(start) {
                return Ok(wall_luminance_projector(p, &scene.wall, hit.x));
            }
            let cfg = scene.render.trace_config::<T>()?;
            let path = trace_quasilinear(eta, Ray::launch(eta, start, dir), &scene.room, &cfg)?;
            let exit = path.last();
            Ok(projector_lookup(p, &scene.wall, -exit.v, to_p))
        }
    }
}

/// Traces one camera ray: straight from the sensor to the room, through `eta` inside it.
pub fn trace_camera_ray<T: Real, F: ScalarField<T> + ?Sized>(
    scene: &Scene<T>,
    eta: &F,
    x_s: Vec3<T>,
    v_s: Vec3<T>,
    cfg: &TraceConfig<T>,
) -> Result<Option<WallHit<T>>> {
    let Some((t0, _)) = scene.room.ray_interval(x_s, v_s) else {
        return Ok(None);
    };
    let entry = scene.room.clamp(x_s + v_s * t0);
    let path = trace(eta, Ray::launch(eta, entry, v_s), &scene.room, cfg)?;
    Ok(intersect_wall(&path, &scene.wall).map(|h| WallHit {
        path_length: h.path_length + t0,
        ..h
    }))
}

fn render_pixel_rc<T: Real, F: ScalarField<T> + ?Sized>(
    scene: &Scene<T>,
    eta: &F,
    cfg: &TraceConfig<T>,
    row: usize,
    col: usize,
    spp: usize,
    seed: u64,
) -> Result<T> {
    let j = row * scene.camera.resolution.1 + col;
    let mut rng = pixel_rng(seed, j);
    let mut acc = T::zero();
    for _ in 0..spp {
        let s = sample_pixel(&scene.camera, row, col, scene.render.filter_sampling, &mut rng)?;
        if let Some(hit) = trace_camera_ray(scene, eta, s.x_s, s.v_s, cfg)? {
            let l = hit_luminance(scene, eta, &hit)?;
            acc += s.estimator_weight * shade_hit(scene, l, hit.v, hit.path_length);
        }
    }
    Ok(acc / T::from_usize_lossy(spp))
}

/// Monte Carlo estimate of pixel `j` (row-major index); deterministic in `(seed, j)`.
pub fn render_pixel<T: Real, F: ScalarField<T> + ?Sized>(
    scene: &Scene<T>,
    eta: &F,
    j: usize,
    spp: usize,
    seed: u64,
) -> Result<T> {
    if spp == 0 {
        return Err(Error::Validation("spp must be >= 1".into()));
    }
    let (h, w) = scene.camera.resolution;
    if j >= h * w {
        return Err(Error::OutOfRange(format!("pixel {j} outside {h}x{w} sensor")));
    }
    let cfg = scene.render.trace_config::<T>()?;
    render_pixel_rc(scene, eta, &cfg, j / w, j % w, spp, seed)
}

/// Renders the listed pixels in parallel; output order follows `pixels`.
pub fn render_pixels<T: Real, F: ScalarField<T> + ?Sized>(
    scene: &Scene<T>,
    eta: &F,
    pixels: &[usize],
    spp: usize,
    seed: u64,
) -> Result<Vec<T>> {
    pixels
        .par_iter()
        .map(|&j| render_pixel(scene, eta, j, spp, seed))
        .collect()
}

pub fn render_image<T: Real, F: ScalarField<T> + ?Sized>(
    scene: &Scene<T>,
    eta: &F,
    spp: usize,
    seed: u64,
) -> Result<Image<T>> {
    let (h, w) = scene.camera.resolution;
    let all: Vec<usize> = (0..h * w).collect();
    let data = render_pixels(scene, eta, &all, spp, seed)?;
    Ok(Image {
        height: h,
        width: w,
        spp,
        seed,
        data,
    })
}
