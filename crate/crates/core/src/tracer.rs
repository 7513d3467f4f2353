//! Ray tracing through a continuously varying refractive index.
//!
//! Rays follow `dx/dt = v`, `dv/dt = η ∇η` in the parameter `t` with `dt = ds/η`, so that
//! `‖v‖ = η` along exact solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::math::{Aabb, Vec3};
use crate::real::Real;
use crate::scene::WallPlane;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Fully coupled RK4 on position and velocity.
    #[default]
    Nonlinear,
    /// Velocity integrated along the undeflected line, then position from the velocity.
    Quasilinear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceConfig<T> {
    pub step: T,
    pub max_steps: usize,
    pub integrator: Integrator,
}

impl<T: Real> TraceConfig<T> {
    pub fn new(step: T, max_steps: usize, integrator: Integrator) -> Result<Self> {
        if !(step > T::zero()) || !step.is_finite() {
            return Err(Error::Validation(format!("trace step must be positive, got {step}")));
        }
        if max_steps == 0 {
            return Err(Error::Validation("max_steps must be >= 1".into()));
        }
        Ok(Self {
            step,
            max_steps,
            integrator,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub x: Vec3<T>,
    pub v: Vec3<T>,
}

impl<T: Real> Ray<T> {
    /// Ray at `x` heading along `dir` with `‖v‖ = η(x)`.
    pub fn launch<F: ScalarField<T> + ?Sized>(eta: &F, x: Vec3<T>, dir: Vec3<T>) -> Self {
        Self {
            x,
            v: dir.normalized() * eta.value(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample<T> {
    pub t: T,
    pub x: Vec3<T>,
    pub v: Vec3<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ExitedBox,
    HitWall,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayPath<T> {
    pub samples: Vec<RaySample<T>>,
    pub termination: Termination,
}

impl<T: Real> RayPath<T> {
    pub fn last(&self) -> &RaySample<T> {
        self.samples.last().expect("paths hold at least the start sample")
    }

    /// Sum of chord lengths between consecutive samples.
    pub fn length(&self) -> T {
        self.samples
            .windows(2)
            .map(|w| (w[1].x - w[0].x).norm())
            .sum()
    }
}

/// Where a traced path meets the wall.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallHit<T> {
    pub x: Vec3<T>,
    pub v: Vec3<T>,
    /// Arc length from the path start to `x`.
    pub path_length: T,
}

#[inline]
fn accel<T: Real, F: ScalarField<T> + ?Sized>(eta: &F, x: Vec3<T>) -> Vec3<T> {
    let (n, g) = eta.value_and_gradient(x);
    g * n
}

/// One classic RK4 step of the coupled system.
pub fn rk4_step<T: Real, F: ScalarField<T> + ?Sized>(
    eta: &F,
    x: Vec3<T>,
    v: Vec3<T>,
    h: T,
) -> (Vec3<T>, Vec3<T>) {
    let half = h * T::lit(0.5);
    let two = T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let k1x = v;
    let k1v = accel(eta, x);
    let k2x = v + k1v * half;
    let k2v = accel(eta, x + k1x * half);
    let k3x = v + k2v * half;
    let k3v = accel(eta, x + k2x * half);
    let k4x = v + k3v * h;
    let k4v = accel(eta, x + k3x * h);
    (
        x + (k1x + (k2x + k3x) * two + k4x) * sixth,
        v + (k1v + (k2v + k3v) * two + k4v) * sixth,
    )
}

fn start_inside<T: Real>(r0: &Ray<T>, bbox: &Aabb<T>) -> Result<Vec3<T>> {
    let tol = T::lit(1e-9) * bbox.extent().max_abs().max(T::one());
    if !bbox.contains_with_tol(r0.x, tol) {
        return Err(Error::OutOfDomain(format!(
            "ray start {:?} outside the tracing box",
            r0.x.to_f64()
        )));
    }
    if !(r0.v.norm() > T::zero()) {
        return Err(Error::Validation("ray velocity must be nonzero".into()));
    }
    Ok(bbox.clamp(r0.x))
}

/// Appends `(x1, v1)` or its clipped version; returns true when the box was left.
fn push_step<T: Real>(
    samples: &mut Vec<RaySample<T>>,
    bbox: &Aabb<T>,
    h: T,
    x1: Vec3<T>,
    v1: Vec3<T>,
) -> bool {
    let prev = *samples.last().expect("nonempty");
    if bbox.contains(x1) {
        samples.push(RaySample {
            t: prev.t + h,
            x: x1,
            v: v1,
        });
        return false;
    }
    let alpha = bbox.exit_fraction(prev.x, x1);
    samples.push(RaySample {
        t: prev.t + h * alpha,
        x: prev.x.lerp(x1, alpha),
        v: prev.v.lerp(v1, alpha),
    });
    true
}

/// Full nonlinear tracing with RK4 until the ray leaves `bbox` (final segment clipped to the
/// face) or `max_steps` is reached.
pub fn trace_nonlinear<T: Real, F: ScalarField<T> + ?Sized>(
    eta: &F,
    r0: Ray<T>,
    bbox: &Aabb<T>,
    cfg: &TraceConfig<T>,
) -> Result<RayPath<T>> {
    let x0 = start_inside(&r0, bbox)?;
    let mut samples = Vec::with_capacity(64);
    samples.push(RaySample {
        t: T::zero(),
        x: x0,
        v: r0.v,
    });
    for _ in 0..cfg.max_steps {
        let s = *samples.last().unwrap();
        let (x1, v1) = rk4_step(eta, s.x, s.v, cfg.step);
        if push_step(&mut samples, bbox, cfg.step, x1, v1) {
            return Ok(RayPath {
                samples,
                termination: Termination::ExitedBox,
            });
        }
    }
    Ok(RayPath {
        samples,
        termination: Termination::MaxSteps,
    })
}

/// Quasi-linear tracing. Pass 1 samples `η∇η` along `x₀ + t v₀` at whole and half steps and
/// integrates the velocity alone (Simpson); pass 2 integrates the position from the cubic
/// Hermite interpolant of that velocity on the same step grid.
pub fn trace_quasilinear<T: Real, F: ScalarField<T> + ?Sized>(
    eta: &F,
    r0: Ray<T>,
    bbox: &Aabb<T>,
    cfg: &TraceConfig<T>,
) -> Result<RayPath<T>> {
    let x0 = start_inside(&r0, bbox)?;
    let h = cfg.step;
    let half = T::lit(0.5);
    let h6 = h / T::lit(6.0);
    let h8 = h / T::lit(8.0);
    let four = T::lit(4.0);
    let line = |k: T| x0 + r0.v * (k * h);

    let mut samples = Vec::with_capacity(64);
    samples.push(RaySample {
        t: T::zero(),
        x: x0,
        v: r0.v,
    });
    let mut f_k = accel(eta, x0);
    for k in 0..cfg.max_steps {
        let kk = T::from_usize_lossy(k);
        let f_m = accel(eta, line(kk + half));
        let f_n = accel(eta, line(kk + T::one()));
        let s = *samples.last().unwrap();
        let v1 = s.v + (f_k + f_m * four + f_n) * h6;
        let vm = (s.v + v1) * half + (f_k - f_n) * h8;
        let x1 = s.x + (s.v + vm * four + v1) * h6;
        if push_step(&mut samples, bbox, h, x1, v1) {
            return Ok(RayPath {
                samples,
                termination: Termination::ExitedBox,
            });
        }
        f_k = f_n;
    }
    Ok(RayPath {
        samples,
        termination: Termination::MaxSteps,
    })
}

pub fn trace<T: Real, F: ScalarField<T> + ?Sized>(
    eta: &F,
    r0: Ray<T>,
    bbox: &Aabb<T>,
    cfg: &TraceConfig<T>,
) -> Result<RayPath<T>> {
    match cfg.integrator {
        Integrator::Nonlinear => trace_nonlinear(eta, r0, bbox, cfg),
        Integrator::Quasilinear => trace_quasilinear(eta, r0, bbox, cfg),
    }
}

/// Tolerance for treating a sample as lying on the wall plane.
fn plane_tol<T: Real>() -> T {
    T::lit(1e-10)
}

/// First crossing of the wall plane (from its normal side) inside the wall extent, located by
/// linear interpolation within the crossing segment.
pub fn intersect_wall<T: Real>(path: &RayPath<T>, wall: &WallPlane<T>) -> Option<WallHit<T>> {
    let tol = plane_tol::<T>();
    let mut len = T::zero();
    for w in path.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let da = wall.signed_distance(a.x);
        let db = wall.signed_distance(b.x);
        let seg = (b.x - a.x).norm();
        if da > tol && db <= tol {
            let alpha = (da / (da - db)).min(T::one()).max(T::zero());
            let x = a.x.lerp(b.x, alpha);
            if wall.contains_in_extent(x) {
                return Some(WallHit {
                    x,
                    v: a.v.lerp(b.v, alpha),
                    path_length: len + seg * alpha,
                });
            }
        }
        len += seg;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{LinearField, UniformField};

    fn cube(side: f64) -> Aabb<f64> {
        Aabb::new(Vec3::new(-side, -side, -side), Vec3::new(side, side, side))
    }

    #[test]
    fn uniform_field_gives_straight_exit() {
        let eta = UniformField::new(1.0);
        let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
        let p = trace_nonlinear(
            &eta,
            Ray::launch(&eta, Vec3::zero(), Vec3::new(0.0, 1.0, 0.0)),
            &cube(1.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(p.termination, Termination::ExitedBox);
        let e = p.last();
        assert!((e.x.y - 1.0).abs() < 1e-12);
        assert_eq!((e.x.x, e.x.z), (0.0, 0.0));
        assert_eq!(e.v, Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn max_steps_flagged() {
        let eta = UniformField::new(1.0);
        let cfg = TraceConfig::new(0.01, 5, Integrator::Quasilinear).unwrap();
        let p = trace(
            &eta,
            Ray::launch(&eta, Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)),
            &cube(1.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(p.termination, Termination::MaxSteps);
        assert_eq!(p.samples.len(), 6);
    }

    #[test]
    fn start_outside_rejected() {
        let eta = UniformField::new(1.0);
        let cfg = TraceConfig::new(0.01, 5, Integrator::Nonlinear).unwrap();
        let r = Ray::launch(&eta, Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert!(trace(&eta, r, &cube(1.0), &cfg).is_err());
    }

    #[test]
    fn constant_gradient_bends_towards_higher_index() {
        let eta = LinearField {
            base: 1.0,
            gradient: Vec3::new(1e-4, 0.0, 0.0),
            origin: Vec3::zero(),
        };
        let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
        let bbox = Aabb::new(Vec3::new(-1.0, -0.5, -1.0), Vec3::new(1.0, 3.0, 1.0));
        let p = trace(
            &eta,
            Ray::launch(&eta, Vec3::zero(), Vec3::new(0.0, 1.0, 0.0)),
            &bbox,
            &cfg,
        )
        .unwrap();
        assert!(p.last().x.x > 4e-4);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(TraceConfig::new(0.0, 5, Integrator::Nonlinear).is_err());
        assert!(TraceConfig::new(0.1, 0, Integrator::Nonlinear).is_err());
    }
}
