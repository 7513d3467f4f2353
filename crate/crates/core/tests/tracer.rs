use bos_tomo::fields::{CompactBump, GaussianBump, LinearField, ScalarField, SineTerm, SinusoidField, UniformField};
use bos_tomo::math::{Aabb, Vec3};
use bos_tomo::scene::reference_config;
use bos_tomo::tracer::*;
use bos_tomo::{Scene64, Vec3d};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: f64 = 1e-4;

fn slab() -> Aabb<f64> {
    Aabb::new(Vec3::new(-1.0, -0.5, -1.0), Vec3::new(1.0, 3.0, 1.0))
}

fn big_box() -> Aabb<f64> {
    Aabb::new(Vec3::splat(-50.0), Vec3::splat(50.0))
}

fn ramp() -> LinearField<f64> {
    LinearField {
        base: 1.0,
        gradient: Vec3::new(K, 0.0, 0.0),
        origin: Vec3::zero(),
    }
}

fn along_y<F: ScalarField<f64>>(eta: &F) -> Ray<f64> {
    Ray::launch(eta, Vec3::zero(), Vec3::new(0.0, 1.0, 0.0))
}

/// Exact solution of `x'' = k(1 + kx)` with `x(0) = x'(0) = 0`, in the ray parameter.
fn ramp_exact(t: f64) -> f64 {
    ((K * t).cosh() - 1.0) / K
}

fn smooth_field() -> SumField3 {
    SumField3 {
        a: GaussianBump {
            base: 1.000_27,
            amplitude: -3e-5,
            center: Vec3::new(0.1, 1.3, -0.05),
            sigma: 0.4,
        },
        b: SinusoidField {
            offset: 0.0,
            linear: Vec3::new(2e-6, 0.0, -1e-6),
            terms: vec![SineTerm {
                amplitude: 4e-6,
                wavevector: Vec3::new(1.5, 0.7, 2.1),
                phase: 0.3,
            }],
        },
    }
}

struct SumField3 {
    a: GaussianBump<f64>,
    b: SinusoidField<f64>,
}

impl ScalarField<f64> for SumField3 {
    fn value(&self, x: Vec3d) -> f64 {
        self.a.value(x) + self.b.value(x)
    }
    fn gradient(&self, x: Vec3d) -> Vec3d {
        self.a.gradient(x) + self.b.gradient(x)
    }
}

fn endpoint_at<F: ScalarField<f64>>(eta: &F, h: f64, t_end: f64, integ: Integrator) -> RaySample<f64> {
    let n = (t_end / h).round() as usize;
    let cfg = TraceConfig::new(h, n, integ).unwrap();
    let p = trace(eta, along_y(eta), &big_box(), &cfg).unwrap();
    assert_eq!(p.termination, Termination::MaxSteps);
    *p.last()
}

#[test]
fn parabola_matches_closed_form() {
    let eta = ramp();
    let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
    let p = trace_nonlinear(&eta, along_y(&eta), &slab(), &cfg).unwrap();
    assert_eq!(p.termination, Termination::ExitedBox);
    let e = p.last();
    assert!((e.x.y - 3.0).abs() < 1e-12);
    let want = ramp_exact(3.0);
    assert!((want - 4.5e-4).abs() / 4.5e-4 < 1e-3);
    assert!((e.x.x - want).abs() / want < 1e-6, "{} vs {}", e.x.x, want);
    assert!(e.x.z.abs() < 1e-18);
}

#[test]
fn nonlinear_self_convergence_at_least_third_order() {
    let eta = smooth_field();
    let reference = endpoint_at(&eta, 0.4 / 16.0, 3.2, Integrator::Nonlinear).x;
    let e1 = (endpoint_at(&eta, 0.4, 3.2, Integrator::Nonlinear).x - reference).norm();
    let e2 = (endpoint_at(&eta, 0.2, 3.2, Integrator::Nonlinear).x - reference).norm();
    assert!(e1 > 0.0 && e2 > 0.0);
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn speed_index_invariant() {
    let eta = smooth_field();
    let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
    let p = trace_nonlinear(&eta, along_y(&eta), &slab(), &cfg).unwrap();
    let worst = p
        .samples
        .iter()
        .map(|s| (s.v.norm() - eta.value(s.x)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst:e}");
    assert!(p.length() > 3.0);
}

#[test]
fn parameter_strictly_increasing_and_steps_bounded() {
    let eta = smooth_field();
    for integ in [Integrator::Nonlinear, Integrator::Quasilinear] {
        let cfg = TraceConfig::new(0.05, 10_000, integ).unwrap();
        let p = trace(&eta, along_y(&eta), &slab(), &cfg).unwrap();
        for w in p.samples.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!((w[1].x - w[0].x).norm() <= 0.05 * 1.001);
        }
    }
}

#[test]
fn zero_gradient_paths_are_collinear() {
    let eta = UniformField::new(1.000_27);
    let dir = Vec3::new(0.3, 1.0, -0.2).normalized();
    for integ in [Integrator::Nonlinear, Integrator::Quasilinear] {
        let cfg = TraceConfig::new(0.01, 10_000, integ).unwrap();
        let p = trace(&eta, Ray::launch(&eta, Vec3::zero(), dir), &slab(), &cfg).unwrap();
        for s in &p.samples {
            let off = s.x - dir * s.x.dot(dir);
            assert!(off.norm() < 1e-13, "{integ:?} {:e}", off.norm());
            assert_eq!(s.v, p.samples[0].v);
        }
    }
}

#[test]
fn quasilinear_matches_nonlinear_on_ramp() {
    let eta = ramp();
    let n = endpoint_at(&eta, 0.01, 3.0, Integrator::Nonlinear).x.x;
    let q = endpoint_at(&eta, 0.01, 3.0, Integrator::Quasilinear).x.x;
    assert!((n - q).abs() / n < 1e-2, "{n} {q}");
}

#[test]
fn quasilinear_misses_gradient_off_the_query_line() {
    // Bump sits beside the straight line; the nonlinear ray is first pulled in by the ramp.
    let eta = SumBumpRamp {
        ramp: LinearField {
            base: 1.0,
            gradient: Vec3::new(5e-3, 0.0, 0.0),
            origin: Vec3::zero(),
        },
        bump: CompactBump {
            amplitude: 1e-3,
            center: Vec3::new(0.02, 2.5, 0.0),
            radius: 0.012,
        },
    };
    let n = endpoint_at(&eta, 0.005, 3.0, Integrator::Nonlinear);
    let q = endpoint_at(&eta, 0.005, 3.0, Integrator::Quasilinear);
    let straight = endpoint_at(&eta.ramp, 0.005, 3.0, Integrator::Quasilinear);
    // The quasi-linear path never sees the bump.
    assert!((q.x - straight.x).norm() < 1e-12);
    assert!((n.x - q.x).norm() > 1e-4, "{:e}", (n.x - q.x).norm());
}

struct SumBumpRamp {
    ramp: LinearField<f64>,
    bump: CompactBump<f64>,
}

impl ScalarField<f64> for SumBumpRamp {
    fn value(&self, x: Vec3d) -> f64 {
        self.ramp.value(x) + self.bump.value(x)
    }
    fn gradient(&self, x: Vec3d) -> Vec3d {
        self.ramp.gradient(x) + self.bump.gradient(x)
    }
}

#[test]
fn nonlinear_trace_is_reversible() {
    let eta = smooth_field();
    let h = 0.05;
    let fwd = endpoint_at(&eta, h, 3.0, Integrator::Nonlinear);
    let fine = endpoint_at(&eta, h / 8.0, 3.0, Integrator::Nonlinear);
    let disc = (fwd.x - fine.x).norm().max(1e-15);
    let cfg = TraceConfig::new(h, 60, Integrator::Nonlinear).unwrap();
    let back = trace_nonlinear(&eta, Ray { x: fwd.x, v: -fwd.v }, &big_box(), &cfg).unwrap();
    let err = back.last().x.norm();
    assert!(err < 10.0 * disc, "{err:e} vs {disc:e}");
}

#[test]
fn randomized_quasilinear_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let wall_y = 3.0;
    for _ in 0..50 {
        let f = random_field(&mut rng, 1e-5);
        let cfg = |i| TraceConfig::new(0.01, 10_000, i).unwrap();
        let n = trace(&f, along_y(&f), &slab(), &cfg(Integrator::Nonlinear)).unwrap();
        let q = trace(&f, along_y(&f), &slab(), &cfg(Integrator::Quasilinear)).unwrap();
        let (n, q) = (n.last().x, q.last().x);
        assert!((n.y - wall_y).abs() < 1e-9 && (q.y - wall_y).abs() < 1e-9);
        let dn = (n.x * n.x + n.z * n.z).sqrt();
        let dd = (n - q).norm();
        assert!(dd / dn < 1e-2, "relative {:e}", dd / dn);
        assert!(dd < 1e-5);
    }
}

fn random_field(rng: &mut impl Rng, bound: f64) -> SinusoidField<f64> {
    let mut v = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let linear = v();
    let terms = (0..4)
        .map(|_| SineTerm {
            amplitude: 1.0,
            wavevector: v() * 3.0,
            phase: 0.0,
        })
        .collect::<Vec<_>>();
    let mut f = SinusoidField {
        offset: 1.000_27,
        linear,
        terms,
    };
    for (i, t) in f.terms.iter_mut().enumerate() {
        t.phase = i as f64;
    }
    f.scaled_to_gradient_bound(bound)
}

#[test]
fn wall_intersection_cases() {
    let mut c = reference_config();
    c.projector = None;
    let scene = Scene64::from_config(c, std::path::Path::new(".")).unwrap();
    let eta = UniformField::new(1.0);
    let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();

    let start = Vec3::new(0.85, 1.0, 1.5);
    let p = trace(&eta, Ray::launch(&eta, start, Vec3::new(0.0, 1.0, 0.0)), &scene.room, &cfg).unwrap();
    let hit = intersect_wall(&p, &scene.wall).unwrap();
    assert!((hit.x - Vec3::new(0.85, 4.0, 1.5)).norm() < 1e-12);
    assert!((hit.path_length - 3.0).abs() < 1e-12);

    let p = trace(&eta, Ray::launch(&eta, start, Vec3::new(1.0, 0.0, 0.0)), &scene.room, &cfg).unwrap();
    assert!(intersect_wall(&p, &scene.wall).is_none());
}

#[test]
fn wall_intersection_on_parabola() {
    let mut c = reference_config();
    c.projector = None;
    let scene = Scene64::from_config(c, std::path::Path::new(".")).unwrap();
    let eta = LinearField {
        base: 1.0,
        gradient: Vec3::new(K, 0.0, 0.0),
        origin: Vec3::new(0.85, 1.0, 1.5),
    };
    let start = Vec3::new(0.85, 1.0, 1.5);
    let cfg = TraceConfig::new(0.01, 10_000, Integrator::Nonlinear).unwrap();
    let p = trace(&eta, Ray::launch(&eta, start, Vec3::new(0.0, 1.0, 0.0)), &scene.room, &cfg).unwrap();
    let hit = intersect_wall(&p, &scene.wall).unwrap();
    let off = hit.x.x - 0.85;
    assert!((off - ramp_exact(3.0)).abs() / off < 1e-4, "{off:e}");
}
