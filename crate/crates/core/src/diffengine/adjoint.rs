//! Adjoint of the quasi-linear renderer.
//!
//! The straight query line of each camera ray is frozen: `η` and `∇η` are sampled at fixed
//! points, and their parameter dependence flows back through the velocity and position
//! recurrences, the wall-crossing interpolation, the path length and the shading terms. The
//! recurrences are differentiated by hand; the short tail from the crossing segment to the
//! pixel contribution runs on the tape.

use rayon::prelude::*;

use crate::diffengine::tape::{gradient, reset_tape, Var};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, VoxelGrid};
use crate::math::Vec3;
use crate::renderer::{pixel_rng, sample_pixel, shade_hit, wall_luminance, ProjectorLeg};
use crate::scene::Scene;

/// An index field whose value and gradient at a point are differentiable in its parameters.
pub trait DifferentiableEta: ScalarField<f64> {
    fn n_params(&self) -> usize;

    /// Adds `η̄ ∂η(x)/∂θ + ∇η̄ · ∂∇η(x)/∂θ` to `acc`.
    fn backprop(&self, x: Vec3<f64>, eta_bar: f64, grad_bar: Vec3<f64>, acc: &mut [f64]);
}

/// Channel 0 of the grid, clamped outside the box; parameters are the node values.
impl DifferentiableEta for VoxelGrid<f64> {
    fn n_params(&self) -> usize {
        self.node_count()
    }

    fn backprop(&self, x: Vec3<f64>, eta_bar: f64, grad_bar: Vec3<f64>, acc: &mut [f64]) {
        let st = self.stencil_clamped(x);
        for c in 0..8 {
            acc[st.nodes[c]] += st.weights[c] * eta_bar + st.dweights[c].dot(grad_bar);
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Query {
    x: Vec3<f64>,
    eta: f64,
    grad: Vec3<f64>,
}

impl Query {
    fn at<E: ScalarField<f64> + ?Sized>(eta: &E, x: Vec3<f64>) -> Self {
        let (e, g) = eta.value_and_gradient(x);
        Self { x, eta: e, grad: g }
    }

    fn force(&self) -> Vec3<f64> {
        self.grad * self.eta
    }
}

/// Forward record of one camera sample that reached the wall.
struct SampleRecord {
    dir: Vec3<f64>,
    /// Straight distance from the sensor to the room entry.
    t_out: f64,
    xs: Vec<Vec3<f64>>,
    vs: Vec<Vec3<f64>>,
    full: Vec<Query>,
    half: Vec<Query>,
    /// The wall is crossed between samples `c` and `c + 1`.
    c: usize,
    weight: f64,
    value: f64,
}

/// Pixel contribution from the crossing segment, in any scalar type.
#[allow(clippy::too_many_arguments)]
fn tail<S: crate::real::Real>(
    scene: &Scene<f64>,
    xa: Vec3<S>,
    xb: Vec3<S>,
    va: Vec3<S>,
    vb: Vec3<S>,
    prefix: S,
    t_out: f64,
) -> S {
    let p: Vec3<S> = scene.wall.point.cast();
    let n: Vec3<S> = scene.wall.normal.cast();
    let da = (xa - p).dot(n);
    let db = (xb - p).dot(n);
    let alpha = da / (da - db);
    let seg = xb - xa;
    let x_w = xa + seg * alpha;
    let v_w = va + (vb - va) * alpha;
    let len = S::lit(t_out) + prefix + seg.norm() * alpha;
    let lum = wall_luminance(scene, x_w);
    shade_hit(scene, lum, v_w, len)
}

fn trace_sample<E: ScalarField<f64> + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    x_s: Vec3<f64>,
    dir: Vec3<f64>,
    weight: f64,
) -> Option<SampleRecord> {
    let room = &scene.room;
    let (t_out, _) = room.ray_interval(x_s, dir)?;
    let x0 = room.clamp(x_s + dir * t_out);
    let h = scene.render.step_m;
    let h6 = h / 6.0;
    let h8 = h / 8.0;
    let q0 = Query::at(eta, x0);
    let v0 = dir * q0.eta;
    let line = |k: f64| x0 + v0 * (k * h);
    let tol = 1e-10;
    let wall = &scene.wall;

    let mut xs = vec![x0];
    let mut vs = vec![v0];
    let mut full = vec![q0];
    let mut half = Vec::new();
    for k in 0..scene.render.max_steps {
        let kk = k as f64;
        let qm = Query::at(eta, line(kk + 0.5));
        let qn = Query::at(eta, line(kk + 1.0));
        let (fk, fm, fn_) = (full[k].force(), qm.force(), qn.force());
        let (x, v) = (xs[k], vs[k]);
        let v1 = v + (fk + fm * 4.0 + fn_) * h6;
        let vm = (v + v1) * 0.5 + (fk - fn_) * h8;
        let x1 = x + (v + vm * 4.0 + v1) * h6;
        xs.push(x1);
        vs.push(v1);
        full.push(qn);
        half.push(qm);
        let da = wall.signed_distance(x);
        let db = wall.signed_distance(x1);
        if da > tol && db <= tol {
            let alpha = da / (da - db);
            if wall.contains_in_extent(x.lerp(x1, alpha)) {
                let prefix: f64 = xs.windows(2).take(k).map(|w| (w[1] - w[0]).norm()).sum();
                let value = tail(scene, x, x1, v, v1, prefix, t_out);
                return Some(SampleRecord {
                    dir,
                    t_out,
                    xs,
                    vs,
                    full,
                    half,
                    c: k,
                    weight,
                    value,
                });
            }
        }
        if !room.contains(x1) {
            return None;
        }
    }
    None
}

fn backward_sample<E: DifferentiableEta + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    rec: &SampleRecord,
    cbar: f64,
    acc: &mut [f64],
) -> Result<()> {
    let c = rec.c;
    let h = scene.render.step_m;
    let h6 = h / 6.0;
    let h8 = h / 8.0;
    let prefix: f64 = rec.xs.windows(2).take(c).map(|w| (w[1] - w[0]).norm()).sum();

    reset_tape();
    let vin = |v: Vec3<f64>| Vec3::new(Var::input(v.x), Var::input(v.y), Var::input(v.z));
    let xa = vin(rec.xs[c]);
    let xb = vin(rec.xs[c + 1]);
    let va = vin(rec.vs[c]);
    let vb = vin(rec.vs[c + 1]);
    let pre = Var::input(prefix);
    let out = tail(scene, xa, xb, va, vb, pre, rec.t_out);
    let wrt = [
        xa.x, xa.y, xa.z, xb.x, xb.y, xb.z, va.x, va.y, va.z, vb.x, vb.y, vb.z, pre,
    ];
    let g = gradient(out, &wrt);
    reset_tape();
    let g = g?;
    let v3 = |i: usize| Vec3::new(g[i], g[i + 1], g[i + 2]) * cbar;

    let n = c + 2;
    let mut xbar = vec![Vec3::zero(); n];
    let mut vbar = vec![Vec3::zero(); n];
    xbar[c] += v3(0);
    xbar[c + 1] += v3(3);
    vbar[c] += v3(6);
    vbar[c + 1] += v3(9);
    let pbar = g[12] * cbar;
    if pbar != 0.0 {
        for k in 0..c {
            let d = rec.xs[k + 1] - rec.xs[k];
            let u = d / d.norm();
            xbar[k + 1] += u * pbar;
            xbar[k] -= u * pbar;
        }
    }

    let mut fbar_full = vec![Vec3::zero(); n];
    let mut fbar_half = vec![Vec3::zero(); c + 1];
    for k in (0..=c).rev() {
        let xb1 = xbar[k + 1];
        xbar[k] += xb1;
        vbar[k] += xb1 * h6;
        let vmbar = xb1 * (4.0 * h6);
        let mut vb1 = vbar[k + 1] + xb1 * h6;
        vbar[k] += vmbar * 0.5;
        vb1 += vmbar * 0.5;
        fbar_full[k] += vmbar * h8;
        fbar_full[k + 1] -= vmbar * h8;
        vbar[k] += vb1;
        fbar_full[k] += vb1 * h6;
        fbar_half[k] += vb1 * (4.0 * h6);
        fbar_full[k + 1] += vb1 * h6;
    }

    let emit = |q: &Query, fb: Vec3<f64>, extra_eta: f64, acc: &mut [f64]| {
        let eta_bar = fb.dot(q.grad) + extra_eta;
        let grad_bar = fb * q.eta;
        if eta_bar != 0.0 || grad_bar != Vec3::zero() {
            eta.backprop(q.x, eta_bar, grad_bar, acc);
        }
    };
    // v₀ = η(x₀) · dir
    emit(&rec.full[0], fbar_full[0], vbar[0].dot(rec.dir), acc);
    for k in 1..n {
        emit(&rec.full[k], fbar_full[k], 0.0, acc);
    }
    for k in 0..=c {
        emit(&rec.half[k], fbar_half[k], 0.0, acc);
    }
    Ok(())
}

fn check_supported(scene: &Scene<f64>) -> Result<()> {
    if scene.projector.is_some() && scene.render.projector_leg == ProjectorLeg::Quasilinear {
        return Err(Error::Unsupported(
            "differentiating the refracted projector leg".into(),
        ));
    }
    Ok(())
}

fn forward_pixel<E: ScalarField<f64> + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    j: usize,
    spp: usize,
    seed: u64,
) -> Result<(f64, Vec<SampleRecord>)> {
    let (h, w) = scene.camera.resolution;
    if j >= h * w {
        return Err(Error::OutOfRange(format!("pixel {j} outside {h}x{w} sensor")));
    }
    if spp == 0 {
        return Err(Error::Validation("spp must be >= 1".into()));
    }
    let mut rng = pixel_rng(seed, j);
    let mut recs = Vec::with_capacity(spp);
    let mut acc = 0.0;
    for _ in 0..spp {
        let s = sample_pixel(&scene.camera, j / w, j % w, scene.render.filter_sampling, &mut rng)?;
        if let Some(r) = trace_sample(scene, eta, s.x_s, s.v_s, s.estimator_weight) {
            acc += r.weight * r.value;
            recs.push(r);
        }
    }
    Ok((acc / spp as f64, recs))
}

/// Pixel intensity under the quasi-linear tracer as seen by the adjoint (crossings located on
/// unclipped steps). Agrees with [`crate::renderer::render_pixel`] in quasi-linear mode up
/// to round-off when the wall lies on a room face.
pub fn render_pixel_quasilinear<E: ScalarField<f64> + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    j: usize,
    spp: usize,
    seed: u64,
) -> Result<f64> {
    check_supported(scene)?;
    Ok(forward_pixel(scene, eta, j, spp, seed)?.0)
}

/// Gradient of one pixel's intensity with respect to the parameters of `eta`.
pub fn grad_pixel<E: DifferentiableEta + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    j: usize,
    spp: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    check_supported(scene)?;
    let (value, recs) = forward_pixel(scene, eta, j, spp, seed)?;
    let mut acc = vec![0.0; eta.n_params()];
    for r in &recs {
        backward_sample(scene, eta, r, r.weight / spp as f64, &mut acc)?;
    }
    Ok((value, acc))
}

/// Pixels per reduction chunk; partial gradients are summed in chunk order, so the result is
/// independent of the thread count.
const CHUNK: usize = 16;

/// Value and parameter gradient of `Σ_j (measured_j − I_j)²` over `pixels`, with the
/// rendered intensities `I_j` from the quasi-linear tracer; also returns the intensities.
pub fn bos_loss_and_grad<E: DifferentiableEta + ?Sized>(
    scene: &Scene<f64>,
    eta: &E,
    pixels: &[usize],
    measured: &[f64],
    spp: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_supported(scene)?;
    if pixels.len() != measured.len() {
        return Err(Error::ShapeMismatch {
            expected: pixels.len(),
            got: measured.len(),
        });
    }
    let np = eta.n_params();
    let parts: Vec<Result<(f64, Vec<f64>, Vec<f64>)>> = pixels
        .par_chunks(CHUNK)
        .zip(measured.par_chunks(CHUNK))
        .map(|(px, ms)| {
            let mut acc = vec![0.0; np];
            let mut loss = 0.0;
            let mut vals = Vec::with_capacity(px.len());
            for (&j, &m) in px.iter().zip(ms) {
                let (value, recs) = forward_pixel(scene, eta, j, spp, seed)?;
                let r = m - value;
                loss += r * r;
                vals.push(value);
                let ibar = -2.0 * r;
                if ibar != 0.0 {
                    for rec in &recs {
                        backward_sample(scene, eta, rec, ibar * rec.weight / spp as f64, &mut acc)?;
                    }
                }
            }
            Ok((loss, acc, vals))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; np];
    let mut values = Vec::with_capacity(pixels.len());
    for p in parts {
        let (l, g, v) = p?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += *b;
        }
        values.extend(v);
    }
    Ok((loss, grad, values))
}
