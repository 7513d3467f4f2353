//! Finite-difference verification of every derivative route used in training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bos_loss_and_grad, render_pixel_quasilinear};
use crate::error::Result;
use crate::fields::{UniformField, VoxelGrid};
use crate::math::Vec3;
use crate::pinn::{
    loss_boundary, loss_boundary_grad, loss_bos, loss_bos_grad, loss_pde, loss_pde_grad, max_abs_scales,
    BoundaryNormalization, BoundarySamples, FlowState, NetworkConfig, NeuralField,
};
use crate::renderer::{render_image, Falloff};
use crate::scene::{reference_config, NondimConstants, Scene};
use crate::tracer::Integrator;

/// Worst relative error of one derivative route against its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel < self.tolerance
    }
}

/// Richardson-extrapolated central first difference.
pub fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Richardson-extrapolated central second difference.
pub fn richardson2(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor).max(1e-300)
}

fn small_scene(projector: bool) -> Result<Scene<f64>> {
    let mut c = reference_config();
    if !projector {
        c.projector = None;
    }
    c.camera.resolution = [2, 5];
    c.render.integrator = Integrator::Quasilinear;
    c.render.step_m = 0.05;
    c.render.falloff = Falloff::InverseSquare;
    Scene::from_config(c, Path::new("."))
}

/// Runs the spatial-jet, parameter-gradient and through-renderer checks on instances drawn
/// from `seed`.
pub fn run_gradcheck(seed: u64) -> Result<Vec<CheckResult>> {
    let scene = small_scene(false)?;
    let room = scene.room;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = |n: usize| -> Vec<Vec3<f64>> {
        let e = room.extent();
        (0..n)
            .map(|_| room.min + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z))
            .collect()
    };
    let net = |layers, width, s| {
        NeuralField::new(
            &NetworkConfig {
                hidden_layers: layers,
                width,
                seed: s,
                ..Default::default()
            },
            &room,
        )
    };
    let mut out = Vec::new();

    // Spatial derivatives of the network outputs.
    let nf = net(3, 16, seed)?;
    let pts = points(50);
    let mut worst: f64 = 0.0;
    for &x in &pts {
        let jets = nf.eval_jet(x)?;
        let f = |o: usize, k: usize, h: f64| {
            let mut y = x;
            y[k] += h;
            nf.forward_with(nf.params(), y)[o]
        };
        for (o, jet) in jets.iter().enumerate() {
            let scale = jet.d.iter().fold(jet.v.abs(), |m, v| m.max(v.abs()));
            let mut lap = 0.0;
            for k in 0..3 {
                worst = worst.max(rel(jet.d[k], richardson(|h| f(o, k, h), 1e-3), 1e-2 * scale));
                lap += richardson2(|h| f(o, k, h), 2e-3);
            }
            worst = worst.max(rel(jet.laplacian(), lap, 1e-2 * scale));
        }
    }
    out.push(CheckResult {
        name: "spatial jacobian/laplacian",
        max_rel: worst,
        tolerance: 1e-5,
        samples: pts.len(),
    });

    // Parameter gradients of the PDE and boundary terms.
    let nf = net(2, 10, seed + 1)?;
    let consts = NondimConstants {
        re: 100.0,
        pe: 100.0,
        ri: 1.0,
        l: 1.0,
        u: 0.2,
        e_g: Vec3::new(0.0, 0.0, -1.0),
    };
    let colloc = points(24);
    let gamma = [1.0, 0.5, 2.0];
    let (_, g) = loss_pde_grad(&nf, &colloc, gamma, &consts)?;
    out.push(param_check("pde parameter gradient", &nf, &g, 12, 1e-5, seed, 1e-4, |n| {
        loss_pde(n, &colloc, gamma, &consts)
    })?);

    let bpts = points(16);
    let reference: Vec<FlowState<f64>> = bpts
        .iter()
        .map(|x| FlowState {
            t_nd: 0.2 * x.z.cos(),
            p: 0.05 * x.y,
            u: Vec3::new(0.1, 0.0, 0.3 * x.x.sin()),
        })
        .collect();
    let scales = max_abs_scales(&reference);
    let bs = BoundarySamples {
        points: bpts,
        reference,
    };
    for (name, mode) in [
        ("boundary parameter gradient (reference max)", BoundaryNormalization::ReferenceMax),
        ("boundary parameter gradient (own max)", BoundaryNormalization::OwnMax),
    ] {
        let (_, g) = loss_boundary_grad(&nf, &bs, mode, scales)?;
        out.push(param_check(name, &nf, &g, 12, 1e-5, seed + 2, 1e-4, |n| {
            loss_boundary(n, &bs, mode, scales)
        })?);
    }

    // BOS term through the renderer.
    let mut measured = render_image(&scene, &UniformField::new(scene.medium.ambient_eta()), 2, 0)?;
    for (j, v) in measured.data.iter_mut().enumerate() {
        *v *= 1.0 + 0.01 * (j as f64).sin();
    }
    let pixels: Vec<usize> = (0..10).collect();
    let dims = [6, 6, 5];
    let (_, g) = loss_bos_grad(&nf, &scene, &measured, &pixels, 2, 0, dims)?;
    out.push(param_check("bos parameter gradient through renderer", &nf, &g, 6, 1e-3, seed + 3, 1e-4, |n| {
        loss_bos(n, &scene, &measured, &pixels, 2, 0, dims)
    })?);

    // Renderer adjoint with respect to index-of-refraction nodes.
    for (name, projector) in [("renderer adjoint (textured wall)", false), ("renderer adjoint (projector)", true)] {
        let scene = small_scene(projector)?;
        let base = scene.medium.ambient_eta();
        let mut r = ChaCha8Rng::seed_from_u64(seed + 4);
        let data = (0..9 * 9 * 7).map(|_| base + 2e-5 * r.gen_range(-1.0..1.0)).collect();
        let grid = VoxelGrid::new([9, 9, 7], scene.room, 1, data)?;
        let measured = pixels
            .iter()
            .map(|&j| Ok(render_pixel_quasilinear(&scene, &grid, j, 2, 0)? * 1.01 + 1e-4))
            .collect::<Result<Vec<f64>>>()?;
        let (_, grad, _) = bos_loss_and_grad(&scene, &grid, &pixels, &measured, 2, 0)?;
        let mut order: Vec<usize> = (0..grad.len()).collect();
        order.sort_by(|a, b| grad[*b].abs().total_cmp(&grad[*a].abs()));
        let mut worst: f64 = 0.0;
        for &i in order.iter().take(10) {
            let fd = richardson(
                |h| {
                    let mut p = grid.clone();
                    p.data_mut()[i] += h;
                    bos_loss_and_grad(&scene, &p, &pixels, &measured, 2, 0).map_or(f64::NAN, |v| v.0)
                },
                1e-7,
            );
            worst = worst.max(rel(grad[i], fd, 0.0));
        }
        out.push(CheckResult {
            name,
            max_rel: worst,
            tolerance: 1e-3,
            samples: 10,
        });
    }
    Ok(out)
}

/// Compares `grad` with Richardson differences of `loss` at `n` random parameter indices.
/// Errors are relative to `max(|fd|, floor · max|grad|)`.
#[allow(clippy::too_many_arguments)]
fn param_check(
    name: &'static str,
    nf: &NeuralField<f64>,
    grad: &[f64],
    n: usize,
    tolerance: f64,
    seed: u64,
    floor: f64,
    loss: impl Fn(&NeuralField<f64>) -> Result<f64>,
) -> Result<CheckResult> {
    let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = rng.gen_range(0..grad.len());
        let f = |h: f64| {
            let mut p = nf.clone();
            p.params_mut()[k] += h;
            loss(&p).unwrap_or(f64::NAN)
        };
        worst = worst.max(rel(grad[k], richardson(f, 1e-4), floor * gmax));
    }
    Ok(CheckResult {
        name,
        max_rel: worst,
        tolerance,
        samples: n,
    })
}
