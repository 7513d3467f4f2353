//! Counter-based batch sampling: every batch is a pure function of `(seed, kind, iteration)`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::math::Vec3;
use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Collocation = 1,
    Pixels = 2,
    Boundary = 3,
    Scales = 4,
}

fn rng(seed: u64, kind: SampleKind, iteration: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((kind as u64) << 48) | iteration as u64);
    r
}

/// Uniform points in the room box.
pub fn collocation_points(scene: &Scene<f64>, seed: u64, iteration: usize, n: usize) -> Vec<Vec3<f64>> {
    let mut r = rng(seed, SampleKind::Collocation, iteration);
    let lo = scene.room.min;
    let e = scene.room.extent();
    (0..n)
        .map(|_| {
            let u: [f64; 3] = r.gen();
            Vec3::new(lo.x + e.x * u[0], lo.y + e.y * u[1], lo.z + e.z * u[2])
        })
        .collect()
}

/// `n` distinct pixel indices, or `n` draws with replacement when `n` exceeds the pixel count.
pub fn pixel_indices(scene: &Scene<f64>, seed: u64, iteration: usize, n: usize) -> Vec<usize> {
    let mut r = rng(seed, SampleKind::Pixels, iteration);
    let total = scene.camera.pixel_count();
    if n <= total {
        index::sample(&mut r, total, n).into_vec()
    } else {
        (0..n).map(|_| r.gen_range(0..total)).collect()
    }
}

/// Uniform points on the boundary plane, within the room's face.
pub fn boundary_points(
    scene: &Scene<f64>,
    seed: u64,
    kind: SampleKind,
    iteration: usize,
    n: usize,
) -> Vec<Vec3<f64>> {
    let mut r = rng(seed, kind, iteration);
    let bp = &scene.boundary_plane;
    let (a, b) = bp.in_plane_axes();
    let lo = scene.room.min;
    let e = scene.room.extent();
    (0..n)
        .map(|_| {
            let u: [f64; 2] = r.gen();
            let mut x = Vec3::zero();
            x[bp.axis] = bp.offset;
            x[a] = lo[a] + e[a] * u[0];
            x[b] = lo[b] + e[b] * u[1];
            x
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatches {
    pub collocation: Vec<Vec3<f64>>,
    pub pixels: Vec<usize>,
    pub boundary: Vec<Vec3<f64>>,
}

/// Batches of one iteration. Terms with zero weight get empty batches.
pub fn sample_batches(scene: &Scene<f64>, cfg: &TrainConfig, iteration: usize) -> SampledBatches {
    let w = &cfg.weights;
    SampledBatches {
        collocation: if w.pde() != 0.0 {
            collocation_points(scene, cfg.seed, iteration, cfg.batch_collocation)
        } else {
            Vec::new()
        },
        pixels: if w.bos() != 0.0 {
            pixel_indices(scene, cfg.seed, iteration, cfg.batch_pixels)
        } else {
            Vec::new()
        },
        boundary: if w.boundary() != 0.0 {
            boundary_points(scene, cfg.seed, SampleKind::Boundary, iteration, cfg.batch_boundary)
        } else {
            Vec::new()
        },
    }
}
