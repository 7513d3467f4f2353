//! Training: batch samplers, the adaptive-moment optimizer, and the loop that ties the
//! three losses together with checkpoints and a loss log.

mod adabelief;
mod sampling;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use adabelief::OptState;
pub use sampling::{boundary_points, collocation_points, pixel_indices, sample_batches, SampleKind, SampledBatches};

use crate::error::{Error, Result};
use crate::fields::VoxelGrid;
use crate::math::Vec3;
use crate::pinn::{
    load_checkpoint, reference_scales, save_checkpoint, total_loss_grad, Batches, BoundaryNormalization,
    BoundarySamples, CheckpointDtype, FieldScales, FlowState, LossTerms, LossWeights, NetworkConfig,
    NeuralField,
};
use crate::renderer::Image;
use crate::scene::{MediumConstants, NondimConstants, Scene};

/// Which per-pixel seeds the BOS term renders with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BosSeedMode {
    /// The measurement's seeds, identical every iteration.
    #[default]
    Fixed,
    /// Fresh seeds per iteration.
    PerIteration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_collocation: usize,
    pub batch_pixels: usize,
    pub batch_boundary: usize,
    pub seed: u64,
    /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cosine decay of the learning rate to zero over `iterations`.
    pub cosine_decay: bool,
    pub network: NetworkConfig,
    pub boundary_normalization: BoundaryNormalization,
    /// Scale used for a boundary reference field that is identically zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_zero_scale: Option<f64>,
    pub bos_spp: usize,
    pub bos_seed_mode: BosSeedMode,
    /// Nodes per axis of the grid the network temperature is sampled on for rendering.
    pub eta_proxy_resolution: [usize; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_collocation: 2048,
            batch_pixels: 1024,
            batch_boundary: 1024,
            seed: 0,
            checkpoint_every: 0,
            weights: LossWeights::default(),
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
            cosine_decay: false,
            network: NetworkConfig::default(),
            boundary_normalization: BoundaryNormalization::ReferenceMax,
            boundary_zero_scale: None,
            bos_spp: 2,
            bos_seed_mode: BosSeedMode::Fixed,
            eta_proxy_resolution: [24, 24, 24],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be >= 1".into()));
        }
        if self.batch_collocation == 0 || self.batch_pixels == 0 || self.batch_boundary == 0 {
            return Err(Error::Validation("batch sizes must be >= 1".into()));
        }
        self.weights.validate()?;
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Validation("lr must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("betas must lie in [0, 1)".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Validation("eps must be >= 0".into()));
        }
        if self.bos_spp == 0 {
            return Err(Error::Validation("bos_spp must be >= 1".into()));
        }
        if self.eta_proxy_resolution.iter().any(|&n| n < 2) {
            return Err(Error::Validation("eta_proxy_resolution must be >= 2 per axis".into()));
        }
        if let Some(z) = self.boundary_zero_scale {
            if !(z > 0.0) {
                return Err(Error::Validation("boundary_zero_scale must be > 0".into()));
            }
        }
        self.network.validate()
    }

    /// Learning rate at (0-based) iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        if self.cosine_decay {
            let f = it as f64 / self.iterations as f64;
            0.5 * self.lr * (1.0 + (std::f64::consts::PI * f).cos())
        } else {
            self.lr
        }
    }
}

/// Nondimensional flow state as a function of position (boundary references, evaluation).
pub trait StateField: Sync {
    fn state(&self, x: Vec3<f64>) -> Result<FlowState<f64>>;
}

impl StateField for NeuralField<f64> {
    fn state(&self, x: Vec3<f64>) -> Result<FlowState<f64>> {
        Ok(self.eval_unchecked(x))
    }
}

/// Boundary reference read from a 5-channel VOXGRID of dimensional `T` (K), `p` (Pa) and
/// `u` (m/s), interpolated trilinearly.
pub struct GridReference {
    pub grid: VoxelGrid<f64>,
    pub medium: MediumConstants<f64>,
    pub nondim: NondimConstants<f64>,
}

impl GridReference {
    pub fn new(grid: VoxelGrid<f64>, scene: &Scene<f64>) -> Result<Self> {
        if grid.channels() != 5 {
            return Err(Error::ShapeMismatch {
                expected: 5,
                got: grid.channels(),
            });
        }
        Ok(Self {
            grid,
            medium: scene.medium,
            nondim: scene.nondim,
        })
    }
}

/// Dynamic pressure scale `ρ₀U²` (Pa) used for dimensional exports.
pub fn pressure_scale(medium: &MediumConstants<f64>, nondim: &NondimConstants<f64>) -> f64 {
    medium.rho0 * nondim.u * nondim.u
}

impl StateField for GridReference {
    fn state(&self, x: Vec3<f64>) -> Result<FlowState<f64>> {
        let st = self.grid.stencil_clamped(x);
        let n = self.grid.node_count();
        let d = self.grid.data();
        let ch = |c: usize| st.apply(&d[c * n..(c + 1) * n]);
        let ps = pressure_scale(&self.medium, &self.nondim);
        Ok(FlowState {
            t_nd: self.medium.t_nd(ch(0)),
            p: ch(1) / ps,
            u: Vec3::new(ch(2), ch(3), ch(4)) / self.nondim.u,
        })
    }
}

/// Ambient, motionless state everywhere.
pub struct AmbientReference;

impl StateField for AmbientReference {
    fn state(&self, _x: Vec3<f64>) -> Result<FlowState<f64>> {
        Ok(FlowState {
            t_nd: 0.0,
            p: 0.0,
            u: Vec3::zero(),
        })
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub terms: LossTerms,
    pub total: f64,
}

/// Points used once to fix the reference max-abs scales of the boundary term.
const SCALE_SAMPLES: usize = 4096;

/// Resumable training state.
pub struct Trainer<'a> {
    pub scene: &'a Scene<f64>,
    pub cfg: TrainConfig,
    pub field: NeuralField<f64>,
    pub opt: OptState,
    pub history: Vec<LossRecord>,
    measured: Option<&'a Image<f64>>,
    reference: &'a dyn StateField,
    scales: FieldScales,
}

impl<'a> Trainer<'a> {
    pub fn new(
        scene: &'a Scene<f64>,
        measured: Option<&'a Image<f64>>,
        reference: &'a dyn StateField,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if let Some(m) = measured {
            let (h, w) = scene.camera.resolution;
            if m.height != h || m.width != w {
                return Err(Error::Validation(format!(
                    "measurement is {}x{}, camera is {h}x{w}",
                    m.height, m.width
                )));
            }
        } else if cfg.weights.bos() != 0.0 {
            return Err(Error::Validation("BOS weight is nonzero but no measurement was given".into()));
        }
        let field = NeuralField::new(&cfg.network, &scene.room)?;
        let opt = OptState::new(field.n_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        let pts = boundary_points(scene, cfg.seed, SampleKind::Scales, 0, SCALE_SAMPLES);
        let refs = pts.iter().map(|&x| reference.state(x)).collect::<Result<Vec<_>>>()?;
        let scales = reference_scales(&refs, cfg.boundary_zero_scale)?;
        Ok(Self {
            scene,
            cfg,
            field,
            opt,
            history: Vec::new(),
            measured,
            reference,
            scales,
        })
    }

    pub fn boundary_scales(&self) -> FieldScales {
        self.scales
    }

    pub fn iteration(&self) -> usize {
        self.opt.step as usize
    }

    fn bos_seed(&self, it: usize) -> u64 {
        match self.cfg.bos_seed_mode {
            BosSeedMode::Fixed => self.scene.render.seed,
            BosSeedMode::PerIteration => self.scene.render.seed ^ (it as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        }
    }

    /// One sample → loss → gradient → update cycle.
    pub fn step(&mut self) -> Result<LossRecord> {
        let it = self.iteration();
        let b = sample_batches(self.scene, &self.cfg, it);
        let reference = b
            .boundary
            .iter()
            .map(|&x| self.reference.state(x))
            .collect::<Result<Vec<_>>>()?;
        let bs = BoundarySamples {
            points: b.boundary,
            reference,
        };
        let batches = Batches {
            collocation: &b.collocation,
            boundary: &bs,
            boundary_mode: self.cfg.boundary_normalization,
            boundary_scales: self.scales,
            pixels: &b.pixels,
            measured: self.measured,
            spp: self.cfg.bos_spp,
            seed: self.bos_seed(it),
            proxy_dims: self.cfg.eta_proxy_resolution,
        };
        let res = total_loss_grad(&self.field, self.scene, &batches, &self.cfg.weights);
        let (total, terms, grad) = match res {
            Ok(v) => v,
            Err(Error::NonFinite { detail, .. }) => {
                return Err(Error::NonFinite { iteration: it, detail })
            }
            Err(e) => return Err(e),
        };
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                detail: format!(
                    "L_BOS={:e} L_boundary={:e} L_PDE={:e} total={:e}",
                    terms.bos, terms.boundary, terms.pde, total
                ),
            });
        }
        self.opt.lr = self.cfg.lr_at(it);
        self.opt.step(self.field.params_mut(), &grad)?;
        let rec = LossRecord {
            iteration: it,
            terms,
            total,
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Writes the network (`model.bin`, f64 parameters) and optimizer state (`optim.bin`).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_checkpoint(dir.join("model.bin"), &self.field, CheckpointDtype::F64)?;
        self.opt.save(dir.join("optim.bin"))
    }

    /// Restores a state written by [`Trainer::save`].
    pub fn resume(&mut self, dir: &Path) -> Result<()> {
        let field = load_checkpoint(dir.join("model.bin"))?;
        if field.sizes() != self.field.sizes() {
            return Err(Error::Validation("checkpoint architecture differs from the config".into()));
        }
        let opt = OptState::load(dir.join("optim.bin"))?;
        if opt.m.len() != field.n_params() {
            return Err(Error::ShapeMismatch {
                expected: field.n_params(),
                got: opt.m.len(),
            });
        }
        self.field = field;
        self.opt = opt;
        Ok(())
    }

    /// Runs the remaining iterations. With `out`, writes `loss.csv`, periodic checkpoints
    /// under `checkpoints/iter_NNNNNN/` and the final state under `final/`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        let mut log = match out {
            Some(d) => {
                fs::create_dir_all(d)?;
                let mut w = BufWriter::new(File::create(d.join("loss.csv"))?);
                writeln!(w, "iteration,L_BOS,L_boundary,L_PDE,total")?;
                for r in &self.history {
                    write_record(&mut w, r)?;
                }
                Some(w)
            }
            None => None,
        };
        while self.iteration() < self.cfg.iterations {
            let rec = self.step()?;
            if let Some(w) = log.as_mut() {
                write_record(w, &rec)?;
            }
            let done = self.iteration();
            if let (Some(d), true) = (out, self.cfg.checkpoint_every > 0) {
                if done % self.cfg.checkpoint_every == 0 && done < self.cfg.iterations {
                    self.save(&checkpoint_dir(d, done))?;
                }
            }
        }
        if let Some(mut w) = log {
            w.flush()?;
        }
        if let Some(d) = out {
            self.save(&d.join("final"))?;
        }
        Ok(())
    }
}

fn write_record(w: &mut impl Write, r: &LossRecord) -> Result<()> {
    writeln!(
        w,
        "{},{:e},{:e},{:e},{:e}",
        r.iteration, r.terms.bos, r.terms.boundary, r.terms.pde, r.total
    )?;
    Ok(())
}

pub fn checkpoint_dir(out: &Path, iteration: usize) -> PathBuf {
    out.join("checkpoints").join(format!("iter_{iteration:06}"))
}

/// Trained field and loss history.
pub struct TrainOutput {
    pub field: NeuralField<f64>,
    pub history: Vec<LossRecord>,
}

/// Trains a fresh network on `scene` against `measured` and the boundary `reference`.
pub fn train(
    scene: &Scene<f64>,
    measured: Option<&Image<f64>>,
    reference: &dyn StateField,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutput> {
    let mut t = Trainer::new(scene, measured, reference, cfg.clone())?;
    t.run(out)?;
    Ok(TrainOutput {
        field: t.field,
        history: t.history,
    })
}
