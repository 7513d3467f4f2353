use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bos_tomo::diffengine::run_gradcheck;
use bos_tomo::fields::{EtaFromTemperature, ScalarField, UniformField, VoxelGrid};
use bos_tomo::io::{read_pfm, read_voxgrid, write_pfm, write_png_preview, write_voxgrid};
use bos_tomo::math::Vec3;
use bos_tomo::optim::{pressure_scale, AmbientReference, GridReference, StateField, TrainConfig, Trainer};
use bos_tomo::oracle::{error_volume, evaluate, regime_study, GaussianPlume, Metrics, StudyOptions};
use bos_tomo::pinn::{load_checkpoint, NeuralField};
use bos_tomo::renderer::{render_image, trace_camera_ray, Image};
use bos_tomo::scene::{reference_config, SceneConfig};
use bos_tomo::tracer::{trace, Integrator, Ray, RayPath, TraceConfig};
use bos_tomo::Scene64;
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::Failure;

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a camera image of the scene through a temperature volume.
    Render(RenderArgs),
    /// Trace one ray and write its samples as CSV.
    Trace(TraceArgs),
    /// Train a neural flow field against a measured image and boundary data.
    Reconstruct(ReconstructArgs),
    /// Compare a trained field with a reference flow on a grid.
    Evaluate(EvaluateArgs),
    /// Train the BOS+boundary, PDE+boundary and combined regimes on the scene's plume.
    Study(StudyArgs),
    /// Check every derivative route against finite differences.
    Gradcheck(GradcheckArgs),
    /// Sample a trained field on a grid in dimensional units.
    EvalField(EvalFieldArgs),
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    /// Temperature volume in K (channel 0 of a VOXGRID file); ambient air if omitted.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Samples per pixel (default: the scene's render.spp).
    #[arg(long)]
    pub spp: Option<usize>,
    /// Sampling seed (default: the scene's render.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write an 8-bit PNG preview.
    #[arg(long)]
    #[serde(default)]
    pub png: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorArg {
    Nonlinear,
    Quasilinear,
}

impl From<IntegratorArg> for Integrator {
    fn from(i: IntegratorArg) -> Self {
        match i {
            IntegratorArg::Nonlinear => Integrator::Nonlinear,
            IntegratorArg::Quasilinear => Integrator::Quasilinear,
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Temperature volume in K; ambient air if omitted.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Camera ray through the centre of pixel ROW,COL.
    #[arg(long, value_parser = parse_pixel, conflicts_with_all = ["origin", "direction"])]
    pub pixel: Option<[usize; 2]>,
    /// Start point x,y,z in metres (inside the room).
    #[arg(long, value_parser = parse_vec3, requires = "direction", allow_hyphen_values = true)]
    pub origin: Option<[f64; 3]>,
    /// Launch direction x,y,z.
    #[arg(long, value_parser = parse_vec3, requires = "origin", allow_hyphen_values = true)]
    pub direction: Option<[f64; 3]>,
    /// Step size in metres (default: the scene's render.step_m).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub integrator: Option<IntegratorArg>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Measured image (PFM) at the camera resolution.
    #[arg(long)]
    pub measurement: PathBuf,
    /// Boundary reference: VOXGRID with channels T [K], p [Pa], u [m/s]; ambient if omitted.
    #[arg(long)]
    pub boundary: Option<PathBuf>,
    /// Training configuration (JSON); the scene's `train` section if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a directory written by an earlier run (`final/` or a checkpoint).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthArg {
    /// The scene's analytic plume.
    Plume,
    /// Still ambient air.
    Ambient,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Trained network: `model.bin` or a directory holding it.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference flow.
    #[arg(long, value_enum, default_value = "plume", conflicts_with = "truth_volume")]
    pub truth: TruthArg,
    /// Reference flow as a VOXGRID with channels T [K], p [Pa], u [m/s].
    #[arg(long)]
    pub truth_volume: Option<PathBuf>,
    /// Nodes per axis of the evaluation grid.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyArgs {
    /// Scene with a `plume` section.
    #[arg(long)]
    pub scene: PathBuf,
    /// Training configuration shared by the regimes; the scene's `train` section if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub eval_grid: usize,
    /// Nodes per axis for the residual magnitudes in the report.
    #[arg(long, default_value_t = 8)]
    pub residual_grid: usize,
    /// Train the regimes concurrently (same results).
    #[arg(long)]
    #[serde(default)]
    pub concurrent: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFieldArgs {
    /// Trained network: `model.bin` or a directory holding it.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene whose medium and nondimensional constants apply (reference values if omitted).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Nodes per axis.
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b, c] if v.iter().all(|x| x.is_finite()) => Ok([*a, *b, *c]),
        _ => Err("expected three finite numbers x,y,z".into()),
    }
}

fn parse_pixel(s: &str) -> Result<[usize; 2], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [r, c] => Ok([*r, *c]),
        _ => Err("expected ROW,COL".into()),
    }
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    Ok(std::env::current_dir()?.join(p))
}

fn existing(p: &Path) -> Result<PathBuf, Failure> {
    fs::canonicalize(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

/// A checkpoint file, or a run directory (`final/`, `checkpoints/iter_*`) holding `model.bin`.
fn checkpoint_file(p: &Path) -> Result<PathBuf, Failure> {
    let p = existing(p)?;
    if p.is_dir() {
        existing(&p.join("model.bin"))
    } else {
        Ok(p)
    }
}

fn read_scene_config(path: &Path) -> Result<(SceneConfig, PathBuf), Failure> {
    let path = existing(path)?;
    let text = fs::read_to_string(&path)?;
    let cfg = SceneConfig::from_json(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    // Resolve once so the manifest carries derived values such as focal lengths.
    let scene = Scene64::from_config(cfg, &dir)?;
    Ok((scene.config().clone(), dir))
}

fn read_train_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(existing(path)?)?;
    let cfg: TrainConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn opt_existing(p: &Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
    p.as_deref().map(existing).transpose()
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Render(_) => "render",
            Command::Trace(_) => "trace",
            Command::Reconstruct(_) => "reconstruct",
            Command::Evaluate(_) => "evaluate",
            Command::Study(_) => "study",
            Command::Gradcheck(_) => "gradcheck",
            Command::EvalField(_) => "eval-field",
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Render(a) => a.out = out,
            Command::Trace(a) => a.out = out,
            Command::Reconstruct(a) => a.out = out,
            Command::Evaluate(a) => a.out = out,
            Command::Study(a) => a.out = out,
            Command::Gradcheck(a) => a.out = out,
            Command::EvalField(a) => a.out = out,
        }
    }

    /// Reads the configs the command names and makes every path absolute.
    pub fn resolve(self) -> Result<Manifest, Failure> {
        let mut scene = None;
        let mut train = None;
        let cmd = match self {
            Command::Render(mut a) => {
                let s = read_scene_config(&a.scene)?;
                a.scene = existing(&a.scene)?;
                scene = Some(s);
                a.volume = opt_existing(&a.volume)?;
                a.out = absolute(&a.out)?;
                Command::Render(a)
            }
            Command::Trace(mut a) => {
                let s = read_scene_config(&a.scene)?;
                a.scene = existing(&a.scene)?;
                scene = Some(s);
                a.volume = opt_existing(&a.volume)?;
                if a.pixel.is_none() && a.origin.is_none() {
                    return Err(Failure::Usage("trace needs --pixel or --origin/--direction".into()));
                }
                a.out = absolute(&a.out)?;
                Command::Trace(a)
            }
            Command::Reconstruct(mut a) => {
                let s = read_scene_config(&a.scene)?;
                train = Some(match &a.config {
                    Some(p) => read_train_config(p)?,
                    None => s.0.train.clone(),
                });
                a.scene = existing(&a.scene)?;
                scene = Some(s);
                a.config = None;
                a.measurement = existing(&a.measurement)?;
                a.boundary = opt_existing(&a.boundary)?;
                a.resume = opt_existing(&a.resume)?;
                a.out = absolute(&a.out)?;
                Command::Reconstruct(a)
            }
            Command::Evaluate(mut a) => {
                let s = read_scene_config(&a.scene)?;
                a.scene = existing(&a.scene)?;
                scene = Some(s);
                a.checkpoint = checkpoint_file(&a.checkpoint)?;
                a.truth_volume = opt_existing(&a.truth_volume)?;
                a.out = absolute(&a.out)?;
                Command::Evaluate(a)
            }
            Command::Study(mut a) => {
                let s = read_scene_config(&a.scene)?;
                if s.0.plume.is_none() {
                    return Err(Failure::Usage("study needs a scene with a `plume` section".into()));
                }
                train = Some(match &a.config {
                    Some(p) => read_train_config(p)?,
                    None => s.0.train.clone(),
                });
                a.scene = existing(&a.scene)?;
                scene = Some(s);
                a.config = None;
                a.out = absolute(&a.out)?;
                Command::Study(a)
            }
            Command::Gradcheck(mut a) => {
                a.out = absolute(&a.out)?;
                Command::Gradcheck(a)
            }
            Command::EvalField(mut a) => {
                if let Some(p) = &a.scene {
                    let s = read_scene_config(p)?;
                    a.scene = Some(existing(p)?);
                    scene = Some(s);
                }
                a.checkpoint = checkpoint_file(&a.checkpoint)?;
                a.out = absolute(&a.out)?;
                Command::EvalField(a)
            }
        };
        Ok(Manifest::new(cmd, scene, train))
    }
}

fn build_scene(m: &Manifest) -> Result<Scene64, Failure> {
    let cfg = m.scene.clone().unwrap_or_else(reference_config);
    let dir = m.scene_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok(Scene64::from_config(cfg, &dir)?)
}

fn train_config(m: &Manifest, scene: &Scene64) -> TrainConfig {
    m.train.clone().unwrap_or_else(|| scene.config().train.clone())
}

/// Runs a resolved command. The manifest is written first so a failed run can be replayed.
pub fn execute(m: Manifest) -> Result<(), Failure> {
    match &m.command {
        Command::Render(a) => {
            m.write(&a.out)?;
            render(&m, a)
        }
        Command::Trace(a) => {
            m.write(&a.out)?;
            trace_cmd(&m, a)
        }
        Command::Reconstruct(a) => {
            m.write(&a.out)?;
            reconstruct(&m, a)
        }
        Command::Evaluate(a) => {
            m.write(&a.out)?;
            evaluate_cmd(&m, a)
        }
        Command::Study(a) => {
            m.write(&a.out)?;
            study(&m, a)
        }
        Command::Gradcheck(a) => {
            m.write(&a.out)?;
            gradcheck(a)
        }
        Command::EvalField(a) => {
            m.write(&a.out)?;
            eval_field(&m, a)
        }
    }
}

fn temperature_volume(path: &Option<PathBuf>) -> Result<Option<VoxelGrid<f64>>, Failure> {
    match path {
        Some(p) => {
            let g: VoxelGrid<f64> = read_voxgrid(p)?;
            if g.data().iter().any(|&t| !(t > 0.0)) {
                return Err(Failure::Usage(format!("{}: temperatures must be > 0 K", p.display())));
            }
            Ok(Some(g))
        }
        None => Ok(None),
    }
}

fn with_eta<R>(
    scene: &Scene64,
    volume: &Option<VoxelGrid<f64>>,
    f: impl FnOnce(&dyn ScalarField<f64>) -> R,
) -> R {
    match volume {
        Some(g) => f(&EtaFromTemperature::new(g.field(0), scene.medium)),
        None => f(&EtaFromTemperature::new(UniformField::new(scene.medium.t0), scene.medium)),
    }
}

fn render(m: &Manifest, a: &RenderArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    let volume = temperature_volume(&a.volume)?;
    let spp = a.spp.unwrap_or(scene.render.spp);
    let seed = a.seed.unwrap_or(scene.render.seed);
    let img = with_eta(&scene, &volume, |eta| render_image(&scene, eta, spp, seed))?;
    let pfm = img.to_pfm();
    write_pfm(a.out.join("img.pfm"), &pfm)?;
    if a.png {
        let hi = pfm.data.iter().cloned().fold(0.0f32, f32::max);
        write_png_preview(a.out.join("img.png"), &pfm, 0.0, hi)?;
    }
    println!("wrote {}", a.out.join("img.pfm").display());
    Ok(())
}

fn write_path_csv(path: &Path, p: &RayPath<f64>, t_offset: f64) -> Result<(), Failure> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,x,y,z,vx,vy,vz")?;
    for s in &p.samples {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            s.t + t_offset,
            s.x.x,
            s.x.y,
            s.x.z,
            s.v.x,
            s.v.y,
            s.v.z
        )?;
    }
    w.flush()?;
    Ok(())
}

fn trace_cmd(m: &Manifest, a: &TraceArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    let volume = temperature_volume(&a.volume)?;
    let cfg = TraceConfig::new(
        a.step.unwrap_or(scene.render.step_m),
        a.max_steps.unwrap_or(scene.render.max_steps),
        a.integrator.map_or(scene.render.integrator, Integrator::from),
    )?;
    let (start, dir, t0) = if let Some([r, c]) = a.pixel {
        let (pa, pb) = scene.camera.pixel_footprint(r, c)?.center();
        let (x_s, v_s) = scene.camera.sensor_ray(pa, pb);
        let Some((t0, _)) = scene.room.ray_interval(x_s, v_s) else {
            return Err(Failure::Usage(format!("pixel {r},{c} does not look into the room")));
        };
        (scene.room.clamp(x_s + v_s * t0), v_s, t0)
    } else {
        let (o, d) = (a.origin.unwrap(), a.direction.unwrap());
        let d = Vec3::from_f64(d);
        if !(d.norm() > 0.0) {
            return Err(Failure::Usage("--direction must be nonzero".into()));
        }
        let o = Vec3::from_f64(o);
        if !scene.room.contains(o) {
            return Err(Failure::Usage("--origin must lie inside the room".into()));
        }
        (o, d.normalized(), 0.0)
    };
    let path = with_eta(&scene, &volume, |eta| trace(eta, Ray::launch(eta, start, dir), &scene.room, &cfg))?;
    write_path_csv(&a.out.join("path.csv"), &path, t0)?;
    if let Some([r, c]) = a.pixel {
        let (pa, pb) = scene.camera.pixel_footprint(r, c)?.center();
        let (x_s, v_s) = scene.camera.sensor_ray(pa, pb);
        let hit = with_eta(&scene, &volume, |eta| trace_camera_ray(&scene, eta, x_s, v_s, &cfg))?;
        match hit {
            Some(h) => println!("wall hit at ({:.9}, {:.9}, {:.9})", h.x.x, h.x.y, h.x.z),
            None => println!("ray misses the wall"),
        }
    }
    println!("{} samples, {:?}", path.samples.len(), path.termination);
    Ok(())
}

fn boundary_reference(path: &Option<PathBuf>, scene: &Scene64) -> Result<Box<dyn StateField>, Failure> {
    Ok(match path {
        Some(p) => Box::new(GridReference::new(read_voxgrid(p)?, scene)?),
        None => Box::new(AmbientReference),
    })
}

fn reconstruct(m: &Manifest, a: &ReconstructArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    let cfg = train_config(m, &scene);
    let measured: Image<f64> = Image::from_pfm(&read_pfm(&a.measurement)?)?;
    let reference = boundary_reference(&a.boundary, &scene)?;
    if a.boundary.is_none() && cfg.boundary_zero_scale.is_none() && cfg.weights.boundary() != 0.0 {
        return Err(Failure::Usage(
            "without --boundary the reference is still air; set train.boundary_zero_scale".into(),
        ));
    }
    let mut t = Trainer::new(&scene, Some(&measured), reference.as_ref(), cfg)?;
    if let Some(r) = &a.resume {
        t.resume(r)?;
        println!("resumed at iteration {}", t.iteration());
    }
    t.run(Some(&a.out))?;
    if let Some(r) = t.history.last() {
        println!(
            "iteration {}: L_BOS {:e} L_boundary {:e} L_PDE {:e} total {:e}",
            r.iteration, r.terms.bos, r.terms.boundary, r.terms.pde, r.total
        );
    }
    Ok(())
}

fn metrics_csv(m: &Metrics) -> String {
    let mut s = String::from("field,rmse,nrmse,max_abs\n");
    for (name, e) in [("T_K", m.t), ("p", m.p), ("u", m.u)] {
        let _ = writeln!(s, "{name},{:e},{:e},{:e}", e.rmse, e.nrmse, e.max_abs);
    }
    s
}

fn evaluate_cmd(m: &Manifest, a: &EvaluateArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    let nf = load_checkpoint(&a.checkpoint)?;
    let truth: Box<dyn StateField> = match (&a.truth_volume, a.truth) {
        (Some(p), _) => Box::new(GridReference::new(read_voxgrid(p)?, &scene)?),
        (None, TruthArg::Plume) => Box::new(GaussianPlume::from_scene(&scene)?),
        (None, TruthArg::Ambient) => Box::new(AmbientReference),
    };
    let metrics = evaluate(&nf, truth.as_ref(), &scene, a.grid)?;
    let csv = metrics_csv(&metrics);
    fs::write(a.out.join("metrics.csv"), &csv)?;
    write_voxgrid(a.out.join("error.vox"), &error_volume(&nf, truth.as_ref(), &scene, a.grid)?)?;
    print!("{csv}");
    Ok(())
}

fn study(m: &Manifest, a: &StudyArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    let cfg = train_config(m, &scene);
    let plume = GaussianPlume::from_scene(&scene)?;
    let opts = StudyOptions {
        eval_resolution: a.eval_grid,
        out: Some(a.out.clone()),
        residual_resolution: a.residual_grid,
        concurrent: a.concurrent,
    };
    let report = regime_study(&scene, &plume, &cfg, &opts)?;
    print!("{}", report.summary());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let results = run_gradcheck(a.seed)?;
    let mut csv = String::from("check,max_rel_error,tolerance,samples,pass\n");
    for r in &results {
        let _ = writeln!(csv, "{},{:e},{:e},{},{}", r.name, r.max_rel, r.tolerance, r.samples, r.passed());
        println!(
            "{:<48} max rel {:.3e} (tol {:.0e}) {}",
            r.name,
            r.max_rel,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    fs::write(a.out.join("gradcheck.csv"), csv)?;
    if results.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

fn eval_field(m: &Manifest, a: &EvalFieldArgs) -> Result<(), Failure> {
    let scene = build_scene(m)?;
    if a.grid < 2 {
        return Err(Failure::Usage("--grid must be >= 2".into()));
    }
    let nf: NeuralField<f64> = load_checkpoint(&a.checkpoint)?;
    let ps = pressure_scale(&scene.medium, &scene.nondim);
    let grid = VoxelGrid::<f64>::zeros([a.grid; 3], nf.domain(), 5)?;
    let n = grid.node_count();
    let mut data = vec![0.0; 5 * n];
    for i in 0..n {
        let s = nf.state(grid.node_position_linear(i))?;
        let u = scene.nondim.velocity_mps(s.u);
        data[i] = scene.medium.temperature(s.t_nd);
        data[n + i] = s.p * ps;
        data[2 * n + i] = u.x;
        data[3 * n + i] = u.y;
        data[4 * n + i] = u.z;
    }
    let out = VoxelGrid::new([a.grid; 3], nf.domain(), 5, data)?;
    write_voxgrid(a.out.join("field.vox"), &out)?;
    println!("wrote {}", a.out.join("field.vox").display());
    Ok(())
}
