//! Neural flow field, nondimensional Boussinesq residuals and the three training losses.

mod checkpoint;
mod network;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint_from, save_checkpoint, write_checkpoint_to, CheckpointDtype};
pub use network::{
    Activation, FlowState, FourierFeatures, JetOrder, JetOutputs, NetworkConfig, NeuralField, BLOCK,
    OUTPUTS,
};

use crate::diffengine::{bos_loss_and_grad, Jet};
use crate::error::{Error, Result};
use crate::fields::VoxelGrid;
use crate::math::Vec3;
use crate::renderer::Image;
use crate::scene::{MediumConstants, NondimConstants, Scene};

/// `λ` weights the three loss terms, `γ` the three residuals inside the PDE term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda: [f64; 3],
    pub gamma: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: [1.0; 3],
            gamma: [1.0; 3],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().chain(&self.gamma).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation("loss weights must be finite and >= 0".into()));
        }
        if self.lambda.iter().all(|&w| w == 0.0) {
            return Err(Error::Validation("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn bos(&self) -> f64 {
        self.lambda[0]
    }

    pub fn boundary(&self) -> f64 {
        self.lambda[1]
    }

    pub fn pde(&self) -> f64 {
        self.lambda[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTriple<T> {
    pub r_mass: T,
    pub r_mom: Vec3<T>,
    pub r_heat: T,
}

impl ResidualTriple<f64> {
    /// `γ₁ r_mass² + γ₂ ‖r_mom‖² + γ₃ r_heat²`.
    pub fn weighted_sq(&self, gamma: [f64; 3]) -> f64 {
        gamma[0] * self.r_mass * self.r_mass
            + gamma[1] * self.r_mom.norm_sq()
            + gamma[2] * self.r_heat * self.r_heat
    }

    pub fn is_finite(&self) -> bool {
        self.r_mass.is_finite() && self.r_mom.is_finite() && self.r_heat.is_finite()
    }
}

/// Anything that yields second-order output jets `(T_nd, p, u_x, u_y, u_z)` at a point in meters.
pub trait FlowModel: Sync {
    fn flow_jets(&self, x: Vec3<f64>) -> Result<[Jet<f64>; OUTPUTS]>;
}

impl FlowModel for NeuralField<f64> {
    fn flow_jets(&self, x: Vec3<f64>) -> Result<[Jet<f64>; OUTPUTS]> {
        self.eval_jet(x)
    }
}

/// Flow given by a closure over coordinate jets (manufactured solutions, crafted heads).
pub struct JetFlow<F>(pub F);

impl<F> FlowModel for JetFlow<F>
where
    F: Fn([Jet<f64>; 3]) -> [Jet<f64>; OUTPUTS] + Sync,
{
    fn flow_jets(&self, x: Vec3<f64>) -> Result<[Jet<f64>; OUTPUTS]> {
        Ok((self.0)([0, 1, 2].map(|k| Jet::variable(x[k], k))))
    }
}

/// Residuals from output jets taken per meter; derivatives are rescaled to `x/L`.
pub fn residuals_from_jets(j: &[Jet<f64>; OUTPUTS], c: &NondimConstants<f64>) -> ResidualTriple<f64> {
    let l = c.l;
    let l2 = l * l;
    let u = [j[2].v, j[3].v, j[4].v];
    let div = j[2].d[0] + j[3].d[1] + j[4].d[2];
    let mut mom = Vec3::zero();
    for i in 0..3 {
        let ui = &j[2 + i];
        let adv: f64 = (0..3).map(|k| u[k] * ui.d[k]).sum();
        mom[i] = l * adv + l * j[1].d[i] - l2 / c.re * ui.laplacian() + c.ri * j[0].v * c.e_g[i];
    }
    let t = &j[0];
    let adv_t: f64 = (0..3).map(|k| u[k] * t.d[k]).sum();
    ResidualTriple {
        r_mass: l * div,
        r_mom: mom,
        r_heat: l * adv_t - l2 / c.pe * t.laplacian(),
    }
}

pub fn residuals<M: FlowModel + ?Sized>(
    model: &M,
    x: Vec3<f64>,
    c: &NondimConstants<f64>,
) -> Result<ResidualTriple<f64>> {
    Ok(residuals_from_jets(&model.flow_jets(x)?, c))
}

/// `Σ_i γ₁ r_mass² + γ₂‖r_mom‖² + γ₃ r_heat²`, one point at a time.
pub fn loss_pde<M: FlowModel + ?Sized>(
    model: &M,
    points: &[Vec3<f64>],
    gamma: [f64; 3],
    c: &NondimConstants<f64>,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Validation("collocation batch is empty".into()));
    }
    let parts: Vec<Result<f64>> = points
        .par_iter()
        .map(|&x| Ok(residuals(model, x, c)?.weighted_sq(gamma)))
        .collect();
    let mut s = 0.0;
    for p in parts {
        s += p?;
    }
    Ok(s)
}

/// PDE loss with its parameter gradient, from batched jets.
pub fn loss_pde_grad(
    nf: &NeuralField<f64>,
    points: &[Vec3<f64>],
    gamma: [f64; 3],
    c: &NondimConstants<f64>,
) -> Result<(f64, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::Validation("collocation batch is empty".into()));
    }
    let l = c.l;
    let l2 = l * l;
    nf.loss_and_grad(points, JetOrder::Second, |_, out| {
        let mut bar = JetOutputs::zeros(out.n, out.comps);
        let mut loss = 0.0;
        for p in 0..out.n {
            let j = out.jets(p);
            let r = residuals_from_jets(&j, c);
            loss += r.weighted_sq(gamma);
            let u = [j[2].v, j[3].v, j[4].v];
            let rm = 2.0 * gamma[0] * r.r_mass * l;
            for k in 0..3 {
                bar.add(2 + k, 1 + k, p, rm);
            }
            for i in 0..3 {
                let rho = 2.0 * gamma[1] * r.r_mom[i];
                if rho == 0.0 {
                    continue;
                }
                let ui = 2 + i;
                for k in 0..3 {
                    bar.add(2 + k, 0, p, rho * l * j[ui].d[k]);
                    bar.add(ui, 1 + k, p, rho * l * u[k]);
                    bar.add(ui, 4 + k, p, -rho * l2 / c.re);
                }
                bar.add(1, 1 + i, p, rho * l);
                bar.add(0, 0, p, rho * c.ri * c.e_g[i]);
            }
            let rh = 2.0 * gamma[2] * r.r_heat;
            if rh != 0.0 {
                for k in 0..3 {
                    bar.add(2 + k, 0, p, rh * l * j[0].d[k]);
                    bar.add(0, 1 + k, p, rh * l * u[k]);
                    bar.add(0, 4 + k, p, -rh * l2 / c.pe);
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: 0,
                detail: "PDE residual".into(),
            });
        }
        Ok((loss, bar))
    })
}

/// How predicted and reference boundary fields are brought to a common scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryNormalization {
    /// Both divided by the reference field's max-abs.
    #[default]
    ReferenceMax,
    /// Each divided by its own max-abs over the sample set.
    OwnMax,
}

/// Boundary points with nondimensional reference states.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundarySamples {
    pub points: Vec<Vec3<f64>>,
    pub reference: Vec<FlowState<f64>>,
}

/// Per-field scales `(T_nd, p, |u|)`.
pub type FieldScales = [f64; 3];

/// Max-abs of `T_nd`, `p` and `‖u‖` over `states`.
pub fn max_abs_scales(states: &[FlowState<f64>]) -> FieldScales {
    let mut s = [0.0f64; 3];
    for st in states {
        s[0] = s[0].max(st.t_nd.abs());
        s[1] = s[1].max(st.p.abs());
        s[2] = s[2].max(st.u.norm());
    }
    s
}

/// Reference scales with zero entries replaced by `zero_scale`; an error if a scale is zero
/// and no fallback is given.
pub fn reference_scales(states: &[FlowState<f64>], zero_scale: Option<f64>) -> Result<FieldScales> {
    let mut s = max_abs_scales(states);
    for (k, v) in s.iter_mut().enumerate() {
        if *v == 0.0 {
            match zero_scale {
                Some(z) if z > 0.0 => *v = z,
                _ => {
                    return Err(Error::Validation(format!(
                        "boundary reference {} is identically zero; its max-abs normalization is undefined",
                        ["T_nd", "p", "u"][k]
                    )))
                }
            }
        }
    }
    Ok(s)
}

fn bnd_check(nf_outputs: usize, samples: &BoundarySamples) -> Result<()> {
    if samples.points.len() != samples.reference.len() {
        return Err(Error::ShapeMismatch {
            expected: samples.points.len(),
            got: samples.reference.len(),
        });
    }
    if nf_outputs != OUTPUTS {
        return Err(Error::Validation("network must have five outputs".into()));
    }
    Ok(())
}

/// Boundary loss on already-evaluated predictions.
pub fn boundary_loss_of(
    pred: &[FlowState<f64>],
    reference: &[FlowState<f64>],
    mode: BoundaryNormalization,
    ref_scales: FieldScales,
) -> f64 {
    let (ps, rs) = match mode {
        BoundaryNormalization::ReferenceMax => (ref_scales, ref_scales),
        BoundaryNormalization::OwnMax => (own_scales(pred), ref_scales),
    };
    pred.iter()
        .zip(reference)
        .map(|(a, b)| {
            let dt = a.t_nd / ps[0] - b.t_nd / rs[0];
            let dp = a.p / ps[1] - b.p / rs[1];
            let du = a.u / ps[2] - b.u / rs[2];
            dt * dt + dp * dp + du.norm_sq()
        })
        .sum()
}

fn own_scales(pred: &[FlowState<f64>]) -> FieldScales {
    let s = max_abs_scales(pred);
    s.map(|v| if v > 0.0 { v } else { 1.0 })
}

/// Boundary loss. `ref_scales` are the reference max-abs values over the sample set; in
/// [`BoundaryNormalization::OwnMax`] mode the reference is divided by them and the prediction
/// by its own max-abs.
pub fn loss_boundary(
    nf: &NeuralField<f64>,
    samples: &BoundarySamples,
    mode: BoundaryNormalization,
    ref_scales: FieldScales,
) -> Result<f64> {
    bnd_check(*nf.sizes().last().unwrap(), samples)?;
    let pred: Vec<FlowState<f64>> = samples.points.iter().map(|&x| nf.eval_unchecked(x)).collect();
    Ok(boundary_loss_of(&pred, &samples.reference, mode, ref_scales))
}

/// Boundary loss and its parameter gradient.
pub fn loss_boundary_grad(
    nf: &NeuralField<f64>,
    samples: &BoundarySamples,
    mode: BoundaryNormalization,
    ref_scales: FieldScales,
) -> Result<(f64, Vec<f64>)> {
    bnd_check(*nf.sizes().last().unwrap(), samples)?;
    if samples.points.is_empty() {
        return Err(Error::Validation("boundary batch is empty".into()));
    }
    match mode {
        BoundaryNormalization::ReferenceMax => {
            let s = ref_scales;
            nf.loss_and_grad(&samples.points, JetOrder::Value, |off, out| {
                let mut bar = JetOutputs::zeros(out.n, 1);
                let mut loss = 0.0;
                for p in 0..out.n {
                    let r = &samples.reference[off + p];
                    let refs = [r.t_nd, r.p, r.u.x, r.u.y, r.u.z];
                    for o in 0..OUTPUTS {
                        let sc = s[o.min(2)];
                        let d = (out.get(o, 0, p) - refs[o]) / sc;
                        loss += d * d;
                        bar.add(o, 0, p, 2.0 * d / sc);
                    }
                }
                Ok((loss, bar))
            })
        }
        BoundaryNormalization::OwnMax => {
            // the argmax makes this non-separable: evaluate first, then backpropagate once
            let blocks = nf.eval_batch(&samples.points, JetOrder::Value)?;
            let pred: Vec<FlowState<f64>> = blocks
                .iter()
                .flat_map(|b| (0..b.n).map(move |p| FlowState::from_outputs([0, 1, 2, 3, 4].map(|o| b.get(o, 0, p)))))
                .collect();
            let loss = boundary_loss_of(&pred, &samples.reference, BoundaryNormalization::OwnMax, ref_scales);
            let bar = own_max_adjoint(&pred, &samples.reference, ref_scales);
            nf.loss_and_grad(&samples.points, JetOrder::Value, |off, out| {
                let mut b = JetOutputs::zeros(out.n, 1);
                for p in 0..out.n {
                    for o in 0..OUTPUTS {
                        b.add(o, 0, p, bar[off + p][o]);
                    }
                }
                Ok((if off == 0 { loss } else { 0.0 }, b))
            })
        }
    }
}

fn own_max_adjoint(pred: &[FlowState<f64>], reference: &[FlowState<f64>], rs: FieldScales) -> Vec<[f64; OUTPUTS]> {
    let n = pred.len();
    let mut bar = vec![[0.0; OUTPUTS]; n];
    let arg = |f: &dyn Fn(&FlowState<f64>) -> f64| -> (usize, f64) {
        let mut best = (0, 0.0);
        for (i, p) in pred.iter().enumerate() {
            let v = f(p);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    };
    // scalar channels: y_i / M with M = max |y|
    for (ch, get) in [
        (0usize, (|s: &FlowState<f64>| s.t_nd) as fn(&FlowState<f64>) -> f64),
        (1, |s: &FlowState<f64>| s.p),
    ] {
        let (im, m) = arg(&|s| get(s).abs());
        if m == 0.0 {
            continue;
        }
        let mut dm = 0.0;
        for i in 0..n {
            let d = get(&pred[i]) / m - get(&reference[i]) / rs[ch];
            bar[i][ch] += 2.0 * d / m;
            dm -= 2.0 * d * get(&pred[i]) / (m * m);
        }
        bar[im][ch] += dm * get(&pred[im]).signum();
    }
    let (im, m) = arg(&|s| s.u.norm());
    if m > 0.0 {
        let mut dm = 0.0;
        for i in 0..n {
            let d = pred[i].u / m - reference[i].u / rs[2];
            for k in 0..3 {
                bar[i][2 + k] += 2.0 * d[k] / m;
            }
            dm -= 2.0 * d.dot(pred[i].u) / (m * m);
        }
        let dir = pred[im].u / m;
        for k in 0..3 {
            bar[im][2 + k] += dm * dir[k];
        }
    }
    bar
}

/// Refractive index at nodes of the proxy grid from the network temperature, with the
/// derivative `dη/dT_nd` per node.
pub fn eta_proxy(
    nf: &NeuralField<f64>,
    medium: &MediumConstants<f64>,
    dims: [usize; 3],
) -> Result<(VoxelGrid<f64>, Vec<f64>)> {
    let mut grid = VoxelGrid::zeros(dims, nf.domain(), 1)?;
    let nodes: Vec<Vec3<f64>> = (0..grid.node_count()).map(|n| grid.node_position_linear(n)).collect();
    let blocks = nf.eval_batch(&nodes, JetOrder::Value)?;
    let mut deta = Vec::with_capacity(nodes.len());
    let dt = medium.t_in - medium.t0;
    let k = medium.rho0_g * medium.t0;
    let data = grid.data_mut();
    let mut n = 0;
    for b in &blocks {
        for p in 0..b.n {
            let t = medium.temperature(b.get(0, 0, p));
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::NonFinite {
                    iteration: 0,
                    detail: format!("network temperature {t} K at proxy node {n}"),
                });
            }
            data[n] = 1.0 + k / t;
            deta.push(-k / (t * t) * dt);
            n += 1;
        }
    }
    Ok((grid, deta))
}

/// BOS loss `Σ_j (I_flow,j − I_j(η))²` over `pixels`, with `η` from the network temperature
/// sampled on a `dims` proxy grid and rendered by the quasi-linear tracer, plus its gradient.
pub fn loss_bos_grad(
    nf: &NeuralField<f64>,
    scene: &Scene<f64>,
    measured: &Image<f64>,
    pixels: &[usize],
    spp: usize,
    seed: u64,
    dims: [usize; 3],
) -> Result<(f64, Vec<f64>)> {
    let (h, w) = scene.camera.resolution;
    if measured.height != h || measured.width != w {
        return Err(Error::ShapeMismatch {
            expected: h * w,
            got: measured.height * measured.width,
        });
    }
    let (grid, deta) = eta_proxy(nf, &scene.medium, dims)?;
    let m: Vec<f64> = pixels.iter().map(|&j| measured.data[j]).collect();
    let (loss, eta_bar, _) = bos_loss_and_grad(scene, &grid, pixels, &m, spp, seed)?;
    let nodes: Vec<Vec3<f64>> = (0..grid.node_count()).map(|n| grid.node_position_linear(n)).collect();
    let (_, g) = nf.loss_and_grad(&nodes, JetOrder::Value, |off, out| {
        let mut bar = JetOutputs::zeros(out.n, 1);
        for p in 0..out.n {
            bar.add(0, 0, p, eta_bar[off + p] * deta[off + p]);
        }
        Ok((0.0, bar))
    })?;
    Ok((loss, g))
}

/// BOS loss value only.
pub fn loss_bos(
    nf: &NeuralField<f64>,
    scene: &Scene<f64>,
    measured: &Image<f64>,
    pixels: &[usize],
    spp: usize,
    seed: u64,
    dims: [usize; 3],
) -> Result<f64> {
    let (grid, _) = eta_proxy(nf, &scene.medium, dims)?;
    let mut s = 0.0;
    for &j in pixels {
        let v = crate::diffengine::render_pixel_quasilinear(scene, &grid, j, spp, seed)?;
        let d = measured.data[j] - v;
        s += d * d;
    }
    Ok(s)
}

/// The three loss terms (unweighted) for one set of batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub bos: f64,
    pub boundary: f64,
    pub pde: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        let mut t = 0.0;
        if w.bos() != 0.0 {
            t += w.bos() * self.bos;
        }
        if w.boundary() != 0.0 {
            t += w.boundary() * self.boundary;
        }
        if w.pde() != 0.0 {
            t += w.pde() * self.pde;
        }
        t
    }
}

/// Inputs of one loss evaluation.
pub struct Batches<'a> {
    pub collocation: &'a [Vec3<f64>],
    pub boundary: &'a BoundarySamples,
    pub boundary_mode: BoundaryNormalization,
    pub boundary_scales: FieldScales,
    pub pixels: &'a [usize],
    pub measured: Option<&'a Image<f64>>,
    pub spp: usize,
    pub seed: u64,
    pub proxy_dims: [usize; 3],
}

/// Weighted loss, per-term values and the parameter gradient. Terms with zero weight are
/// skipped; gradients are accumulated in the order PDE, boundary, BOS.
pub fn total_loss_grad(
    nf: &NeuralField<f64>,
    scene: &Scene<f64>,
    b: &Batches<'_>,
    w: &LossWeights,
) -> Result<(f64, LossTerms, Vec<f64>)> {
    w.validate()?;
    let mut terms = LossTerms::default();
    let mut grad = vec![0.0; nf.n_params()];
    let mut add = |g: &[f64], s: f64| {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += s * b;
        }
    };
    if w.pde() != 0.0 {
        let (l, g) = loss_pde_grad(nf, b.collocation, w.gamma, &scene.nondim)?;
        terms.pde = l;
        add(&g, w.pde());
    }
    if w.boundary() != 0.0 {
        let (l, g) = loss_boundary_grad(nf, b.boundary, b.boundary_mode, b.boundary_scales)?;
        terms.boundary = l;
        add(&g, w.boundary());
    }
    if w.bos() != 0.0 {
        let m = b
            .measured
            .ok_or_else(|| Error::Validation("BOS term needs a measurement".into()))?;
        let (l, g) = loss_bos_grad(nf, scene, m, b.pixels, b.spp, b.seed, b.proxy_dims)?;
        terms.bos = l;
        add(&g, w.bos());
    }
    Ok((terms.total(w), terms, grad))
}

/// Weighted loss and per-term values without gradients.
pub fn total_loss(
    nf: &NeuralField<f64>,
    scene: &Scene<f64>,
    b: &Batches<'_>,
    w: &LossWeights,
) -> Result<(f64, LossTerms)> {
    w.validate()?;
    let mut terms = LossTerms::default();
    if w.pde() != 0.0 {
        terms.pde = loss_pde(nf, b.collocation, w.gamma, &scene.nondim)?;
    }
    if w.boundary() != 0.0 {
        terms.boundary = loss_boundary(nf, b.boundary, b.boundary_mode, b.boundary_scales)?;
    }
    if w.bos() != 0.0 {
        let m = b
            .measured
            .ok_or_else(|| Error::Validation("BOS term needs a measurement".into()))?;
        terms.bos = loss_bos(nf, scene, m, b.pixels, b.spp, b.seed, b.proxy_dims)?;
    }
    Ok((terms.total(w), terms))
}
