//! Synthetic ground truth: an analytic buoyant plume, measurement synthesis, field error
//! metrics and the three-regime reconstruction study.

mod study;

pub use study::{regime_profiles, regime_study, RegimeEntry, StudyOptions, StudyReport};

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};

use crate::diffengine::Jet;
use crate::error::{Error, Result};
use crate::fields::{EtaFromTemperature, ScalarField, UniformField, VoxelGrid};
use crate::math::{Aabb, Vec3};
use crate::optim::StateField;
use crate::pinn::{residuals_from_jets, FlowModel, FlowState, OUTPUTS};
use crate::renderer::{render_image, Image};
use crate::scene::{MediumConstants, NondimConstants, PlumeConfig, Scene};

/// Closed-form flow with value and gradient closures.
pub trait AnalyticFlow: Sync {
    /// Temperature (K).
    fn temperature(&self, x: Vec3<f64>) -> f64;
    /// ∂T/∂x (K/m).
    fn temperature_gradient(&self, x: Vec3<f64>) -> Vec3<f64>;
    /// Nondimensional velocity.
    fn velocity(&self, x: Vec3<f64>) -> Vec3<f64>;
    /// Rows `∂u_i/∂x` (per meter).
    fn velocity_jacobian(&self, x: Vec3<f64>) -> [Vec3<f64>; 3];
    /// Nondimensional pressure.
    fn pressure(&self, x: Vec3<f64>) -> f64;
    fn pressure_gradient(&self, x: Vec3<f64>) -> Vec3<f64>;
    fn medium(&self) -> &MediumConstants<f64>;

    fn flow_state(&self, x: Vec3<f64>) -> FlowState<f64> {
        FlowState {
            t_nd: self.medium().t_nd(self.temperature(x)),
            p: self.pressure(x),
            u: self.velocity(x),
        }
    }
}

/// Gaussian warm blob with a Gaussian updraft column and hydrostatically balanced pressure:
///
/// ```text
/// T = T₀ + ΔT exp(−|x−c|²/2σ²)
/// u = w₀ exp(−r⊥²/2σ²) ê_up                      (ê_up = −e_g, r⊥ ⟂ ê_up)
/// p = (Ri/L) A exp(−r⊥²/2σ²) σ√(π/2) (1 + erf(s/√2σ)),   s = (x−c)·ê_up,  A = ΔT/(T_in−T₀)
/// ```
///
/// so that `∂p/∂x̂ = Ri T_nd ê_up` along the updraft. `u` and `p` are not an exact
/// Boussinesq solution.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPlume {
    pub center: Vec3<f64>,
    pub sigma: f64,
    pub dt_k: f64,
    pub w0: f64,
    pub medium: MediumConstants<f64>,
    pub nondim: NondimConstants<f64>,
}

pub fn gaussian_plume(
    center: Vec3<f64>,
    sigma: f64,
    dt_k: f64,
    w0: f64,
    medium: MediumConstants<f64>,
    nondim: NondimConstants<f64>,
) -> Result<GaussianPlume> {
    if !(sigma > 0.0) {
        return Err(Error::Validation("plume sigma must be > 0".into()));
    }
    if !center.is_finite() || !dt_k.is_finite() || !w0.is_finite() {
        return Err(Error::Validation("plume parameters must be finite".into()));
    }
    Ok(GaussianPlume {
        center,
        sigma,
        dt_k,
        w0,
        medium,
        nondim,
    })
}

impl GaussianPlume {
    pub fn from_scene(scene: &Scene<f64>) -> Result<Self> {
        let p = scene
            .plume
            .as_ref()
            .ok_or_else(|| Error::Validation("scene has no plume section".into()))?;
        Self::from_config(p, scene)
    }

    pub fn from_config(p: &PlumeConfig, scene: &Scene<f64>) -> Result<Self> {
        gaussian_plume(
            Vec3::from_f64(p.center_m),
            p.sigma_m,
            p.dt_k,
            p.w0,
            scene.medium,
            scene.nondim,
        )
    }

    fn up(&self) -> Vec3<f64> {
        -self.nondim.e_g
    }

    /// `(d, s, d⊥, g⊥, g_s)`.
    fn parts(&self, x: Vec3<f64>) -> (Vec3<f64>, f64, Vec3<f64>, f64, f64) {
        let d = x - self.center;
        let up = self.up();
        let s = d.dot(up);
        let dp = d - up * s;
        let s2 = 2.0 * self.sigma * self.sigma;
        ((d), s, dp, (-dp.norm_sq() / s2).exp(), (-s * s / s2).exp())
    }

    fn amplitude_nd(&self) -> f64 {
        self.dt_k / (self.medium.t_in - self.medium.t0)
    }

    fn pressure_gain(&self) -> f64 {
        self.nondim.ri / self.nondim.l * self.amplitude_nd()
    }

    fn erf_term(&self, s: f64) -> f64 {
        self.sigma * (PI / 2.0).sqrt() * (1.0 + libm::erf(s / (SQRT_2 * self.sigma)))
    }

    /// Output jets `(T_nd, p, u)` built from coordinate jets; exact first and second derivatives.
    pub fn jets_at(&self, x: [Jet<f64>; 3]) -> [Jet<f64>; OUTPUTS] {
        let up = self.up();
        let c = self.center;
        let d = [x[0] + (-c.x), x[1] + (-c.y), x[2] + (-c.z)];
        let s = d[0] * up.x + d[1] * up.y + d[2] * up.z;
        let dp = [0, 1, 2].map(|k| d[k] - s * up[k]);
        let inv = -1.0 / (2.0 * self.sigma * self.sigma);
        let gp = ((dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2]) * inv).exp();
        let gs = (s * s * inv).exp();
        let t_nd = gp * gs * self.amplitude_nd();
        let z = s * (1.0 / (SQRT_2 * self.sigma));
        let ev = libm::erf(z.v);
        let de = FRAC_2_SQRT_PI * (-z.v * z.v).exp();
        let erf = z.chain(ev, de, -2.0 * z.v * de);
        let e = (erf + 1.0) * (self.sigma * (PI / 2.0).sqrt());
        let p = gp * e * self.pressure_gain();
        let w = gp * self.w0;
        [t_nd, p, w * up.x, w * up.y, w * up.z]
    }
}

impl AnalyticFlow for GaussianPlume {
    fn temperature(&self, x: Vec3<f64>) -> f64 {
        let (_, _, _, gp, gs) = self.parts(x);
        self.medium.t0 + self.dt_k * gp * gs
    }

    fn temperature_gradient(&self, x: Vec3<f64>) -> Vec3<f64> {
        let (d, _, _, gp, gs) = self.parts(x);
        d * (-self.dt_k * gp * gs / (self.sigma * self.sigma))
    }

    fn velocity(&self, x: Vec3<f64>) -> Vec3<f64> {
        let (_, _, _, gp, _) = self.parts(x);
        self.up() * (self.w0 * gp)
    }

    fn velocity_jacobian(&self, x: Vec3<f64>) -> [Vec3<f64>; 3] {
        let (_, _, dp, gp, _) = self.parts(x);
        let grad_g = dp * (-gp / (self.sigma * self.sigma));
        let up = self.up();
        [0, 1, 2].map(|i| grad_g * (self.w0 * up[i]))
    }

    fn pressure(&self, x: Vec3<f64>) -> f64 {
        let (_, s, _, gp, _) = self.parts(x);
        self.pressure_gain() * gp * self.erf_term(s)
    }

    fn pressure_gradient(&self, x: Vec3<f64>) -> Vec3<f64> {
        let (_, s, dp, gp, gs) = self.parts(x);
        let k = self.pressure_gain();
        dp * (-k * self.erf_term(s) * gp / (self.sigma * self.sigma)) + self.up() * (k * gp * gs)
    }

    fn medium(&self) -> &MediumConstants<f64> {
        &self.medium
    }
}

/// Temperature (K) as a scalar field.
impl ScalarField<f64> for GaussianPlume {
    fn value(&self, x: Vec3<f64>) -> f64 {
        self.temperature(x)
    }
    fn gradient(&self, x: Vec3<f64>) -> Vec3<f64> {
        self.temperature_gradient(x)
    }
}

impl FlowModel for GaussianPlume {
    fn flow_jets(&self, x: Vec3<f64>) -> Result<[Jet<f64>; OUTPUTS]> {
        Ok(self.jets_at([0, 1, 2].map(|k| Jet::variable(x[k], k))))
    }
}

impl StateField for GaussianPlume {
    fn state(&self, x: Vec3<f64>) -> Result<FlowState<f64>> {
        Ok(self.flow_state(x))
    }
}

/// Largest relative mismatch between the gradient closures and central differences
/// (step `h`) over `points`; relative to `max(|analytic|, floor)`.
pub fn check_flow_derivatives<F: AnalyticFlow + ?Sized>(flow: &F, points: &[Vec3<f64>], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut cmp = |a: f64, fd: f64, scale: f64| {
        let floor = 1e-8 * scale.max(1e-300);
        worst = worst.max((a - fd).abs() / a.abs().max(floor));
    };
    for &x in points {
        let gt = flow.temperature_gradient(x);
        let gp = flow.pressure_gradient(x);
        let ju = flow.velocity_jacobian(x);
        let st = gt.max_abs();
        let sp = gp.max_abs();
        let su = ju.iter().map(|r| r.max_abs()).fold(0.0, f64::max);
        for k in 0..3 {
            let e = Vec3::axis(k) * h;
            let fd = |f: &dyn Fn(Vec3<f64>) -> f64| (f(x + e) - f(x - e)) / (2.0 * h);
            cmp(gt[k], fd(&|y| flow.temperature(y)), st);
            cmp(gp[k], fd(&|y| flow.pressure(y)), sp);
            for i in 0..3 {
                cmp(ju[i][k], fd(&|y| flow.velocity(y)[i]), su);
            }
        }
    }
    worst
}

/// Reference image (still ambient air) and flow image, rendered with identical seeds.
pub fn synthesize_measurement<F: AnalyticFlow + ScalarField<f64>>(
    scene: &Scene<f64>,
    flow: &F,
    spp: usize,
    seed: u64,
) -> Result<(Image<f64>, Image<f64>)> {
    let still = EtaFromTemperature::new(UniformField::new(scene.medium.t0), scene.medium);
    let i_ref = render_image(scene, &still, spp, seed)?;
    let eta = EtaFromTemperature::new(flow, scene.medium);
    let i_flow = render_image(scene, &eta, spp, seed)?;
    Ok((i_ref, i_flow))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldError {
    pub rmse: f64,
    /// RMSE over the truth's max-abs on the grid (over 1 if the truth vanishes).
    pub nrmse: f64,
    pub max_abs: f64,
}

/// Errors of `T` (K), `p` and `u` (nondimensional; `u` by vector norm).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub t: FieldError,
    pub p: FieldError,
    pub u: FieldError,
}

/// Node positions of an `n³` grid spanning `room`.
pub fn eval_grid_points(room: &Aabb<f64>, n: usize) -> Result<Vec<Vec3<f64>>> {
    let g = VoxelGrid::<f64>::zeros([n; 3], *room, 1)?;
    Ok((0..g.node_count()).map(|i| g.node_position_linear(i)).collect())
}

fn field_error(err_sq: &[f64], truth_abs: &[f64]) -> FieldError {
    let n = err_sq.len() as f64;
    let rmse = (err_sq.iter().sum::<f64>() / n).sqrt();
    let scale = truth_abs.iter().cloned().fold(0.0, f64::max);
    FieldError {
        rmse,
        nrmse: if scale > 0.0 { rmse / scale } else { rmse },
        max_abs: err_sq.iter().cloned().fold(0.0, f64::max).sqrt(),
    }
}

/// Metrics from paired samples of predicted and true states.
pub fn metrics_of(pred: &[FlowState<f64>], truth: &[FlowState<f64>], medium: &MediumConstants<f64>) -> Metrics {
    let dt = medium.t_in - medium.t0;
    let sq = |f: &dyn Fn(&FlowState<f64>, &FlowState<f64>) -> f64| -> Vec<f64> {
        pred.iter().zip(truth).map(|(a, b)| f(a, b)).collect()
    };
    let te = sq(&|a, b| ((a.t_nd - b.t_nd) * dt).powi(2));
    let pe = sq(&|a, b| (a.p - b.p).powi(2));
    let ue = sq(&|a, b| (a.u - b.u).norm_sq());
    let ta: Vec<f64> = truth.iter().map(|b| (b.t_nd * dt).abs()).collect();
    let pa: Vec<f64> = truth.iter().map(|b| b.p.abs()).collect();
    let ua: Vec<f64> = truth.iter().map(|b| b.u.norm()).collect();
    Metrics {
        t: field_error(&te, &ta),
        p: field_error(&pe, &pa),
        u: field_error(&ue, &ua),
    }
}

/// Compares `pred` with `truth` on the nodes of an `n³` grid over the room. The temperature
/// error is reported in kelvin, `T` measured as a fluctuation about `T₀`.
pub fn evaluate(
    pred: &dyn StateField,
    truth: &dyn StateField,
    scene: &Scene<f64>,
    n: usize,
) -> Result<Metrics> {
    if n < 2 {
        return Err(Error::Validation("evaluation grid needs >= 2 nodes per axis".into()));
    }
    let pts = eval_grid_points(&scene.room, n)?;
    let p = pts.iter().map(|&x| pred.state(x)).collect::<Result<Vec<_>>>()?;
    let t = pts.iter().map(|&x| truth.state(x)).collect::<Result<Vec<_>>>()?;
    Ok(metrics_of(&p, &t, &scene.medium))
}

/// Per-node errors `(T_pred − T_true [K], p_pred − p_true, |u_pred − u_true|)` as a 3-channel grid.
pub fn error_volume(
    pred: &dyn StateField,
    truth: &dyn StateField,
    scene: &Scene<f64>,
    n: usize,
) -> Result<VoxelGrid<f64>> {
    let dt = scene.medium.t_in - scene.medium.t0;
    let g = VoxelGrid::<f64>::zeros([n; 3], scene.room, 3)?;
    let nn = g.node_count();
    let mut data = vec![0.0; 3 * nn];
    for i in 0..nn {
        let x = g.node_position_linear(i);
        let (a, b) = (pred.state(x)?, truth.state(x)?);
        data[i] = (a.t_nd - b.t_nd) * dt;
        data[nn + i] = a.p - b.p;
        data[2 * nn + i] = (a.u - b.u).norm();
    }
    VoxelGrid::new([n; 3], scene.room, 3, data)
}

/// Root-mean-square residuals `(r_mass, |r_mom|, r_heat)` of a flow model over grid nodes.
pub fn residual_rms<M: FlowModel + ?Sized>(
    model: &M,
    c: &NondimConstants<f64>,
    points: &[Vec3<f64>],
) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    for &x in points {
        let r = residuals_from_jets(&model.flow_jets(x)?, c);
        acc[0] += r.r_mass * r.r_mass;
        acc[1] += r.r_mom.norm_sq();
        acc[2] += r.r_heat * r.r_heat;
    }
    let n = points.len().max(1) as f64;
    Ok(acc.map(|v| (v / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plume() -> GaussianPlume {
        gaussian_plume(
            Vec3::new(0.5, 1.5, 1.2),
            0.3,
            30.0,
            0.8,
            MediumConstants {
                rho0_g: 2.7e-4,
                t0: 293.15,
                t_in: 303.15,
                rho0: 1.2,
            },
            NondimConstants {
                re: 100.0,
                pe: 100.0,
                ri: 1.0,
                l: 1.0,
                u: 0.2,
                e_g: Vec3::new(0.0, 0.0, -1.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn center_and_three_sigma() {
        let p = plume();
        assert_eq!(p.temperature(p.center), 293.15 + 30.0);
        let x = p.center + Vec3::new(0.0, 0.9, 0.0);
        let want = 293.15 + 30.0 * (-4.5f64).exp();
        assert!(((p.temperature(x) - want) / want).abs() < 1e-12);
    }

    #[test]
    fn jets_agree_with_closures() {
        let p = plume();
        let x = Vec3::new(0.3, 1.7, 1.0);
        let j = p.flow_jets(x).unwrap();
        let gt = p.temperature_gradient(x) / (p.medium.t_in - p.medium.t0);
        let gp = p.pressure_gradient(x);
        for k in 0..3 {
            assert!((j[0].d[k] - gt[k]).abs() < 1e-12);
            assert!((j[1].d[k] - gp[k]).abs() < 1e-12);
        }
        assert!((j[1].v - p.pressure(x)).abs() < 1e-14);
    }

    #[test]
    fn sigma_must_be_positive() {
        let p = plume();
        assert!(gaussian_plume(p.center, 0.0, 1.0, 0.0, p.medium, p.nondim).is_err());
    }
}
