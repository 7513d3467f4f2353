use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::Jet;
use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::real::Real;

/// Number of network outputs: `T_nd, p, u_x, u_y, u_z`.
pub const OUTPUTS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
    /// Not twice differentiable; rejected wherever second derivatives are needed.
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sin" => Ok(Activation::Sin),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Parse(format!("unknown activation '{s}'"))),
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// `(σ, σ', σ'', σ''')` at `z`.
    #[inline]
    fn derivs(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = 1.0 - t * t;
                (t, s, -2.0 * t * s, s * (4.0 * t * t - 2.0 * s))
            }
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                (s, c, -s, -c)
            }
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0, 0.0)
                }
            }
            Activation::Identity => (z, 1.0, 0.0, 0.0),
        }
    }
}

/// Random Fourier input features `[ξ, sin(2π Bξ), cos(2π Bξ)]`, `B ~ N(0, scale²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierFeatures {
    pub count: usize,
    pub scale: f64,
    pub seed: u64,
}

impl FourierFeatures {
    fn matrix(&self) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|_| {
                let mut b = [0.0; 3];
                for v in &mut b {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *v = n * self.scale;
                }
                b
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fourier: Option<FourierFeatures>,
    /// Multiplier on the initial output-layer weights.
    pub output_init_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 128,
            activation: Activation::Tanh,
            fourier: None,
            output_init_scale: 1.0,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Validation("network width must be >= 1".into()));
        }
        if let Some(f) = &self.fourier {
            if f.count == 0 || !(f.scale > 0.0) {
                return Err(Error::Validation("fourier features need count >= 1 and scale > 0".into()));
            }
        }
        if !self.output_init_scale.is_finite() {
            return Err(Error::Validation("output_init_scale must be finite".into()));
        }
        Ok(())
    }
}

/// Nondimensional flow state at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowState<T> {
    pub t_nd: T,
    pub p: T,
    pub u: Vec3<T>,
}

impl<T: Real> FlowState<T> {
    pub fn from_outputs(o: [T; OUTPUTS]) -> Self {
        Self {
            t_nd: o[0],
            p: o[1],
            u: Vec3::new(o[2], o[3], o[4]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t_nd.is_finite() && self.p.is_finite() && self.u.is_finite()
    }
}

/// Derivative order carried through a batched forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOrder {
    Value,
    First,
    Second,
}

impl JetOrder {
    /// Components per neuron: value, 3 first derivatives, 3 diagonal second derivatives.
    pub fn comps(self) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::First => 4,
            JetOrder::Second => 7,
        }
    }
}

/// Network outputs of a point block: `data[(out * comps + comp) * n + p]`, component 0 the
/// value, `1 + k` the derivative along axis `k` (per meter), `4 + k` the second derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct JetOutputs {
    pub n: usize,
    pub comps: usize,
    pub data: Vec<f64>,
}

impl JetOutputs {
    pub fn zeros(n: usize, comps: usize) -> Self {
        Self {
            n,
            comps,
            data: vec![0.0; OUTPUTS * comps * n],
        }
    }

    #[inline]
    pub fn idx(&self, out: usize, comp: usize, p: usize) -> usize {
        (out * self.comps + comp) * self.n + p
    }

    #[inline]
    pub fn get(&self, out: usize, comp: usize, p: usize) -> f64 {
        self.data[self.idx(out, comp, p)]
    }

    #[inline]
    pub fn add(&mut self, out: usize, comp: usize, p: usize, v: f64) {
        let i = self.idx(out, comp, p);
        self.data[i] += v;
    }

    /// Jets of all outputs at point `p` (second derivatives zero if not carried).
    pub fn jets(&self, p: usize) -> [Jet<f64>; OUTPUTS] {
        let mut out = [Jet::constant(0.0); OUTPUTS];
        for (o, j) in out.iter_mut().enumerate() {
            j.v = self.get(o, 0, p);
            if self.comps >= 4 {
                for k in 0..3 {
                    j.d[k] = self.get(o, 1 + k, p);
                }
            }
            if self.comps >= 7 {
                for k in 0..3 {
                    j.dd[k] = self.get(o, 4 + k, p);
                }
            }
        }
        out
    }
}

/// Multilayer perceptron `x ↦ (T_nd, p, u)` on coordinates scaled from the room box to `[-1,1]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralField<T> {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
    offsets: Vec<usize>,
    center: Vec3<T>,
    half_extent: Vec3<T>,
    fourier: Option<FourierFeatures>,
    fourier_b: Vec<[f64; 3]>,
}

/// Points per block in batched passes; block results are reduced in block order.
pub const BLOCK: usize = 64;

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut off = vec![0];
    for w in sizes.windows(2) {
        let last = *off.last().unwrap();
        off.push(last + w[0] * w[1] + w[1]);
    }
    off
}

impl<T: Real> NeuralField<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(cfg: &NetworkConfig, room: &Aabb<T>) -> Result<Self> {
        cfg.validate()?;
        if !room.is_nondegenerate() {
            return Err(Error::Validation("input box must be nondegenerate".into()));
        }
        let in_dim = 3 + cfg.fourier.as_ref().map_or(0, |f| 2 * f.count);
        let mut sizes = vec![in_dim];
        sizes.extend(std::iter::repeat(cfg.width).take(cfg.hidden_layers));
        sizes.push(OUTPUTS);
        let offsets = layer_offsets(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Vec::with_capacity(*offsets.last().unwrap());
        let nl = sizes.len() - 1;
        for l in 0..nl {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            let lim = (6.0 / (ni + no) as f64).sqrt();
            let scale = if l + 1 == nl { cfg.output_init_scale } else { 1.0 };
            for _ in 0..ni * no {
                params.push(T::lit(rng.gen_range(-lim..lim) * scale));
            }
            params.extend(std::iter::repeat(T::zero()).take(no));
        }
        let fourier_b = cfg.fourier.as_ref().map(|f| f.matrix()).unwrap_or_default();
        Ok(Self {
            sizes,
            activation: cfg.activation,
            params,
            offsets,
            center: room.center(),
            half_extent: room.extent() * T::lit(0.5),
            fourier: cfg.fourier.clone(),
            fourier_b,
        })
    }

    /// Network with explicit parameters (checkpoint loading, tests).
    pub fn from_parts(
        sizes: Vec<usize>,
        activation: Activation,
        params: Vec<T>,
        center: Vec3<T>,
        half_extent: Vec3<T>,
        fourier: Option<FourierFeatures>,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Validation("layer sizes must be >= 1 and at least two layers".into()));
        }
        if *sizes.last().unwrap() != OUTPUTS {
            return Err(Error::Validation(format!("output layer must have {OUTPUTS} units")));
        }
        let want_in = 3 + fourier.as_ref().map_or(0, |f| 2 * f.count);
        if sizes[0] != want_in {
            return Err(Error::Validation(format!(
                "input layer must have {want_in} units, got {}",
                sizes[0]
            )));
        }
        let offsets = layer_offsets(&sizes);
        if params.len() != *offsets.last().unwrap() {
            return Err(Error::ShapeMismatch {
                expected: *offsets.last().unwrap(),
                got: params.len(),
            });
        }
        if !(half_extent.x > T::zero() && half_extent.y > T::zero() && half_extent.z > T::zero()) {
            return Err(Error::Validation("input scaling must be positive".into()));
        }
        let fourier_b = fourier.as_ref().map(|f| f.matrix()).unwrap_or_default();
        Ok(Self {
            sizes,
            activation,
            params,
            offsets,
            center,
            half_extent,
            fourier,
            fourier_b,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: Vec<T>) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                got: p.len(),
            });
        }
        self.params = p;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn center(&self) -> Vec3<T> {
        self.center
    }

    pub fn half_extent(&self) -> Vec3<T> {
        self.half_extent
    }

    pub fn fourier(&self) -> Option<&FourierFeatures> {
        self.fourier.as_ref()
    }

    /// Room box the input scaling maps onto `[-1,1]³`.
    pub fn domain(&self) -> Aabb<T> {
        Aabb::new(self.center - self.half_extent, self.center + self.half_extent)
    }

    /// Offset of layer `l`'s weight matrix (row-major `out × in`); biases follow it.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn cast<U: Real>(&self) -> NeuralField<U> {
        NeuralField {
            sizes: self.sizes.clone(),
            activation: self.activation,
            params: self.params.iter().map(|v| U::lit(v.as_f64())).collect(),
            offsets: self.offsets.clone(),
            center: self.center.cast(),
            half_extent: self.half_extent.cast(),
            fourier: self.fourier.clone(),
            fourier_b: self.fourier_b.clone(),
        }
    }

    fn features<S: Real>(&self, x: Vec3<S>) -> Vec<S> {
        let xi = [0, 1, 2].map(|k| (x[k] - S::lit(self.center[k].as_f64())) / S::lit(self.half_extent[k].as_f64()));
        let mut f = xi.to_vec();
        let tau = S::lit(std::f64::consts::TAU);
        for b in &self.fourier_b {
            let th = (xi[0] * S::lit(b[0]) + xi[1] * S::lit(b[1]) + xi[2] * S::lit(b[2])) * tau;
            f.push(th.sin());
        }
        for b in &self.fourier_b {
            let th = (xi[0] * S::lit(b[0]) + xi[1] * S::lit(b[1]) + xi[2] * S::lit(b[2])) * tau;
            f.push(th.cos());
        }
        f
    }

    /// Forward pass with externally supplied parameters in any scalar type (used to
    /// differentiate on the tape and as a plain reference implementation).
    pub fn forward_with<S: Real>(&self, params: &[S], x: Vec3<S>) -> [S; OUTPUTS] {
        assert_eq!(params.len(), self.params.len());
        let mut a = self.features(x);
        let nl = self.sizes.len() - 1;
        for l in 0..nl {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let w = &params[off..off + ni * no];
            let b = &params[off + ni * no..off + ni * no + no];
            let mut z = Vec::with_capacity(no);
            for o in 0..no {
                let mut s = b[o];
                for i in 0..ni {
                    s += w[o * ni + i] * a[i];
                }
                z.push(if l + 1 == nl { s } else { self.activation.apply(s) });
            }
            a = z;
        }
        [a[0], a[1], a[2], a[3], a[4]]
    }

    /// Outputs at `x` without a domain check.
    pub fn eval_unchecked(&self, x: Vec3<T>) -> FlowState<T> {
        FlowState::from_outputs(self.forward_with(&self.params, x))
    }

    /// Outputs at `x`, which must lie in the input box (1e-9 relative slack).
    pub fn field_eval(&self, x: Vec3<T>) -> Result<FlowState<T>> {
        let dom = self.domain();
        let tol = T::lit(1e-9) * self.half_extent.max_abs();
        if !dom.contains_with_tol(x, tol) {
            return Err(Error::OutOfDomain(format!(
                "point {:?} outside the network domain",
                x.to_f64()
            )));
        }
        Ok(self.eval_unchecked(x))
    }
}

impl NeuralField<f64> {
    /// Output jets at one point via [`Jet`] arithmetic (reference path for the batched code).
    pub fn eval_jet(&self, x: Vec3<f64>) -> Result<[Jet<f64>; OUTPUTS]> {
        if !self.activation.is_smooth() {
            return Err(Error::Unsupported(format!(
                "second derivatives of {} activation",
                self.activation.name()
            )));
        }
        let xj = [0, 1, 2].map(|k| Jet::variable(x[k], k));
        let xi: [Jet<f64>; 3] = [0, 1, 2].map(|k| (xj[k] + (-self.center[k])) * (1.0 / self.half_extent[k]));
        let mut a: Vec<Jet<f64>> = xi.to_vec();
        let tau = std::f64::consts::TAU;
        for b in &self.fourier_b {
            a.push(((xi[0] * b[0] + xi[1] * b[1] + xi[2] * b[2]) * tau).sin());
        }
        for b in &self.fourier_b {
            a.push(((xi[0] * b[0] + xi[1] * b[1] + xi[2] * b[2]) * tau).cos());
        }
        let nl = self.sizes.len() - 1;
        for l in 0..nl {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let mut z = Vec::with_capacity(no);
            for o in 0..no {
                let mut s = Jet::constant(self.params[off + ni * no + o]);
                for i in 0..ni {
                    s = s + a[i] * self.params[off + o * ni + i];
                }
                z.push(if l + 1 == nl {
                    s
                } else {
                    match self.activation {
                        Activation::Tanh => s.tanh(),
                        Activation::Sin => s.sin(),
                        _ => s,
                    }
                });
            }
            a = z;
        }
        Ok([a[0], a[1], a[2], a[3], a[4]])
    }

    fn input_block(&self, xs: &[Vec3<f64>], comps: usize) -> Vec<f64> {
        let n = xs.len();
        let stride = comps * n;
        let nin = self.sizes[0];
        let mut a = vec![0.0; nin * stride];
        let inv = [0, 1, 2].map(|k| 1.0 / self.half_extent[k]);
        for (p, x) in xs.iter().enumerate() {
            let xi = [0, 1, 2].map(|k| (x[k] - self.center[k]) * inv[k]);
            for k in 0..3 {
                a[k * stride + p] = xi[k];
                if comps >= 4 {
                    a[k * stride + (1 + k) * n + p] = inv[k];
                }
            }
            let nf = self.fourier_b.len();
            for (f, b) in self.fourier_b.iter().enumerate() {
                let tau = std::f64::consts::TAU;
                let th = tau * (b[0] * xi[0] + b[1] * xi[1] + b[2] * xi[2]);
                let dth = [0, 1, 2].map(|k| tau * b[k] * inv[k]);
                let (s, c) = th.sin_cos();
                let rs = (3 + f) * stride;
                let rc = (3 + nf + f) * stride;
                a[rs + p] = s;
                a[rc + p] = c;
                if comps >= 4 {
                    for k in 0..3 {
                        a[rs + (1 + k) * n + p] = c * dth[k];
                        a[rc + (1 + k) * n + p] = -s * dth[k];
                    }
                }
                if comps >= 7 {
                    for k in 0..3 {
                        a[rs + (4 + k) * n + p] = -s * dth[k] * dth[k];
                        a[rc + (4 + k) * n + p] = -c * dth[k] * dth[k];
                    }
                }
            }
        }
        a
    }

    /// Batched forward pass over one block; returns per-layer inputs and pre-activations.
    fn forward_block(&self, xs: &[Vec3<f64>], order: JetOrder) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = xs.len();
        let comps = order.comps();
        let stride = comps * n;
        let nl = self.sizes.len() - 1;
        let mut acts = vec![self.input_block(xs, comps)];
        let mut zs = Vec::with_capacity(nl);
        for l in 0..nl {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let w = &self.params[off..off + ni * no];
            let b = &self.params[off + ni * no..off + ni * no + no];
            let a = &acts[l];
            let mut z = vec![0.0; no * stride];
            for o in 0..no {
                let zr = &mut z[o * stride..(o + 1) * stride];
                for i in 0..ni {
                    let wv = w[o * ni + i];
                    if wv == 0.0 {
                        continue;
                    }
                    let ar = &a[i * stride..(i + 1) * stride];
                    for (zq, aq) in zr.iter_mut().zip(ar) {
                        *zq += wv * aq;
                    }
                }
                for q in zr[..n].iter_mut() {
                    *q += b[o];
                }
            }
            let y = if l + 1 == nl {
                z.clone()
            } else {
                let mut y = vec![0.0; no * stride];
                for o in 0..no {
                    let zr = &z[o * stride..(o + 1) * stride];
                    let yr = &mut y[o * stride..(o + 1) * stride];
                    for p in 0..n {
                        let (s0, s1, s2, _) = self.activation.derivs(zr[p]);
                        yr[p] = s0;
                        if comps >= 4 {
                            for k in 0..3 {
                                let zd = zr[(1 + k) * n + p];
                                yr[(1 + k) * n + p] = s1 * zd;
                                if comps >= 7 {
                                    let zdd = zr[(4 + k) * n + p];
                                    yr[(4 + k) * n + p] = s2 * zd * zd + s1 * zdd;
                                }
                            }
                        }
                    }
                }
                y
            };
            zs.push(z);
            acts.push(y);
        }
        (acts, zs)
    }

    fn outputs_of(last: &[f64], n: usize, comps: usize) -> JetOutputs {
        JetOutputs {
            n,
            comps,
            data: last.to_vec(),
        }
    }

    /// Output jets for a set of points (parallel over blocks, order preserved).
    pub fn eval_batch(&self, xs: &[Vec3<f64>], order: JetOrder) -> Result<Vec<JetOutputs>> {
        if order == JetOrder::Second && !self.activation.is_smooth() {
            return Err(Error::Unsupported(format!(
                "second derivatives of {} activation",
                self.activation.name()
            )));
        }
        Ok(xs
            .par_chunks(BLOCK)
            .map(|blk| {
                let (acts, _) = self.forward_block(blk, order);
                Self::outputs_of(acts.last().unwrap(), blk.len(), order.comps())
            })
            .collect())
    }

    /// Accumulates the parameter gradient for output adjoints `bar` of one block.
    fn backward_block(
        &self,
        acts: &[Vec<f64>],
        zs: &[Vec<f64>],
        bar: &JetOutputs,
        grad: &mut [f64],
    ) {
        let n = bar.n;
        let comps = bar.comps;
        let stride = comps * n;
        let nl = self.sizes.len() - 1;
        let mut ybar = bar.data.clone();
        for l in (0..nl).rev() {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            // activation backward (hidden layers)
            let zbar = if l + 1 == nl {
                ybar
            } else {
                let z = &zs[l];
                let mut zb = vec![0.0; no * stride];
                for o in 0..no {
                    let zr = &z[o * stride..(o + 1) * stride];
                    let yb = &ybar[o * stride..(o + 1) * stride];
                    let zbr = &mut zb[o * stride..(o + 1) * stride];
                    for p in 0..n {
                        let (_, s1, s2, s3) = self.activation.derivs(zr[p]);
                        let mut v = yb[p] * s1;
                        if comps >= 4 {
                            for k in 0..3 {
                                let zd = zr[(1 + k) * n + p];
                                let ybd = yb[(1 + k) * n + p];
                                let mut zdb = ybd * s1;
                                v += ybd * s2 * zd;
                                if comps >= 7 {
                                    let zdd = zr[(4 + k) * n + p];
                                    let ybdd = yb[(4 + k) * n + p];
                                    v += ybdd * (s3 * zd * zd + s2 * zdd);
                                    zdb += ybdd * 2.0 * s2 * zd;
                                    zbr[(4 + k) * n + p] = ybdd * s1;
                                }
                                zbr[(1 + k) * n + p] = zdb;
                            }
                        }
                        zbr[p] = v;
                    }
                }
                zb
            };
            let a = &acts[l];
            let (wg, bg) = grad[off..off + ni * no + no].split_at_mut(ni * no);
            for o in 0..no {
                let zr = &zbar[o * stride..(o + 1) * stride];
                bg[o] += zr[..n].iter().sum::<f64>();
                for i in 0..ni {
                    let ar = &a[i * stride..(i + 1) * stride];
                    let mut s = 0.0;
                    for (zq, aq) in zr.iter().zip(ar) {
                        s += zq * aq;
                    }
                    wg[o * ni + i] += s;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + ni * no];
                let mut abar = vec![0.0; ni * stride];
                for o in 0..no {
                    let zr = &zbar[o * stride..(o + 1) * stride];
                    for i in 0..ni {
                        let wv = w[o * ni + i];
                        if wv == 0.0 {
                            continue;
                        }
                        let ab = &mut abar[i * stride..(i + 1) * stride];
                        for (aq, zq) in ab.iter_mut().zip(zr) {
                            *aq += wv * zq;
                        }
                    }
                }
                ybar = abar;
            } else {
                ybar = Vec::new();
            }
        }
    }

    /// `Σ_blocks loss(block)` and its parameter gradient. `loss` maps a block's output jets to
    /// its loss contribution and the adjoint of those outputs. Blocks run in parallel; their
    /// results are reduced in block order, so the result does not depend on the thread count.
    pub fn loss_and_grad<F>(&self, xs: &[Vec3<f64>], order: JetOrder, loss: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(usize, &JetOutputs) -> Result<(f64, JetOutputs)> + Sync,
    {
        if order == JetOrder::Second && !self.activation.is_smooth() {
            return Err(Error::Unsupported(format!(
                "second derivatives of {} activation",
                self.activation.name()
            )));
        }
        let np = self.params.len();
        let parts: Vec<Result<(f64, Vec<f64>)>> = xs
            .par_chunks(BLOCK)
            .enumerate()
            .map(|(bi, blk)| {
                let (acts, zs) = self.forward_block(blk, order);
                let out = Self::outputs_of(acts.last().unwrap(), blk.len(), order.comps());
                let (l, bar) = loss(bi * BLOCK, &out)?;
                let mut g = vec![0.0; np];
                self.backward_block(&acts, &zs, &bar, &mut g);
                Ok((l, g))
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; np];
        for p in parts {
            let (l, g) = p?;
            total += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((total, grad))
    }
}
