use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::real::Real;

use super::ScalarField;

/// Regular grid of samples with nodes on the bounding-box corners.
///
/// Storage is channel-major: each channel is a contiguous `nx·ny·nz` block with
/// the x index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    dims: [usize; 3],
    bbox: Aabb<T>,
    channels: usize,
    data: Vec<T>,
}

/// The eight corner nodes and weights that produce a trilinear sample.
#[derive(Clone, Copy, Debug)]
pub struct TrilinearStencil<T> {
    /// Node indices (x fastest) within one channel block.
    pub nodes: [usize; 8],
    pub weights: [T; 8],
    /// Spatial derivative of each weight, per meter.
    pub dweights: [Vec3<T>; 8],
}

impl<T: Real> TrilinearStencil<T> {
    #[inline]
    pub fn apply(&self, values: &[T]) -> T {
        let mut v = T::zero();
        for c in 0..8 {
            v += self.weights[c] * values[self.nodes[c]];
        }
        v
    }

    #[inline]
    pub fn apply_gradient(&self, values: &[T]) -> Vec3<T> {
        // paired differences keep the gradient of a constant grid exactly zero
        let mut g = Vec3::zero();
        for a in 0..3 {
            let bit = 1 << a;
            for c in (0..8).filter(|c| c & bit != 0) {
                g[a] += self.dweights[c][a] * (values[self.nodes[c]] - values[self.nodes[c ^ bit]]);
            }
        }
        g
    }
}

impl<T: Real> VoxelGrid<T> {
    pub fn new(dims: [usize; 3], bbox: Aabb<T>, channels: usize, data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Validation(format!(
                "grid needs at least 2 nodes per axis, got {dims:?}"
            )));
        }
        if !bbox.is_nondegenerate() {
            return Err(Error::Validation("grid bounding box is degenerate".into()));
        }
        if channels == 0 {
            return Err(Error::Validation("grid needs at least one channel".into()));
        }
        let expected = dims[0] * dims[1] * dims[2] * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            dims,
            bbox,
            channels,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], bbox: Aabb<T>, channels: usize) -> Result<Self> {
        Self::new(
            dims,
            bbox,
            channels,
            vec![T::zero(); dims[0] * dims[1] * dims[2] * channels],
        )
    }

    /// Samples `f` at every node; `f` returns one value per channel.
    pub fn from_fn(
        dims: [usize; 3],
        bbox: Aabb<T>,
        channels: usize,
        f: impl Fn(Vec3<T>) -> Vec<T>,
    ) -> Result<Self> {
        let mut g = Self::zeros(dims, bbox, channels)?;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let vals = f(g.node_position(i, j, k));
                    if vals.len() != channels {
                        return Err(Error::ShapeMismatch {
                            expected: channels,
                            got: vals.len(),
                        });
                    }
                    for (ch, v) in vals.into_iter().enumerate() {
                        g.set(i, j, k, ch, v);
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bbox(&self) -> &Aabb<T> {
        &self.bbox
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// The contiguous block of one channel.
    pub fn channel_data(&self, ch: usize) -> &[T] {
        let n = self.node_count();
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn spacing(&self) -> Vec3<T> {
        let e = self.bbox.extent();
        Vec3::new(
            e.x / T::from_usize_lossy(self.dims[0] - 1),
            e.y / T::from_usize_lossy(self.dims[1] - 1),
            e.z / T::from_usize_lossy(self.dims[2] - 1),
        )
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let h = self.spacing();
        self.bbox.min
            + Vec3::new(
                h.x * T::from_usize_lossy(i),
                h.y * T::from_usize_lossy(j),
                h.z * T::from_usize_lossy(k),
            )
    }

    /// Position of the node with linear index `n` (x fastest).
    pub fn node_position_linear(&self, n: usize) -> Vec3<T> {
        let [nx, ny, _] = self.dims;
        self.node_position(n % nx, (n / nx) % ny, n / (nx * ny))
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, ch: usize) -> usize {
        ((ch * self.dims[2] + k) * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, ch: usize) -> T {
        self.data[self.index(i, j, k, ch)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, ch: usize, v: T) {
        let idx = self.index(i, j, k, ch);
        self.data[idx] = v;
    }

    /// Stencil at `x`, which must lie inside the bounding box.
    pub fn stencil(&self, x: Vec3<T>) -> Result<TrilinearStencil<T>> {
        if !self.bbox.contains(x) {
            return Err(Error::OutOfDomain(format!(
                "point {:?} outside grid box {:?}",
                x.to_f64(),
                (self.bbox.min.to_f64(), self.bbox.max.to_f64())
            )));
        }
        Ok(self.stencil_at(x, [false; 3]))
    }

    /// Stencil of the clamped interpolant: the value is taken at the nearest point of the box and
    /// the gradient component along every clamped axis is zero.
    pub fn stencil_clamped(&self, x: Vec3<T>) -> TrilinearStencil<T> {
        let mut clamped = [false; 3];
        for a in 0..3 {
            clamped[a] = x[a] < self.bbox.min[a] || x[a] > self.bbox.max[a];
        }
        self.stencil_at(self.bbox.clamp(x), clamped)
    }

    fn stencil_at(&self, x: Vec3<T>, clamped: [bool; 3]) -> TrilinearStencil<T> {
        let h = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let u = (x[a] - self.bbox.min[a]) / h[a];
            let top = self.dims[a] - 2;
            let fl = u.floor();
            let i = if fl < T::zero() {
                0
            } else {
                fl.to_usize().unwrap_or(top).min(top)
            };
            base[a] = i;
            frac[a] = u - T::from_usize_lossy(i);
        }
        let [nx, ny, _] = self.dims;
        let mut nodes = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let mut dweights = [Vec3::zero(); 8];
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w1 = [T::zero(); 3];
            let mut dw1 = [T::zero(); 3];
            for a in 0..3 {
                if o[a] == 1 {
                    w1[a] = frac[a];
                    dw1[a] = T::one() / h[a];
                } else {
                    w1[a] = T::one() - frac[a];
                    dw1[a] = -T::one() / h[a];
                }
                if clamped[a] {
                    dw1[a] = T::zero();
                }
            }
            nodes[c] = ((base[2] + o[2]) * ny + base[1] + o[1]) * nx + base[0] + o[0];
            weights[c] = w1[0] * w1[1] * w1[2];
            dweights[c] = Vec3::new(dw1[0] * w1[1] * w1[2], w1[0] * dw1[1] * w1[2], w1[0] * w1[1] * dw1[2]);
        }
        TrilinearStencil {
            nodes,
            weights,
            dweights,
        }
    }

    /// Trilinear interpolation of channel `ch`; errors outside the box.
    pub fn value(&self, ch: usize, x: Vec3<T>) -> Result<T> {
        Ok(self.stencil(x)?.apply(self.channel_data(ch)))
    }

    /// Exact gradient of the trilinear interpolant; errors outside the box.
    pub fn gradient(&self, ch: usize, x: Vec3<T>) -> Result<Vec3<T>> {
        Ok(self.stencil(x)?.apply_gradient(self.channel_data(ch)))
    }

    pub fn value_clamped(&self, ch: usize, x: Vec3<T>) -> T {
        self.stencil_clamped(x).apply(self.channel_data(ch))
    }

    pub fn gradient_clamped(&self, ch: usize, x: Vec3<T>) -> Vec3<T> {
        self.stencil_clamped(x).apply_gradient(self.channel_data(ch))
    }

    /// Clamped scalar-field view of one channel.
    pub fn field(&self, ch: usize) -> GridField<'_, T> {
        GridField { grid: self, channel: ch }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            bbox: self.bbox,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Channel 0, with out-of-box queries clamped.
impl<T: Real> ScalarField<T> for VoxelGrid<T> {
    fn value(&self, x: Vec3<T>) -> T {
        self.value_clamped(0, x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        self.gradient_clamped(0, x)
    }
    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        let s = self.stencil_clamped(x);
        let d = self.channel_data(0);
        (s.apply(d), s.apply_gradient(d))
    }
}

/// Clamped view of a single grid channel.
#[derive(Clone, Copy, Debug)]
pub struct GridField<'a, T> {
    pub grid: &'a VoxelGrid<T>,
    pub channel: usize,
}

impl<T: Real> ScalarField<T> for GridField<'_, T> {
    fn value(&self, x: Vec3<T>) -> T {
        self.grid.value_clamped(self.channel, x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        self.grid.gradient_clamped(self.channel, x)
    }
    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        let s = self.grid.stencil_clamped(x);
        let d = self.grid.channel_data(self.channel);
        (s.apply(d), s.apply_gradient(d))
    }
}
