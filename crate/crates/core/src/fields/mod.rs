//! Continuous scalar fields over the room: voxel grids, closed-form fields,
//! the temperature-to-index map and procedural textures.

mod grid;
mod texture;

pub use grid::{GridField, TrilinearStencil, VoxelGrid};
pub use texture::{make_noise_texture, Texture};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::MediumConstants;

/// A field that can be queried for its value and exact spatial gradient (per meter).
pub trait ScalarField<T: Real>: Sync {
    fn value(&self, x: Vec3<T>) -> T;

    fn gradient(&self, x: Vec3<T>) -> Vec3<T>;

    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        (self.value(x), self.gradient(x))
    }
}

impl<T: Real, F: ScalarField<T> + ?Sized> ScalarField<T> for &F {
    fn value(&self, x: Vec3<T>) -> T {
        (**self).value(x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        (**self).value_and_gradient(x)
    }
}

impl<T: Real, F: ScalarField<T> + ?Sized + Send> ScalarField<T> for Box<F> {
    fn value(&self, x: Vec3<T>) -> T {
        (**self).value(x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        (**self).gradient(x)
    }
    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        (**self).value_and_gradient(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformField<T> {
    pub value: T,
}

impl<T: Real> UniformField<T> {
    pub fn new(value: T) -> Self {
        Self { value }
    }
}

impl<T: Real> ScalarField<T> for UniformField<T> {
    fn value(&self, _x: Vec3<T>) -> T {
        self.value
    }
    fn gradient(&self, _x: Vec3<T>) -> Vec3<T> {
        Vec3::zero()
    }
}

/// `base + gradient · (x - origin)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearField<T> {
    pub base: T,
    pub gradient: Vec3<T>,
    pub origin: Vec3<T>,
}

impl<T: Real> ScalarField<T> for LinearField<T> {
    fn value(&self, x: Vec3<T>) -> T {
        self.base + self.gradient.dot(x - self.origin)
    }
    fn gradient(&self, _x: Vec3<T>) -> Vec3<T> {
        self.gradient
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineTerm<T> {
    pub amplitude: T,
    pub wavevector: Vec3<T>,
    pub phase: T,
}

/// `offset + linear · x + Σ a sin(k · x + φ)`; smooth everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidField<T> {
    pub offset: T,
    pub linear: Vec3<T>,
    pub terms: Vec<SineTerm<T>>,
}

impl<T: Real> SinusoidField<T> {
    /// Upper bound of `‖∇f‖` over all of space.
    pub fn gradient_bound(&self) -> T {
        self.terms
            .iter()
            .fold(self.linear.norm(), |acc, t| acc + t.amplitude.abs() * t.wavevector.norm())
    }

    /// Scales the varying part so that `gradient_bound() == bound`.
    pub fn scaled_to_gradient_bound(mut self, bound: T) -> Self {
        let s = bound / self.gradient_bound();
        self.linear = self.linear * s;
        for t in &mut self.terms {
            t.amplitude *= s;
        }
        self
    }
}

impl<T: Real> ScalarField<T> for SinusoidField<T> {
    fn value(&self, x: Vec3<T>) -> T {
        let mut v = self.offset + self.linear.dot(x);
        for t in &self.terms {
            v += t.amplitude * (t.wavevector.dot(x) + t.phase).sin();
        }
        v
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        let mut g = self.linear;
        for t in &self.terms {
            g += t.wavevector * (t.amplitude * (t.wavevector.dot(x) + t.phase).cos());
        }
        g
    }
}

/// `base + amplitude · exp(-‖x - c‖² / (2σ²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBump<T> {
    pub base: T,
    pub amplitude: T,
    pub center: Vec3<T>,
    pub sigma: T,
}

impl<T: Real> ScalarField<T> for GaussianBump<T> {
    fn value(&self, x: Vec3<T>) -> T {
        let r2 = (x - self.center).norm_sq();
        self.base + self.amplitude * (-r2 / (T::lit(2.0) * self.sigma * self.sigma)).exp()
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        let d = x - self.center;
        let s2 = self.sigma * self.sigma;
        let g = self.amplitude * (-d.norm_sq() / (T::lit(2.0) * s2)).exp();
        d * (-g / s2)
    }
}

/// `amplitude · (1 - r²/R²)³` inside radius `R`, zero outside; twice continuously differentiable
/// with compact support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompactBump<T> {
    pub amplitude: T,
    pub center: Vec3<T>,
    pub radius: T,
}

impl<T: Real> ScalarField<T> for CompactBump<T> {
    fn value(&self, x: Vec3<T>) -> T {
        let q = T::one() - (x - self.center).norm_sq() / (self.radius * self.radius);
        if q <= T::zero() {
            T::zero()
        } else {
            self.amplitude * q * q * q
        }
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        let d = x - self.center;
        let r2 = self.radius * self.radius;
        let q = T::one() - d.norm_sq() / r2;
        if q <= T::zero() {
            Vec3::zero()
        } else {
            d * (-T::lit(6.0) * self.amplitude * q * q / r2)
        }
    }
}

/// Pointwise sum of fields.
pub struct SumField<T: Real> {
    pub parts: Vec<Box<dyn ScalarField<T> + Send>>,
}

impl<T: Real> ScalarField<T> for SumField<T> {
    fn value(&self, x: Vec3<T>) -> T {
        self.parts.iter().map(|p| p.value(x)).sum()
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        self.parts.iter().fold(Vec3::zero(), |acc, p| acc + p.gradient(x))
    }
}

/// Field defined by a value closure and a gradient closure.
pub struct FnField<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<T, V, G> ScalarField<T> for FnField<V, G>
where
    T: Real,
    V: Fn(Vec3<T>) -> T + Sync,
    G: Fn(Vec3<T>) -> Vec3<T> + Sync,
{
    fn value(&self, x: Vec3<T>) -> T {
        (self.value)(x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        (self.gradient)(x)
    }
}

/// Refractive index of air at temperature `t` (K): `1 + ρ₀G · T₀ / T`.
pub fn eta_from_temperature<T: Real>(t: T, medium: &MediumConstants<T>) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::Validation(format!(
            "temperature must be positive, got {t}"
        )));
    }
    Ok(T::one() + medium.rho0_g * medium.t0 / t)
}

/// Index field derived from a temperature field through the Gladstone–Dale relation.
///
/// Non-positive temperatures yield non-finite values; callers validate inputs.
pub struct EtaFromTemperature<F, T> {
    pub temperature: F,
    pub medium: MediumConstants<T>,
}

impl<F, T: Real> EtaFromTemperature<F, T> {
    pub fn new(temperature: F, medium: MediumConstants<T>) -> Self {
        Self { temperature, medium }
    }
}

impl<T: Real, F: ScalarField<T>> ScalarField<T> for EtaFromTemperature<F, T> {
    fn value(&self, x: Vec3<T>) -> T {
        T::one() + self.medium.rho0_g * self.medium.t0 / self.temperature.value(x)
    }
    fn gradient(&self, x: Vec3<T>) -> Vec3<T> {
        self.value_and_gradient(x).1
    }
    fn value_and_gradient(&self, x: Vec3<T>) -> (T, Vec3<T>) {
        let (t, gt) = self.temperature.value_and_gradient(x);
        let k = self.medium.rho0_g * self.medium.t0;
        (T::one() + k / t, gt * (-k / (t * t)))
    }
}
