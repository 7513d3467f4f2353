use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::real::Real;

/// Nonnegative luminance map addressed by normalized coordinates `(s, t) ∈ [0,1]²`,
/// `s` left to right and `t` top to bottom. Texel `(row, col)` is centered at
/// `((col + ½)/W, (row + ½)/H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Texture<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("texture must be at least 1x1".into()));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(Error::Validation("texture values must be finite and nonnegative".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(value: T) -> Self {
        Self {
            width: 1,
            height: 1,
            data: vec![value],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    /// Bilinear sample with clamped addressing.
    pub fn sample(&self, s: T, t: T) -> T {
        self.sample_as(s, t)
    }

    /// Bilinear sample evaluated in another scalar type (used to differentiate lookups on the tape).
    pub fn sample_as<S: Real>(&self, s: S, t: S) -> S {
        let (c0, c1, fx) = axis_taps(s, self.width);
        let (r0, r1, fy) = axis_taps(t, self.height);
        let v = |r: usize, c: usize| S::lit(self.texel(r, c).as_f64());
        let top = v(r0, c0) * (S::one() - fx) + v(r0, c1) * fx;
        let bot = v(r1, c0) * (S::one() - fx) + v(r1, c1) * fx;
        top * (S::one() - fy) + bot * fy
    }

    /// Partial derivatives `(∂/∂s, ∂/∂t)` of the bilinear interpolant (zero where clamped).
    pub fn sample_gradient(&self, s: T, t: T) -> (T, T) {
        let (c0, c1, fx) = axis_taps(s, self.width);
        let (r0, r1, fy) = axis_taps(t, self.height);
        let w = T::from_usize_lossy(self.width);
        let h = T::from_usize_lossy(self.height);
        let xin = inside_axis(s, self.width);
        let yin = inside_axis(t, self.height);
        let a = self.texel(r0, c0);
        let b = self.texel(r0, c1);
        let c = self.texel(r1, c0);
        let d = self.texel(r1, c1);
        let ds = if xin {
            ((b - a) * (T::one() - fy) + (d - c) * fy) * w
        } else {
            T::zero()
        };
        let dt = if yin {
            ((c - a) * (T::one() - fx) + (d - b) * fx) * h
        } else {
            T::zero()
        };
        (ds, dt)
    }

    /// Mirror left-right.
    pub fn flipped_horizontally(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.texel(r, self.width - 1 - c))
            .expect("same shape")
    }
}

/// Lower tap, upper tap and fraction along one texture axis.
fn axis_taps<S: Real>(coord: S, n: usize) -> (usize, usize, S) {
    if n == 1 {
        return (0, 0, S::zero());
    }
    let x = coord * S::from_usize_lossy(n) - S::lit(0.5);
    let top = S::from_usize_lossy(n - 1);
    let x = x.max(S::zero()).min(top);
    let i = x.floor().to_usize().unwrap_or(0).min(n - 2);
    (i, i + 1, x - S::from_usize_lossy(i))
}

fn inside_axis<T: Real>(coord: T, n: usize) -> bool {
    if n == 1 {
        return false;
    }
    let x = coord * T::from_usize_lossy(n) - T::lit(0.5);
    x > T::zero() && x < T::from_usize_lossy(n - 1)
}

/// Band-limited procedural noise: random complex amplitudes on the annulus of spatial
/// frequencies `band.0 ≤ |k| ≤ band.1` (cycles per texture width), inverse transformed and
/// affinely mapped to `[0, 1]`. Deterministic for a fixed seed.
pub fn make_noise_texture<T: Real>(seed: u64, resolution: usize, band: (f64, f64)) -> Result<Texture<T>> {
    if resolution < 16 {
        return Err(Error::Validation(format!(
            "noise texture resolution must be >= 16, got {resolution}"
        )));
    }
    if !(band.0 >= 0.0 && band.1 > band.0) {
        return Err(Error::Validation(format!("invalid noise band {band:?}")));
    }
    let n = resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signed = |i: usize| -> f64 {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    let mut spectrum = vec![Complex::new(0.0f64, 0.0); n * n];
    for r in 0..n {
        for c in 0..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let k = (signed(r).powi(2) + signed(c).powi(2)).sqrt();
            if k >= band.0 && k <= band.1 && k > 0.0 {
                spectrum[r * n + c] = Complex::new(re, im);
            }
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    for row in spectrum.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = spectrum[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            spectrum[r * n + c] = col[r];
        }
    }
    let vals: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::Validation(format!(
            "noise band {band:?} contains no frequencies at resolution {n}"
        )));
    }
    Texture::new(n, n, vals.iter().map(|v| T::lit((v - lo) / span)).collect())
}
