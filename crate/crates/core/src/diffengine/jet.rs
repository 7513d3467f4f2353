use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::real::Real;

/// Second-order jet in three spatial directions: value, gradient and the diagonal of the
/// Hessian (enough for Laplacians).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet<T> {
    pub v: T,
    pub d: [T; 3],
    pub dd: [T; 3],
}

impl<T: Real> Jet<T> {
    pub fn constant(v: T) -> Self {
        Self {
            v,
            d: [T::zero(); 3],
            dd: [T::zero(); 3],
        }
    }

    /// Coordinate `axis` evaluated at `v`.
    pub fn variable(v: T, axis: usize) -> Self {
        let mut j = Self::constant(v);
        j.d[axis] = T::one();
        j
    }

    pub fn laplacian(&self) -> T {
        self.dd[0] + self.dd[1] + self.dd[2]
    }

    /// `φ(self)` given `φ`, `φ'`, `φ''` at the value.
    #[inline]
    pub fn chain(self, f: T, df: T, ddf: T) -> Self {
        let mut out = Self::constant(f);
        for k in 0..3 {
            out.d[k] = df * self.d[k];
            out.dd[k] = ddf * self.d[k] * self.d[k] + df * self.dd[k];
        }
        out
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        let s = T::one() - t * t;
        self.chain(t, s, -T::lit(2.0) * t * s)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = self.v.recip();
        self.chain(self.v.ln(), r, -r * r)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let d = T::lit(0.5) / s;
        self.chain(s, d, -d / (T::lit(2.0) * self.v))
    }

    pub fn powi(self, n: i32) -> Self {
        let nn = T::lit(n as f64);
        let d = if n == 0 { T::zero() } else { nn * self.v.powi(n - 1) };
        let dd = if n == 0 || n == 1 {
            T::zero()
        } else {
            nn * T::lit((n - 1) as f64) * self.v.powi(n - 2)
        };
        self.chain(self.v.powi(n), d, dd)
    }

    pub fn recip(self) -> Self {
        let r = self.v.recip();
        self.chain(r, -r * r, T::lit(2.0) * r * r * r)
    }

    pub fn scale(self, k: T) -> Self {
        Self {
            v: self.v * k,
            d: self.d.map(|x| x * k),
            dd: self.dd.map(|x| x * k),
        }
    }
}

impl<T: Real> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = self;
        r.v += o.v;
        for k in 0..3 {
            r.d[k] += o.d[k];
            r.dd[k] += o.dd[k];
        }
        r
    }
}

impl<T: Real> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<T: Real> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}

impl<T: Real> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut r = Self::constant(self.v * o.v);
        let two = T::lit(2.0);
        for k in 0..3 {
            r.d[k] = self.d[k] * o.v + self.v * o.d[k];
            r.dd[k] = self.dd[k] * o.v + two * self.d[k] * o.d[k] + self.v * o.dd[k];
        }
        r
    }
}

impl<T: Real> Div for Jet<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<T: Real> Add<T> for Jet<T> {
    type Output = Self;
    fn add(mut self, c: T) -> Self {
        self.v += c;
        self
    }
}

impl<T: Real> Mul<T> for Jet<T> {
    type Output = Self;
    fn mul(self, c: T) -> Self {
        self.scale(c)
    }
}

/// Values, Jacobian rows and Laplacians of a vector function at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialJet<T> {
    pub values: Vec<T>,
    pub jacobian: Vec<[T; 3]>,
    pub laplacian: Vec<T>,
}

/// Evaluates `f` on coordinate jets seeded at `x`, returning exact first derivatives and
/// Laplacians of every output.
pub fn spatial_jet<T: Real>(f: impl Fn([Jet<T>; 3]) -> Vec<Jet<T>>, x: [T; 3]) -> SpatialJet<T> {
    let inputs = [
        Jet::variable(x[0], 0),
        Jet::variable(x[1], 1),
        Jet::variable(x[2], 2),
    ];
    let out = f(inputs);
    SpatialJet {
        values: out.iter().map(|j| j.v).collect(),
        jacobian: out.iter().map(|j| j.d).collect(),
        laplacian: out.iter().map(|j| j.laplacian()).collect(),
    }
}
