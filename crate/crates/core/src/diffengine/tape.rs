//! Reverse-mode scalar [`Var`] recorded on a thread-local tape.
//!
//! `Var` implements [`Real`], so any generic numeric routine of this crate can be evaluated on
//! the tape and differentiated. Constants (including every literal) are not recorded.
//! Piecewise-constant primitives (`floor`, `round`, `signum`, ...) yield constants, i.e. their
//! derivative is taken as zero. `%` is not differentiable and marks the tape as unusable.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::real::Real;

const CONST: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Recip,
    Sqrt,
    Cbrt,
    Exp,
    ExpM1,
    Ln,
    Ln1p,
    Sin,
    Cos,
    Tan,
    Asin,
    Acos,
    Atan,
    Atan2,
    Sinh,
    Cosh,
    Tanh,
    Asinh,
    Acosh,
    Atanh,
    Abs,
    Powi,
    Powf,
    Max,
    Min,
}

impl Op {
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Op::Input => a,
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / b,
            Op::Neg => -a,
            Op::Recip => a.recip(),
            Op::Sqrt => a.sqrt(),
            Op::Cbrt => a.cbrt(),
            Op::Exp => a.exp(),
            Op::ExpM1 => a.exp_m1(),
            Op::Ln => a.ln(),
            Op::Ln1p => a.ln_1p(),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tan => a.tan(),
            Op::Asin => a.asin(),
            Op::Acos => a.acos(),
            Op::Atan => a.atan(),
            Op::Atan2 => a.atan2(b),
            Op::Sinh => a.sinh(),
            Op::Cosh => a.cosh(),
            Op::Tanh => a.tanh(),
            Op::Asinh => a.asinh(),
            Op::Acosh => a.acosh(),
            Op::Atanh => a.atanh(),
            Op::Abs => a.abs(),
            Op::Powi => a.powi(b as i32),
            Op::Powf => a.powf(b),
            Op::Max => a.max(b),
            Op::Min => a.min(b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Arg {
    idx: u32,
    c: f64,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    a: Arg,
    b: Arg,
    value: f64,
    da: f64,
    db: f64,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    unsupported: Option<String>,
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

/// Clears the current thread's tape. Existing non-constant `Var`s become invalid.
pub fn reset_tape() {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        t.nodes.clear();
        t.unsupported = None;
    });
}

/// Number of recorded nodes on the current thread's tape.
pub fn tape_len() -> usize {
    TAPE.with(|t| t.borrow().nodes.len())
}

fn mark_unsupported(what: &str) {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        if t.unsupported.is_none() {
            t.unsupported = Some(what.to_string());
        }
    });
}

/// Tape-recorded scalar.
#[derive(Clone, Copy)]
pub struct Var {
    v: f64,
    idx: u32,
}

impl Var {
    /// New independent variable.
    pub fn input(v: f64) -> Self {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.nodes.len() as u32;
            assert!(idx != CONST, "tape overflow");
            t.nodes.push(Node {
                op: Op::Input,
                a: Arg { idx: CONST, c: v },
                b: Arg { idx: CONST, c: 0.0 },
                value: v,
                da: 0.0,
                db: 0.0,
            });
            Var { v, idx }
        })
    }

    pub const fn constant(v: f64) -> Self {
        Var { v, idx: CONST }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.v
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }

    /// Same value with no derivative (stop-gradient).
    pub fn detach(self) -> Self {
        Var::constant(self.v)
    }

    fn arg(self) -> Arg {
        Arg {
            idx: self.idx,
            c: self.v,
        }
    }

    #[inline]
    fn record(op: Op, a: Var, b: Var, value: f64, da: f64, db: f64) -> Var {
        if a.idx == CONST && b.idx == CONST {
            return Var::constant(value);
        }
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            let idx = t.nodes.len() as u32;
            assert!(idx != CONST, "tape overflow");
            t.nodes.push(Node {
                op,
                a: a.arg(),
                b: b.arg(),
                value,
                da,
                db,
            });
            Var { v: value, idx }
        })
    }

    #[inline]
    fn unary(self, op: Op, value: f64, d: f64) -> Var {
        Var::record(op, self, Var::constant(0.0), value, d, 0.0)
    }
}

/// Adjoints of `wrt` for the scalar `output`.
pub fn gradient(output: Var, wrt: &[Var]) -> Result<Vec<f64>> {
    TAPE.with(|t| {
        let t = t.borrow();
        if let Some(u) = &t.unsupported {
            return Err(Error::Unsupported(u.clone()));
        }
        if output.idx == CONST {
            return Ok(vec![0.0; wrt.len()]);
        }
        let n = output.idx as usize + 1;
        let mut adj = vec![0.0f64; n];
        adj[n - 1] = 1.0;
        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = &t.nodes[i];
            if node.a.idx != CONST {
                adj[node.a.idx as usize] += g * node.da;
            }
            if node.b.idx != CONST {
                adj[node.b.idx as usize] += g * node.db;
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                if w.idx == CONST || w.idx as usize >= n {
                    0.0
                } else {
                    adj[w.idx as usize]
                }
            })
            .collect())
    })
}

/// Re-evaluates the recorded graph of `output` with `inputs` set to `values`; the tape is not
/// modified. Branch decisions inside primitives (`max`, `min`, `abs`) are re-taken, but
/// control flow of the original program is not.
pub fn replay(output: Var, inputs: &[Var], values: &[f64]) -> f64 {
    assert_eq!(inputs.len(), values.len());
    if output.idx == CONST {
        return output.v;
    }
    TAPE.with(|t| {
        let t = t.borrow();
        let n = output.idx as usize + 1;
        let mut vals: Vec<f64> = t.nodes[..n].iter().map(|nd| nd.value).collect();
        for (i, v) in inputs.iter().zip(values) {
            if i.idx != CONST && (i.idx as usize) < n {
                vals[i.idx as usize] = *v;
            }
        }
        for i in 0..n {
            let nd = &t.nodes[i];
            if nd.op == Op::Input {
                continue;
            }
            let a = if nd.a.idx == CONST { nd.a.c } else { vals[nd.a.idx as usize] };
            let b = if nd.b.idx == CONST { nd.b.c } else { vals[nd.b.idx as usize] };
            vals[i] = nd.op.eval(a, b);
        }
        vals[n - 1]
    })
}

/// Value and gradient of `loss` at `theta`, recorded on a fresh tape.
pub fn grad_params(loss: impl FnOnce(&[Var]) -> Var, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    reset_tape();
    let vars: Vec<Var> = theta.iter().map(|&v| Var::input(v)).collect();
    let out = loss(&vars);
    let g = gradient(out, &vars);
    reset_tape();
    Ok((out.v, g?))
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == CONST {
            write!(f, "Var({})", self.v)
        } else {
            write!(f, "Var({} @{})", self.v, self.idx)
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.v, f)
    }
}

impl Default for Var {
    fn default() -> Self {
        Var::constant(0.0)
    }
}

impl PartialEq for Var {
    fn eq(&self, o: &Self) -> bool {
        self.v == o.v
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        self.v.partial_cmp(&o.v)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::record(Op::Add, self, o, self.v + o.v, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::record(Op::Sub, self, o, self.v - o.v, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::record(Op::Mul, self, o, self.v * o.v, o.v, self.v)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let q = self.v / o.v;
        Var::record(Op::Div, self, o, q, 1.0 / o.v, -q / o.v)
    }
}

impl Rem for Var {
    type Output = Var;
    fn rem(self, o: Var) -> Var {
        if !(self.is_constant() && o.is_constant()) {
            mark_unsupported("remainder of tape variables");
        }
        Var::constant(self.v % o.v)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(Op::Neg, -self.v, -1.0)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}
impl SubAssign for Var {
    fn sub_assign(&mut self, o: Var) {
        *self = *self - o;
    }
}
impl MulAssign for Var {
    fn mul_assign(&mut self, o: Var) {
        *self = *self * o;
    }
}
impl DivAssign for Var {
    fn div_assign(&mut self, o: Var) {
        *self = *self / o;
    }
}

impl Sum for Var {
    fn sum<I: Iterator<Item = Var>>(iter: I) -> Var {
        iter.fold(Var::constant(0.0), |a, b| a + b)
    }
}

impl Zero for Var {
    fn zero() -> Self {
        Var::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.v == 0.0
    }
}

impl One for Var {
    fn one() -> Self {
        Var::constant(1.0)
    }
}

impl Num for Var {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> std::result::Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Var::constant)
    }
}

impl ToPrimitive for Var {
    fn to_i64(&self) -> Option<i64> {
        self.v.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.v.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.v)
    }
    fn to_f32(&self) -> Option<f32> {
        self.v.to_f32()
    }
}

impl NumCast for Var {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Var::constant)
    }
}

impl FromPrimitive for Var {
    fn from_i64(n: i64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Var::constant(n))
    }
    fn from_f32(n: f32) -> Option<Self> {
        Some(Var::constant(n as f64))
    }
}

macro_rules! float_consts {
    ($($name:ident),*) => {
        impl FloatConst for Var {
            $(fn $name() -> Self { Var::constant(<f64 as FloatConst>::$name()) })*
        }
    };
}

float_consts!(
    E, FRAC_1_PI, FRAC_1_SQRT_2, FRAC_2_PI, FRAC_2_SQRT_PI, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4,
    FRAC_PI_6, FRAC_PI_8, LN_10, LN_2, LOG10_E, LOG2_E, PI, SQRT_2, TAU, LOG10_2, LOG2_10
);

impl Float for Var {
    fn nan() -> Self {
        Var::constant(f64::NAN)
    }
    fn infinity() -> Self {
        Var::constant(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Var::constant(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Var::constant(-0.0)
    }
    fn min_value() -> Self {
        Var::constant(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Var::constant(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Var::constant(f64::EPSILON)
    }
    fn max_value() -> Self {
        Var::constant(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.v.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.v.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.v.is_finite()
    }
    fn is_normal(self) -> bool {
        self.v.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.v.classify()
    }
    fn floor(self) -> Self {
        Var::constant(self.v.floor())
    }
    fn ceil(self) -> Self {
        Var::constant(self.v.ceil())
    }
    fn round(self) -> Self {
        Var::constant(self.v.round())
    }
    fn trunc(self) -> Self {
        Var::constant(self.v.trunc())
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        let s = if self.v < 0.0 { -1.0 } else { 1.0 };
        self.unary(Op::Abs, self.v.abs(), s)
    }
    fn signum(self) -> Self {
        Var::constant(self.v.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.v.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.v.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        let r = self.v.recip();
        self.unary(Op::Recip, r, -r * r)
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 { 0.0 } else { n as f64 * self.v.powi(n - 1) };
        Var::record(Op::Powi, self, Var::constant(n as f64), self.v.powi(n), d, 0.0)
    }
    fn powf(self, n: Self) -> Self {
        let p = self.v.powf(n.v);
        let da = if n.v == 0.0 { 0.0 } else { n.v * self.v.powf(n.v - 1.0) };
        let db = if self.v > 0.0 { p * self.v.ln() } else { 0.0 };
        Var::record(Op::Powf, self, n, p, da, db)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.unary(Op::Sqrt, s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.unary(Op::Exp, e, e)
    }
    fn exp2(self) -> Self {
        (self * Var::constant(std::f64::consts::LN_2)).exp()
    }
    fn ln(self) -> Self {
        self.unary(Op::Ln, self.v.ln(), 1.0 / self.v)
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() * Var::constant(std::f64::consts::LOG2_E)
    }
    fn log10(self) -> Self {
        self.ln() * Var::constant(std::f64::consts::LOG10_E)
    }
    fn max(self, o: Self) -> Self {
        let (da, db) = if self.v >= o.v { (1.0, 0.0) } else { (0.0, 1.0) };
        Var::record(Op::Max, self, o, self.v.max(o.v), da, db)
    }
    fn min(self, o: Self) -> Self {
        let (da, db) = if self.v <= o.v { (1.0, 0.0) } else { (0.0, 1.0) };
        Var::record(Op::Min, self, o, self.v.min(o.v), da, db)
    }
    #[allow(deprecated)]
    fn abs_sub(self, o: Self) -> Self {
        (self - o).max(Var::constant(0.0))
    }
    fn cbrt(self) -> Self {
        let c = self.v.cbrt();
        self.unary(Op::Cbrt, c, 1.0 / (3.0 * c * c))
    }
    fn hypot(self, o: Self) -> Self {
        (self * self + o * o).sqrt()
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin, self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos, self.v.cos(), -self.v.sin())
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        self.unary(Op::Tan, t, 1.0 + t * t)
    }
    fn asin(self) -> Self {
        self.unary(Op::Asin, self.v.asin(), 1.0 / (1.0 - self.v * self.v).sqrt())
    }
    fn acos(self) -> Self {
        self.unary(Op::Acos, self.v.acos(), -1.0 / (1.0 - self.v * self.v).sqrt())
    }
    fn atan(self) -> Self {
        self.unary(Op::Atan, self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn atan2(self, o: Self) -> Self {
        let r2 = self.v * self.v + o.v * o.v;
        Var::record(Op::Atan2, self, o, self.v.atan2(o.v), o.v / r2, -self.v / r2)
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.unary(Op::ExpM1, self.v.exp_m1(), self.v.exp())
    }
    fn ln_1p(self) -> Self {
        self.unary(Op::Ln1p, self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }
    fn sinh(self) -> Self {
        self.unary(Op::Sinh, self.v.sinh(), self.v.cosh())
    }
    fn cosh(self) -> Self {
        self.unary(Op::Cosh, self.v.cosh(), self.v.sinh())
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }
    fn asinh(self) -> Self {
        self.unary(Op::Asinh, self.v.asinh(), 1.0 / (self.v * self.v + 1.0).sqrt())
    }
    fn acosh(self) -> Self {
        self.unary(Op::Acosh, self.v.acosh(), 1.0 / (self.v * self.v - 1.0).sqrt())
    }
    fn atanh(self) -> Self {
        self.unary(Op::Atanh, self.v.atanh(), 1.0 / (1.0 - self.v * self.v))
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.v.integer_decode()
    }
}

impl Real for Var {
    fn lit(x: f64) -> Self {
        Var::constant(x)
    }
    fn as_f64(self) -> f64 {
        self.v
    }
}
