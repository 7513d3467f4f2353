use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Adaptive moments with a belief-style second moment:
///
/// ```text
/// m ← β₁m + (1−β₁)g
/// s ← β₂s + (1−β₂)(g−m)² + ε
/// θ ← θ − lr · m̂ / (√ŝ + ε),   m̂ = m/(1−β₁ᵗ), ŝ = s/(1−β₂ᵗ)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            s: vec![0.0; n],
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: theta.len(),
            });
        }
        if grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for i in 0..theta.len() {
            let g = grad[i];
            let m = b1 * self.m[i] + (1.0 - b1) * g;
            let d = g - m;
            let s = b2 * self.s[i] + (1.0 - b2) * d * d + self.eps;
            self.m[i] = m;
            self.s[i] = s;
            theta[i] -= self.lr * (m / bc1) / ((s / bc2).sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "ADABELIEF v1")?;
        writeln!(w, "step {}", self.step)?;
        writeln!(w, "hyper {:e} {:e} {:e} {:e}", self.lr, self.beta1, self.beta2, self.eps)?;
        writeln!(w, "params {}", self.m.len())?;
        for v in self.m.iter().chain(&self.s) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        let mut next = |r: &mut dyn BufRead, key: &str| -> Result<Vec<String>> {
            line.clear();
            r.read_line(&mut line)?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Format(format!("optimizer state: expected '{key}'")));
            }
            Ok(it.map(str::to_owned).collect())
        };
        next(r, "ADABELIEF")?;
        let bad = || Error::Format("optimizer state: bad number".into());
        let step: u64 = next(r, "step")?.first().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let h = next(r, "hyper")?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if h.len() != 4 {
            return Err(bad());
        }
        let n: usize = next(r, "params")?.first().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut bytes = vec![0u8; 16 * n];
        r.read_exact(&mut bytes)?;
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            step,
            m: vals[..n].to_vec(),
            s: vals[n..].to_vec(),
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps: h[3],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
