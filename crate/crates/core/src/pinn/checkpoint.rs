//! Network checkpoints: a short text header followed by little-endian parameters.
//!
//! ```text
//! BOSNF v1
//! layers 3 128 128 128 128 5
//! activation tanh
//! scaling <cx> <cy> <cz> <hx> <hy> <hz>
//! fourier none | fourier <count> <scale> <seed>
//! dtype f32 | f64
//! params <n>
//! <n little-endian floats>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::network::{Activation, FourierFeatures, NeuralField};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Storage precision of the parameters. `f32` is the interchange default; `f64` keeps a
/// training run resumable bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointDtype {
    F32,
    F64,
}

pub fn write_checkpoint_to(w: &mut impl Write, nf: &NeuralField<f64>, dtype: CheckpointDtype) -> Result<()> {
    let c = nf.center();
    let h = nf.half_extent();
    writeln!(w, "BOSNF v1")?;
    let sizes: Vec<String> = nf.sizes().iter().map(|s| s.to_string()).collect();
    writeln!(w, "layers {}", sizes.join(" "))?;
    writeln!(w, "activation {}", nf.activation().name())?;
    writeln!(w, "scaling {:e} {:e} {:e} {:e} {:e} {:e}", c.x, c.y, c.z, h.x, h.y, h.z)?;
    match nf.fourier() {
        None => writeln!(w, "fourier none")?,
        Some(f) => writeln!(w, "fourier {} {:e} {}", f.count, f.scale, f.seed)?,
    }
    writeln!(
        w,
        "dtype {}",
        match dtype {
            CheckpointDtype::F32 => "f32",
            CheckpointDtype::F64 => "f64",
        }
    )?;
    writeln!(w, "params {}", nf.n_params())?;
    for &p in nf.params() {
        match dtype {
            CheckpointDtype::F32 => w.write_all(&(p as f32).to_le_bytes())?,
            CheckpointDtype::F64 => w.write_all(&p.to_le_bytes())?,
        }
    }
    Ok(())
}

fn header_line<'a>(r: &mut impl BufRead, buf: &'a mut String, key: &str) -> Result<Vec<String>> {
    buf.clear();
    r.read_line(buf)?;
    let mut it = buf.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Format(format!("checkpoint: expected '{key}' line, got '{}'", buf.trim())));
    }
    Ok(it.map(str::to_owned).collect())
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("checkpoint: bad number '{s}'")))
}

pub fn read_checkpoint_from(r: &mut impl BufRead) -> Result<NeuralField<f64>> {
    let mut buf = String::new();
    r.read_line(&mut buf)?;
    if buf.trim() != "BOSNF v1" {
        return Err(Error::Format("not a BOSNF v1 checkpoint".into()));
    }
    let sizes = header_line(r, &mut buf, "layers")?
        .iter()
        .map(|s| num::<usize>(s))
        .collect::<Result<Vec<_>>>()?;
    let act = header_line(r, &mut buf, "activation")?;
    let activation = Activation::from_name(act.first().map(String::as_str).unwrap_or(""))?;
    let sc = header_line(r, &mut buf, "scaling")?
        .iter()
        .map(|s| num::<f64>(s))
        .collect::<Result<Vec<_>>>()?;
    if sc.len() != 6 {
        return Err(Error::Format("checkpoint: scaling needs 6 numbers".into()));
    }
    let fl = header_line(r, &mut buf, "fourier")?;
    let fourier = match fl.as_slice() {
        [n] if n == "none" => None,
        [c, s, seed] => Some(FourierFeatures {
            count: num(c)?,
            scale: num(s)?,
            seed: num(seed)?,
        }),
        _ => return Err(Error::Format("checkpoint: bad fourier line".into())),
    };
    let dt = header_line(r, &mut buf, "dtype")?;
    let dtype = match dt.first().map(String::as_str) {
        Some("f32") => CheckpointDtype::F32,
        Some("f64") => CheckpointDtype::F64,
        _ => return Err(Error::Format("checkpoint: dtype must be f32 or f64".into())),
    };
    let n: usize = num(header_line(r, &mut buf, "params")?.first().map(String::as_str).unwrap_or(""))?;
    let width = match dtype {
        CheckpointDtype::F32 => 4,
        CheckpointDtype::F64 => 8,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)?;
    let params: Vec<f64> = match dtype {
        CheckpointDtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        CheckpointDtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    NeuralField::from_parts(
        sizes,
        activation,
        params,
        Vec3::new(sc[0], sc[1], sc[2]),
        Vec3::new(sc[3], sc[4], sc[5]),
        fourier,
    )
}

pub fn save_checkpoint(path: impl AsRef<Path>, nf: &NeuralField<f64>, dtype: CheckpointDtype) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(&mut w, nf, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NeuralField<f64>> {
    read_checkpoint_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Aabb;
    use crate::pinn::NetworkConfig;

    #[test]
    fn round_trip_both_precisions() {
        let cfg = NetworkConfig {
            hidden_layers: 2,
            width: 5,
            fourier: Some(FourierFeatures {
                count: 2,
                scale: 1.5,
                seed: 3,
            }),
            ..Default::default()
        };
        let room = Aabb::new(Vec3::new(-1.2, 0.0, 0.0), Vec3::new(2.9, 4.0, 3.0));
        let nf = NeuralField::<f64>::new(&cfg, &room).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &nf, CheckpointDtype::F64).unwrap();
        let back = read_checkpoint_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, nf);

        let mut buf = Vec::new();
        write_checkpoint_to(&mut buf, &nf, CheckpointDtype::F32).unwrap();
        let back = read_checkpoint_from(&mut buf.as_slice()).unwrap();
        for (a, b) in back.params().iter().zip(nf.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
