//! File formats: `VOXGRID v1` volumes, PFM float images and 8-bit PNG previews.
//!
//! VOXGRID layout: four ASCII lines
//! ```text
//! VOXGRID v1
//! dims <nx> <ny> <nz>
//! bbox <x0> <y0> <z0> <x1> <y1> <z1>
//! channels <c>
//! ```
//! followed by `nx·ny·nz·c` little-endian `f32` values, channel-major with x fastest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::VoxelGrid;
use crate::math::{Aabb, Vec3};
use crate::real::Real;

const VOX_MAGIC: &str = "VOXGRID v1";

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut s = String::new();
    let n = r.read_line(&mut s)?;
    if n == 0 {
        return Err(Error::Format("unexpected end of header".into()));
    }
    Ok(s.trim_end_matches(['\n', '\r']).to_string())
}

fn keyed<'a>(line: &'a str, key: &str, count: usize) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Format(format!("expected '{key}' line, got '{line}'")));
    }
    let vals: Vec<&str> = it.collect();
    if vals.len() != count {
        return Err(Error::Format(format!(
            "'{key}' line needs {count} values, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn parse<N: std::str::FromStr>(s: &str, what: &str) -> Result<N> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad {what} value '{s}'")))
}

pub fn write_voxgrid_to<T: Real>(w: &mut impl Write, g: &VoxelGrid<T>) -> Result<()> {
    let [nx, ny, nz] = g.dims();
    let b = g.bbox();
    writeln!(w, "{VOX_MAGIC}")?;
    writeln!(w, "dims {nx} {ny} {nz}")?;
    writeln!(
        w,
        "bbox {:e} {:e} {:e} {:e} {:e} {:e}",
        b.min.x.as_f64(),
        b.min.y.as_f64(),
        b.min.z.as_f64(),
        b.max.x.as_f64(),
        b.max.y.as_f64(),
        b.max.z.as_f64()
    )?;
    writeln!(w, "channels {}", g.channels())?;
    let mut buf = Vec::with_capacity(g.data().len() * 4);
    for v in g.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_voxgrid_from<T: Real>(r: &mut impl BufRead) -> Result<VoxelGrid<T>> {
    let magic = read_line(r)?;
    if magic.trim() != VOX_MAGIC {
        return Err(Error::Format(format!("bad VOXGRID magic '{magic}'")));
    }
    let dims_line = read_line(r)?;
    let d = keyed(&dims_line, "dims", 3)?;
    let dims: [usize; 3] = [parse(d[0], "dims")?, parse(d[1], "dims")?, parse(d[2], "dims")?];
    let bbox_line = read_line(r)?;
    let b = keyed(&bbox_line, "bbox", 6)?;
    let mut bb = [0.0f64; 6];
    for (i, s) in b.iter().enumerate() {
        bb[i] = parse(s, "bbox")?;
    }
    let ch_line = read_line(r)?;
    let channels: usize = parse(keyed(&ch_line, "channels", 1)?[0], "channels")?;
    let count = dims
        .iter()
        .try_fold(channels, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::Format("VOXGRID size overflows".into()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != count * 4 {
        return Err(Error::Format(format!(
            "VOXGRID payload has {} bytes, expected {}",
            raw.len(),
            count * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let bbox = Aabb::new(
        Vec3::from_f64([bb[0], bb[1], bb[2]]),
        Vec3::from_f64([bb[3], bb[4], bb[5]]),
    );
    VoxelGrid::new(dims, bbox, channels, data)
}

pub fn write_voxgrid<T: Real>(path: impl AsRef<Path>, g: &VoxelGrid<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_voxgrid_to(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn read_voxgrid<T: Real>(path: impl AsRef<Path>) -> Result<VoxelGrid<T>> {
    read_voxgrid_from(&mut BufReader::new(File::open(path)?))
}

/// Single-channel float image, rows stored top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Writes a grayscale `Pf` file (little-endian, rows bottom to top as the format requires).
pub fn write_pfm_to(w: &mut impl Write, img: &PfmImage) -> Result<()> {
    if img.data.len() != img.width * img.height {
        return Err(Error::ShapeMismatch {
            expected: img.width * img.height,
            got: img.data.len(),
        });
    }
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    let mut buf = Vec::with_capacity(img.data.len() * 4);
    for row in (0..img.height).rev() {
        for v in &img.data[row * img.width..(row + 1) * img.width] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn next_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of PFM header".into()));
    }
    String::from_utf8(tok).map_err(|_| Error::Format("non-ASCII PFM header".into()))
}

/// Reads `Pf` (grayscale) or `PF` (RGB, averaged to gray) files of either endianness.
pub fn read_pfm_from(r: &mut impl BufRead) -> Result<PfmImage> {
    let magic = next_token(r)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::Format(format!("bad PFM magic '{magic}'"))),
    };
    let width: usize = parse(&next_token(r)?, "PFM width")?;
    let height: usize = parse(&next_token(r)?, "PFM height")?;
    let scale: f64 = parse(&next_token(r)?, "PFM scale")?;
    if width == 0 || height == 0 || scale == 0.0 {
        return Err(Error::Format("degenerate PFM header".into()));
    }
    let little = scale < 0.0;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    let n = width * height * channels;
    if raw.len() != n * 4 {
        return Err(Error::Format(format!(
            "PFM payload has {} bytes, expected {}",
            raw.len(),
            n * 4
        )));
    }
    let vals: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let mut data = vec![0.0f32; width * height];
    for file_row in 0..height {
        let row = height - 1 - file_row;
        for col in 0..width {
            let k = (file_row * width + col) * channels;
            let v = if channels == 1 {
                vals[k]
            } else {
                (vals[k] + vals[k + 1] + vals[k + 2]) / 3.0
            };
            data[row * width + col] = v;
        }
    }
    Ok(PfmImage {
        width,
        height,
        data,
    })
}

pub fn write_pfm(path: impl AsRef<Path>, img: &PfmImage) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm_to(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    read_pfm_from(&mut BufReader::new(File::open(path)?))
}

/// 8-bit grayscale preview, linearly mapped from `[lo, hi]`.
pub fn write_png_preview(path: impl AsRef<Path>, img: &PfmImage, lo: f32, hi: f32) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Format("PNG buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG write failed: {e}")))
}
