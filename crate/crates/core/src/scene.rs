//! Experiment description: room geometry, optics, medium constants, rendering and
//! training settings, parsed from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{make_noise_texture, Texture};
use crate::math::{Aabb, Vec3};
use crate::optim::TrainConfig;
use crate::real::Real;
use crate::renderer::RenderSettings;

const ORTHO_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Serialized schema (all lengths in meters, temperatures in kelvin).

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub room: RoomConfig,
    pub camera: CameraConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<ProjectorConfig>,
    pub wall: WallConfig,
    pub boundary_plane: BoundaryPlaneConfig,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub nondim: NondimConfig,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default)]
    pub train: TrainConfig,
    /// Synthetic ground-truth flow used by `synthesize`, `evaluate` and `study`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plume: Option<PlumeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub position_m: [f64; 3],
    pub forward: [f64; 3],
    pub up: [f64; 3],
    /// Omitted: chosen at load time so the whole wall fits on the sensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_length_m: Option<f64>,
    #[serde(default = "default_sensor_extent")]
    pub sensor_extent_m: [f64; 2],
    /// `[height, width]` in pixels.
    pub resolution: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorConfig {
    pub position_m: [f64; 3],
    pub forward: [f64; 3],
    pub up: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_length_m: Option<f64>,
    /// Physical `[width, height]` of the pattern plane behind the pinhole.
    #[serde(default = "default_sensor_extent")]
    pub pattern_extent_m: [f64; 2],
    pub pattern: TextureConfig,
    /// Radiant scale applied to the pattern (W·m² per unit pattern value).
    #[serde(default = "one")]
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallConfig {
    pub point_m: [f64; 3],
    /// Must point towards the camera.
    pub normal: [f64; 3],
    /// In-plane horizontal axis; omitted: derived from the normal and +z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<[f64; 3]>,
    /// `[width, height]` along `right` and `normal × right`.
    pub extent_m: [f64; 2],
    #[serde(default = "default_wall_texture")]
    pub texture: TextureConfig,
    /// Luminance scale for the self-luminous texture, albedo under projector light.
    #[serde(default = "one")]
    pub luminance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextureConfig {
    Constant {
        value: f64,
    },
    Noise {
        seed: u64,
        resolution: usize,
        /// Radial frequency band in cycles per texture width.
        band: [f64; 2],
    },
    Checker {
        cells: [usize; 2],
        #[serde(default)]
        low: f64,
        #[serde(default = "one")]
        high: f64,
    },
    /// Vertical step edge: `low` left of `position` (fraction of width), `high` right of it.
    Step {
        #[serde(default = "half")]
        position: f64,
        #[serde(default)]
        low: f64,
        #[serde(default = "one")]
        high: f64,
        #[serde(default = "default_step_resolution")]
        resolution: usize,
    },
    /// PFM file; relative paths resolve against the config file's directory.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRole {
    Inlet,
    Outlet,
    InletOutlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryPlaneConfig {
    /// 0, 1 or 2 for x, y, z.
    pub axis: usize,
    pub offset_m: f64,
    #[serde(default = "default_role")]
    pub role: BoundaryRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    #[serde(rename = "rho0_G", default = "default_rho0_g")]
    pub rho0_g: f64,
    #[serde(rename = "T0_K", default = "default_t0")]
    pub t0_k: f64,
    #[serde(rename = "Tin_K", default = "default_tin")]
    pub tin_k: f64,
    /// Ambient density, used only to report dimensional pressure.
    #[serde(default = "default_rho0")]
    pub rho0_kgm3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NondimConfig {
    #[serde(rename = "Re", default = "default_re")]
    pub re: f64,
    #[serde(rename = "Pe", default = "default_pe")]
    pub pe: f64,
    #[serde(rename = "Ri", default = "default_ri")]
    pub ri: f64,
    #[serde(default = "one")]
    pub l_m: f64,
    #[serde(default = "default_u")]
    pub u_mps: f64,
    #[serde(default = "default_eg")]
    pub e_g: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlumeConfig {
    pub center_m: [f64; 3],
    pub sigma_m: f64,
    #[serde(rename = "dT_K")]
    pub dt_k: f64,
    /// Peak nondimensional updraft speed.
    pub w0: f64,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_sensor_extent() -> [f64; 2] {
    [0.036, 0.036]
}
fn default_step_resolution() -> usize {
    256
}
fn default_wall_texture() -> TextureConfig {
    TextureConfig::Noise {
        seed: 1,
        resolution: 256,
        band: [4.0, 24.0],
    }
}
fn default_role() -> BoundaryRole {
    BoundaryRole::InletOutlet
}
fn default_rho0_g() -> f64 {
    2.7e-4
}
fn default_t0() -> f64 {
    293.15
}
fn default_tin() -> f64 {
    303.15
}
fn default_rho0() -> f64 {
    1.2
}
fn default_re() -> f64 {
    100.0
}
fn default_pe() -> f64 {
    100.0
}
fn default_ri() -> f64 {
    1.0
}
fn default_u() -> f64 {
    0.2
}
fn default_eg() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            rho0_g: default_rho0_g(),
            t0_k: default_t0(),
            tin_k: default_tin(),
            rho0_kgm3: default_rho0(),
        }
    }
}

impl Default for NondimConfig {
    fn default() -> Self {
        Self {
            re: default_re(),
            pe: default_pe(),
            ri: default_ri(),
            l_m: 1.0,
            u_mps: default_u(),
            e_g: default_eg(),
        }
    }
}

impl TextureConfig {
    pub fn build<T: Real>(&self, base_dir: &Path) -> Result<Texture<T>> {
        match self {
            TextureConfig::Constant { value } => {
                if !(*value >= 0.0) || !value.is_finite() {
                    return Err(Error::Validation(format!(
                        "constant texture value must be finite and >= 0, got {value}"
                    )));
                }
                Ok(Texture::constant(T::lit(*value)))
            }
            TextureConfig::Noise {
                seed,
                resolution,
                band,
            } => make_noise_texture(*seed, *resolution, (band[0], band[1])),
            TextureConfig::Checker { cells, low, high } => {
                if cells[0] == 0 || cells[1] == 0 {
                    return Err(Error::Validation("checker cells must be >= 1".into()));
                }
                let n = 8;
                let (w, h) = (cells[0] * n, cells[1] * n);
                Texture::from_fn(w, h, |r, c| {
                    if ((r / n) + (c / n)) % 2 == 0 {
                        T::lit(*high)
                    } else {
                        T::lit(*low)
                    }
                })
            }
            TextureConfig::Step {
                position,
                low,
                high,
                resolution,
            } => {
                if *resolution < 2 {
                    return Err(Error::Validation("step texture resolution must be >= 2".into()));
                }
                Texture::from_fn(*resolution, 1, |_, c| {
                    let s = (c as f64 + 0.5) / *resolution as f64;
                    T::lit(if s < *position { *low } else { *high })
                })
            }
            TextureConfig::File { path } => {
                let p = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let img = crate::io::read_pfm(&p)?;
                Texture::new(
                    img.width,
                    img.height,
                    img.data.iter().map(|&v| T::lit(v as f64)).collect(),
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Resolved scene.

#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub position: Vec3<T>,
    pub forward: Vec3<T>,
    pub up: Vec3<T>,
    /// `forward × up`; image columns grow along it.
    pub right: Vec3<T>,
    pub focal_length: T,
    /// `(width, height)` in meters.
    pub sensor_extent: (T, T),
    /// `(H, W)`.
    pub resolution: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projector<T> {
    pub position: Vec3<T>,
    pub forward: Vec3<T>,
    pub up: Vec3<T>,
    pub right: Vec3<T>,
    pub focal_length: T,
    pub pattern_extent: (T, T),
    pub pattern: Texture<T>,
    pub power: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WallPlane<T> {
    pub point: Vec3<T>,
    pub normal: Vec3<T>,
    pub right: Vec3<T>,
    /// `normal × right`; texture rows run against it (row 0 at the top).
    pub up: Vec3<T>,
    pub extent: (T, T),
    pub texture: Texture<T>,
    pub luminance: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPlane<T> {
    pub axis: usize,
    pub offset: T,
    pub role: BoundaryRole,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediumConstants<T> {
    pub rho0_g: T,
    pub t0: T,
    pub t_in: T,
    pub rho0: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NondimConstants<T> {
    pub re: T,
    pub pe: T,
    pub ri: T,
    pub l: T,
    pub u: T,
    pub e_g: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub room: Aabb<T>,
    pub camera: Camera<T>,
    pub projector: Option<Projector<T>>,
    pub wall: WallPlane<T>,
    pub boundary_plane: BoundaryPlane<T>,
    pub medium: MediumConstants<T>,
    pub nondim: NondimConstants<T>,
    pub render: RenderSettings,
    pub train: TrainConfig,
    pub plume: Option<PlumeConfig>,
    config: SceneConfig,
}

impl<T: Real> MediumConstants<T> {
    /// `T = T₀ + (T_in − T₀)·T_nd`.
    pub fn temperature(&self, t_nd: T) -> T {
        self.t0 + (self.t_in - self.t0) * t_nd
    }

    pub fn t_nd(&self, temperature: T) -> T {
        (temperature - self.t0) / (self.t_in - self.t0)
    }

    /// Index of still ambient air, `1 + ρ₀G`.
    pub fn ambient_eta(&self) -> T {
        T::one() + self.rho0_g
    }
}

impl<T: Real> NondimConstants<T> {
    /// Dimensional velocity (m/s) from the nondimensional one.
    pub fn velocity_mps(&self, u_nd: Vec3<T>) -> Vec3<T> {
        u_nd * self.u
    }
}

/// A pixel's rectangle on the sensor plane in image-plane coordinates `(a, b)` (meters along
/// camera right/up, measured in front of the pinhole), plus the pinhole ray map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFootprint<T> {
    pub row: usize,
    pub col: usize,
    pub a_range: (T, T),
    pub b_range: (T, T),
}

impl<T: Real> PixelFootprint<T> {
    pub fn pitch(&self) -> (T, T) {
        (self.a_range.1 - self.a_range.0, self.b_range.1 - self.b_range.0)
    }

    pub fn area(&self) -> T {
        let (pa, pb) = self.pitch();
        pa * pb
    }

    pub fn center(&self) -> (T, T) {
        let h = T::lit(0.5);
        (
            (self.a_range.0 + self.a_range.1) * h,
            (self.b_range.0 + self.b_range.1) * h,
        )
    }

    /// Point at fractional offsets `(u, v) ∈ [0,1]²` of the rectangle (`v` upward).
    pub fn point(&self, u: T, v: T) -> (T, T) {
        let (pa, pb) = self.pitch();
        (self.a_range.0 + u * pa, self.b_range.0 + v * pb)
    }
}

impl<T: Real> Camera<T> {
    pub fn pixel_count(&self) -> usize {
        self.resolution.0 * self.resolution.1
    }

    pub fn pixel_pitch(&self) -> (T, T) {
        (
            self.sensor_extent.0 / T::from_usize_lossy(self.resolution.1),
            self.sensor_extent.1 / T::from_usize_lossy(self.resolution.0),
        )
    }

    /// Sensor rectangle of pixel `(row, col)`; row 0 is the top of the image.
    pub fn pixel_footprint(&self, row: usize, col: usize) -> Result<PixelFootprint<T>> {
        let (h, w) = self.resolution;
        if row >= h || col >= w {
            return Err(Error::OutOfRange(format!(
                "pixel ({row}, {col}) outside {h}x{w} sensor"
            )));
        }
        let (pw, ph) = self.pixel_pitch();
        let half = T::lit(0.5);
        let a0 = -self.sensor_extent.0 * half + T::from_usize_lossy(col) * pw;
        let b1 = self.sensor_extent.1 * half - T::from_usize_lossy(row) * ph;
        let a1 = if col + 1 == w {
            self.sensor_extent.0 * half
        } else {
            -self.sensor_extent.0 * half + T::from_usize_lossy(col + 1) * pw
        };
        let b0 = if row + 1 == h {
            -self.sensor_extent.1 * half
        } else {
            self.sensor_extent.1 * half - T::from_usize_lossy(row + 1) * ph
        };
        Ok(PixelFootprint {
            row,
            col,
            a_range: (a0, a1),
            b_range: (b0, b1),
        })
    }

    /// Footprint by linear pixel index `row * W + col`.
    pub fn pixel_footprint_linear(&self, j: usize) -> Result<PixelFootprint<T>> {
        let w = self.resolution.1;
        if j >= self.pixel_count() {
            return Err(Error::OutOfRange(format!(
                "pixel index {j} outside sensor of {} pixels",
                self.pixel_count()
            )));
        }
        self.pixel_footprint(j / w, j % w)
    }

    /// Physical sensor position for image-plane coordinates `(a, b)` (the sensor sits behind
    /// the pinhole, so it is point-mirrored) and the unit ray direction through the pinhole.
    pub fn sensor_ray(&self, a: T, b: T) -> (Vec3<T>, Vec3<T>) {
        let offset = self.forward * self.focal_length + self.right * a + self.up * b;
        (self.position - offset, offset.normalized())
    }

    /// Image-plane coordinates `(a, b)` of a world point in front of the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T)> {
        let d = p - self.position;
        let z = d.dot(self.forward);
        if !(z > T::zero()) {
            return None;
        }
        Some((
            self.focal_length * d.dot(self.right) / z,
            self.focal_length * d.dot(self.up) / z,
        ))
    }
}

impl<T: Real> Projector<T> {
    /// Pattern coordinates `(s, t)` of the pinhole projection of `p`, `t` downward.
    pub fn pattern_coords(&self, p: Vec3<T>) -> Option<(T, T)> {
        let d = p - self.position;
        let z = d.dot(self.forward);
        if !(z > T::zero()) {
            return None;
        }
        let a = self.focal_length * d.dot(self.right) / z;
        let b = self.focal_length * d.dot(self.up) / z;
        let half = T::lit(0.5);
        Some((a / self.pattern_extent.0 + half, half - b / self.pattern_extent.1))
    }
}

impl<T: Real> WallPlane<T> {
    /// Signed distance of `p` from the plane, positive on the camera side.
    #[inline]
    pub fn signed_distance(&self, p: Vec3<T>) -> T {
        (p - self.point).dot(self.normal)
    }

    /// Texture coordinates `(s, t)`; `t` grows downward. Inside the extent iff both in `[0,1]`.
    pub fn texture_coords(&self, p: Vec3<T>) -> (T, T) {
        let d = p - self.point;
        let half = T::lit(0.5);
        (
            d.dot(self.right) / self.extent.0 + half,
            half - d.dot(self.up) / self.extent.1,
        )
    }

    pub fn contains_in_extent(&self, p: Vec3<T>) -> bool {
        let (s, t) = self.texture_coords(p);
        s >= T::zero() && s <= T::one() && t >= T::zero() && t <= T::one()
    }

    pub fn corners(&self) -> [Vec3<T>; 4] {
        let h = T::lit(0.5);
        let r = self.right * (self.extent.0 * h);
        let u = self.up * (self.extent.1 * h);
        [
            self.point - r - u,
            self.point + r - u,
            self.point + r + u,
            self.point - r + u,
        ]
    }
}

impl<T: Real> BoundaryPlane<T> {
    /// Rectangle of the plane inside the room: the two in-plane axes and their ranges.
    pub fn in_plane_axes(&self) -> (usize, usize) {
        ((self.axis + 1) % 3, (self.axis + 2) % 3)
    }
}

fn unit(v: [f64; 3], what: &str) -> Result<Vec3<f64>> {
    let v = Vec3::from_array(v);
    if !v.is_finite() {
        return Err(Error::Validation(format!("{what} must be finite")));
    }
    v.try_normalized()
        .ok_or_else(|| Error::Validation(format!("{what} must have nonzero length")))
}

fn finite3(v: [f64; 3], what: &str) -> Result<Vec3<f64>> {
    let v = Vec3::from_array(v);
    if !v.is_finite() {
        return Err(Error::Validation(format!("{what} must be finite")));
    }
    Ok(v)
}

fn positive(x: f64, what: &str) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Validation(format!("{what} must be positive, got {x}")))
    }
}

fn orthonormal_pair(fwd: [f64; 3], up: [f64; 3], who: &str) -> Result<(Vec3<f64>, Vec3<f64>)> {
    let f = unit(fwd, &format!("{who}.forward"))?;
    let u = unit(up, &format!("{who}.up"))?;
    if f.dot(u).abs() > ORTHO_TOL {
        return Err(Error::Validation(format!(
            "{who}.forward and {who}.up must be orthogonal (dot = {})",
            f.dot(u)
        )));
    }
    Ok((f, u))
}

/// Focal length at which every wall corner projects inside the given half extents.
fn covering_focal(
    position: Vec3<f64>,
    fwd: Vec3<f64>,
    right: Vec3<f64>,
    up: Vec3<f64>,
    extent: [f64; 2],
    corners: &[Vec3<f64>; 4],
    who: &str,
) -> Result<f64> {
    let mut f = f64::INFINITY;
    for c in corners {
        let d = *c - position;
        let z = d.dot(fwd);
        if !(z > 0.0) {
            return Err(Error::Validation(format!(
                "wall is not in front of the {who}; cannot derive a focal length"
            )));
        }
        let x = d.dot(right).abs();
        let y = d.dot(up).abs();
        if x > 0.0 {
            f = f.min(0.5 * extent[0] * z / x);
        }
        if y > 0.0 {
            f = f.min(0.5 * extent[1] * z / y);
        }
    }
    if !f.is_finite() {
        return Err(Error::Validation(format!("cannot derive {who} focal length")));
    }
    Ok(f)
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene config serializes")
    }
}

/// Reads, validates and resolves a scene file.
pub fn load_scene<T: Real>(path: impl AsRef<Path>) -> Result<Scene<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let cfg = SceneConfig::from_json(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Scene::from_config(cfg, base)
}

impl<T: Real> Scene<T> {
    /// Validates `cfg`, fills derived defaults and builds textures (file paths resolve
    /// against `base_dir`).
    pub fn from_config(mut cfg: SceneConfig, base_dir: &Path) -> Result<Self> {
        let rmin = finite3(cfg.room.min, "room.min")?;
        let rmax = finite3(cfg.room.max, "room.max")?;
        let room = Aabb::new(rmin, rmax);
        if !room.is_nondegenerate() {
            return Err(Error::Validation("room.max must exceed room.min on every axis".into()));
        }
        let scale = room.extent().max_abs();
        let tol = 1e-9 * scale.max(1.0);

        // Wall.
        let wn = unit(cfg.wall.normal, "wall.normal")?;
        let wp = finite3(cfg.wall.point_m, "wall.point_m")?;
        let wr = match cfg.wall.right {
            Some(r) => {
                let r = unit(r, "wall.right")?;
                if r.dot(wn).abs() > ORTHO_TOL {
                    return Err(Error::Validation("wall.right must be orthogonal to wall.normal".into()));
                }
                r
            }
            None => {
                let world_up = if wn.z.abs() < 0.9 {
                    Vec3::axis(2)
                } else {
                    Vec3::axis(1)
                };
                world_up.cross(wn).normalized()
            }
        };
        let wu = wn.cross(wr);
        let wext = [
            positive(cfg.wall.extent_m[0], "wall.extent_m[0]")?,
            positive(cfg.wall.extent_m[1], "wall.extent_m[1]")?,
        ];
        if !(cfg.wall.luminance >= 0.0) || !cfg.wall.luminance.is_finite() {
            return Err(Error::Validation("wall.luminance must be finite and >= 0".into()));
        }
        let wall64 = WallPlane {
            point: wp,
            normal: wn,
            right: wr,
            up: wu,
            extent: (wext[0], wext[1]),
            texture: Texture::constant(0.0),
            luminance: cfg.wall.luminance,
        };
        for c in wall64.corners() {
            if !room.contains_with_tol(c, tol) {
                return Err(Error::Validation(format!(
                    "wall corner {:?} lies outside the room box",
                    c.to_array()
                )));
            }
        }

        // Camera.
        let (cf, cu) = orthonormal_pair(cfg.camera.forward, cfg.camera.up, "camera")?;
        let cr = cf.cross(cu);
        let cpos = finite3(cfg.camera.position_m, "camera.position_m")?;
        if room.contains_strict(cpos) {
            return Err(Error::Validation("camera must lie outside or on the room box".into()));
        }
        if !(wall64.signed_distance(cpos) > 0.0) {
            return Err(Error::Validation(
                "camera must be on the side of the wall its normal points to".into(),
            ));
        }
        let [h, w] = cfg.camera.resolution;
        if h == 0 || w == 0 {
            return Err(Error::Validation("camera.resolution must be at least 1x1".into()));
        }
        let sext = [
            positive(cfg.camera.sensor_extent_m[0], "camera.sensor_extent_m[0]")?,
            positive(cfg.camera.sensor_extent_m[1], "camera.sensor_extent_m[1]")?,
        ];
        let corners = wall64.corners();
        let cfocal = match cfg.camera.focal_length_m {
            Some(f) => positive(f, "camera.focal_length_m")?,
            None => covering_focal(cpos, cf, cr, cu, sext, &corners, "camera")?,
        };
        cfg.camera.forward = cf.to_array();
        cfg.camera.up = cu.to_array();
        cfg.camera.focal_length_m = Some(cfocal);
        cfg.wall.normal = wn.to_array();
        cfg.wall.right = Some(wr.to_array());

        // Projector.
        let projector = match cfg.projector.as_mut() {
            None => None,
            Some(p) => {
                let (pf, pu) = orthonormal_pair(p.forward, p.up, "projector")?;
                let pr = pf.cross(pu);
                let ppos = finite3(p.position_m, "projector.position_m")?;
                if room.contains_strict(ppos) {
                    return Err(Error::Validation(
                        "projector must lie outside or on the room box".into(),
                    ));
                }
                if !(wall64.signed_distance(ppos) > 0.0) {
                    return Err(Error::Validation(
                        "projector must be on the side of the wall its normal points to".into(),
                    ));
                }
                let pext = [
                    positive(p.pattern_extent_m[0], "projector.pattern_extent_m[0]")?,
                    positive(p.pattern_extent_m[1], "projector.pattern_extent_m[1]")?,
                ];
                let pfocal = match p.focal_length_m {
                    Some(f) => positive(f, "projector.focal_length_m")?,
                    None => covering_focal(ppos, pf, pr, pu, pext, &corners, "projector")?,
                };
                if !(p.power >= 0.0) || !p.power.is_finite() {
                    return Err(Error::Validation("projector.power must be finite and >= 0".into()));
                }
                p.forward = pf.to_array();
                p.up = pu.to_array();
                p.focal_length_m = Some(pfocal);
                Some(Projector {
                    position: ppos.cast(),
                    forward: pf.cast(),
                    up: pu.cast(),
                    right: pr.cast(),
                    focal_length: T::lit(pfocal),
                    pattern_extent: (T::lit(pext[0]), T::lit(pext[1])),
                    pattern: p.pattern.build(base_dir)?,
                    power: T::lit(p.power),
                })
            }
        };

        // Boundary plane.
        let bp = &cfg.boundary_plane;
        if bp.axis > 2 {
            return Err(Error::Validation(format!(
                "boundary_plane.axis must be 0, 1 or 2, got {}",
                bp.axis
            )));
        }
        if !(bp.offset_m >= rmin[bp.axis] - tol && bp.offset_m <= rmax[bp.axis] + tol) {
            return Err(Error::Validation(format!(
                "boundary plane offset {} lies outside the room along axis {}",
                bp.offset_m, bp.axis
            )));
        }

        // Constants.
        let m = &cfg.medium;
        positive(m.rho0_g, "medium.rho0_G")?;
        positive(m.t0_k, "medium.T0_K")?;
        positive(m.tin_k, "medium.Tin_K")?;
        positive(m.rho0_kgm3, "medium.rho0_kgm3")?;
        if m.tin_k == m.t0_k {
            return Err(Error::Validation("medium.Tin_K must differ from medium.T0_K".into()));
        }
        let nd = &mut cfg.nondim;
        positive(nd.re, "nondim.Re")?;
        positive(nd.pe, "nondim.Pe")?;
        positive(nd.l_m, "nondim.L_m")?;
        positive(nd.u_mps, "nondim.U_mps")?;
        if !nd.ri.is_finite() {
            return Err(Error::Validation("nondim.Ri must be finite".into()));
        }
        let eg = finite3(nd.e_g, "nondim.e_g")?;
        if (eg.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Validation(format!(
                "nondim.e_g must be a unit vector (norm {})",
                eg.norm()
            )));
        }
        let eg = eg.normalized();
        nd.e_g = eg.to_array();

        cfg.render.validate()?;
        cfg.train.validate()?;
        if let Some(pl) = &cfg.plume {
            finite3(pl.center_m, "plume.center_m")?;
            positive(pl.sigma_m, "plume.sigma_m")?;
            if !pl.dt_k.is_finite() || !pl.w0.is_finite() {
                return Err(Error::Validation("plume.dT_K and plume.w0 must be finite".into()));
            }
        }

        let wall = WallPlane {
            point: wp.cast(),
            normal: wn.cast(),
            right: wr.cast(),
            up: wu.cast(),
            extent: (T::lit(wext[0]), T::lit(wext[1])),
            texture: cfg.wall.texture.build(base_dir)?,
            luminance: T::lit(cfg.wall.luminance),
        };
        Ok(Scene {
            room: room.cast(),
            camera: Camera {
                position: cpos.cast(),
                forward: cf.cast(),
                up: cu.cast(),
                right: cr.cast(),
                focal_length: T::lit(cfocal),
                sensor_extent: (T::lit(sext[0]), T::lit(sext[1])),
                resolution: (h, w),
            },
            projector,
            wall,
            boundary_plane: BoundaryPlane {
                axis: cfg.boundary_plane.axis,
                offset: T::lit(cfg.boundary_plane.offset_m),
                role: cfg.boundary_plane.role,
            },
            medium: MediumConstants {
                rho0_g: T::lit(cfg.medium.rho0_g),
                t0: T::lit(cfg.medium.t0_k),
                t_in: T::lit(cfg.medium.tin_k),
                rho0: T::lit(cfg.medium.rho0_kgm3),
            },
            nondim: NondimConstants {
                re: T::lit(cfg.nondim.re),
                pe: T::lit(cfg.nondim.pe),
                ri: T::lit(cfg.nondim.ri),
                l: T::lit(cfg.nondim.l_m),
                u: T::lit(cfg.nondim.u_mps),
                e_g: eg.cast(),
            },
            render: cfg.render.clone(),
            train: cfg.train.clone(),
            plume: cfg.plume.clone(),
            config: cfg,
        })
    }

    /// The resolved configuration (defaults and derived focal lengths filled in).
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Same scene with different training settings.
    pub fn with_train(&self, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let mut s = self.clone();
        s.config.train = train.clone();
        s.train = train;
        Ok(s)
    }

    /// Same scene with different render settings.
    pub fn with_render(&self, render: RenderSettings) -> Result<Self> {
        render.validate()?;
        let mut s = self.clone();
        s.config.render = render.clone();
        s.render = render;
        Ok(s)
    }

    /// Same scene with a replaced wall texture (the config records a constant placeholder
    /// only when the texture is not representable; callers keep their own record).
    pub fn with_wall_texture(&self, texture: Texture<T>) -> Self {
        let mut s = self.clone();
        s.wall.texture = texture;
        s
    }

    pub fn reference_config() -> SceneConfig {
        reference_config()
    }
}

/// The room used throughout the examples: 4.1 × 4 × 3 m, camera and projector 29 m in front
/// of the room looking along +y at a noise-textured back wall at y = 4 m, boundary data on
/// the x = −1.2 m side wall. Room size, wall texture and sensor size are assumptions.
pub fn reference_config() -> SceneConfig {
    SceneConfig {
        room: RoomConfig {
            min: [-1.2, 0.0, 0.0],
            max: [2.9, 4.0, 3.0],
        },
        camera: CameraConfig {
            position_m: [0.85, -29.0, 1.5],
            forward: [0.0, 1.0, 0.0],
            up: [0.0, 0.0, 1.0],
            focal_length_m: None,
            sensor_extent_m: default_sensor_extent(),
            resolution: [100, 100],
        },
        projector: Some(ProjectorConfig {
            position_m: [1.85, -29.0, 1.5],
            forward: [0.0, 1.0, 0.0],
            up: [0.0, 0.0, 1.0],
            focal_length_m: None,
            pattern_extent_m: default_sensor_extent(),
            pattern: default_wall_texture(),
            power: 1089.0,
        }),
        wall: WallConfig {
            point_m: [0.85, 4.0, 1.5],
            normal: [0.0, -1.0, 0.0],
            right: None,
            extent_m: [4.1, 3.0],
            texture: default_wall_texture(),
            luminance: 1.0,
        },
        boundary_plane: BoundaryPlaneConfig {
            axis: 0,
            offset_m: -1.2,
            role: BoundaryRole::InletOutlet,
        },
        medium: MediumConfig::default(),
        nondim: NondimConfig::default(),
        render: RenderSettings::default(),
        train: TrainConfig::default(),
        plume: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene<f64> {
        Scene::from_config(reference_config(), Path::new(".")).unwrap()
    }

    #[test]
    fn reference_values_survive_loading() {
        let s = scene();
        assert_eq!(s.camera.position.to_array(), [0.85, -29.0, 1.5]);
        assert_eq!(s.projector.as_ref().unwrap().position.to_array(), [1.85, -29.0, 1.5]);
        assert_eq!(s.camera.resolution, (100, 100));
        assert_eq!(s.camera.right.to_array(), [1.0, 0.0, 0.0]);
        assert_eq!(s.wall.right.to_array(), [1.0, 0.0, 0.0]);
        assert_eq!(s.wall.up.to_array(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn default_focal_length_fits_wall_width() {
        // 0.018 m half-sensor · 33 m / 2.05 m half-wall
        let s = scene();
        assert!((s.camera.focal_length - 0.018 * 33.0 / 2.05).abs() < 1e-12);
    }

    #[test]
    fn zero_up_rejected() {
        let mut c = reference_config();
        c.camera.up = [0.0; 3];
        let e = Scene::<f64>::from_config(c, Path::new(".")).unwrap_err();
        assert!(e.is_validation(), "{e}");
    }

    #[test]
    fn non_orthogonal_basis_rejected() {
        let mut c = reference_config();
        c.camera.up = [0.0, 0.5, 1.0];
        assert!(Scene::<f64>::from_config(c, Path::new(".")).is_err());
    }

    #[test]
    fn camera_inside_room_rejected() {
        let mut c = reference_config();
        c.camera.position_m = [0.85, 1.0, 1.5];
        assert!(Scene::<f64>::from_config(c, Path::new(".")).is_err());
    }

    #[test]
    fn equal_temperatures_rejected() {
        let mut c = reference_config();
        c.medium.tin_k = c.medium.t0_k;
        assert!(Scene::<f64>::from_config(c, Path::new(".")).is_err());
    }

    #[test]
    fn footprint_corner_and_center() {
        let s = scene();
        let cam = &s.camera;
        let fp = cam.pixel_footprint(0, 0).unwrap();
        assert!((fp.a_range.0 + 0.018).abs() < 1e-15);
        assert!((fp.b_range.1 - 0.018).abs() < 1e-15);
        assert!((fp.area() - 0.036 * 0.036 / 1e4).abs() < 1e-18);
        let c = cam.pixel_footprint(50, 50).unwrap().center();
        let pitch = 0.036 / 100.0;
        assert!((c.0 - 0.5 * pitch).abs() < 1e-15);
        assert!((c.1 + 0.5 * pitch).abs() < 1e-15);
        assert!(cam.pixel_footprint(100, 0).is_err());
    }

    #[test]
    fn on_axis_ray_points_forward() {
        let s = scene();
        let (x, d) = s.camera.sensor_ray(0.0, 0.0);
        assert_eq!(d.to_array(), [0.0, 1.0, 0.0]);
        assert!((x.y - (-29.0 - s.camera.focal_length)).abs() < 1e-12);
    }
}
