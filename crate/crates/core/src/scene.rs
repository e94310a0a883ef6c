//! The simulated room: luminaires made of LED-chip grids, spectrally
//! reflecting room surfaces, switchable IRS panels and detectors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{IrsCoverage, MaterialConfig, SceneConfig};
use crate::geometry::{lambertian_order, GeometryError, Rect3, Vec3};
use crate::spectral::{interpolate, SpectralCurve};

const CM: f64 = 0.01;
const PLACEMENT_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("placement error: {element} {reason}")]
    Placement { element: String, reason: String },
    #[error("nonphysical material `{material}`: {reason}")]
    NonphysicalMaterial { material: String, reason: String },
    #[error("invalid {element}: {reason}")]
    Invalid { element: String, reason: String },
    #[error("geometry of {element}: {source}")]
    Geometry {
        element: String,
        #[source]
        source: GeometryError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrsState {
    On,
    Off,
}

impl std::str::FromStr for IrsState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(IrsState::On),
            "off" => Ok(IrsState::Off),
            other => Err(format!("expected `on` or `off`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for IrsState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IrsState::On => "on",
            IrsState::Off => "off",
        })
    }
}

/// Orientation of the Lambertian lobe used for diffuse children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffuseLobe {
    /// Cosine lobe around the surface normal.
    #[default]
    Normal,
    /// Cosine lobe around the mirror direction, folded back into the
    /// reflecting hemisphere.
    Specular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ReflectionModel {
    /// `nu` Lambertian children sharing the reflected power equally.
    Diffuse { nu: u32 },
    /// One mirror child carrying `specular_fraction` of the reflected power
    /// and `nu` Lambertian children sharing the rest.
    PhongMix { specular_fraction: f64, nu: u32 },
}

impl ReflectionModel {
    pub fn nu(&self) -> u32 {
        match *self {
            ReflectionModel::Diffuse { nu } | ReflectionModel::PhongMix { nu, .. } => nu,
        }
    }

    pub fn specular_fraction(&self) -> f64 {
        match *self {
            ReflectionModel::Diffuse { .. } => 0.0,
            ReflectionModel::PhongMix {
                specular_fraction, ..
            } => specular_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMaterial {
    pub name: String,
    pub reflectance: Arc<SpectralCurve>,
    pub model: ReflectionModel,
}

/// Power split of one reflection event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionSplit {
    /// Power fraction of the mirror child (0 for purely diffuse surfaces).
    pub specular: f64,
    /// Power fraction of each diffuse child.
    pub diffuse_each: f64,
    pub nu: u32,
}

impl SurfaceMaterial {
    pub fn reflectance_at(&self, wavelength: f64) -> f64 {
        self.reflectance.evaluate(wavelength)
    }

    /// Fractions of the incident power given to each child at `wavelength`.
    #[inline]
    pub fn split(&self, wavelength: f64) -> ReflectionSplit {
        let r = self.reflectance.evaluate(wavelength);
        let nu = self.model.nu();
        let s = self.model.specular_fraction();
        ReflectionSplit {
            specular: s * r,
            diffuse_each: (1.0 - s) * r / nu as f64,
            nu,
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |reason: String| SceneError::NonphysicalMaterial {
            material: self.name.clone(),
            reason,
        };
        let max = self.reflectance.max_weight();
        if max > 1.0 {
            return Err(bad(format!("reflectance {max} exceeds 1")));
        }
        if self.model.nu() == 0 {
            return Err(bad("nu must be at least 1".into()));
        }
        let s = self.model.specular_fraction();
        if !(0.0..=1.0).contains(&s) {
            return Err(bad(format!("specular fraction {s} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrsPanel {
    pub on_material: SurfaceMaterial,
    pub state: IrsState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub label: String,
    pub rect: Rect3,
    /// Passive coating, used when there is no IRS or it is OFF.
    pub material: SurfaceMaterial,
    pub irs: Option<IrsPanel>,
}

impl Surface {
    #[inline]
    pub fn effective_material(&self) -> &SurfaceMaterial {
        match &self.irs {
            Some(IrsPanel {
                on_material,
                state: IrsState::On,
            }) => on_material,
            _ => &self.material,
        }
    }

    pub fn is_irs(&self) -> bool {
        self.irs.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedChip {
    pub position: Vec3,
    pub normal: Vec3,
    /// Radiated optical power, W.
    pub power: f64,
    pub spectrum: Arc<SpectralCurve>,
    pub lambertian_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Luminaire {
    pub label: String,
    pub center: Vec3,
    pub chips: Vec<LedChip>,
}

impl Luminaire {
    pub fn total_power(&self) -> f64 {
        self.chips.iter().map(|c| c.power).sum()
    }
}

/// Relative detector response against incidence angle.
#[derive(Debug, Clone, PartialEq)]
pub enum AngularResponse {
    IdealCosine,
    /// `(angle_deg, relative)` samples, normalized to 1 at 0°.
    Measured(Vec<(f64, f64)>),
}

impl AngularResponse {
    /// Build a measured profile, normalizing so that the response at 0° is 1.
    pub fn measured(mut samples: Vec<(f64, f64)>) -> Result<Self, String> {
        if samples.is_empty() {
            return Err("angular response has no samples".into());
        }
        for (i, w) in samples.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(format!("angles not strictly increasing at sample {}", i + 1));
            }
        }
        if samples.iter().any(|s| s.1 < 0.0 || !s.1.is_finite()) {
            return Err("negative relative response".into());
        }
        let at_zero = interpolate(&samples, 0.0);
        if at_zero <= 0.0 {
            return Err("angular response must be positive at 0°".into());
        }
        for s in &mut samples {
            s.1 /= at_zero;
        }
        Ok(AngularResponse::Measured(samples))
    }

    pub fn from_csv_str(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty angular response file")?;
        if header.trim().replace(' ', "") != "angle_deg,relative" {
            return Err(format!("expected header `angle_deg,relative`, found `{header}`"));
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split(',').map(str::trim);
            let parsed = (|| Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?)))();
            samples.push(parsed.ok_or_else(|| format!("invalid row {}", i + 2))?);
        }
        Self::measured(samples)
    }

    pub fn evaluate(&self, theta_deg: f64) -> f64 {
        if !(0.0..90.0).contains(&theta_deg) {
            return 0.0;
        }
        match self {
            AngularResponse::IdealCosine => theta_deg.to_radians().cos(),
            AngularResponse::Measured(s) => interpolate(s, theta_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub label: String,
    /// Active area; the front face is the side `rect.normal` points to.
    pub rect: Rect3,
    pub spectral_responsivity: Arc<SpectralCurve>,
    pub angular: AngularResponse,
}

impl Detector {
    pub fn normal(&self) -> Vec3 {
        self.rect.normal
    }

    pub fn area(&self) -> f64 {
        self.rect.area()
    }
}

/// Spectral responsivity times angular responsivity; 0 at or beyond 90°.
pub fn effective_detector_gain(det: &Detector, wavelength: f64, theta_deg: f64) -> f64 {
    if !(0.0..90.0).contains(&theta_deg) {
        return 0.0;
    }
    det.spectral_responsivity.evaluate(wavelength) * det.angular.evaluate(theta_deg)
}

/// A validated room ready for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Room size `(x, y, z)` in metres; `y` is vertical.
    pub room: Vec3,
    /// IRS panel surfaces come first so that they win ties against the
    /// coplanar wall behind them.
    pub surfaces: Vec<Surface>,
    pub luminaires: Vec<Luminaire>,
    pub detectors: Vec<Detector>,
    pub diffuse_lobe: DiffuseLobe,
    pub warnings: Vec<String>,
}

impl Scene {
    pub fn irs_surfaces(&self) -> impl Iterator<Item = &Surface> {
        self.surfaces.iter().filter(|s| s.is_irs())
    }

    pub fn chip_count(&self) -> usize {
        self.luminaires.iter().map(|l| l.chips.len()).sum()
    }

    pub fn surface(&self, label: &str) -> Option<&Surface> {
        self.surfaces.iter().find(|s| s.label == label)
    }

    pub fn detector_index(&self, label: &str) -> Option<usize> {
        self.detectors.iter().position(|d| d.label == label)
    }

    /// Power of the first luminaire, the reference for normalized gains.
    /// Falls back to the mean luminaire power when they differ.
    pub fn luminaire_power(&self) -> f64 {
        if self.luminaires.is_empty() {
            return 0.0;
        }
        let total: f64 = self.luminaires.iter().map(Luminaire::total_power).sum();
        total / self.luminaires.len() as f64
    }
}

fn to_material(m: &MaterialConfig) -> SurfaceMaterial {
    SurfaceMaterial {
        name: m.name.clone(),
        reflectance: m.reflectance.clone(),
        model: m.model,
    }
}

fn room_faces(w: f64, h: f64, d: f64) -> Result<Vec<(&'static str, Rect3)>, GeometryError> {
    // inward normals
    Ok(vec![
        ("wall_z0", Rect3::new(Vec3::ZERO, Vec3::X * w, Vec3::Y * h)?),
        ("wall_xmax", Rect3::new(Vec3::new(w, 0.0, 0.0), Vec3::Z * d, Vec3::Y * h)?),
        ("wall_zmax", Rect3::new(Vec3::new(0.0, 0.0, d), Vec3::Y * h, Vec3::X * w)?),
        ("wall_x0", Rect3::new(Vec3::ZERO, Vec3::Y * h, Vec3::Z * d)?),
        ("floor", Rect3::new(Vec3::ZERO, Vec3::Z * d, Vec3::X * w)?),
        ("ceiling", Rect3::new(Vec3::new(0.0, h, 0.0), Vec3::X * w, Vec3::Z * d)?),
    ])
}

fn inside_closed(p: Vec3, room: Vec3) -> bool {
    let t = PLACEMENT_TOL;
    p.x >= -t && p.y >= -t && p.z >= -t && p.x <= room.x + t && p.y <= room.y + t && p.z <= room.z + t
}

fn inside_open(p: Vec3, room: Vec3) -> bool {
    p.x > 0.0 && p.y > 0.0 && p.z > 0.0 && p.x < room.x && p.y < room.y && p.z < room.z
}

fn cm_vec(a: [f64; 3]) -> Vec3 {
    Vec3::from_array(a) * CM
}

/// Validate a configuration and assemble the scene.
pub fn build_scene(config: &SceneConfig) -> Result<Scene, SceneError> {
    let room = cm_vec(config.room_cm);
    if !(room.x > 0.0 && room.y > 0.0 && room.z > 0.0) {
        return Err(SceneError::Invalid {
            element: "room".into(),
            reason: format!("size {:?} cm must be positive", config.room_cm),
        });
    }
    let geo = |element: &str| {
        let element = element.to_string();
        move |source| SceneError::Geometry { element, source }
    };

    let walls = to_material(&config.walls);
    let ceiling = to_material(&config.ceiling);
    let floor = to_material(&config.floor);
    for m in [&walls, &ceiling, &floor] {
        m.validate()?;
    }

    let irs_on = config.irs.as_ref().map(|irs| to_material(&irs.on_material));
    if let Some(m) = &irs_on {
        m.validate()?;
    }

    let mut panels = Vec::new();
    let mut faces = Vec::new();
    for (label, rect) in room_faces(room.x, room.y, room.z).map_err(geo("room"))? {
        let material = match label {
            "floor" => floor.clone(),
            "ceiling" => ceiling.clone(),
            _ => walls.clone(),
        };
        let is_wall = label.starts_with("wall");
        let irs = match (&config.irs, &irs_on) {
            (Some(cfg), Some(on)) if is_wall && cfg.coverage == IrsCoverage::FullWalls => {
                Some(IrsPanel {
                    on_material: on.clone(),
                    state: cfg.state,
                })
            }
            _ => None,
        };
        faces.push(Surface {
            label: label.to_string(),
            rect,
            material,
            irs,
        });
    }

    if let (Some(cfg), Some(on)) = (&config.irs, &irs_on) {
        if let IrsCoverage::Panels(list) = &cfg.coverage {
            for p in list {
                let center = cm_vec(p.center_cm);
                let (w, h) = (p.size_cm[0] * CM, p.size_cm[1] * CM);
                let wall = faces
                    .iter()
                    .filter(|f| f.label.starts_with("wall"))
                    .find(|f| f.rect.plane_distance(center).abs() <= 1e-6)
                    .ok_or_else(|| SceneError::Placement {
                        element: p.label.clone(),
                        reason: format!("center {:?} cm is not on a side wall", p.center_cm),
                    })?;
                let n = wall.rect.normal;
                let u = Vec3::Y.cross(n);
                let corner = center - u * (0.5 * w) - Vec3::Y * (0.5 * h);
                let rect = Rect3::new(corner, u * w, Vec3::Y * h).map_err(geo(&p.label))?;
                if !wall.rect.contains_rect(&rect, 1e-6) {
                    return Err(SceneError::Placement {
                        element: p.label.clone(),
                        reason: format!("{w} m × {h} m panel extends beyond {}", wall.label),
                    });
                }
                panels.push(Surface {
                    label: p.label.clone(),
                    rect,
                    material: wall.material.clone(),
                    irs: Some(IrsPanel {
                        on_material: on.clone(),
                        state: cfg.state,
                    }),
                });
            }
        }
    }
    let mut surfaces = panels;
    surfaces.extend(faces);

    if config.source_spectrum.is_degenerate() {
        return Err(SceneError::Invalid {
            element: "source spectrum".into(),
            reason: "degenerate spectrum".into(),
        });
    }
    let mut luminaires = Vec::with_capacity(config.luminaires.len());
    for l in &config.luminaires {
        let invalid = |reason: String| SceneError::Invalid {
            element: l.label.clone(),
            reason,
        };
        if l.chip_power_w.is_nan() || l.chip_power_w <= 0.0 {
            return Err(invalid(format!("chip power {} W must be positive", l.chip_power_w)));
        }
        if l.grid[0] == 0 || l.grid[1] == 0 {
            return Err(invalid("chip grid must be non-empty".into()));
        }
        if !(l.semi_angle_deg > 0.0 && l.semi_angle_deg < 90.0) {
            return Err(invalid(format!(
                "semi-angle {}° outside (0°, 90°)",
                l.semi_angle_deg
            )));
        }
        let m = lambertian_order(l.semi_angle_deg);
        let center = cm_vec(l.center_cm);
        let normal = Vec3::from_array(l.normal).normalized();
        if !normal.is_unit(1e-9) {
            return Err(invalid("normal must be non-zero".into()));
        }
        let (a_axis, b_axis) = crate::geometry::tangent_frame(normal);
        let (a_axis, b_axis) = if normal.y.abs() > 0.999 {
            (Vec3::X, Vec3::Z)
        } else {
            (a_axis, b_axis)
        };
        let pitch = l.pitch_cm * CM;
        let mut chips = Vec::with_capacity(l.grid[0] * l.grid[1]);
        for i in 0..l.grid[0] {
            for j in 0..l.grid[1] {
                let da = (i as f64 - (l.grid[0] as f64 - 1.0) / 2.0) * pitch;
                let db = (j as f64 - (l.grid[1] as f64 - 1.0) / 2.0) * pitch;
                let position = center + a_axis * da + b_axis * db;
                if !inside_closed(position, room) {
                    return Err(SceneError::Placement {
                        element: l.label.clone(),
                        reason: format!("chip at {position:?} m is outside the room"),
                    });
                }
                chips.push(LedChip {
                    position,
                    normal,
                    power: l.chip_power_w,
                    spectrum: config.source_spectrum.clone(),
                    lambertian_m: m,
                });
            }
        }
        luminaires.push(Luminaire {
            label: l.label.clone(),
            center,
            chips,
        });
    }

    let mut warnings = Vec::new();
    let mut detectors = Vec::with_capacity(config.detectors.len());
    for d in &config.detectors {
        let pos = cm_vec(d.position_cm);
        let rect = Rect3::centered(
            pos,
            Vec3::from_array(d.normal),
            d.size_cm[0] * CM,
            d.size_cm[1] * CM,
        )
        .map_err(geo(&d.label))?;
        if !inside_open(pos, room) || !rect.corners().iter().all(|&c| inside_open(c, room)) {
            return Err(SceneError::Placement {
                element: d.label.clone(),
                reason: format!("position {:?} cm is not strictly inside the room", d.position_cm),
            });
        }
        let overlap = config.source_spectrum.product(&d.spectral_responsivity);
        if overlap.integral() <= 0.0 {
            warnings.push(format!(
                "detector {} responsivity does not overlap the source spectrum",
                d.label
            ));
        }
        detectors.push(Detector {
            label: d.label.clone(),
            rect,
            spectral_responsivity: d.spectral_responsivity.clone(),
            angular: d.angular.clone(),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(Scene {
        room,
        surfaces,
        luminaires,
        detectors,
        diffuse_lobe: config.diffuse_lobe,
        warnings,
    })
}

/// Copy of `scene` with every IRS switched to `state`. Non-IRS surfaces are
/// untouched.
pub fn set_irs_state(scene: &Scene, state: IrsState) -> Scene {
    let mut out = scene.clone();
    for s in &mut out.surfaces {
        if let Some(irs) = &mut s.irs {
            irs.state = state;
        }
    }
    out
}
