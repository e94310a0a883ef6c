//! Scene configuration: the in-memory [`SceneConfig`] consumed by
//! [`crate::scene::build_scene`], and the TOML scene file that produces it.
//!
//! Lengths in configuration are centimetres. Spectral curves are referenced
//! by path, relative to the directory of the scene file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scene::{AngularResponse, DiffuseLobe, IrsState, ReflectionModel};
use crate::spectral::SpectralCurve;

/// Operating band; selects the source, detector and default termination
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Vl,
    Ir,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Vl => "vl",
            Band::Ir => "ir",
        }
    }

    /// Default minimum relative ray intensity.
    pub fn default_min_rel_intensity(self) -> f64 {
        match self {
            Band::Vl => 1e-5,
            Band::Ir => 1e-4,
        }
    }
}

impl std::str::FromStr for Band {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "vl" => Ok(Band::Vl),
            "ir" => Ok(Band::Ir),
            other => Err(format!("expected `vl` or `ir`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wavelength span, µm, of curves given as a single flat value.
pub const FLAT_RANGE_UM: (f64, f64) = (0.2, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialConfig {
    pub name: String,
    pub reflectance: Arc<SpectralCurve>,
    pub model: ReflectionModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LuminaireConfig {
    pub label: String,
    pub center_cm: [f64; 3],
    pub normal: [f64; 3],
    /// Chips per row and column.
    pub grid: [usize; 2],
    pub pitch_cm: f64,
    pub chip_power_w: f64,
    pub semi_angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub label: String,
    pub center_cm: [f64; 3],
    /// `[horizontal, vertical]` extent on the wall.
    pub size_cm: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum IrsCoverage {
    /// IRS material on listed sub-rectangles of the side walls.
    Panels(Vec<PanelConfig>),
    /// IRS material over the whole of every side wall.
    FullWalls,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrsConfig {
    pub coverage: IrsCoverage,
    pub on_material: MaterialConfig,
    pub state: IrsState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub label: String,
    pub position_cm: [f64; 3],
    pub normal: [f64; 3],
    pub size_cm: [f64; 2],
    pub spectral_responsivity: Arc<SpectralCurve>,
    pub angular: AngularResponse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// `[x, y, z]` with `y` vertical.
    pub room_cm: [f64; 3],
    pub luminaires: Vec<LuminaireConfig>,
    pub source_spectrum: Arc<SpectralCurve>,
    pub walls: MaterialConfig,
    pub ceiling: MaterialConfig,
    pub floor: MaterialConfig,
    pub irs: Option<IrsConfig>,
    pub detectors: Vec<DetectorConfig>,
    pub diffuse_lobe: DiffuseLobe,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read scene file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scene file {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("`{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("`{field}`: missing file {path}")]
    MissingFile { field: String, path: String },
}

fn field_err(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// Scene file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub default_band: Option<Band>,
    pub room: RoomSection,
    #[serde(default)]
    pub trace: TraceSection,
    pub materials: BTreeMap<String, MaterialSection>,
    pub surfaces: SurfacesSection,
    #[serde(default)]
    pub luminaire: LuminaireDefaults,
    pub luminaires: Vec<LuminaireSection>,
    pub irs: Option<IrsSection>,
    pub bands: BTreeMap<Band, BandSection>,
    pub detectors: Vec<DetectorSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSection {
    pub size_cm: [f64; 3],
}

/// Optional per-file defaults for trace parameters; command-line flags take
/// precedence.
#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub rays_per_chip: Option<u64>,
    pub seed: Option<u64>,
    pub bin_width_ns: Option<f64>,
    pub max_bounces: Option<u32>,
    pub min_rel_intensity: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub reflectance: Option<PathBuf>,
    pub reflectance_flat: Option<f64>,
    pub model: ModelKind,
    pub nu: Option<u32>,
    pub specular_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Diffuse,
    PhongMix,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacesSection {
    pub walls: String,
    pub ceiling: String,
    pub floor: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuminaireDefaults {
    pub grid: [usize; 2],
    pub pitch_cm: f64,
    pub chip_power_w: f64,
    pub semi_angle_deg: f64,
    pub normal: [f64; 3],
}

impl Default for LuminaireDefaults {
    fn default() -> Self {
        Self {
            grid: [6, 6],
            pitch_cm: 10.0,
            chip_power_w: 1.0,
            semi_angle_deg: 60.0,
            normal: [0.0, -1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuminaireSection {
    pub label: String,
    pub center_cm: [f64; 3],
    pub grid: Option<[usize; 2]>,
    pub pitch_cm: Option<f64>,
    pub chip_power_w: Option<f64>,
    pub semi_angle_deg: Option<f64>,
    pub normal: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CoverageKind {
    #[default]
    Panels,
    FullWall,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrsSection {
    pub material: String,
    #[serde(default = "default_irs_state")]
    pub state: IrsState,
    #[serde(default)]
    pub coverage: CoverageKind,
    #[serde(default)]
    pub diffuse_lobe: DiffuseLobe,
    #[serde(default)]
    pub panels: Vec<PanelConfig>,
}

fn default_irs_state() -> IrsState {
    IrsState::On
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    pub source_spectrum: PathBuf,
    pub detector_responsivity: PathBuf,
    /// `"cosine"` or a path to an `angle_deg,relative` CSV.
    #[serde(default = "default_angular")]
    pub detector_angular: String,
    pub min_rel_intensity: Option<f64>,
}

fn default_angular() -> String {
    "cosine".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub label: String,
    pub position_cm: [f64; 3],
    #[serde(default = "default_detector_size")]
    pub size_cm: [f64; 2],
    #[serde(default = "default_detector_normal")]
    pub normal: [f64; 3],
}

fn default_detector_size() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_detector_normal() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

/// A scene file resolved for one band.
#[derive(Debug, Clone)]
pub struct ResolvedScene {
    pub scene: SceneConfig,
    pub band: Band,
    pub min_rel_intensity: f64,
    pub trace: TraceSection,
}

impl SceneFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((file, base))
    }

    /// Load every referenced curve and produce the in-memory configuration
    /// for `band` (or the file's default band).
    pub fn resolve(&self, band: Option<Band>, base_dir: &Path) -> Result<ResolvedScene, ConfigError> {
        let band = band
            .or(self.default_band)
            .or_else(|| self.bands.keys().next().copied())
            .ok_or_else(|| field_err("bands", "no band section defined"))?;
        let band_cfg = self
            .bands
            .get(&band)
            .ok_or_else(|| field_err(format!("bands.{band}"), "band section missing"))?;

        let load_curve = |field: String, rel: &Path| -> Result<Arc<SpectralCurve>, ConfigError> {
            let path = base_dir.join(rel);
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    field,
                    path: path.display().to_string(),
                });
            }
            SpectralCurve::from_csv_path(&path)
                .map(Arc::new)
                .map_err(|e| field_err(field, e.to_string()))
        };

        let material = |name: &str, field: &str| -> Result<MaterialConfig, ConfigError> {
            let sec = self
                .materials
                .get(name)
                .ok_or_else(|| field_err(field, format!("unknown material `{name}`")))?;
            let mfield = format!("materials.{name}");
            let reflectance = match (&sec.reflectance, sec.reflectance_flat) {
                (Some(p), None) => load_curve(format!("{mfield}.reflectance"), p)?,
                (None, Some(r)) => Arc::new(
                    SpectralCurve::constant(FLAT_RANGE_UM.0, FLAT_RANGE_UM.1, r)
                        .map_err(|e| field_err(format!("{mfield}.reflectance_flat"), e.to_string()))?,
                ),
                _ => {
                    return Err(field_err(
                        mfield,
                        "exactly one of `reflectance` or `reflectance_flat` is required",
                    ))
                }
            };
            let nu = sec.nu.unwrap_or(5);
            let model = match sec.model {
                ModelKind::Diffuse => ReflectionModel::Diffuse { nu },
                ModelKind::PhongMix => ReflectionModel::PhongMix {
                    specular_fraction: sec.specular_fraction.ok_or_else(|| {
                        field_err(format!("{mfield}.specular_fraction"), "required for phong_mix")
                    })?,
                    nu,
                },
            };
            Ok(MaterialConfig {
                name: name.to_string(),
                reflectance,
                model,
            })
        };

        let defaults = &self.luminaire;
        let luminaires = self
            .luminaires
            .iter()
            .map(|l| LuminaireConfig {
                label: l.label.clone(),
                center_cm: l.center_cm,
                normal: l.normal.unwrap_or(defaults.normal),
                grid: l.grid.unwrap_or(defaults.grid),
                pitch_cm: l.pitch_cm.unwrap_or(defaults.pitch_cm),
                chip_power_w: l.chip_power_w.unwrap_or(defaults.chip_power_w),
                semi_angle_deg: l.semi_angle_deg.unwrap_or(defaults.semi_angle_deg),
            })
            .collect();

        let bfield = format!("bands.{band}");
        let source_spectrum = load_curve(format!("{bfield}.source_spectrum"), &band_cfg.source_spectrum)?;
        let responsivity = load_curve(
            format!("{bfield}.detector_responsivity"),
            &band_cfg.detector_responsivity,
        )?;
        let angular = if band_cfg.detector_angular.eq_ignore_ascii_case("cosine") {
            AngularResponse::IdealCosine
        } else {
            let field = format!("{bfield}.detector_angular");
            let path = base_dir.join(&band_cfg.detector_angular);
            let text = std::fs::read_to_string(&path).map_err(|_| ConfigError::MissingFile {
                field: field.clone(),
                path: path.display().to_string(),
            })?;
            AngularResponse::from_csv_str(&text).map_err(|e| field_err(field, e))?
        };

        let detectors = self
            .detectors
            .iter()
            .map(|d| DetectorConfig {
                label: d.label.clone(),
                position_cm: d.position_cm,
                normal: d.normal,
                size_cm: d.size_cm,
                spectral_responsivity: responsivity.clone(),
                angular: angular.clone(),
            })
            .collect();

        let (irs, diffuse_lobe) = match &self.irs {
            None => (None, DiffuseLobe::Normal),
            Some(sec) => {
                let coverage = match sec.coverage {
                    CoverageKind::FullWall => IrsCoverage::FullWalls,
                    CoverageKind::Panels => {
                        if sec.panels.is_empty() {
                            return Err(field_err("irs.panels", "coverage `panels` needs at least one panel"));
                        }
                        IrsCoverage::Panels(sec.panels.clone())
                    }
                };
                (
                    Some(IrsConfig {
                        coverage,
                        on_material: material(&sec.material, "irs.material")?,
                        state: sec.state,
                    }),
                    sec.diffuse_lobe,
                )
            }
        };

        let min_rel_intensity = self
            .trace
            .min_rel_intensity
            .or(band_cfg.min_rel_intensity)
            .unwrap_or_else(|| band.default_min_rel_intensity());

        Ok(ResolvedScene {
            scene: SceneConfig {
                room_cm: self.room.size_cm,
                luminaires,
                source_spectrum,
                walls: material(&self.surfaces.walls, "surfaces.walls")?,
                ceiling: material(&self.surfaces.ceiling, "surfaces.ceiling")?,
                floor: material(&self.surfaces.floor, "surfaces.floor")?,
                irs,
                detectors,
                diffuse_lobe,
            },
            band,
            min_rel_intensity,
            trace: self.trace.clone(),
        })
    }
}

/// Read and resolve a scene file in one step.
pub fn load_scene_file(path: &Path, band: Option<Band>) -> Result<ResolvedScene, ConfigError> {
    let (file, base) = SceneFile::load(path)?;
    file.resolve(band, &base)
}
