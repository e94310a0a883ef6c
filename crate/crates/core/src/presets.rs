//! Built-in 5 m × 5 m × 3 m case-study room with four ceiling luminaires,
//! three detectors at 1.35 m and IRS-coated side walls.
//!
//! The spectral curves are compiled into the library so the preset works
//! without any files on disk (including in the browser demo).

use std::sync::Arc;

use crate::config::{
    DetectorConfig, IrsConfig, FLAT_RANGE_UM, IrsCoverage, LuminaireConfig, MaterialConfig, PanelConfig,
    SceneConfig,
};
use crate::scene::{AngularResponse, DiffuseLobe, IrsState, ReflectionModel};
use crate::spectral::{SpectralCurve, SpectralError};

pub use crate::config::Band;

pub const WHITE_LED_VL: &str = include_str!("../data/spectra/white_led_vl.csv");
pub const IR_LED_860NM: &str = include_str!("../data/spectra/ir_led_860nm.csv");
pub const SI_PIN_VL: &str = include_str!("../data/spectra/si_pin_vl_620nm.csv");
pub const SI_PIN_IR: &str = include_str!("../data/spectra/si_pin_ir_900nm.csv");
pub const COBALT_GREEN_PAINT: &str = include_str!("../data/spectra/cobalt_green_paint.csv");
pub const BLACK_CARPET: &str = include_str!("../data/spectra/black_polyester_carpet.csv");

pub const ROOM_CM: [f64; 3] = [500.0, 300.0, 500.0];

pub const LUMINAIRES_CM: [(&str, [f64; 3]); 4] = [
    ("S1", [135.0, 300.0, 135.0]),
    ("S2", [335.0, 300.0, 135.0]),
    ("S3", [135.0, 300.0, 335.0]),
    ("S4", [335.0, 300.0, 335.0]),
];

pub const DETECTORS_CM: [(&str, [f64; 3]); 3] = [
    ("L1", [25.0, 135.0, 25.0]),
    ("L2", [25.0, 135.0, 250.0]),
    ("L3", [250.0, 135.0, 250.0]),
];

/// IRS ON state: flat reflectance and specular power fraction.
pub const IRS_ON_REFLECTANCE: f64 = 0.9;
pub const IRS_ON_SPECULAR_FRACTION: f64 = 0.75;
pub const NU: u32 = 5;

fn curve(text: &str, name: &str) -> Result<Arc<SpectralCurve>, SpectralError> {
    SpectralCurve::from_csv_str(text, name).map(Arc::new)
}

pub fn paint() -> Result<MaterialConfig, SpectralError> {
    Ok(MaterialConfig {
        name: "cobalt_green_paint".into(),
        reflectance: curve(COBALT_GREEN_PAINT, "cobalt_green_paint.csv")?,
        model: ReflectionModel::Diffuse { nu: NU },
    })
}

pub fn carpet() -> Result<MaterialConfig, SpectralError> {
    Ok(MaterialConfig {
        name: "black_polyester_carpet".into(),
        reflectance: curve(BLACK_CARPET, "black_polyester_carpet.csv")?,
        model: ReflectionModel::Diffuse { nu: NU },
    })
}

pub fn irs_on_material() -> Result<MaterialConfig, SpectralError> {
    Ok(MaterialConfig {
        name: "irs_on".into(),
        reflectance: Arc::new(SpectralCurve::constant(
            FLAT_RANGE_UM.0,
            FLAT_RANGE_UM.1,
            IRS_ON_REFLECTANCE,
        )?),
        model: ReflectionModel::PhongMix {
            specular_fraction: IRS_ON_SPECULAR_FRACTION,
            nu: NU,
        },
    })
}

/// The four 250 cm × 150 cm panels centred on the side walls.
pub fn paper_panels() -> Vec<PanelConfig> {
    [
        ("IRS1", [250.0, 150.0, 0.0]),
        ("IRS2", [500.0, 150.0, 250.0]),
        ("IRS3", [250.0, 150.0, 500.0]),
        ("IRS4", [0.0, 150.0, 250.0]),
    ]
    .into_iter()
    .map(|(label, center_cm)| PanelConfig {
        label: label.into(),
        center_cm,
        size_cm: [250.0, 150.0],
    })
    .collect()
}

/// Source spectrum and detector responsivity for a band.
pub fn band_curves(band: Band) -> Result<(Arc<SpectralCurve>, Arc<SpectralCurve>), SpectralError> {
    Ok(match band {
        Band::Vl => (
            curve(WHITE_LED_VL, "white_led_vl.csv")?,
            curve(SI_PIN_VL, "si_pin_vl_620nm.csv")?,
        ),
        Band::Ir => (
            curve(IR_LED_860NM, "ir_led_860nm.csv")?,
            curve(SI_PIN_IR, "si_pin_ir_900nm.csv")?,
        ),
    })
}

/// The case-study room for `band`, IRS ON, with IRS material covering the
/// full side walls.
pub fn paper_room(band: Band) -> Result<SceneConfig, SpectralError> {
    let (source, responsivity) = band_curves(band)?;
    let luminaires = LUMINAIRES_CM
        .iter()
        .map(|&(label, center_cm)| LuminaireConfig {
            label: label.into(),
            center_cm,
            normal: [0.0, -1.0, 0.0],
            grid: [6, 6],
            pitch_cm: 10.0,
            chip_power_w: 1.0,
            semi_angle_deg: 60.0,
        })
        .collect();
    let detectors = DETECTORS_CM
        .iter()
        .map(|&(label, position_cm)| DetectorConfig {
            label: label.into(),
            position_cm,
            normal: [0.0, 1.0, 0.0],
            size_cm: [1.0, 1.0],
            spectral_responsivity: responsivity.clone(),
            angular: AngularResponse::IdealCosine,
        })
        .collect();
    let paint = paint()?;
    Ok(SceneConfig {
        room_cm: ROOM_CM,
        luminaires,
        source_spectrum: source,
        walls: paint.clone(),
        ceiling: paint,
        floor: carpet()?,
        irs: Some(IrsConfig {
            coverage: IrsCoverage::FullWalls,
            on_material: irs_on_material()?,
            state: IrsState::On,
        }),
        detectors,
        diffuse_lobe: DiffuseLobe::Normal,
    })
}

/// Line-of-sight test room: one 1 W chip (m = 1) on the ceiling of a
/// 400 cm × 300 cm × 400 cm room, pointing straight down at a centred
/// ideal-cosine detector `distance_cm` below it. Walls absorb everything
/// and all spectra are flat and unity.
pub fn los_room(distance_cm: f64, detector_size_cm: f64) -> Result<SceneConfig, SpectralError> {
    let flat = Arc::new(SpectralCurve::constant(0.4, 0.9, 1.0)?);
    let black = MaterialConfig {
        name: "absorber".into(),
        reflectance: Arc::new(SpectralCurve::constant(0.3, 1.2, 0.0)?),
        model: ReflectionModel::Diffuse { nu: NU },
    };
    Ok(SceneConfig {
        room_cm: [400.0, 300.0, 400.0],
        luminaires: vec![LuminaireConfig {
            label: "S".into(),
            center_cm: [200.0, 300.0, 200.0],
            normal: [0.0, -1.0, 0.0],
            grid: [1, 1],
            pitch_cm: 0.0,
            chip_power_w: 1.0,
            semi_angle_deg: 60.0,
        }],
        source_spectrum: flat.clone(),
        walls: black.clone(),
        ceiling: black.clone(),
        floor: black,
        irs: None,
        detectors: vec![DetectorConfig {
            label: "D".into(),
            position_cm: [200.0, 300.0 - distance_cm, 200.0],
            normal: [0.0, 1.0, 0.0],
            size_cm: [detector_size_cm, detector_size_cm],
            spectral_responsivity: flat,
            angular: AngularResponse::IdealCosine,
        }],
        diffuse_lobe: DiffuseLobe::Normal,
    })
}
