//! wasm-bindgen bindings for the browser demo in `www/`.
//!
//! Everything runs single-threaded in the page, so ray counts are kept
//! small. Results cross the boundary as JSON strings or flat `f64` arrays.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use owc_mcrt::channel::{self, capacity_sweep, snr_grid, ChannelMetrics, SnrDefinition};
use owc_mcrt::geometry::lambertian_order;
use owc_mcrt::presets::{self, Band};
use owc_mcrt::scene::{build_scene, set_irs_state, IrsState};
use owc_mcrt::tracer::{EnergyAudit, Simulation, TraceParams};

/// Upper bound on root rays per chip accepted from the page.
pub const MAX_RAYS_PER_CHIP: u32 = 2000;

#[derive(Serialize)]
struct DetectorOut {
    label: String,
    error: Option<String>,
    metrics: Option<ChannelMetrics>,
    t1_ns: f64,
    bin_width_ns: f64,
    bins: Vec<f64>,
    los_bins: Vec<f64>,
}

#[derive(Serialize)]
struct RoomOut {
    band: Band,
    irs: IrsState,
    rays_per_chip: u32,
    detector_cm: f64,
    reference_power_w: f64,
    audit: EnergyAudit,
    detectors: Vec<DetectorOut>,
}

/// Trace the built-in room and return per-detector CIRs and metrics as
/// JSON. Detectors that collect no power carry an `error` instead.
pub fn simulate_room_json(
    band: &str,
    irs: &str,
    rays_per_chip: u32,
    detector_cm: f64,
    seed: u64,
) -> Result<String, String> {
    let band: Band = band.parse()?;
    let irs: IrsState = irs.parse()?;
    if rays_per_chip == 0 || rays_per_chip > MAX_RAYS_PER_CHIP {
        return Err(format!("rays per chip must be in 1..={MAX_RAYS_PER_CHIP}"));
    }
    if !(detector_cm > 0.0 && detector_cm <= 50.0) {
        return Err("detector side must be in (0, 50] cm".into());
    }
    let mut config = presets::paper_room(band).map_err(|e| e.to_string())?;
    for d in &mut config.detectors {
        d.size_cm = [detector_cm, detector_cm];
    }
    let scene = set_irs_state(&build_scene(&config).map_err(|e| e.to_string())?, irs);
    let params = TraceParams {
        rays_per_chip: rays_per_chip.into(),
        seed,
        ..TraceParams::for_band(band)
    };
    let result = Simulation::new(&scene, &params)
        .workers(Some(1))
        .run()
        .map_err(|e| e.to_string())?;

    let detectors = result
        .detector_labels
        .iter()
        .enumerate()
        .map(|(d, label)| {
            let ledger = result.merged_for_detector(d);
            match channel::analyze(&ledger, params.bin_width_ns) {
                Ok(a) => DetectorOut {
                    label: label.clone(),
                    error: None,
                    t1_ns: a.cir.t1,
                    bin_width_ns: a.cir.bin_width_ns,
                    los_bins: a.cir.per_kappa.get(&0).cloned().unwrap_or_else(|| vec![0.0; a.cir.n_bins()]),
                    bins: a.cir.bins,
                    metrics: Some(a.metrics),
                },
                Err(e) => DetectorOut {
                    label: label.clone(),
                    error: Some(e.to_string()),
                    metrics: None,
                    t1_ns: 0.0,
                    bin_width_ns: params.bin_width_ns,
                    bins: Vec::new(),
                    los_bins: Vec::new(),
                },
            }
        })
        .collect();
    let out = RoomOut {
        band,
        irs,
        rays_per_chip,
        detector_cm,
        reference_power_w: scene.luminaire_power(),
        audit: result.audit,
        detectors,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Capacity over an SNR grid as interleaved `[snr_db, bits_per_s, ...]`.
pub fn capacity_points(
    dc_gain: f64,
    ps_w: f64,
    bandwidth_hz: f64,
    lo_db: f64,
    hi_db: f64,
    step_db: f64,
    received: bool,
) -> Vec<f64> {
    if !(step_db > 0.0 && hi_db >= lo_db) {
        return Vec::new();
    }
    let definition = if received {
        SnrDefinition::Received
    } else {
        SnrDefinition::Transmit
    };
    capacity_sweep(dc_gain, ps_w, bandwidth_hz, &snr_grid(lo_db, hi_db, step_db), definition)
        .into_iter()
        .flat_map(|(s, c)| [s, c])
        .collect()
}

/// Lambertian order followed by `n` samples of the normalized emission
/// pattern cos^m θ for θ from 0 to 90°.
pub fn lambertian_points(semi_angle_deg: f64, n: usize) -> Vec<f64> {
    if !(semi_angle_deg > 0.0 && semi_angle_deg < 90.0) {
        return Vec::new();
    }
    let m = lambertian_order(semi_angle_deg);
    let n = n.clamp(2, 721);
    std::iter::once(m)
        .chain((0..n).map(|i| {
            let theta = (i as f64 / (n - 1) as f64) * std::f64::consts::FRAC_PI_2;
            theta.cos().max(0.0).powf(m)
        }))
        .collect()
}

#[wasm_bindgen]
pub fn simulate_room(band: &str, irs: &str, rays_per_chip: u32, detector_cm: f64, seed: u32) -> Result<String, JsError> {
    simulate_room_json(band, irs, rays_per_chip, detector_cm, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn capacity_curve(
    dc_gain: f64,
    ps_w: f64,
    bandwidth_hz: f64,
    lo_db: f64,
    hi_db: f64,
    step_db: f64,
    received: bool,
) -> Vec<f64> {
    capacity_points(dc_gain, ps_w, bandwidth_hz, lo_db, hi_db, step_db, received)
}

#[wasm_bindgen]
pub fn lambertian_pattern(semi_angle_deg: f64, n: usize) -> Vec<f64> {
    lambertian_points(semi_angle_deg, n)
}
