//! Non-sequential Monte-Carlo ray tracing for indoor optical wireless
//! channels.
//!
//! A [`scene::Scene`] describes a cuboid room lit by LED-chip luminaires,
//! with spectrally reflecting walls, optional intelligent reflecting surface
//! (IRS) panels that switch between a high-reflectance mostly-specular ON
//! state and the passive wall coating, and small photodiode detectors.
//!
//! [`tracer`] emits rays from every chip and splits them deterministically
//! at each surface into one specular and `ν` diffuse children until their
//! power falls below a relative threshold. Every detector hit is kept in a
//! [`tracer::HitLedger`], which [`channel`] turns into a binned impulse
//! response, frequency response, delay statistics, flatness factor and
//! achievable rate.
//!
//! ```
//! use owc_mcrt::{channel, presets, scene, tracer};
//!
//! let config = presets::paper_room(presets::Band::Vl).unwrap();
//! let scene = scene::build_scene(&config).unwrap();
//! let params = tracer::TraceParams { rays_per_chip: 20, ..tracer::TraceParams::vl() };
//! let result = tracer::run_simulation(&scene, &params).unwrap();
//! let ledger = result.merged_for_detector(2);
//! assert!(channel::dc_gain(&ledger) >= 0.0);
//! ```

pub mod channel;
pub mod config;
pub mod geometry;
pub mod presets;
pub mod rng;
pub mod scene;
pub mod spectral;
pub mod tracer;

pub use geometry::{Ray, Rect3, Vec3};
pub use spectral::SpectralCurve;
