//! Command-line driver: load a scene file, trace it, and write channel
//! data for every detector.
//!
//! Exit codes: 0 on success, 1 for configuration and validation errors,
//! 2 for runtime failures (geometry leaks, empty or degenerate channels,
//! unwritable output).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{Deserialize, Serialize};

use owc_mcrt::channel::{self, capacity_sweep, snr_grid, ChannelAnalysis, ChannelMetrics, SnrDefinition};
use owc_mcrt::config::{load_scene_file, Band};
use owc_mcrt::scene::{build_scene, set_irs_state, IrsState};
use owc_mcrt::tracer::{EnergyAudit, Simulation, TraceParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "OWC_MCRT_WORKERS";

#[derive(Debug, Clone, Parser)]
#[command(name = "owc-mcrt", version, about = "Monte-Carlo optical wireless channel simulator")]
pub struct Args {
    /// Scene file (TOML).
    #[arg(long, required_unless_present = "manifest")]
    pub scene: Option<PathBuf>,
    /// Re-run the configuration recorded in a previous manifest.json.
    #[arg(long, conflicts_with_all = ["scene", "band", "irs", "rays_per_chip", "seed",
        "bin_width", "min_rel_intensity", "max_bounces"])]
    pub manifest: Option<PathBuf>,
    /// Operating band: vl or ir. Defaults to the scene file's default band.
    #[arg(long)]
    pub band: Option<Band>,
    /// IRS state: on or off. Defaults to the scene file.
    #[arg(long)]
    pub irs: Option<IrsState>,
    #[arg(long)]
    pub rays_per_chip: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CIR bin width, ns.
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub min_rel_intensity: Option<f64>,
    /// Reflection cap per branch.
    #[arg(long)]
    pub max_bounces: Option<u32>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; also settable through OWC_MCRT_WORKERS.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Capacity sweep grid, dB: lowest, highest and step.
    #[arg(long, num_args = 3, value_names = ["LO", "HI", "STEP"], default_values_t = [30.0, 50.0, 1.0])]
    pub snr_grid: Vec<f64>,
    /// SNR axis of the capacity sweep: transmit or received.
    #[arg(long, default_value = "transmit", value_parser = parse_snr_definition)]
    pub snr_definition: SnrDefinition,
}

fn parse_snr_definition(s: &str) -> Result<SnrDefinition, String> {
    match s {
        "transmit" => Ok(SnrDefinition::Transmit),
        "received" => Ok(SnrDefinition::Received),
        other => Err(format!("expected `transmit` or `received`, got `{other}`")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// The reproducible part of a run: everything that determines the output
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub scene: PathBuf,
    pub band: Band,
    pub irs: Option<IrsState>,
    pub rays_per_chip: u64,
    pub seed: u64,
    pub bin_width_ns: f64,
    pub min_rel_intensity: f64,
    pub max_bounces: u32,
    pub snr_grid_db: [f64; 3],
    pub snr_definition: SnrDefinition,
    pub tool_version: String,
}

/// Written to `manifest.json`; adds the run-specific details to
/// [`RunSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub spec: RunSpec,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub label: String,
    pub metrics: ChannelMetrics,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub run: RunSpec,
    pub reference_power_w: f64,
    pub energy: EnergyAudit,
    pub detectors: Vec<DetectorResult>,
}

/// Outcome of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub metrics: MetricsFile,
    pub analyses: Vec<(String, ChannelAnalysis)>,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn resolve_spec(args: &Args) -> Result<RunSpec, CliError> {
    if let Some(path) = &args.manifest {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))?;
        return Ok(m.spec);
    }
    let scene = args.scene.clone().ok_or_else(|| config_err("`--scene` is required"))?;
    let resolved = load_scene_file(&scene, args.band).map_err(config_err)?;
    let t = &resolved.trace;
    let [lo, hi, step] = <[f64; 3]>::try_from(args.snr_grid.as_slice())
        .map_err(|_| config_err("`--snr-grid` takes three values"))?;
    if !(step > 0.0 && hi >= lo) {
        return Err(config_err("`--snr-grid`: need LO <= HI and STEP > 0"));
    }
    Ok(RunSpec {
        scene,
        band: resolved.band,
        irs: args.irs,
        rays_per_chip: args.rays_per_chip.or(t.rays_per_chip).unwrap_or(10_000),
        seed: args.seed.or(t.seed).unwrap_or(TraceParams::DEFAULT_SEED),
        bin_width_ns: args
            .bin_width
            .or(t.bin_width_ns)
            .unwrap_or(TraceParams::DEFAULT_BIN_WIDTH_NS),
        min_rel_intensity: args.min_rel_intensity.unwrap_or(resolved.min_rel_intensity),
        max_bounces: args
            .max_bounces
            .or(t.max_bounces)
            .unwrap_or(TraceParams::DEFAULT_KAPPA_CAP),
        snr_grid_db: [lo, hi, step],
        snr_definition: args.snr_definition,
        tool_version: TOOL_VERSION.to_string(),
    })
}

fn workers(args: &Args) -> Result<Option<usize>, CliError> {
    if args.workers.is_some() {
        return Ok(args.workers);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("`{WORKERS_ENV}`: expected a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Trace and analyze without writing anything.
pub fn simulate(spec: &RunSpec, workers: Option<usize>) -> Result<(MetricsFile, Vec<(String, ChannelAnalysis)>), CliError> {
    let resolved = load_scene_file(&spec.scene, Some(spec.band)).map_err(config_err)?;
    let mut scene = build_scene(&resolved.scene).map_err(config_err)?;
    if let Some(state) = spec.irs {
        if scene.irs_surfaces().next().is_none() {
            log::warn!("--irs {state} ignored: the scene has no IRS");
        }
        scene = set_irs_state(&scene, state);
    }
    let params = TraceParams {
        rays_per_chip: spec.rays_per_chip,
        min_rel_intensity: spec.min_rel_intensity,
        kappa_cap: spec.max_bounces,
        seed: spec.seed,
        bin_width_ns: spec.bin_width_ns,
    };
    params.validate().map_err(config_err)?;

    let total_roots = scene.chip_count() as u64 * params.rays_per_chip;
    let step = (total_roots / 10).max(1);
    let next = std::sync::atomic::AtomicU64::new(step);
    let progress = |done: u64| {
        let mark = next.load(std::sync::atomic::Ordering::Relaxed);
        if done >= mark
            && next
                .compare_exchange(mark, mark + step, std::sync::atomic::Ordering::Relaxed, std::sync::atomic::Ordering::Relaxed)
                .is_ok()
        {
            log::info!("traced {done} of {total_roots} root rays");
        }
    };
    let result = Simulation::new(&scene, &params)
        .workers(workers)
        .progress(&progress)
        .run()
        .map_err(|e| match e {
            owc_mcrt::tracer::TraceError::InvalidParams { .. } => config_err(e),
            other => CliError::Runtime(other.to_string()),
        })?;
    if result.audit.has_geometry_leak() {
        return Err(CliError::Runtime(format!(
            "geometry leak: {} of {} segments escaped",
            result.audit.leaked_rays, result.audit.segments
        )));
    }

    let mut analyses = Vec::new();
    let mut detectors = Vec::new();
    for (d, label) in result.detector_labels.iter().enumerate() {
        let ledger = result.merged_for_detector(d);
        let a = channel::analyze(&ledger, params.bin_width_ns)
            .map_err(|e| CliError::Runtime(format!("detector {label}: {e}")))?;
        detectors.push(DetectorResult {
            label: label.clone(),
            metrics: a.metrics.clone(),
        });
        analyses.push((label.clone(), a));
    }
    let metrics = MetricsFile {
        schema_version: SCHEMA_VERSION,
        run: spec.clone(),
        reference_power_w: scene.luminaire_power(),
        energy: result.audit,
        detectors,
    };
    Ok((metrics, analyses))
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn cir_csv(a: &ChannelAnalysis) -> String {
    let cir = &a.cir;
    let max_kappa = cir.per_kappa.keys().next_back().copied().unwrap_or(0);
    let mut out = String::from("bin_time_ns,power_w");
    for k in 0..=max_kappa {
        out.push_str(&format!(",kappa_{k}"));
    }
    out.push('\n');
    for n in 0..cir.n_bins() {
        out.push_str(&sci(cir.bin_start(n)));
        out.push(',');
        out.push_str(&sci(cir.bins[n]));
        for k in 0..=max_kappa {
            out.push(',');
            out.push_str(&sci(cir.per_kappa.get(&k).map_or(0.0, |v| v[n])));
        }
        out.push('\n');
    }
    out
}

pub fn cfr_csv(a: &ChannelAnalysis) -> String {
    let mut out = String::from("freq_hz,magnitude,phase_rad\n");
    for (f, v) in a.cfr.shifted() {
        out.push_str(&format!("{},{},{}\n", sci(f), sci(v.norm()), sci(v.arg())));
    }
    out
}

pub fn capacity_curve(spec: &RunSpec, reference_power_w: f64, m: &ChannelMetrics) -> Vec<(f64, f64)> {
    let [lo, hi, step] = spec.snr_grid_db;
    capacity_sweep(
        m.dc_gain,
        reference_power_w,
        m.bandwidth_hz,
        &snr_grid(lo, hi, step),
        spec.snr_definition,
    )
}

pub fn capacity_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("snr_db,bits_per_s\n");
    for (snr, c) in curve {
        out.push_str(&format!("{},{}\n", sci(*snr), sci(*c)));
    }
    out
}

/// Write all result files into `dir`.
pub fn emit_results(
    dir: &Path,
    metrics: &MetricsFile,
    analyses: &[(String, ChannelAnalysis)],
    manifest: &RunManifest,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (label, a) in analyses {
        write_atomic(&dir.join(format!("cir_{label}.csv")), cir_csv(a).as_bytes())?;
        write_atomic(&dir.join(format!("cfr_{label}.csv")), cfr_csv(a).as_bytes())?;
        let curve = capacity_curve(&metrics.run, metrics.reference_power_w, &a.metrics);
        write_atomic(&dir.join(format!("capacity_{label}.csv")), capacity_csv(&curve).as_bytes())?;
    }
    let json = serde_json::to_string_pretty(metrics).map_err(std::io::Error::other)?;
    write_atomic(&dir.join("metrics.json"), (json + "\n").as_bytes())?;
    let json = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    write_atomic(&dir.join("manifest.json"), (json + "\n").as_bytes())?;
    Ok(())
}

pub fn run(args: &Args) -> Result<RunOutput, CliError> {
    let start = Instant::now();
    let spec = resolve_spec(args)?;
    let workers = workers(args)?;
    let (metrics, analyses) = simulate(&spec, workers)?;
    let manifest = RunManifest {
        spec,
        out: args.out.clone(),
        workers,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    emit_results(&args.out, &metrics, &analyses, &manifest).map_err(|e| {
        CliError::Runtime(format!("cannot write results to {}: {e}", args.out.display()))
    })?;
    Ok(RunOutput {
        manifest,
        metrics,
        analyses,
    })
}

/// Parse `argv`, run, report errors on stderr and return the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(out) => {
            for d in &out.metrics.detectors {
                println!(
                    "{}: H(0) = {:.4e}, tau0 = {:.3} ns, tau_rms = {:.3} ns, rho = {:.3}, kappa_max = {}",
                    d.label,
                    d.metrics.dc_gain,
                    d.metrics.mean_delay_ns,
                    d.metrics.rms_delay_ns,
                    d.metrics.flatness,
                    d.metrics.max_kappa
                );
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
