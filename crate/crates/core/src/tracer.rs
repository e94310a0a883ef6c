//! Monte-Carlo ray tracing with deterministic ray splitting.
//!
//! Every chip emits `rays_per_chip` root rays. A ray that reaches a surface
//! is replaced by its children (one mirror child for mixed surfaces plus
//! `ν` diffuse children) until the power relative to the root drops below
//! `min_rel_intensity`. A ray reaching the front face of a detector is
//! recorded and stops there.
//!
//! Each ray draws its random numbers from a stream keyed by its position in
//! the ray tree (see [`crate::rng`]), so results do not depend on the number
//! of workers or on the order in which branches are visited.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::geometry::{
    intersect_before, reflect_specular, sample_lambertian_dir, time_of_flight, Intersection, Ray, Vec3,
    SPAWN_OFFSET,
};
use crate::rng::{child_key, root_key, StreamRng};
use crate::scene::{effective_detector_gain, DiffuseLobe, LedChip, Scene, Surface};
use crate::spectral::SpectralError;

/// Fraction of traced segments that may leave the room before a
/// "geometry leak" warning is raised.
pub const LEAK_WARN_FRACTION: f64 = 1e-3;

const CHUNK_RAYS: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hit {
    /// Power after spectral and angular detector weighting, W.
    pub power: f64,
    /// Optical power incident on the detector, W.
    pub raw_power: f64,
    /// Arrival time, ns.
    pub time_ns: f64,
    /// Wavelength, µm.
    pub wavelength: f64,
    /// Number of reflections before arrival.
    pub kappa: u32,
    pub source_id: u32,
    pub detector_id: u32,
}

/// Detector hits of one (source set, detector) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HitLedger {
    pub hits: Vec<Hit>,
    pub rays_emitted: u64,
    pub max_kappa_observed: u32,
    /// Transmit power that normalizes channel gains (power of one
    /// luminaire), W.
    pub reference_power_w: f64,
}

impl Default for HitLedger {
    fn default() -> Self {
        Self {
            hits: Vec::new(),
            rays_emitted: 0,
            max_kappa_observed: 0,
            reference_power_w: 1.0,
        }
    }
}

impl HitLedger {
    pub fn new(reference_power_w: f64) -> Self {
        Self {
            reference_power_w,
            ..Self::default()
        }
    }

    pub fn from_hits(hits: Vec<Hit>, reference_power_w: f64) -> Self {
        let max_kappa_observed = hits.iter().map(|h| h.kappa).max().unwrap_or(0);
        Self {
            hits,
            rays_emitted: 0,
            max_kappa_observed,
            reference_power_w,
        }
    }

    pub fn push(&mut self, hit: Hit) {
        self.max_kappa_observed = self.max_kappa_observed.max(hit.kappa);
        self.hits.push(hit);
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    /// Σ of weighted hit powers, W.
    pub fn total_power(&self) -> f64 {
        self.hits.iter().fold(0.0, |acc, h| acc + h.power)
    }

    /// Σ of incident hit powers, W.
    pub fn total_raw_power(&self) -> f64 {
        self.hits.iter().fold(0.0, |acc, h| acc + h.raw_power)
    }

    /// Append another ledger; the reference power of `self` is kept.
    pub fn extend(&mut self, other: &HitLedger) {
        self.hits.extend_from_slice(&other.hits);
        self.rays_emitted += other.rays_emitted;
        self.max_kappa_observed = self.max_kappa_observed.max(other.max_kappa_observed);
    }

    /// Sort hits into a canonical order (time, then source, kappa, power).
    pub fn canonical_sort(&mut self) {
        self.hits.sort_by(|a, b| {
            a.time_ns
                .total_cmp(&b.time_ns)
                .then(a.source_id.cmp(&b.source_id))
                .then(a.kappa.cmp(&b.kappa))
                .then(a.power.total_cmp(&b.power))
                .then(a.wavelength.total_cmp(&b.wavelength))
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceParams {
    pub rays_per_chip: u64,
    pub min_rel_intensity: f64,
    /// Hard limit on the number of reflections of any branch.
    pub kappa_cap: u32,
    pub seed: u64,
    /// CIR bin width, ns; carried through to the channel metrics.
    pub bin_width_ns: f64,
}

impl TraceParams {
    pub const DEFAULT_KAPPA_CAP: u32 = 64;
    pub const DEFAULT_BIN_WIDTH_NS: f64 = 0.2;
    pub const DEFAULT_SEED: u64 = 1;

    pub fn vl() -> Self {
        Self {
            rays_per_chip: 10_000,
            min_rel_intensity: 1e-5,
            kappa_cap: Self::DEFAULT_KAPPA_CAP,
            seed: Self::DEFAULT_SEED,
            bin_width_ns: Self::DEFAULT_BIN_WIDTH_NS,
        }
    }

    pub fn ir() -> Self {
        Self {
            min_rel_intensity: 1e-4,
            ..Self::vl()
        }
    }

    pub fn for_band(band: crate::config::Band) -> Self {
        match band {
            crate::config::Band::Vl => Self::vl(),
            crate::config::Band::Ir => Self::ir(),
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |field: &'static str, msg: String| TraceError::InvalidParams { field, msg };
        if self.rays_per_chip < 1 {
            return Err(bad("rays_per_chip", "must be at least 1".into()));
        }
        if !(self.min_rel_intensity > 0.0 && self.min_rel_intensity < 1.0) {
            // 1 itself is allowed: it keeps only line-of-sight rays.
            if self.min_rel_intensity != 1.0 {
                return Err(bad(
                    "min_rel_intensity",
                    format!("{} outside (0, 1)", self.min_rel_intensity),
                ));
            }
        }
        if !(self.bin_width_ns > 0.0 && self.bin_width_ns.is_finite()) {
            return Err(bad("bin_width", format!("{} ns must be positive", self.bin_width_ns)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("invalid `{field}`: {msg}")]
    InvalidParams { field: &'static str, msg: String },
    #[error("chip spectrum: {0}")]
    Spectrum(#[from] SpectralError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Where the emitted power went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct EnergyAudit {
    pub emitted: f64,
    /// Power incident on detector front faces.
    pub detected: f64,
    /// Lost at surfaces (1 − R) and on detector back faces.
    pub absorbed: f64,
    /// Carried by children dropped by the intensity threshold or the
    /// reflection cap.
    pub terminated: f64,
    /// Carried by rays that left the room through a numerical gap.
    pub escaped: f64,
    pub segments: u64,
    pub leaked_rays: u64,
}

impl EnergyAudit {
    pub fn accounted(&self) -> f64 {
        self.detected + self.absorbed + self.terminated + self.escaped
    }

    /// |accounted − emitted| / emitted.
    pub fn imbalance(&self) -> f64 {
        if self.emitted == 0.0 {
            return 0.0;
        }
        (self.accounted() - self.emitted).abs() / self.emitted
    }

    pub fn escaped_fraction(&self) -> f64 {
        if self.emitted == 0.0 {
            0.0
        } else {
            self.escaped / self.emitted
        }
    }

    pub fn leak_fraction(&self) -> f64 {
        if self.segments == 0 {
            0.0
        } else {
            self.leaked_rays as f64 / self.segments as f64
        }
    }

    pub fn has_geometry_leak(&self) -> bool {
        self.leak_fraction() > LEAK_WARN_FRACTION
    }

    fn add(&mut self, o: &EnergyAudit) {
        self.emitted += o.emitted;
        self.detected += o.detected;
        self.absorbed += o.absorbed;
        self.terminated += o.terminated;
        self.escaped += o.escaped;
        self.segments += o.segments;
        self.leaked_rays += o.leaked_rays;
    }
}

/// `n` root rays of `chip`. Ray `i` uses the stream `root_key(seed,
/// chip_index, i)`.
pub fn emit_rays(
    chip: &LedChip,
    chip_index: u64,
    n: u64,
    seed: u64,
) -> impl Iterator<Item = Result<Ray, SpectralError>> + '_ {
    (0..n).map(move |i| emit_ray(chip, chip_index, n, seed, i))
}

fn emit_ray(chip: &LedChip, chip_index: u64, n: u64, seed: u64, i: u64) -> Result<Ray, SpectralError> {
    let key = root_key(seed, chip_index, i);
    let mut rng = StreamRng::new(key);
    let wavelength = chip.spectrum.sample_wavelength(&mut rng)?;
    let dir = sample_lambertian_dir(chip.normal, chip.lambertian_m, &mut rng);
    Ok(Ray {
        origin: chip.position + chip.normal * SPAWN_OFFSET,
        dir,
        power: chip.power / n as f64,
        wavelength,
        path_len: 0.0,
        kappa: 0,
        rel_intensity: 1.0,
        stream: key,
    })
}

/// All children of `ray` reflecting off `surface` at `hit`, without any
/// termination test.
pub fn interact(ray: &Ray, surface: &Surface, hit: &Intersection, lobe: DiffuseLobe) -> Vec<Ray> {
    let mut out = Vec::new();
    let mut sink = Sink::default();
    spawn_children(ray, surface, hit, lobe, 0.0, u32::MAX, &mut out, &mut sink);
    out
}

#[derive(Default)]
struct Sink {
    absorbed: f64,
    terminated: f64,
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn spawn_children(
    ray: &Ray,
    surface: &Surface,
    hit: &Intersection,
    lobe: DiffuseLobe,
    min_rel: f64,
    kappa_cap: u32,
    out: &mut Vec<Ray>,
    sink: &mut Sink,
) {
    let material = surface.effective_material();
    let split = material.split(ray.wavelength);
    let n = surface.rect.normal;
    let side = if ray.dir.dot(n) < 0.0 { n } else { -n };
    let origin = hit.point + side * SPAWN_OFFSET;
    let kappa = ray.kappa + 1;
    let path_len = ray.path_len + hit.distance;
    let mirror = reflect_specular(ray.dir, n);

    let mut child_total = 0.0;
    let mut make = |fraction: f64, slot: u32, dir: &dyn Fn(&mut StreamRng) -> Vec3| {
        let power = ray.power * fraction;
        child_total += power;
        let rel = ray.rel_intensity * fraction;
        if rel < min_rel || kappa > kappa_cap {
            sink.terminated += power;
            return;
        }
        let stream = child_key(ray.stream, slot);
        let mut rng = StreamRng::new(stream);
        out.push(Ray {
            origin,
            dir: dir(&mut rng),
            power,
            wavelength: ray.wavelength,
            path_len,
            kappa,
            rel_intensity: rel,
            stream,
        });
    };

    if split.specular > 0.0 {
        make(split.specular, 0, &|_| mirror);
    }
    let diffuse_dir = |rng: &mut StreamRng| match lobe {
        DiffuseLobe::Normal => sample_lambertian_dir(side, 1.0, rng),
        DiffuseLobe::Specular => {
            let d = sample_lambertian_dir(mirror, 1.0, rng);
            let c = d.dot(side);
            if c > 0.0 {
                d
            } else {
                // fold back into the reflecting hemisphere
                (d - side * (2.0 * c)).normalized()
            }
        }
    };
    for slot in 1..=split.nu {
        make(split.diffuse_each, slot, &diffuse_dir);
    }
    sink.absorbed += ray.power - child_total;
}

enum Target<'a> {
    None,
    Surface(&'a Surface),
    Detector(usize),
}

/// Output of tracing a batch of root rays of one chip.
#[derive(Default)]
struct Batch {
    /// Hits per detector.
    hits: Vec<Vec<Hit>>,
    audit: EnergyAudit,
}

/// Brute-force nearest surface: every rectangle is tested and the first
/// one wins ties.
fn nearest_surface<'s>(ray: &Ray, scene: &'s Scene) -> (Target<'s>, Option<Intersection>) {
    let mut best: Option<Intersection> = None;
    let mut target = Target::None;
    for s in &scene.surfaces {
        let t_max = best.map_or(f64::INFINITY, |b| b.distance);
        if let Some(h) = intersect_before(ray, &s.rect, t_max) {
            best = Some(h);
            target = Target::Surface(s);
        }
    }
    (target, best)
}

#[inline]
fn axis(v: Vec3, a: usize) -> f64 {
    match a {
        0 => v.x,
        1 => v.y,
        _ => v.z,
    }
}

/// Surface lookup for a rectangular room `[0, size]` whose walls may carry
/// coplanar panels. The exit face follows from the slab distances, then
/// the panels on that face are checked in scene order.
struct BoxIndex {
    size: Vec3,
    /// `faces[axis][side]`, side 0 at coordinate 0 and side 1 at `size`.
    faces: [[usize; 2]; 3],
    panels: [[Vec<usize>; 2]; 3],
}

impl BoxIndex {
    fn new(scene: &Scene) -> Option<Self> {
        let size = scene.room;
        let mut faces = [[None; 2]; 3];
        let mut panels: [[Vec<usize>; 2]; 3] = Default::default();
        for (i, s) in scene.surfaces.iter().enumerate() {
            let n = s.rect.normal;
            let a = (0..3).find(|&a| axis(n, a).abs() > 1.0 - 1e-12)?;
            let c = axis(s.rect.corner, a);
            let side = if c.abs() <= 1e-9 {
                0
            } else if (c - axis(size, a)).abs() <= 1e-9 {
                1
            } else {
                return None;
            };
            let face_area = axis(size, (a + 1) % 3) * axis(size, (a + 2) % 3);
            if (s.rect.area() - face_area).abs() <= 1e-9 * face_area {
                if faces[a][side].is_some() {
                    return None;
                }
                faces[a][side] = Some(i);
            } else {
                panels[a][side].push(i);
            }
        }
        let mut out = [[0; 2]; 3];
        for a in 0..3 {
            for side in 0..2 {
                out[a][side] = faces[a][side]?;
                // panels must precede their wall to win ties
                if panels[a][side].iter().any(|&p| p > out[a][side]) {
                    return None;
                }
            }
        }
        Some(Self {
            size,
            faces: out,
            panels,
        })
    }

    #[inline]
    fn nearest(&self, ray: &Ray, scene: &Scene) -> Option<(usize, Intersection)> {
        let mut best_t = f64::INFINITY;
        let mut hit_axis = 0;
        let mut hit_side = 0;
        for a in 0..3 {
            let d = axis(ray.dir, a);
            let o = axis(ray.origin, a);
            let (t, side) = if d > 0.0 {
                ((axis(self.size, a) - o) / d, 1)
            } else if d < 0.0 {
                (-o / d, 0)
            } else {
                continue;
            };
            if t < best_t {
                best_t = t;
                hit_axis = a;
                hit_side = side;
            }
        }
        if !best_t.is_finite() {
            return None;
        }
        let point = ray.at(best_t);
        let mut idx = self.faces[hit_axis][hit_side];
        for &p in &self.panels[hit_axis][hit_side] {
            let (u, v) = scene.surfaces[p].rect.local_coords(point);
            if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                idx = p;
                break;
            }
        }
        Some((
            idx,
            Intersection {
                point,
                distance: best_t,
                cos_incidence: axis(ray.dir, hit_axis).abs(),
            },
        ))
    }
}

struct Tracer<'a> {
    scene: &'a Scene,
    params: &'a TraceParams,
    index: Option<BoxIndex>,
}

impl<'a> Tracer<'a> {
    fn trace(&self, root: Ray, source_id: u32, stack: &mut Vec<Ray>, batch: &mut Batch) {
        let scene = self.scene;
        let mut sink = Sink::default();
        stack.push(root);
        while let Some(ray) = stack.pop() {
            batch.audit.segments += 1;
            let (mut target, mut best) = match &self.index {
                Some(index) => match index.nearest(&ray, scene) {
                    Some((i, h)) => (Target::Surface(&scene.surfaces[i]), Some(h)),
                    None => (Target::None, None),
                },
                None => nearest_surface(&ray, scene),
            };
            for (j, d) in scene.detectors.iter().enumerate() {
                let t_max = best.map_or(f64::INFINITY, |b| b.distance);
                if let Some(h) = intersect_before(&ray, &d.rect, t_max) {
                    best = Some(h);
                    target = Target::Detector(j);
                }
            }
            match (target, best) {
                (Target::Surface(s), Some(h)) => {
                    spawn_children(
                        &ray,
                        s,
                        &h,
                        scene.diffuse_lobe,
                        self.params.min_rel_intensity,
                        self.params.kappa_cap,
                        stack,
                        &mut sink,
                    );
                }
                (Target::Detector(j), Some(h)) => {
                    let det = &scene.detectors[j];
                    if ray.dir.dot(det.rect.normal) < 0.0 {
                        let theta = h.cos_incidence.min(1.0).acos().to_degrees();
                        let gain = effective_detector_gain(det, ray.wavelength, theta);
                        batch.audit.detected += ray.power;
                        batch.hits[j].push(Hit {
                            power: ray.power * gain,
                            raw_power: ray.power,
                            time_ns: time_of_flight(ray.path_len + h.distance),
                            wavelength: ray.wavelength,
                            kappa: ray.kappa,
                            source_id,
                            detector_id: j as u32,
                        });
                    } else {
                        batch.audit.absorbed += ray.power;
                    }
                }
                _ => {
                    batch.audit.escaped += ray.power;
                    batch.audit.leaked_rays += 1;
                }
            }
        }
        batch.audit.absorbed += sink.absorbed;
        batch.audit.terminated += sink.terminated;
    }

    fn run_chunk(&self, job: &Job) -> Result<Batch, SpectralError> {
        let chip = &self.scene.luminaires[job.luminaire].chips[job.chip];
        let mut batch = Batch {
            hits: vec![Vec::new(); self.scene.detectors.len()],
            audit: EnergyAudit::default(),
        };
        let mut stack = Vec::with_capacity(256);
        let n = self.params.rays_per_chip;
        for i in job.start..job.end {
            let ray = emit_ray(chip, job.chip_index, n, self.params.seed, i)?;
            batch.audit.emitted += ray.power;
            self.trace(ray, job.luminaire as u32, &mut stack, &mut batch);
        }
        Ok(batch)
    }
}

struct Job {
    luminaire: usize,
    chip: usize,
    chip_index: u64,
    start: u64,
    end: u64,
}

fn jobs(scene: &Scene, rays_per_chip: u64) -> Vec<Job> {
    let mut out = Vec::new();
    let mut chip_index = 0;
    for (l, lum) in scene.luminaires.iter().enumerate() {
        for c in 0..lum.chips.len() {
            let mut start = 0;
            while start < rays_per_chip {
                let end = (start + CHUNK_RAYS).min(rays_per_chip);
                out.push(Job {
                    luminaire: l,
                    chip: c,
                    chip_index,
                    start,
                    end,
                });
                start = end;
            }
            chip_index += 1;
        }
    }
    out
}

/// Ledgers of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// `ledgers[luminaire][detector]`.
    pub ledgers: Vec<Vec<HitLedger>>,
    pub audit: EnergyAudit,
    pub luminaire_labels: Vec<String>,
    pub detector_labels: Vec<String>,
}

impl SimulationResult {
    pub fn ledger(&self, luminaire: usize, detector: usize) -> &HitLedger {
        &self.ledgers[luminaire][detector]
    }

    /// Hits of all luminaires at one detector.
    pub fn merged_for_detector(&self, detector: usize) -> HitLedger {
        let reference = self
            .ledgers
            .first()
            .map_or(1.0, |l| l[detector].reference_power_w);
        let mut out = HitLedger::new(reference);
        for per_lum in &self.ledgers {
            out.extend(&per_lum[detector]);
        }
        out
    }
}

/// Configurable simulation run.
pub struct Simulation<'a> {
    scene: &'a Scene,
    params: TraceParams,
    workers: Option<usize>,
    progress: Option<&'a (dyn Fn(u64) + Sync)>,
}

impl<'a> Simulation<'a> {
    pub fn new(scene: &'a Scene, params: &TraceParams) -> Self {
        Self {
            scene,
            params: *params,
            workers: None,
            progress: None,
        }
    }

    /// Number of worker threads; `None` uses all available cores.
    pub fn workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    /// Called with the running count of completed root rays.
    pub fn progress(mut self, f: &'a (dyn Fn(u64) + Sync)) -> Self {
        self.progress = Some(f);
        self
    }

    pub fn run(self) -> Result<SimulationResult, TraceError> {
        self.params.validate()?;
        let tracer = Tracer {
            scene: self.scene,
            params: &self.params,
            index: BoxIndex::new(self.scene),
        };
        let jobs = jobs(self.scene, self.params.rays_per_chip);
        let done = AtomicU64::new(0);
        let run_job = |job: &Job| {
            let r = tracer.run_chunk(job);
            let total = done.fetch_add(job.end - job.start, Ordering::Relaxed) + job.end - job.start;
            if let Some(cb) = self.progress {
                cb(total);
            }
            r
        };
        let batches: Vec<Result<Batch, SpectralError>> = self.map_jobs(&jobs, &run_job)?;

        let scene = self.scene;
        let reference = scene.luminaire_power();
        let mut ledgers: Vec<Vec<HitLedger>> = scene
            .luminaires
            .iter()
            .map(|_| vec![HitLedger::new(reference); scene.detectors.len()])
            .collect();
        let mut audit = EnergyAudit::default();
        for (job, batch) in jobs.iter().zip(batches) {
            let batch = batch?;
            audit.add(&batch.audit);
            for (d, hits) in batch.hits.into_iter().enumerate() {
                let ledger = &mut ledgers[job.luminaire][d];
                for h in hits {
                    ledger.push(h);
                }
            }
        }
        for (l, lum) in scene.luminaires.iter().enumerate() {
            let rays = lum.chips.len() as u64 * self.params.rays_per_chip;
            for ledger in &mut ledgers[l] {
                ledger.rays_emitted = rays;
            }
        }
        if audit.has_geometry_leak() {
            log::warn!(
                "geometry leak: {} of {} segments escaped the room",
                audit.leaked_rays,
                audit.segments
            );
        }
        Ok(SimulationResult {
            ledgers,
            audit,
            luminaire_labels: scene.luminaires.iter().map(|l| l.label.clone()).collect(),
            detector_labels: scene.detectors.iter().map(|d| d.label.clone()).collect(),
        })
    }

    #[cfg(feature = "parallel")]
    fn map_jobs<T: Send>(
        &self,
        jobs: &[Job],
        f: &(dyn Fn(&Job) -> T + Sync),
    ) -> Result<Vec<T>, TraceError> {
        use rayon::prelude::*;
        if self.workers == Some(1) {
            return Ok(jobs.iter().map(f).collect());
        }
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| TraceError::Pool(e.to_string()))?;
        Ok(pool.install(|| jobs.par_iter().map(f).collect()))
    }

    #[cfg(not(feature = "parallel"))]
    fn map_jobs<T: Send>(
        &self,
        jobs: &[Job],
        f: &(dyn Fn(&Job) -> T + Sync),
    ) -> Result<Vec<T>, TraceError> {
        Ok(jobs.iter().map(f).collect())
    }
}

/// Trace every chip of every luminaire with the default worker count.
pub fn run_simulation(scene: &Scene, params: &TraceParams) -> Result<SimulationResult, TraceError> {
    Simulation::new(scene, params).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SceneConfig;
    use crate::geometry::{intersect, Rect3};
    use crate::presets::{self, Band};
    use crate::scene::{build_scene, set_irs_state, IrsState, ReflectionModel, SurfaceMaterial};
    use crate::spectral::SpectralCurve;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn test_surface(r: f64, model: ReflectionModel) -> Surface {
        Surface {
            label: "s".into(),
            rect: Rect3::new(Vec3::ZERO, Vec3::X * 5.0, Vec3::Z * 5.0).unwrap(),
            material: SurfaceMaterial {
                name: "m".into(),
                reflectance: Arc::new(SpectralCurve::constant(0.3, 1.0, r).unwrap()),
                model,
            },
            irs: None,
        }
    }

    fn down_ray(power: f64) -> Ray {
        Ray {
            origin: Vec3::new(1.0, 1.0, 1.0),
            dir: Vec3::new(0.3, -1.0, 0.2).normalized(),
            power,
            wavelength: 0.55,
            path_len: 0.0,
            kappa: 0,
            rel_intensity: 1.0,
            stream: 7,
        }
    }

    fn hit_of(ray: &Ray, s: &Surface) -> Intersection {
        intersect(ray, &s.rect).unwrap()
    }

    #[test]
    fn emitted_rays_share_chip_power() {
        let cfg = presets::paper_room(Band::Vl).unwrap();
        let scene = build_scene(&cfg).unwrap();
        let chip = &scene.luminaires[0].chips[0];
        let n = 100_000;
        let mut total = 0.0;
        for r in emit_rays(chip, 0, n, 3) {
            let r = r.unwrap();
            assert_eq!(r.power, 1e-5);
            assert!(r.dir.dot(chip.normal) > 0.0);
            assert_eq!(r.rel_intensity, 1.0);
            total += r.power;
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn emitted_wavelengths_follow_spectrum() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cfg = presets::paper_room(Band::Vl).unwrap();
        let scene = build_scene(&cfg).unwrap();
        let chip = &scene.luminaires[1].chips[5];
        let curve = chip.spectrum.clone();
        let (lo, hi) = curve.range();
        let bins = 30;
        let width = (hi - lo) / bins as f64;
        // expected bin probabilities by fine midpoint integration
        let mut expected: Vec<f64> = (0..bins)
            .map(|b| {
                let k = 400;
                (0..k)
                    .map(|i| curve.evaluate(lo + width * (b as f64 + (i as f64 + 0.5) / k as f64)))
                    .sum::<f64>()
                    * width
                    / k as f64
            })
            .collect();
        let norm: f64 = expected.iter().sum();
        expected.iter_mut().for_each(|e| *e /= norm);
        let n = 1_000_000u64;
        let mut counts = vec![0u64; bins];
        for r in emit_rays(chip, 17, n, 11) {
            let l = r.unwrap().wavelength;
            let b = (((l - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let mut chi2 = 0.0;
        let mut dof = 0;
        for (c, p) in counts.iter().zip(&expected) {
            let e = p * n as f64;
            if e > 5.0 {
                chi2 += (*c as f64 - e).powi(2) / e;
                dof += 1;
            }
        }
        let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} dof {dof} p {p}");
    }

    #[test]
    fn irs_on_split_powers() {
        let s = test_surface(
            0.9,
            ReflectionModel::PhongMix {
                specular_fraction: 0.75,
                nu: 5,
            },
        );
        let ray = down_ray(1.0);
        let kids = interact(&ray, &s, &hit_of(&ray, &s), DiffuseLobe::Normal);
        assert_eq!(kids.len(), 6);
        assert_relative_eq!(kids[0].power, 0.675, epsilon = 1e-15);
        assert_relative_eq!(kids[0].dir.y, -ray.dir.y, epsilon = 1e-15);
        for k in &kids[1..] {
            assert_relative_eq!(k.power, 0.045, epsilon = 1e-15);
            assert!(k.dir.y > 0.0);
        }
        for k in &kids {
            assert_eq!(k.kappa, 1);
            assert!(k.origin.y > 0.0 && k.origin.y < 1e-8);
            assert_relative_eq!(k.path_len, hit_of(&ray, &s).distance, epsilon = 1e-15);
        }
    }

    #[test]
    fn diffuse_split_powers() {
        let s = test_surface(0.05, ReflectionModel::Diffuse { nu: 5 });
        let ray = down_ray(1.0);
        let kids = interact(&ray, &s, &hit_of(&ray, &s), DiffuseLobe::Normal);
        assert_eq!(kids.len(), 5);
        for k in &kids {
            assert_relative_eq!(k.power, 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_interactions_give_thirty_six_rays() {
        let s = test_surface(
            0.9,
            ReflectionModel::PhongMix {
                specular_fraction: 0.75,
                nu: 5,
            },
        );
        let ray = down_ray(1.0);
        let h = hit_of(&ray, &s);
        let first = interact(&ray, &s, &h, DiffuseLobe::Normal);
        let second: Vec<Ray> = first
            .iter()
            .flat_map(|c| interact(c, &s, &h, DiffuseLobe::Normal))
            .collect();
        assert_eq!(second.len(), 36);
        assert!(second.iter().all(|r| r.kappa == 2));
        let streams: std::collections::HashSet<u64> = second.iter().map(|r| r.stream).collect();
        assert_eq!(streams.len(), 36);
        let total: f64 = second.iter().map(|r| r.power).sum();
        assert_relative_eq!(total, 0.81, max_relative = 1e-12);
    }

    #[test]
    fn specular_lobe_children_stay_in_front() {
        let s = test_surface(
            0.9,
            ReflectionModel::PhongMix {
                specular_fraction: 0.75,
                nu: 5,
            },
        );
        for i in 0..200 {
            let mut ray = down_ray(1.0);
            ray.stream = i;
            ray.dir = Vec3::new(0.95, -0.1, 0.0).normalized();
            ray.origin = Vec3::new(0.5, 0.3, 2.0);
            for k in interact(&ray, &s, &hit_of(&ray, &s), DiffuseLobe::Specular) {
                assert!(k.dir.y > 0.0);
                assert!(k.dir.is_unit(1e-12));
            }
        }
    }

    fn los(size_cm: f64) -> Scene {
        build_scene(&presets::los_room(165.0, size_cm).unwrap()).unwrap()
    }

    #[test]
    fn absorbing_room_records_only_direct_hits() {
        let scene = los(20.0);
        let params = TraceParams {
            rays_per_chip: 20_000,
            ..TraceParams::vl()
        };
        let r = run_simulation(&scene, &params).unwrap();
        let l = r.ledger(0, 0);
        assert!(!l.is_empty());
        assert!(l.hits.iter().all(|h| h.kappa == 0));
        assert_eq!(l.max_kappa_observed, 0);
        assert!(r.audit.imbalance() < 1e-9);
    }

    #[test]
    fn unit_threshold_keeps_only_line_of_sight() {
        let scene = build_scene(&presets::paper_room(Band::Vl).unwrap()).unwrap();
        let params = TraceParams {
            rays_per_chip: 200,
            min_rel_intensity: 1.0,
            ..TraceParams::vl()
        };
        let r = run_simulation(&scene, &params).unwrap();
        for d in 0..3 {
            assert!(r.merged_for_detector(d).hits.iter().all(|h| h.kappa == 0));
        }
        assert_eq!(r.audit.segments, 144 * 200);
    }

    /// ∫ (m+1)/(2π) cosᵐφ cosθ · a(θ) / d² dA over a square detector
    /// centred below the source, where a(θ) = cos θ is the ideal-cosine
    /// angular response, by midpoint quadrature.
    fn los_oracle(d: f64, side: f64, m: f64) -> f64 {
        let k = 400;
        let h = side / k as f64;
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                let x = -side / 2.0 + (i as f64 + 0.5) * h;
                let z = -side / 2.0 + (j as f64 + 0.5) * h;
                let r2 = x * x + z * z + d * d;
                let c = d / r2.sqrt();
                sum += (m + 1.0) / (2.0 * PI) * c.powf(m) * c * c / r2;
            }
        }
        sum * h * h
    }

    #[test]
    fn large_detector_matches_quadrature() {
        let scene = los(50.0);
        let params = TraceParams {
            rays_per_chip: 200_000,
            ..TraceParams::vl()
        };
        let gain = run_simulation(&scene, &params).unwrap().ledger(0, 0).total_power();
        let oracle = los_oracle(1.65, 0.5, 1.0);
        assert_relative_eq!(gain, oracle, max_relative = 0.03);
        // small-detector limit of the quadrature is the point formula
        assert_relative_eq!(
            los_oracle(1.65, 0.01, 1.0),
            1e-4 * 2.0 / (2.0 * PI * 1.65 * 1.65),
            max_relative = 1e-4
        );
    }

    fn quick_paper(band: Band, irs: IrsState) -> Scene {
        set_irs_state(&build_scene(&presets::paper_room(band).unwrap()).unwrap(), irs)
    }

    fn fast_params(rays: u64) -> TraceParams {
        TraceParams {
            rays_per_chip: rays,
            min_rel_intensity: 1e-3,
            ..TraceParams::vl()
        }
    }

    #[test]
    fn energy_balances_in_reflective_room() {
        for irs in [IrsState::On, IrsState::Off] {
            let scene = quick_paper(Band::Vl, irs);
            let r = run_simulation(&scene, &fast_params(20)).unwrap();
            assert_relative_eq!(r.audit.emitted, 144.0, max_relative = 1e-12);
            assert!(r.audit.imbalance() < 1e-9, "{:?}", r.audit);
            assert_eq!(r.audit.leaked_rays, 0);
            assert!(r.audit.terminated > 0.0);
        }
    }

    #[test]
    fn hits_never_precede_line_of_sight() {
        let scene = quick_paper(Band::Vl, IrsState::On);
        let r = run_simulation(&scene, &fast_params(30)).unwrap();
        for (l, lum) in scene.luminaires.iter().enumerate() {
            for (d, det) in scene.detectors.iter().enumerate() {
                let tmin = lum
                    .chips
                    .iter()
                    .map(|c| time_of_flight(c.position.distance(det.rect.center())))
                    .fold(f64::INFINITY, f64::min);
                for h in &r.ledger(l, d).hits {
                    // the detector half-width bounds the spread of entry points
                    assert!(h.time_ns >= tmin - time_of_flight(0.0071) - 1e-9);
                    assert!(h.power >= 0.0 && h.power <= h.raw_power);
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_ledgers() {
        let scene = quick_paper(Band::Ir, IrsState::On);
        let p = fast_params(40);
        let one = Simulation::new(&scene, &p).workers(Some(1)).run().unwrap();
        let four = Simulation::new(&scene, &p).workers(Some(4)).run().unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn merged_ledger_is_sum_of_luminaires() {
        let scene = quick_paper(Band::Vl, IrsState::On);
        let r = run_simulation(&scene, &fast_params(20)).unwrap();
        for d in 0..3 {
            let merged = r.merged_for_detector(d);
            let mut sum = 0.0;
            let mut n = 0;
            for l in 0..4 {
                sum += r.ledger(l, d).total_power();
                n += r.ledger(l, d).len();
            }
            assert_eq!(merged.len(), n);
            assert_relative_eq!(merged.total_power(), sum, max_relative = 1e-12);
            assert_eq!(merged.rays_emitted, 144 * 20);
            assert_eq!(merged.reference_power_w, 36.0);
        }
    }

    fn scaled(cfg: &SceneConfig, factor: f64) -> SceneConfig {
        let mut out = cfg.clone();
        let c = &cfg.walls.reflectance;
        out.walls.reflectance = Arc::new(
            SpectralCurve::new(c.samples().iter().map(|&(l, w)| (l, w * factor)).collect()).unwrap(),
        );
        out
    }

    #[test]
    fn raising_reflectance_never_lowers_gain() {
        let mut base = presets::paper_room(Band::Vl).unwrap();
        base.irs.as_mut().unwrap().state = IrsState::Off;
        let p = fast_params(30);
        let mut prev: Option<Vec<f64>> = None;
        for f in [1.0, 1.5, 2.5, 4.0] {
            let scene = build_scene(&scaled(&base, f)).unwrap();
            let r = run_simulation(&scene, &p).unwrap();
            let gains: Vec<f64> = (0..3).map(|d| r.merged_for_detector(d).total_power()).collect();
            if let Some(prev) = &prev {
                for (a, b) in prev.iter().zip(&gains) {
                    assert!(b >= a, "{prev:?} -> {gains:?}");
                }
            }
            prev = Some(gains);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let scene = los(1.0);
        for p in [
            TraceParams {
                rays_per_chip: 0,
                ..TraceParams::vl()
            },
            TraceParams {
                min_rel_intensity: 0.0,
                ..TraceParams::vl()
            },
            TraceParams {
                bin_width_ns: -1.0,
                ..TraceParams::vl()
            },
        ] {
            assert!(matches!(
                run_simulation(&scene, &p),
                Err(TraceError::InvalidParams { .. })
            ));
        }
    }

    #[test]
    fn progress_reports_all_roots() {
        let scene = los(1.0);
        let p = TraceParams {
            rays_per_chip: 1000,
            ..TraceParams::vl()
        };
        let last = AtomicU64::new(0);
        let cb = |n: u64| {
            last.fetch_max(n, Ordering::Relaxed);
        };
        Simulation::new(&scene, &p).progress(&cb).run().unwrap();
        assert_eq!(last.load(Ordering::Relaxed), 1000);
    }

    #[test]
    fn box_index_agrees_with_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut cfg = presets::paper_room(Band::Vl).unwrap();
        cfg.irs.as_mut().unwrap().coverage = crate::config::IrsCoverage::Panels(presets::paper_panels());
        let scene = build_scene(&cfg).unwrap();
        let index = BoxIndex::new(&scene).expect("box scene");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut panel_hits = 0;
        for _ in 0..50_000 {
            let origin = Vec3::new(
                rng.random::<f64>() * scene.room.x,
                rng.random::<f64>() * scene.room.y,
                rng.random::<f64>() * scene.room.z,
            );
            let dir = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                .normalized();
            let ray = Ray { origin, dir, ..down_ray(1.0) };
            let (target, brute) = nearest_surface(&ray, &scene);
            let (idx, hit) = index.nearest(&ray, &scene).unwrap();
            let Target::Surface(s) = target else { panic!("brute force missed") };
            assert!(std::ptr::eq(s, &scene.surfaces[idx]), "{} vs {}", s.label, scene.surfaces[idx].label);
            assert_relative_eq!(hit.distance, brute.unwrap().distance, max_relative = 1e-12);
            panel_hits += usize::from(s.is_irs());
        }
        assert!(panel_hits > 5_000);
    }
}
