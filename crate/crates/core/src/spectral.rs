//! Sampled spectral curves: source emission spectra, material reflectances
//! and detector responsivities.

use std::path::Path;

use rand::Rng;

/// Maximum number of samples kept when loading a curve from a file.
pub const MAX_LOADED_POINTS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error("spectral curve has no samples")]
    Empty,
    #[error("wavelengths must be strictly increasing (sample {index})")]
    NotIncreasing { index: usize },
    #[error("negative or non-finite weight at sample {index}")]
    BadWeight { index: usize },
    #[error("degenerate spectrum: total weight is zero")]
    DegenerateSpectrum,
    #[error("spectral CSV {path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("cannot read spectral file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Piecewise-linear curve `wavelength (µm) → weight ≥ 0`, zero outside the
/// sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    samples: Vec<(f64, f64)>,
    // cumulative trapezoid integral at each sample
    cdf: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, SpectralError> {
        if samples.is_empty() {
            return Err(SpectralError::Empty);
        }
        for (i, &(l, w)) in samples.iter().enumerate() {
            if !l.is_finite() || (i > 0 && l <= samples[i - 1].0) {
                return Err(SpectralError::NotIncreasing { index: i });
            }
            if !w.is_finite() || w < 0.0 {
                return Err(SpectralError::BadWeight { index: i });
            }
        }
        let mut cdf = Vec::with_capacity(samples.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for pair in samples.windows(2) {
            let (l0, w0) = pair[0];
            let (l1, w1) = pair[1];
            acc += 0.5 * (w0 + w1) * (l1 - l0);
            cdf.push(acc);
        }
        Ok(Self { samples, cdf })
    }

    /// Flat curve of value `weight` over `[lo, hi]`.
    pub fn constant(lo: f64, hi: f64, weight: f64) -> Result<Self, SpectralError> {
        Self::new(vec![(lo, weight), (hi, weight)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(min λ, max λ)`.
    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    pub fn max_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    /// Trapezoid integral over the sampled range.
    pub fn integral(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    /// Linear interpolation; 0 outside the sampled range.
    pub fn evaluate(&self, wavelength: f64) -> f64 {
        interpolate(&self.samples, wavelength)
    }

    /// Whether the curve has something to sample from.
    pub fn is_degenerate(&self) -> bool {
        if self.samples.len() == 1 {
            self.samples[0].1 == 0.0
        } else {
            self.integral() <= 0.0
        }
    }

    /// Draw a wavelength with density proportional to the interpolated
    /// curve (inverse CDF over the piecewise-linear density).
    pub fn sample_wavelength<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, SpectralError> {
        if self.is_degenerate() {
            return Err(SpectralError::DegenerateSpectrum);
        }
        if self.samples.len() == 1 {
            return Ok(self.samples[0].0);
        }
        let target = rng.random::<f64>() * self.integral();
        // first index with cdf > target
        let idx = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1);
        let (l0, w0) = self.samples[idx - 1];
        let (l1, w1) = self.samples[idx];
        let h = l1 - l0;
        let rem = (target - self.cdf[idx - 1]).max(0.0);
        let slope = (w1 - w0) / h;
        // Solve w0 s + slope s²/2 = rem for s in [0, h].
        let disc = (w0 * w0 + 2.0 * slope * rem).max(0.0);
        let denom = w0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * rem / denom } else { 0.5 * h };
        Ok((l0 + s.clamp(0.0, h)).clamp(l0, l1))
    }

    /// Pointwise product on the union of both sample grids.
    ///
    /// Disjoint supports give an all-zero curve.
    pub fn product(&self, other: &SpectralCurve) -> SpectralCurve {
        let mut grid: Vec<f64> = self
            .samples
            .iter()
            .chain(other.samples.iter())
            .map(|s| s.0)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let samples = grid
            .into_iter()
            .map(|l| (l, self.evaluate(l) * other.evaluate(l)))
            .collect();
        SpectralCurve::new(samples).expect("union grid is strictly increasing")
    }

    /// Mean of `other` weighted by this curve, `∫ f g / ∫ f`, evaluated on
    /// the union grid.
    pub fn weighted_mean(&self, other: &SpectralCurve) -> f64 {
        let num = self.product(other).integral();
        let den = self.integral();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Keep at most `max_points` samples by uniform decimation (first and
    /// last samples always kept).
    pub fn decimated(&self, max_points: usize) -> SpectralCurve {
        let n = self.samples.len();
        if n <= max_points || max_points < 2 {
            return self.clone();
        }
        let mut picked: Vec<(f64, f64)> = (0..max_points)
            .map(|i| self.samples[(i * (n - 1) + (max_points - 1) / 2) / (max_points - 1)])
            .collect();
        picked.dedup_by(|a, b| a.0 == b.0);
        SpectralCurve::new(picked).expect("decimation keeps ordering")
    }

    /// Parse the `wavelength_um,weight` CSV format. Curves with more than
    /// [`MAX_LOADED_POINTS`] rows are decimated.
    pub fn from_csv_str(text: &str, origin: &str) -> Result<Self, SpectralError> {
        let csv_err = |msg: String| SpectralError::Csv {
            path: origin.to_string(),
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(None)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| csv_err(format!("unreadable header: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "wavelength_um" || &headers[1] != "weight" {
            return Err(csv_err(format!(
                "expected header `wavelength_um,weight`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        let mut bad_rows = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for (i, record) in reader.records().enumerate() {
            // row 1 is the header
            let row = i + 2;
            let parsed = record.ok().and_then(|r| {
                if r.len() != 2 {
                    return None;
                }
                let l: f64 = r[0].parse().ok()?;
                let w: f64 = r[1].parse().ok()?;
                (l.is_finite() && w.is_finite() && w >= 0.0 && l > 0.0).then_some((l, w))
            });
            match parsed {
                Some((l, w)) if l > last => {
                    last = l;
                    samples.push((l, w));
                }
                _ => bad_rows.push(row),
            }
        }
        if !bad_rows.is_empty() {
            let rows: Vec<String> = bad_rows.iter().map(|r| r.to_string()).collect();
            return Err(csv_err(format!(
                "invalid or non-increasing rows: {}",
                rows.join(", ")
            )));
        }
        if samples.is_empty() {
            return Err(csv_err("no samples".into()));
        }
        Ok(SpectralCurve::new(samples)?.decimated(MAX_LOADED_POINTS))
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, SpectralError> {
        let text = std::fs::read_to_string(path).map_err(|source| SpectralError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_str(&text, &path.display().to_string())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("wavelength_um,weight\n");
        for (l, w) in &self.samples {
            s.push_str(&format!("{l},{w}\n"));
        }
        s
    }
}

/// Linear interpolation over sorted `(x, y)` samples, 0 outside.
pub(crate) fn interpolate(samples: &[(f64, f64)], x: f64) -> f64 {
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    if x < samples[0].0 || x > samples[n - 1].0 {
        return 0.0;
    }
    if n == 1 {
        return samples[0].1;
    }
    let idx = samples.partition_point(|s| s.0 <= x);
    if idx == 0 {
        return samples[0].1;
    }
    if idx >= n {
        return samples[n - 1].1;
    }
    let (x0, y0) = samples[idx - 1];
    if x == x0 {
        return y0;
    }
    let (x1, y1) = samples[idx];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}
