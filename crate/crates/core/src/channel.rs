//! Channel characterization from detector hit ledgers.
//!
//! Gains are normalized by the ledger's reference power, so a ledger with
//! a 1 W reference yields `Σ Pᵢ` directly and the all-source ledger of the
//! case-study room yields the received power per watt of one luminaire.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::tracer::HitLedger;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("empty channel: the ledger has no hits")]
    EmptyChannel,
    #[error("degenerate channel: total received power is zero")]
    Degenerate,
    #[error("undefined path loss for DC gain {0}")]
    UndefinedPathLoss(f64),
    #[error("invalid bin width {0} ns")]
    BinWidth(f64),
}

/// Binned impulse response, in units of channel gain per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCir {
    /// First arrival, ns.
    pub t1: f64,
    /// Bin width, ns.
    pub bin_width_ns: f64,
    pub bins: Vec<f64>,
    /// Decomposition of `bins` by reflection count.
    pub per_kappa: BTreeMap<u32, Vec<f64>>,
}

impl DiscreteCir {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Start time of bin `n`, ns.
    pub fn bin_start(&self, n: usize) -> f64 {
        self.t1 + n as f64 * self.bin_width_ns
    }

    /// Centre time of bin `n`, ns.
    pub fn bin_center(&self, n: usize) -> f64 {
        self.t1 + (n as f64 + 0.5) * self.bin_width_ns
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().fold(0.0, |acc, b| acc + b)
    }

    /// A CIR without a reflection-order breakdown; everything is filed
    /// under κ = 0.
    pub fn from_bins(t1: f64, bin_width_ns: f64, bins: Vec<f64>) -> Self {
        let mut per_kappa = BTreeMap::new();
        per_kappa.insert(0, bins.clone());
        Self {
            t1,
            bin_width_ns,
            bins,
            per_kappa,
        }
    }
}

/// Bin a ledger. Bin `n` covers `[t₁ + nΔw, t₁ + (n+1)Δw)`, except the last
/// bin which also includes its upper edge.
pub fn bin_cir(ledger: &HitLedger, bin_width_ns: f64) -> Result<DiscreteCir, ChannelError> {
    if !(bin_width_ns > 0.0 && bin_width_ns.is_finite()) {
        return Err(ChannelError::BinWidth(bin_width_ns));
    }
    if ledger.is_empty() {
        return Err(ChannelError::EmptyChannel);
    }
    let (t1, tl) = ledger
        .hits
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
            (lo.min(h.time_ns), hi.max(h.time_ns))
        });
    let nb = (((tl - t1) / bin_width_ns).ceil() as usize).max(1);
    let scale = 1.0 / ledger.reference_power_w;
    let mut bins = vec![0.0; nb];
    let mut per_kappa: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for h in &ledger.hits {
        let n = (((h.time_ns - t1) / bin_width_ns) as usize).min(nb - 1);
        let p = h.power * scale;
        bins[n] += p;
        per_kappa.entry(h.kappa).or_insert_with(|| vec![0.0; nb])[n] += p;
    }
    Ok(DiscreteCir {
        t1,
        bin_width_ns,
        bins,
        per_kappa,
    })
}

/// Frequency response of a binned CIR.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfr {
    /// DFT values in natural order `k = 0, 1, …, N−1`; negative
    /// frequencies wrap to the upper half.
    pub values: Vec<Complex64>,
    /// Sampling frequency `1/Δw`, Hz.
    pub delta_f_hz: f64,
}

impl Cfr {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Value at signed index `k`.
    pub fn at(&self, k: i64) -> Complex64 {
        let n = self.values.len() as i64;
        self.values[k.rem_euclid(n) as usize]
    }

    /// `(frequency_hz, value)` for `k = −⌊N/2⌋ … N−1−⌊N/2⌋`, with frequency
    /// `k·Δf/N`.
    pub fn shifted(&self) -> Vec<(f64, Complex64)> {
        let n = self.values.len() as i64;
        let half = n / 2;
        (-half..n - half)
            .map(|k| (k as f64 * self.delta_f_hz / n as f64, self.at(k)))
            .collect()
    }
}

/// `2^⌈log₂ n⌉`.
pub fn fft_size(n_bins: usize) -> usize {
    n_bins.max(1).next_power_of_two()
}

pub fn cfr(cir: &DiscreteCir) -> Cfr {
    let n = fft_size(cir.n_bins());
    let mut buf: Vec<Complex64> = cir.bins.iter().map(|&b| Complex64::new(b, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Cfr {
        values: buf,
        delta_f_hz: 1e9 / cir.bin_width_ns,
    }
}

/// Total received power over the reference power.
pub fn dc_gain(ledger: &HitLedger) -> f64 {
    ledger.total_power() / ledger.reference_power_w
}

/// Same as [`dc_gain`] but without the detector's spectral and angular
/// weighting.
pub fn dc_gain_raw(ledger: &HitLedger) -> f64 {
    ledger.total_raw_power() / ledger.reference_power_w
}

pub fn path_loss_db(dc: f64) -> Result<f64, ChannelError> {
    if dc > 0.0 {
        Ok(-10.0 * dc.log10())
    } else {
        Err(ChannelError::UndefinedPathLoss(dc))
    }
}

/// Mean delay and RMS delay spread, ns, weighting bin centres by the
/// squared bin values.
pub fn delay_stats(cir: &DiscreteCir) -> Result<(f64, f64), ChannelError> {
    let nonzero: Vec<usize> = (0..cir.n_bins()).filter(|&n| cir.bins[n] != 0.0).collect();
    match nonzero.as_slice() {
        [] => Err(ChannelError::Degenerate),
        [n] => Ok((cir.bin_center(*n), 0.0)),
        _ => {
            let mut m0 = 0.0;
            let mut m1 = 0.0;
            for &n in &nonzero {
                let w = cir.bins[n] * cir.bins[n];
                m0 += w;
                m1 += cir.bin_center(n) * w;
            }
            let tau0 = m1 / m0;
            let m2: f64 = nonzero
                .iter()
                .map(|&n| (cir.bin_center(n) - tau0).powi(2) * cir.bins[n] * cir.bins[n])
                .sum();
            Ok((tau0, (m2 / m0).sqrt()))
        }
    }
}

/// Flatness factor `ρ = P_LoS / P_total` and Rician `K = ρ / (1 − ρ)`,
/// infinite for a pure line-of-sight ledger.
pub fn flatness(ledger: &HitLedger) -> Result<(f64, f64), ChannelError> {
    let total = ledger.total_power();
    if total <= 0.0 {
        return Err(ChannelError::Degenerate);
    }
    let los = ledger
        .hits
        .iter()
        .filter(|h| h.kappa == 0)
        .fold(0.0, |acc, h| acc + h.power);
    let rho = (los / total).min(1.0);
    let k = if rho >= 1.0 {
        f64::INFINITY
    } else {
        rho / (1.0 - rho)
    };
    Ok((rho, k))
}

/// `(B/2)·log₂(1 + 4Ps²·dc²/σw²)`, bit/s.
pub fn capacity(dc: f64, ps: f64, sigma_w2: f64, bandwidth_hz: f64) -> f64 {
    0.5 * bandwidth_hz * (1.0 + 4.0 * ps * ps * dc * dc / sigma_w2).log2()
}

/// DFT size and effective bandwidth `Δf(N−1)/N`, Hz.
pub fn effective_bandwidth(n_bins: usize, bin_width_ns: f64) -> (usize, f64) {
    let n = fft_size(n_bins);
    let df = 1e9 / bin_width_ns;
    (n, df * (n as f64 - 1.0) / n as f64)
}

/// How a sweep's SNR axis maps to the noise power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrDefinition {
    /// SNR at unit channel gain, `γ = 4Ps²/σw²`; the channel then enters
    /// as `γ·H²`.
    #[default]
    Transmit,
    /// SNR at the receiver, `γ = 4Ps²H²/σw²`; capacity no longer depends
    /// on the channel.
    Received,
}

impl SnrDefinition {
    pub fn axis_label(self) -> &'static str {
        match self {
            SnrDefinition::Transmit => "tx_snr_db",
            SnrDefinition::Received => "rx_snr_db",
        }
    }
}

/// `(snr_db, bit/s)` over `snr_grid_db`.
pub fn capacity_sweep(
    dc: f64,
    ps: f64,
    bandwidth_hz: f64,
    snr_grid_db: &[f64],
    definition: SnrDefinition,
) -> Vec<(f64, f64)> {
    snr_grid_db
        .iter()
        .map(|&snr_db| {
            let gamma = 10f64.powf(snr_db / 10.0);
            let sigma_w2 = match definition {
                SnrDefinition::Transmit => 4.0 * ps * ps / gamma,
                SnrDefinition::Received => 4.0 * ps * ps * dc * dc / gamma,
            };
            let c = if sigma_w2 > 0.0 {
                capacity(dc, ps, sigma_w2, bandwidth_hz)
            } else {
                0.0
            };
            (snr_db, c)
        })
        .collect()
}

/// Evenly spaced grid from `lo` to `hi` dB inclusive.
pub fn snr_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Summary statistics of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub dc_gain: f64,
    /// Gain of the incident power, before detector weighting.
    pub dc_gain_raw: f64,
    pub path_loss_db: f64,
    pub mean_delay_ns: f64,
    pub rms_delay_ns: f64,
    pub flatness: f64,
    #[serde(with = "maybe_infinite")]
    pub rician_k: f64,
    pub p_los: f64,
    pub p_nlos: f64,
    pub max_kappa: u32,
    pub hits: usize,
    pub first_arrival_ns: f64,
    pub n_bins: usize,
    pub n_fft: usize,
    pub bandwidth_hz: f64,
}

mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

/// Everything derived from one ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAnalysis {
    pub cir: DiscreteCir,
    pub cfr: Cfr,
    pub metrics: ChannelMetrics,
}

pub fn analyze(ledger: &HitLedger, bin_width_ns: f64) -> Result<ChannelAnalysis, ChannelError> {
    let cir = bin_cir(ledger, bin_width_ns)?;
    let dc = dc_gain(ledger);
    let path_loss_db = path_loss_db(dc).map_err(|_| ChannelError::Degenerate)?;
    let (mean_delay_ns, rms_delay_ns) = delay_stats(&cir)?;
    let (rho, k) = flatness(ledger)?;
    let response = cfr(&cir);
    let (n_fft, bandwidth_hz) = effective_bandwidth(cir.n_bins(), bin_width_ns);
    Ok(ChannelAnalysis {
        metrics: ChannelMetrics {
            dc_gain: dc,
            dc_gain_raw: dc_gain_raw(ledger),
            path_loss_db,
            mean_delay_ns,
            rms_delay_ns,
            flatness: rho,
            rician_k: k,
            p_los: rho * dc,
            p_nlos: (1.0 - rho) * dc,
            max_kappa: ledger.max_kappa_observed,
            hits: ledger.len(),
            first_arrival_ns: cir.t1,
            n_bins: cir.n_bins(),
            n_fft,
            bandwidth_hz,
        },
        cir,
        cfr: response,
    })
}
