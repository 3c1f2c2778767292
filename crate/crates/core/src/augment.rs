//! Noise injection at a controlled SNR and assembly of the blocked source
//! feature dataset.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ops::SubjectBlock;

/// A mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl RawSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signal contains non-finite samples"));
        }
        Ok(RawSignal {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// A noise recording and the SNR it is mixed at.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub noise: RawSignal,
    pub snr_db: f64,
}

/// Unlabelled source dataset cut into `h0 x n` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDomain {
    pub blocks: Vec<SubjectBlock>,
    pub h0: usize,
    pub n: usize,
}

impl SourceDomain {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Noise tiled cyclically (or truncated) to `len` samples.
pub fn tile_noise(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Gain applied to the tiled noise so that the whole-signal SNR is `snr_db`.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Returns `signal + g · noise'`, where `noise'` is the noise tiled to the
/// signal length and `g` sets the power ratio to `snr_db`.
pub fn mix_noise_at_snr(signal: &RawSignal, noise: &RawSignal, snr_db: f64) -> Result<RawSignal> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    let ps = signal.power();
    if !(ps > 0.0) {
        return Err(Error::invalid("signal has zero power"));
    }
    let tiled = tile_noise(&noise.samples, signal.len());
    let pn = mean_power(&tiled);
    if !(pn > 0.0) {
        return Err(Error::invalid("noise has zero power"));
    }
    let g = snr_gain(ps, pn, snr_db);
    let samples = signal
        .samples
        .iter()
        .zip(&tiled)
        .map(|(s, n)| s + g * n)
        .collect();
    Ok(RawSignal {
        samples,
        sample_rate: signal.sample_rate,
    })
}

/// Mixes every signal with every noise spec, signal-major.
pub fn expand_dataset(signals: &[RawSignal], noise_bank: &[NoiseSpec]) -> Result<Vec<RawSignal>> {
    if noise_bank.is_empty() {
        return Err(Error::invalid("noise bank is empty"));
    }
    let mut out = Vec::with_capacity(signals.len() * noise_bank.len());
    for s in signals {
        for spec in noise_bank {
            out.push(mix_noise_at_snr(s, &spec.noise, spec.snr_db)?);
        }
    }
    Ok(out)
}

/// Analysis frame used by [`extract_toy_features`].
pub const FRAME_LEN: usize = 256;
const HOP: usize = 128;
const BANDS: usize = 8;

/// Small deterministic frame-statistic feature extractor used for
/// self-contained runs: frame energy mean and variance, zero-crossing rate,
/// spectral centroid (as a fraction of Nyquist) and eight band energies. The
/// base vector is cycled or truncated to `n_features`.
pub fn extract_toy_features(signal: &RawSignal, n_features: usize) -> Result<Vec<f64>> {
    if n_features == 0 {
        return Err(Error::invalid("n_features must be >= 1"));
    }
    let x = &signal.samples;
    if x.len() < FRAME_LEN {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one {FRAME_LEN}-sample frame",
            x.len()
        )));
    }

    let starts: Vec<usize> = (0..=(x.len() - FRAME_LEN)).step_by(HOP).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| mean_power(&x[s..s + FRAME_LEN]))
        .collect();
    let e_mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let e_var = energies.iter().map(|e| (e - e_mean).powi(2)).sum::<f64>() / energies.len() as f64;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(FRAME_LEN);
    let half = FRAME_LEN / 2;
    let mut spectrum = vec![0.0; half];
    let mut buf = vec![Complex64::default(); FRAME_LEN];
    for &s in &starts {
        for (b, v) in buf.iter_mut().zip(&x[s..s + FRAME_LEN]) {
            *b = Complex64::new(*v, 0.0);
        }
        fft.process(&mut buf);
        for (acc, b) in spectrum.iter_mut().zip(&buf) {
            *acc += b.norm_sqr() / (FRAME_LEN * starts.len()) as f64;
        }
    }
    let total: f64 = spectrum.iter().sum();
    let centroid = if total > 0.0 {
        spectrum.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / (total * half as f64)
    } else {
        0.0
    };
    let band_len = half / BANDS;
    let bands = (0..BANDS).map(|b| spectrum[b * band_len..(b + 1) * band_len].iter().sum::<f64>());

    let mut base = vec![e_mean, e_var, zero_crossing_rate(x), centroid];
    base.extend(bands);
    Ok(base.iter().copied().cycle().take(n_features).collect())
}

/// Sign changes between consecutive samples per sample, with zero counted as
/// non-negative.
pub fn zero_crossing_rate(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let crossings = x
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    crossings as f64 / x.len() as f64
}

/// Groups consecutive rows into `h0 x N` blocks; a trailing partial group is
/// dropped.
pub fn build_source_domain(rows: &[Vec<f64>], h0: usize) -> Result<SourceDomain> {
    if h0 == 0 {
        return Err(Error::invalid("h0 must be >= 1"));
    }
    let n = rows.first().map_or(0, |r| r.len());
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::invalid(format!(
            "row {i} has {} values, expected {n}",
            r.len()
        )));
    }
    if !rows.is_empty() && n == 0 {
        return Err(Error::invalid("rows have no features"));
    }
    let blocks = rows
        .chunks_exact(h0)
        .map(|chunk| {
            let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
            SubjectBlock::new(Array2::from_shape_vec((h0, n), flat).expect("rectangular"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceDomain { blocks, h0, n })
}
