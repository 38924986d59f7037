//! Time-domain framing and band-limited magnitude spectra.
//!
//! A signal is cut into fixed-length frames, each frame is windowed and
//! transformed, and only the magnitude of the bins inside the configured
//! frequency band is kept. Received spectra are modeled as the element-wise
//! product of a source spectrum and a directional response, and mixtures as
//! non-negative weighted sums.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a64_words;

#[derive(Error, Debug)]
pub enum SpectraError {
    #[error("invalid stft config: {0}")]
    InvalidConfig(String),
    #[error("signal too short: {len} samples, need at least {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("frame length {got} does not match configured frame_len {expected}")]
    FrameLength { got: usize, expected: usize },
    #[error("spectral grid mismatch")]
    GridMismatch,
    #[error("negative magnitude value at bin {0}")]
    NegativeValue(usize),
    #[error("spectrum length {got} does not match grid bin count {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("mix requires at least one component")]
    EmptyMix,
    #[error("negative mixing gain {0}")]
    NegativeGain(f64),
}

/// Analysis window applied to each frame before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

/// Framing and band parameters for magnitude-spectrum extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate: 16_000,
            frame_len: 1024,
            hop: 512,
            fft_len: 1024,
            band_low_hz: 100.0,
            band_high_hz: 5000.0,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), SpectraError> {
        if self.hop == 0 || self.hop > self.frame_len || self.frame_len > self.fft_len {
            return Err(SpectraError::InvalidConfig(format!(
                "need 0 < hop <= frame_len <= fft_len, got hop={} frame_len={} fft_len={}",
                self.hop, self.frame_len, self.fft_len
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(0.0..nyquist).contains(&self.band_low_hz)
            || self.band_high_hz <= self.band_low_hz
            || self.band_high_hz > nyquist
        {
            return Err(SpectraError::InvalidConfig(format!(
                "need 0 <= band_low < band_high <= {nyquist}, got [{}, {}]",
                self.band_low_hz, self.band_high_hz
            )));
        }
        let grid = self.grid();
        if grid.bin_lo > grid.bin_hi {
            return Err(SpectraError::InvalidConfig(
                "band contains no fft bins".into(),
            ));
        }
        Ok(())
    }

    /// The band-limited bin grid implied by this configuration.
    pub fn grid(&self) -> SpectralGrid {
        let fs = self.sample_rate as f64;
        let n = self.fft_len as f64;
        let bin_lo = (self.band_low_hz * n / fs).ceil() as usize;
        let bin_hi = (self.band_high_hz * n / fs).floor() as usize;
        SpectralGrid {
            sample_rate: self.sample_rate,
            fft_len: self.fft_len,
            bin_lo,
            bin_hi,
        }
    }

    /// Number of band bins (the `P` of the measurement model).
    pub fn band_bins(&self) -> usize {
        self.grid().len()
    }

    /// Stable integrity token over every field, for binding persisted
    /// artifacts to the configuration that produced them.
    pub fn config_hash(&self) -> u64 {
        fnv1a64_words(&[
            self.sample_rate as u64,
            self.frame_len as u64,
            self.hop as u64,
            self.fft_len as u64,
            self.band_low_hz.to_bits(),
            self.band_high_hz.to_bits(),
            match self.window {
                WindowKind::Hann => 1,
                WindowKind::Rectangular => 2,
            },
        ])
    }

    fn window_values(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Rectangular => vec![1.0; self.frame_len],
            WindowKind::Hann => {
                let n = self.frame_len;
                (0..n)
                    .map(|i| {
                        0.5 * (1.0
                            - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                    })
                    .collect()
            }
        }
    }
}

/// Identity of a band-limited bin grid. Spectra may only be combined when
/// their grids are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub sample_rate: u32,
    pub fft_len: usize,
    pub bin_lo: usize,
    pub bin_hi: usize,
}

impl SpectralGrid {
    pub fn len(&self) -> usize {
        self.bin_hi - self.bin_lo + 1
    }

    pub fn is_empty(&self) -> bool {
        self.bin_hi < self.bin_lo
    }

    /// Center frequency of band bin `i` (0-based within the band).
    pub fn bin_freq(&self, i: usize) -> f64 {
        (self.bin_lo + i) as f64 * self.sample_rate as f64 / self.fft_len as f64
    }

    /// Compact identifier for reports and file headers.
    pub fn id(&self) -> u64 {
        fnv1a64_words(&[
            self.sample_rate as u64,
            self.fft_len as u64,
            self.bin_lo as u64,
            self.bin_hi as u64,
        ])
    }
}

/// Non-negative magnitude values on a fixed band-limited bin grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeSpectrum {
    values: Vec<f64>,
    grid: SpectralGrid,
}

impl MagnitudeSpectrum {
    pub fn new(values: Vec<f64>, grid: SpectralGrid) -> Result<Self, SpectraError> {
        if values.len() != grid.len() {
            return Err(SpectraError::LengthMismatch {
                got: values.len(),
                expected: grid.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
            return Err(SpectraError::NegativeValue(i));
        }
        Ok(MagnitudeSpectrum { values, grid })
    }

    pub fn zeros(grid: SpectralGrid) -> Self {
        MagnitudeSpectrum {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> SpectralGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Cut `signal` into `frame_len`-sample frames advancing by `hop`. The
/// trailing partial frame is discarded.
pub fn frame_signal(signal: &[f64], cfg: &StftConfig) -> Result<Vec<Vec<f64>>, SpectraError> {
    cfg.validate()?;
    if signal.len() < cfg.frame_len {
        return Err(SpectraError::SignalTooShort {
            len: signal.len(),
            frame_len: cfg.frame_len,
        });
    }
    let n_frames = (signal.len() - cfg.frame_len) / cfg.hop + 1;
    Ok((0..n_frames)
        .map(|j| signal[j * cfg.hop..j * cfg.hop + cfg.frame_len].to_vec())
        .collect())
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Windowed, zero-padded DFT of one frame restricted to the band bins.
pub fn magnitude_spectrum(
    frame: &[f64],
    cfg: &StftConfig,
) -> Result<MagnitudeSpectrum, SpectraError> {
    let spec = complex_band_spectrum(frame, cfg)?;
    let grid = cfg.grid();
    let values = spec.iter().map(|c| c.norm()).collect();
    MagnitudeSpectrum::new(values, grid)
}

/// Windowed, zero-padded DFT of one frame restricted to the band bins, with
/// phase preserved. Used by the realistic mixing model, which sums complex
/// per-source spectra before taking the magnitude.
pub fn complex_band_spectrum(
    frame: &[f64],
    cfg: &StftConfig,
) -> Result<Vec<Complex<f64>>, SpectraError> {
    cfg.validate()?;
    if frame.len() != cfg.frame_len {
        return Err(SpectraError::FrameLength {
            got: frame.len(),
            expected: cfg.frame_len,
        });
    }
    let window = cfg.window_values();
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); cfg.fft_len];
    for (i, (&x, &w)) in frame.iter().zip(&window).enumerate() {
        buf[i] = Complex::new(x * w, 0.0);
    }
    plan_fft(cfg.fft_len).process(&mut buf);
    let grid = cfg.grid();
    Ok(buf[grid.bin_lo..=grid.bin_hi].to_vec())
}

/// Element-wise product of a source spectrum and a directional response.
pub fn apply_response(
    source: &MagnitudeSpectrum,
    response: &MagnitudeSpectrum,
) -> Result<MagnitudeSpectrum, SpectraError> {
    if source.grid != response.grid {
        return Err(SpectraError::GridMismatch);
    }
    let values = source
        .values
        .iter()
        .zip(&response.values)
        .map(|(s, h)| s * h)
        .collect();
    MagnitudeSpectrum::new(values, source.grid)
}

/// Weighted sum of spectra sharing one grid, with non-negative gains.
pub fn mix_ideal(
    components: &[(&MagnitudeSpectrum, f64)],
) -> Result<MagnitudeSpectrum, SpectraError> {
    let (first, _) = components.first().ok_or(SpectraError::EmptyMix)?;
    let grid = first.grid;
    let mut acc = vec![0.0; grid.len()];
    for (spectrum, gain) in components {
        if spectrum.grid != grid {
            return Err(SpectraError::GridMismatch);
        }
        if *gain < 0.0 {
            return Err(SpectraError::NegativeGain(*gain));
        }
        for (a, v) in acc.iter_mut().zip(&spectrum.values) {
            *a += gain * v;
        }
    }
    MagnitudeSpectrum::new(acc, grid)
}
