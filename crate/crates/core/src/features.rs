//! Magnitude spectrogram extraction and the on-disk feature cache.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::AudioClip;
use crate::util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            frame_len: 512,
            hop: 256,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_power_of_two() {
            return Err(Error::InvalidStft(format!(
                "frame_len {} must be a power of two",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidStft(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        Ok(())
    }

    /// FFT size; always equal to the frame length.
    pub fn fft_size(&self) -> usize {
        self.frame_len
    }

    /// Number of non-redundant bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }
}

/// Feature extraction options layered on top of the STFT.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    /// Apply `ln(1 + |X|)` to every magnitude.
    pub log1p: bool,
}

/// Number of whole frames in a signal; trailing samples that do not fill a frame are dropped.
pub fn frame_count(signal_len: usize, cfg: &StftConfig) -> Result<usize> {
    cfg.validate()?;
    if signal_len < cfg.frame_len {
        return Err(Error::TooShort {
            len: signal_len,
            needed: cfg.frame_len,
        });
    }
    Ok(1 + (signal_len - cfg.frame_len) / cfg.hop)
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// A planned short-time Fourier transform. Reusable across clips of any length.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            cfg,
            window: hann_periodic(cfg.frame_len),
            fwd: planner.plan_fft_forward(cfg.frame_len),
            inv: planner.plan_fft_inverse(cfg.frame_len),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Windowed full-length complex spectrum of the frame starting at `start`.
    pub(crate) fn frame_spectrum(&self, samples: &[f64], start: usize) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = samples[start..start + self.cfg.frame_len]
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Unnormalized inverse FFT in place; the caller divides by the frame length.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
    }

    pub fn magnitudes(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let t = frame_count(samples.len(), &self.cfg)?;
        let bins = self.cfg.bins();
        let mut out = Array2::zeros((t, bins));
        for (ti, mut row) in out.outer_iter_mut().enumerate() {
            let spec = self.frame_spectrum(samples, ti * self.cfg.hop);
            for (dst, z) in row.iter_mut().zip(&spec[..bins]) {
                *dst = z.norm();
            }
        }
        Ok(out)
    }
}

/// T x F magnitude matrix, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Array2<f64>,
}

impl Spectrogram {
    pub fn from_frames(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::Empty("spectrogram"));
        }
        if frames.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidAudio(
                "spectrogram entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Spectrogram { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Applies `ln(1 + x)` to every entry.
    pub fn log1p(mut self) -> Spectrogram {
        self.frames.mapv_inplace(f64::ln_1p);
        self
    }

    /// Copy with the frame order reversed.
    pub fn reversed(&self) -> Spectrogram {
        let mut f = self.frames.clone();
        f.invert_axis(ndarray::Axis(0));
        Spectrogram {
            frames: f.as_standard_layout().to_owned(),
        }
    }
}

pub fn magnitude_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let stft = Stft::new(*cfg)?;
    Ok(Spectrogram {
        frames: stft.magnitudes(clip.samples())?,
    })
}

/// Spectrogram with the optional log compression applied.
pub fn extract(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let s = magnitude_spectrogram(clip, &cfg.stft)?;
    Ok(if cfg.log1p { s.log1p() } else { s })
}

const FEATURE_MAGIC: &[u8; 4] = b"QNFT";
const FEATURE_VERSION: u32 = 1;

pub fn encode_features(spec: &Spectrogram) -> Vec<u8> {
    let (t, f) = spec.frames.dim();
    let mut out = Vec::with_capacity(16 + t * f * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for v in spec.frames.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Spectrogram> {
    if bytes.len() < 16 {
        return Err(Error::CorruptFeatures("header truncated".into()));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::CorruptFeatures("bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::CorruptFeatures(format!("unsupported version {version}")));
    }
    let (t, f) = (word(8) as usize, word(12) as usize);
    let expected = 16 + t * f * 4;
    if bytes.len() != expected {
        return Err(Error::CorruptFeatures(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let frames = Array2::from_shape_vec((t, f), values)
        .map_err(|e| Error::CorruptFeatures(e.to_string()))?;
    Spectrogram::from_frames(frames).map_err(|e| Error::CorruptFeatures(e.to_string()))
}

pub fn save_features(spec: &Spectrogram, path: &Path) -> Result<()> {
    write_atomic(path, &encode_features(spec))
}

pub fn load_features(path: &Path) -> Result<Spectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        let cfg = StftConfig::default();
        assert_eq!(frame_count(512, &cfg).unwrap(), 1);
        assert_eq!(frame_count(1024, &cfg).unwrap(), 3);
        assert_eq!(frame_count(16000, &cfg).unwrap(), 61);
        assert!(matches!(frame_count(511, &cfg), Err(Error::TooShort { .. })));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(StftConfig { frame_len: 500, hop: 250 }.validate().is_err());
        assert!(StftConfig { frame_len: 512, hop: 513 }.validate().is_err());
        assert!(StftConfig { frame_len: 512, hop: 0 }.validate().is_err());
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let s = magnitude_spectrogram(&clip(vec![0.0; 2048]), &StftConfig::default()).unwrap();
        assert_eq!(s.n_bins(), 257);
        assert!(s.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_dc_bin_is_window_sum() {
        let s = magnitude_spectrogram(&clip(vec![1.0; 2048]), &StftConfig::default()).unwrap();
        for row in s.frames().outer_iter() {
            assert_abs_diff_eq!(row[0], 256.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn bin_centered_sine_leaks_into_neighbours_only() {
        let x: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * 16.0 * n as f64 / 512.0).sin())
            .collect();
        let s = magnitude_spectrogram(&clip(x), &StftConfig::default()).unwrap();
        for row in s.frames().outer_iter() {
            assert_abs_diff_eq!(row[16], 128.0, epsilon = 1e-6);
            assert_abs_diff_eq!(row[15], 64.0, epsilon = 1e-6);
            assert_abs_diff_eq!(row[17], 64.0, epsilon = 1e-6);
            assert!(row[20] < 1e-6);
        }
    }

    #[test]
    fn shorter_than_a_frame_is_an_error() {
        let r = magnitude_spectrogram(&clip(vec![0.1; 100]), &StftConfig::default());
        assert!(matches!(r, Err(Error::TooShort { len: 100, .. })));
    }

    #[test]
    fn feature_file_roundtrip_and_corruption() {
        let x: Vec<f64> = (0..3000).map(|n| ((n * 7919) % 101) as f64 / 200.0).collect();
        let s = magnitude_spectrogram(&clip(x), &StftConfig::default()).unwrap();
        let bytes = encode_features(&s);
        assert_eq!(&bytes[0..4], b"QNFT");
        let back = decode_features(&bytes).unwrap();
        assert_eq!(back.frames().dim(), s.frames().dim());
        for (a, b) in back.frames().iter().zip(s.frames().iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        assert!(decode_features(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_features(&bad).is_err());
    }

    #[test]
    fn log1p_compresses() {
        let cfg = FeatureConfig {
            log1p: true,
            ..Default::default()
        };
        let s = extract(&clip(vec![1.0; 512]), &cfg).unwrap();
        assert_abs_diff_eq!(s.frames()[[0, 0]], 257.0_f64.ln(), epsilon = 1e-9);
    }
}
