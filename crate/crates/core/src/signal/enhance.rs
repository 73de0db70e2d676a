//! Magnitude spectral subtraction with overlap-add resynthesis.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::{frame_count, Stft, StftConfig};
use crate::signal::AudioClip;

/// Leading frames averaged into the noise magnitude estimate.
pub const NOISE_EST_FRAMES: usize = 10;
/// Spectral floor as a fraction of the noisy magnitude.
pub const SPECTRAL_FLOOR: f64 = 0.002;

pub(crate) fn subtract_magnitude(noisy_mag: f64, noise_mag: f64) -> f64 {
    (noisy_mag - noise_mag).max(SPECTRAL_FLOOR * noisy_mag)
}

/// Suppresses stationary noise estimated from the first ten frames.
///
/// Output keeps the noisy phase and has exactly the input length. The tail is
/// zero-padded internally so every input sample is covered by overlapping frames.
pub fn spectral_subtract(noisy: &AudioClip, cfg: &StftConfig) -> Result<AudioClip> {
    let len = noisy.len();
    let needed = cfg.frame_len + (NOISE_EST_FRAMES - 1) * cfg.hop;
    if len < cfg.frame_len || frame_count(len, cfg)? < NOISE_EST_FRAMES {
        return Err(Error::TooShort { len, needed });
    }
    let stft = Stft::new(*cfg)?;
    let n_fft = cfg.frame_len;
    // extra trailing frames so the last input samples get full overlap
    let n_frames = 1 + (len - cfg.frame_len).div_ceil(cfg.hop) + cfg.frame_len / cfg.hop;
    let padded_len = (n_frames - 1) * cfg.hop + cfg.frame_len;
    let mut x = noisy.samples().to_vec();
    x.resize(padded_len, 0.0);

    let spectra: Vec<Vec<Complex64>> = (0..n_frames)
        .map(|t| stft.frame_spectrum(&x, t * cfg.hop))
        .collect();
    let mut noise = vec![0.0; n_fft];
    for spec in &spectra[..NOISE_EST_FRAMES] {
        for (acc, z) in noise.iter_mut().zip(spec) {
            *acc += z.norm();
        }
    }
    noise.iter_mut().for_each(|v| *v /= NOISE_EST_FRAMES as f64);

    let window = stft.window();
    let mut num = vec![0.0; padded_len];
    let mut den = vec![0.0; padded_len];
    for (t, mut spec) in spectra.into_iter().enumerate() {
        for (z, &nk) in spec.iter_mut().zip(&noise) {
            let mag = z.norm();
            *z = if mag > 0.0 {
                *z * (subtract_magnitude(mag, nk) / mag)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        stft.inverse(&mut spec);
        let start = t * cfg.hop;
        for (i, (z, w)) in spec.iter().zip(window).enumerate() {
            num[start + i] += w * z.re / n_fft as f64;
            den[start + i] += w * w;
        }
    }
    // Leading samples see only the rising window edge; dividing by that tiny
    // weight would amplify the modified spectrum, so the weight is floored.
    let floor = 0.5 * den.iter().cloned().fold(0.0, f64::max);
    let out = num
        .iter()
        .zip(&den)
        .take(len)
        .map(|(n, d)| n / d.max(floor))
        .collect();
    AudioClip::new(out, noisy.sample_rate_hz())
}
