//! Audio I/O, synthetic corpus generation, SNR mixing, spectral subtraction and
//! the intrusive proxy-quality oracle used for labels.

mod corpus;
mod enhance;
mod mix;
mod synth;
mod wav;

pub use corpus::{build_corpus, Condition, Corpus, CorpusManifest, ManifestEntry, Split, SynthConfig};
pub use enhance::spectral_subtract;
pub use mix::{global_snr_db, inject_noise_span, mix_at_snr, mix_at_snr_offset, proxy_quality, snr_to_quality};
pub use synth::{synth_noise, synth_speechlike, NoiseKind};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use crate::error::{Error, Result};

/// Rate required by every corpus operation.
pub const SAMPLE_RATE: u32 = 16_000;

/// Highest label the proxy oracle emits, and the metric maximum used by the loss.
pub const Q_MAX: f64 = 4.5;
/// Lowest label the proxy oracle emits.
pub const Q_MIN: f64 = 1.0;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidAudio("clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Fails unless the clip is at the corpus rate.
    pub fn require_corpus_rate(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate {
                expected: SAMPLE_RATE,
                found: self.sample_rate_hz,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_clips() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        let c = AudioClip::new(vec![0.0], 8000).unwrap();
        assert!(matches!(
            c.require_corpus_rate(),
            Err(Error::UnsupportedSampleRate { found: 8000, .. })
        ));
    }

    #[test]
    fn power_and_peak() {
        let c = AudioClip::new(vec![0.5, -1.0, 0.5, 0.0], 16000).unwrap();
        assert_eq!(c.energy(), 1.5);
        assert_eq!(c.power(), 0.375);
        assert_eq!(c.peak(), 1.0);
    }
}
