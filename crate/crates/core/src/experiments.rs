//! Partial-noise utterances for probing how frame scores localize a
//! corrupted region and how far the damage leaks into clean context.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::features::{extract, FeatureConfig, Spectrogram};
use crate::net::{forward, ModelParams};
use crate::signal::{decode_wav, encode_wav, inject_noise_span, synth_noise, synth_speechlike, AudioClip, NoiseKind};
use crate::util::mix_seed;

/// One clean utterance and its copy with noise confined to a frame range.
#[derive(Debug, Clone)]
pub struct PartialNoiseCase {
    pub noise_kind: NoiseKind,
    pub clean: Spectrogram,
    pub corrupted: Spectrogram,
    /// Frames whose analysis window lies inside the noisy span.
    pub noisy_frames: RangeInclusive<usize>,
    /// Frames whose analysis window does not touch the noisy span.
    pub clean_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialNoiseSpec {
    pub count: usize,
    pub duration_s: f64,
    pub frames: RangeInclusive<usize>,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for PartialNoiseSpec {
    fn default() -> Self {
        PartialNoiseSpec {
            count: 50,
            duration_s: 3.0,
            frames: 40..=100,
            snr_db: 0.0,
            seed: 2024,
        }
    }
}

fn stored(clip: &AudioClip) -> Result<AudioClip> {
    decode_wav(&encode_wav(clip).0)
}

/// Builds `spec.count` cases, cycling through every noise kind. Audio goes
/// through 16-bit quantization so features match what a WAV file would give.
pub fn partial_noise_cases(spec: &PartialNoiseSpec, features: &FeatureConfig) -> Result<Vec<PartialNoiseCase>> {
    let stft = features.stft;
    let (first, last) = (*spec.frames.start(), *spec.frames.end());
    if first > last {
        return Err(Error::InvalidConfig("empty frame range".into()));
    }
    let span = first * stft.hop..last * stft.hop + stft.frame_len;
    (0..spec.count)
        .map(|i| {
            let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
            let clean = synth_speechlike(mix_seed(spec.seed, 2 * i as u64), spec.duration_s)?;
            let noise = synth_noise(kind, mix_seed(spec.seed, 2 * i as u64 + 1), spec.duration_s)?;
            let corrupted = inject_noise_span(&clean, &noise, span.clone(), spec.snr_db)?;
            let clean = extract(&stored(&clean)?, features)?;
            let corrupted = extract(&stored(&corrupted)?, features)?;
            let clean_frames: Vec<usize> = (0..clean.n_frames())
                .filter(|&t| t * stft.hop + stft.frame_len <= span.start || t * stft.hop >= span.end)
                .collect();
            if last >= clean.n_frames() || clean_frames.is_empty() {
                return Err(Error::TooShort {
                    len: clean.n_frames(),
                    needed: last + 2,
                });
            }
            Ok(PartialNoiseCase {
                noise_kind: kind,
                clean,
                corrupted,
                noisy_frames: spec.frames.clone(),
                clean_frames,
            })
        })
        .collect()
}

/// Per-case frame-score summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationRow {
    pub noisy_mean: f64,
    pub clean_region_mean: f64,
    /// Same clean-region frames, scored on the uncorrupted utterance.
    pub baseline_mean: f64,
}

impl LocalizationRow {
    pub fn localized(&self) -> bool {
        self.noisy_mean < self.clean_region_mean
    }

    /// How much the corruption lowered scores of frames it never touched.
    pub fn depression(&self) -> f64 {
        self.baseline_mean - self.clean_region_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub rows: Vec<LocalizationRow>,
}

impl LocalizationReport {
    pub fn localized_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.localized()).count() as f64 / self.rows.len() as f64
    }

    pub fn mean_depression(&self) -> f64 {
        self.rows.iter().map(|r| r.depression()).sum::<f64>() / self.rows.len() as f64
    }
}

fn mean_at(q: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = idx.fold((0.0, 0usize), |(s, n), t| (s + q[t], n + 1));
    sum / n as f64
}

pub fn localization(params: &ModelParams, cases: &[PartialNoiseCase]) -> Result<LocalizationReport> {
    if cases.is_empty() {
        return Err(Error::Empty("partial-noise cases"));
    }
    let rows = cases
        .iter()
        .map(|c| {
            let (clean, _) = forward(&c.clean, params)?;
            let (noisy, _) = forward(&c.corrupted, params)?;
            let q = noisy.frame_scores();
            Ok(LocalizationRow {
                noisy_mean: mean_at(q, c.noisy_frames.clone()),
                clean_region_mean: mean_at(q, c.clean_frames.iter().copied()),
                baseline_mean: mean_at(clean.frame_scores(), c.clean_frames.iter().copied()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalizationReport { rows })
}
