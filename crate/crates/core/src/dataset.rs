//! Manifest entries turned into labelled spectrograms, with an optional
//! on-disk cache of raw magnitude features.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract, load_features, magnitude_spectrogram, save_features, FeatureConfig, Spectrogram};
use crate::signal::{read_wav, Condition, CorpusManifest, ManifestEntry};

/// One utterance ready for the network.
#[derive(Debug, Clone)]
pub struct Example {
    pub utterance_id: String,
    pub condition: Condition,
    pub label: f64,
    pub spec: Spectrogram,
}

/// How features are produced: the extraction settings plus an optional cache
/// directory. Cached files hold raw magnitudes; `log1p` is applied on load.
#[derive(Debug, Clone, Default)]
pub struct FeatureSource {
    pub config: FeatureConfig,
    pub cache_dir: Option<PathBuf>,
}

impl FeatureSource {
    pub fn new(config: FeatureConfig) -> Self {
        FeatureSource { config, cache_dir: None }
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    fn cache_path(&self, manifest: &CorpusManifest, entry: &ManifestEntry) -> Option<PathBuf> {
        let stft = self.config.stft;
        self.cache_dir.as_ref().map(|d| {
            d.join(format!("stft{}x{}", stft.frame_len, stft.hop))
                .join(manifest.split.as_str())
                .join(format!("{}.qnft", entry.utterance_id))
        })
    }

    /// Spectrogram for one manifest entry, reading or filling the cache.
    pub fn features(&self, manifest: &CorpusManifest, entry: &ManifestEntry) -> Result<Spectrogram> {
        let Some(path) = self.cache_path(manifest, entry) else {
            let clip = read_wav(&manifest.resolve(entry))?;
            return extract(&clip, &self.config);
        };
        let raw = match load_features(&path) {
            Ok(s) if s.n_bins() == self.config.stft.bins() => s,
            Ok(_) | Err(_) => {
                let clip = read_wav(&manifest.resolve(entry))?;
                let s = magnitude_spectrogram(&clip, &self.config.stft)?;
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                save_features(&s, &path)?;
                s
            }
        };
        Ok(if self.config.log1p { raw.log1p() } else { raw })
    }

    pub fn example(&self, manifest: &CorpusManifest, entry: &ManifestEntry) -> Result<Example> {
        Ok(Example {
            utterance_id: entry.utterance_id.clone(),
            condition: entry.condition,
            label: entry.label_q,
            spec: self.features(manifest, entry)?,
        })
    }
}

/// Features for every entry, in manifest order; each entry succeeds or fails independently.
pub fn load_examples(manifest: &CorpusManifest, source: &FeatureSource) -> Vec<Result<Example>> {
    manifest
        .entries
        .par_iter()
        .map(|e| source.example(manifest, e))
        .collect()
}

/// Like [`load_examples`] but fails on the first unreadable entry.
pub fn load_all(manifest: &CorpusManifest, source: &FeatureSource) -> Result<Vec<Example>> {
    if manifest.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    load_examples(manifest, source).into_iter().collect()
}
